"""Interpolation between scattered points and equispaced grids.

Two mechanisms live here:

* classic heat-kernel gridding (spread onto the grid, FFT, deconvolve), the
  fast non-uniform transform used for analysis;
* the edge machinery for learned interpolation layers: per-edge geometry,
  gather/weight/aggregate, with kernels supplied by the model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, NumericError
from .meshes import Mesh, NeighborGraph, neighbors_within, wrap_offsets
from .spectral import ModeSet, dft_array


# ---------------------------------------------------------------------------
# heat-kernel gridding


@dataclass
class HeatKernelParams:
    """tau is the diffusion time of exp(-|x|^2 / (4 tau)); span bounds the
    lattice images summed for periodicity (|l|_inf <= span)."""

    tau: float | None = None
    span: int = 1
    cutoff_delta: float = 1e-4

    def resolved_tau(self, r_grid: int) -> float:
        return self.tau if self.tau is not None else 1.0 / (math.pi * r_grid)


def heat_kernel(offsets: np.ndarray, tau: float, span: int = 1) -> np.ndarray:
    """Periodized Gaussian: sum over integer lattice images within the span.

    offsets: [..., d] wrapped differences in (-0.5, 0.5]^d.
    """
    if tau <= 0:
        raise ContractError("tau must be positive")
    offsets = np.asarray(offsets, dtype=np.float64)
    d = offsets.shape[-1]
    shifts = np.arange(-span, span + 1)
    grids = np.meshgrid(*([shifts] * d), indexing="ij")
    lattice = np.stack([g.reshape(-1) for g in grids], axis=1)  # [(2L+1)^d, d]
    out = np.zeros(offsets.shape[:-1], dtype=np.float64)
    for l in lattice:
        diff = offsets - l
        out += np.exp(-np.sum(diff * diff, axis=-1) / (4.0 * tau))
    return out


def gridding_cutoff_radius(tau: float, k_max: int, d: int, delta: float = 1e-4) -> float:
    """Neighborhood radius wide enough that the truncated kernel tail stays
    below delta after deconvolution amplification at the largest retained
    frequency (|k|^2 <= d * (k_max-1)^2).  May exceed the torus diameter,
    in which case no truncation is acceptable and the spread must be dense."""
    amp_exponent = 4.0 * math.pi**2 * tau * d * (k_max - 1) ** 2
    return 2.0 * math.sqrt(tau * (amp_exponent + math.log(1.0 / delta)))


def gridding_nufft(values: np.ndarray, mesh: Mesh, grid_resolution, k_max: int,
                   params: HeatKernelParams | None = None) -> np.ndarray:
    """Approximate non-uniform DFT coefficients of scattered samples.

    Returns the retained-mode block (extent 2*k_max-1 per axis, channels
    last if ``values`` has them), scaled to match the direct sum
    sum_i f(x_i) exp(-2i pi <k, x_i>).

    Spread with the periodized heat kernel over an epsilon-neighborhood,
    FFT the grid, keep the retained modes, then divide by the DFT of the
    grid-sampled kernel; only retained modes are ever deconvolved.  Using
    the sampled-kernel spectrum (rather than the continuous-kernel Fourier
    coefficient) makes the transform exact when the sources coincide with
    the grid, for any kernel width.
    """
    params = params or HeatKernelParams()
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != mesh.n_points:
        raise ContractError("values and mesh disagree on the point count")
    channels = values.shape[1:]
    d = mesh.ndim
    res = tuple(int(r) for r in np.atleast_1d(grid_resolution))
    if len(res) == 1 and d > 1:
        res = res * d
    for r in res:
        if not (r >= 2 and (r & (r - 1)) == 0):
            raise ContractError("grid resolution must be a power of two")
    tau = params.resolved_tau(min(res))
    modes = ModeSet(res, k_max)

    # overflow guard on the actual deconvolution exponent
    max_exponent = 4.0 * math.pi**2 * tau * float(np.max(modes.squared_norms()))
    if max_exponent > 50.0:
        raise NumericError(
            f"deconvolution overflow: exponent {max_exponent:.1f} exceeds 50; "
            "reduce tau or k_max"
        )

    grid = Mesh.grid(res)
    radius = gridding_cutoff_radius(tau, k_max, d, params.cutoff_delta)
    spread_flat = np.zeros((grid.n_points,) + channels, dtype=np.float64)
    if radius < 0.45:
        graph = neighbors_within(mesh.coords, grid.coords, radius)
        tgt = graph.target_index()
        src = graph.src_index
        offs = wrap_offsets(grid.coords[tgt] - mesh.coords[src])
        w = heat_kernel(offs, tau, params.span)  # [E]
        contrib = values[src] * w.reshape((-1,) + (1,) * len(channels))
        np.add.at(spread_flat, tgt, contrib)
    else:
        # required radius spans the torus: dense spread, chunked over grid
        # points to bound the [chunk, n_s, d] intermediate
        chunk = max(1, (1 << 22) // mesh.n_points)
        for lo in range(0, grid.n_points, chunk):
            gpts = grid.coords[lo:lo + chunk]
            offs = wrap_offsets(gpts[:, None, :] - mesh.coords[None, :, :])
            w = heat_kernel(offs, tau, params.span)  # [chunk, n_s]
            spread_flat[lo:lo + chunk] = np.tensordot(w, values, axes=(1, 0))

    spread = spread_flat.reshape(res + channels)
    spectrum = dft_array(spread, axes=tuple(range(d)))
    block = spectrum
    for ax in range(d):
        block = np.take(block, modes.axis_indices[ax], axis=ax)

    # spectrum of the kernel sampled on the grid (periodized, so even and
    # real); equals m_total*(4 pi tau)^(d/2)*exp(-4 pi^2 tau |k|^2) up to
    # aliasing when the kernel is resolved by the grid
    kern = heat_kernel(wrap_offsets(grid.coords), tau, params.span)
    kern_hat = dft_array(kern.reshape(res), axes=tuple(range(d)))
    for ax in range(d):
        kern_hat = np.take(kern_hat, modes.axis_indices[ax], axis=ax)
    kern_hat = kern_hat.real
    if np.min(np.abs(kern_hat)) < 1e-280:
        raise NumericError("sampled kernel spectrum vanishes at a retained mode")
    return block / kern_hat.reshape(kern_hat.shape + (1,) * len(channels))


# ---------------------------------------------------------------------------
# learned-interpolation edge machinery


class EdgeGeometry:
    """Fixed per-edge features of one (graph, mesh pair) combination.

    offsets are wrapped target-minus-source differences; the scattered side
    (sources when interpolating onto the grid, targets when coming back)
    supplies the coordinate feature and indexes the per-point signal.
    """

    def __init__(self, graph: NeighborGraph, src_coords: np.ndarray,
                 tgt_coords: np.ndarray, scattered_side: str):
        if scattered_side not in ("src", "tgt"):
            raise ContractError("scattered_side must be 'src' or 'tgt'")
        tgt_ids = graph.target_index()
        src_ids = graph.src_index
        self.graph = graph
        self.offsets = wrap_offsets(tgt_coords[tgt_ids] - src_coords[src_ids])
        if scattered_side == "src":
            scat_ids, scat_coords = src_ids, src_coords
        else:
            scat_ids, scat_coords = tgt_ids, tgt_coords
        self.scat_coords = scat_coords[scat_ids]
        self.scat_plan = T.GatherPlan(scat_ids, scat_coords.shape[0])
        self.geo_features = np.concatenate([self.offsets, self.scat_coords], axis=1)
        counts = graph.counts.astype(np.float64)
        self.inv_counts = (1.0 / counts).reshape(-1, 1)


def interp_apply(v_src: T.Tensor, edge_weights: T.Tensor, graph: NeighborGraph,
                 norm: str = "neighbor_count") -> T.Tensor:
    """Weighted neighborhood aggregation.

    v_src: [batch, n_src, channels]; edge_weights: [batch, E, channels] or
    [E, 1] (broadcast).  Output: [batch, n_targets, channels], scaled by
    1/|N(target)| or by 1/n_src depending on ``norm``.
    """
    if norm not in ("neighbor_count", "n_s"):
        raise ContractError(f"unknown interpolation normalization {norm!r}")
    v_edges = T.gather(v_src, None, axis=1, plan=graph.gather_plan())
    weighted = T.mul(v_edges, edge_weights)
    agg = T.segment_sum(weighted, graph.splits, axis=1)
    if norm == "neighbor_count":
        counts = np.diff(graph.splits).astype(np.float64).reshape(-1, 1)
        return T.mul(agg, 1.0 / counts)
    return T.mul(agg, 1.0 / v_src.shape[1])
