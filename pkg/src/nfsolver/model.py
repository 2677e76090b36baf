"""Model assembly: scattered-to-grid interpolation wrapped around a stack of
spectral mixing layers, plus equispaced-only baselines.

Variants:

* ``nfs_flex_ln``   learned interpolation kernels, LayerNorm on
* ``nfs_gaus_ln``   Gaussian interpolation kernels, LayerNorm on
* ``nfs_flex_noln`` learned kernels, LayerNorm off
* ``fno``           plain spectral stack on an equispaced mesh, no LayerNorm
* ``pfno``          patchified spectral stack, LayerNorm on
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError
from .interp import EdgeGeometry, interp_apply
from .io_files import load_tensor, read_json, save_tensor, write_json
from .meshes import Mesh, build_neighbor_graph, neighbors_within
from .spectral import (
    ModeSet,
    conj_symmetrize,
    dft,
    imag_residue_check,
    init_spectral_weights,
    pad_modes,
    spectral_mix,
    truncate_modes,
)

VARIANTS = ("nfs_flex_ln", "nfs_gaus_ln", "nfs_flex_noln", "fno", "pfno")


def default_grid_resolution(n_s: int, ndim: int) -> tuple[int, ...]:
    """Nearest power of two to n_s^(1/ndim), at least 2, per axis."""
    per_axis = n_s ** (1.0 / ndim)
    exponent = max(1, int(math.floor(math.log2(per_axis) + 0.5)))
    return (2**exponent,) * ndim


@dataclass
class ModelSpec:
    variant: str
    ndim: int
    n_t: int
    n_out: int
    d_v: int = 32
    depth: int = 2
    k_max: int = 12
    grid_resolution: tuple[int, ...] | None = None
    interp_norm: str = "neighbor_count"
    budget_c: float = 2.0
    interp_eps: float | None = None
    kernel_override: str | None = None  # diagnostics: force 'constant' kernels
    patch_size: int = 4

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.ndim < 1 or self.n_t < 1 or self.n_out < 1 or self.d_v < 1:
            raise ConfigError("ndim, n_t, n_out, d_v must be positive")
        if self.grid_resolution is not None:
            self.grid_resolution = tuple(int(r) for r in self.grid_resolution)
            if len(self.grid_resolution) == 1 and self.ndim > 1:
                self.grid_resolution = self.grid_resolution * self.ndim
            if len(self.grid_resolution) != self.ndim:
                raise ConfigError("grid_resolution rank does not match ndim")
            if self.k_max > min(self.grid_resolution) // 2:
                raise ConfigError("k_max exceeds the grid Nyquist limit")
        elif self.variant.startswith("nfs"):
            raise ConfigError("nfs variants need an explicit grid_resolution")
        if self.interp_norm not in ("neighbor_count", "n_s"):
            raise ConfigError(f"unknown interp_norm {self.interp_norm!r}")

    @property
    def d_a(self) -> int:
        """Input channels: observed timestamps plus coordinate channels."""
        return self.n_t + self.ndim

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["grid_resolution"] is not None:
            d["grid_resolution"] = list(d["grid_resolution"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        if d.get("grid_resolution") is not None:
            d["grid_resolution"] = tuple(d["grid_resolution"])
        return cls(**d)


# ---------------------------------------------------------------------------
# parameter helpers


class ParamFactory:
    """Creates named parameters in a fixed order from one seeded generator,
    so that identical (spec, seed) pairs always produce identical weights."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.params: list[T.Parameter] = []

    def linear(self, name: str, fan_in: int, fan_out: int):
        bound = 1.0 / math.sqrt(fan_in)
        w = T.Parameter(f"{name}.W", self.rng.uniform(-bound, bound, (fan_in, fan_out)))
        b = T.Parameter(f"{name}.b", self.rng.uniform(-bound, bound, fan_out))
        self.params += [w, b]
        return w, b

    def raw(self, name: str, value) -> T.Parameter:
        p = T.Parameter(name, value)
        self.params.append(p)
        return p


# ---------------------------------------------------------------------------
# interpolation kernels


class FlexKernel:
    """One-hidden-layer network scoring each edge from (wrapped offset,
    scattered-point coordinate, scattered-point signal).

    The first layer is split into a geometry block and a signal block so the
    per-edge geometric part (fixed across the batch) is projected once.
    """

    def __init__(self, factory: ParamFactory, name: str, ndim: int, d_a: int, d_v: int):
        hidden = 4 * d_v
        fan_in = 2 * ndim + d_a
        bound = 1.0 / math.sqrt(fan_in)
        self.w_geo = factory.raw(
            f"{name}.W_geo", factory.rng.uniform(-bound, bound, (2 * ndim, hidden)))
        self.w_sig = factory.raw(
            f"{name}.W_sig", factory.rng.uniform(-bound, bound, (d_a, hidden)))
        self.b1 = factory.raw(f"{name}.b1", factory.rng.uniform(-bound, bound, hidden))
        self.w2, self.b2 = factory.linear(f"{name}.out", hidden, d_v)

    def edge_weights(self, a_points: T.Tensor, geo: EdgeGeometry) -> T.Tensor:
        # gather the narrow signal onto edges before the wide projection so
        # the gather (and its scatter-add adjoint) move d_a channels, not 4*d_v
        a_edges = T.gather(a_points, None, axis=1, plan=geo.scat_plan)
        geo_h = T.add(T.matmul(T.Tensor(geo.geo_features), self.w_geo), self.b1)
        h = T.gelu(T.add(T.matmul(a_edges, self.w_sig), geo_h))
        return T.add(T.matmul(h, self.w2), self.b2)  # [B, E, d_v]


class GaussianKernel:
    """Anisotropic Gaussian bump over the edge offset: scale * exp(-(delta -
    mu)^T diag(gamma)^-1 (delta - mu)); gamma and scale stored as logs."""

    def __init__(self, factory: ParamFactory, name: str, ndim: int,
                 gamma0: float = 0.0025):
        self.mu = factory.raw(f"{name}.mu", np.zeros(ndim))
        self.log_gamma = factory.raw(f"{name}.log_gamma",
                                     np.full(ndim, math.log(gamma0)))
        self.log_beta = factory.raw(f"{name}.log_beta", np.zeros(()))

    def edge_weights(self, a_points: T.Tensor, geo: EdgeGeometry) -> T.Tensor:
        delta = T.sub(T.Tensor(geo.offsets), self.mu)  # [E, d]
        inv_gamma = T.exp(T.neg(self.log_gamma))
        quad = T.tsum(T.mul(T.mul(delta, delta), inv_gamma), axis=1, keepdims=True)
        return T.mul(T.exp(T.neg(quad)), T.exp(self.log_beta))  # [E, 1]


class ConstantKernel:
    """Weight 1 on every edge; with self-only neighborhoods the interpolation
    becomes the identity (diagnostic baseline)."""

    def edge_weights(self, a_points: T.Tensor, geo: EdgeGeometry) -> T.Tensor:
        return T.Tensor(np.ones((geo.offsets.shape[0], 1)))


# ---------------------------------------------------------------------------
# spectral mixing layer


class FnoLayer:
    """One mixing layer: spectral channel mixing over retained modes, a 1x1
    convolution residual, optional LayerNorm, then GELU."""

    def __init__(self, factory: ParamFactory, name: str, d_v: int, k_max: int,
                 ndim: int, layer_norm: bool):
        block = (2 * k_max - 1,) * ndim
        self.k_max = k_max
        self.ndim = ndim
        self.weights = factory.raw(
            f"{name}.R", init_spectral_weights(
                factory.rng, ModeSet((2 * k_max,) * ndim, k_max), d_v))
        self.w_res, self.b_res = factory.linear(f"{name}.res", d_v, d_v)
        if layer_norm:
            self.ln_gain = factory.raw(f"{name}.ln_gain", np.ones(d_v))
            self.ln_bias = factory.raw(f"{name}.ln_bias", np.zeros(d_v))
        else:
            self.ln_gain = self.ln_bias = None
        assert self.weights.data.shape[:ndim] == block

    def forward(self, v: T.Tensor, modes: ModeSet) -> T.Tensor:
        axes = tuple(range(1, self.ndim + 1))
        spectrum = dft(v, axes)
        block = truncate_modes(spectrum, modes, axes)
        mixed = spectral_mix(block, conj_symmetrize(self.weights, modes))
        padded = pad_modes(mixed, modes, axes)
        spatial = dft(padded, axes, inverse=True)
        imag_residue_check(spatial.data)
        combined = T.add(T.real(spatial),
                         T.add(T.matmul(v, self.w_res), self.b_res))
        if self.ln_gain is not None:
            combined = T.layer_norm(combined, self.ln_gain, self.ln_bias)
        return T.gelu(combined)


# ---------------------------------------------------------------------------
# coordinate channels


def append_coordinates(a: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Concatenate the point coordinates onto the signal channels.

    a: [batch, n_pts, n_t]; coords: [n_pts, d] -> [batch, n_pts, n_t + d].
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 3:
        raise ContractError("expected a [batch, points, channels] array")
    if a.shape[1] != coords.shape[0]:
        raise ContractError("signal and mesh disagree on the point count")
    tiled = np.broadcast_to(coords[None], (a.shape[0],) + coords.shape)
    return np.concatenate([a, tiled], axis=2)


# ---------------------------------------------------------------------------
# models


class _MixerCore:
    """Lift, mixing stack, and projector shared by every variant."""

    def __init__(self, spec: ModelSpec, factory: ParamFactory, layer_norm: bool):
        self.spec = spec
        self.lift_w, self.lift_b = factory.linear("lift", spec.d_a, spec.d_v)
        self.layers = [
            FnoLayer(factory, f"layers.{i}", spec.d_v, spec.k_max, spec.ndim,
                     layer_norm)
            for i in range(spec.depth)
        ]
        self.proj1_w, self.proj1_b = factory.linear("proj.hidden", spec.d_v,
                                                    4 * spec.d_v)
        self.proj2_w, self.proj2_b = factory.linear("proj.out", 4 * spec.d_v,
                                                    spec.n_out)

    def lift(self, a: T.Tensor) -> T.Tensor:
        return T.add(T.matmul(a, self.lift_w), self.lift_b)

    def run_stack(self, v: T.Tensor, modes: ModeSet) -> T.Tensor:
        for layer in self.layers:
            v = layer.forward(v, modes)
        return v

    def project(self, v: T.Tensor) -> T.Tensor:
        h = T.gelu(T.add(T.matmul(v, self.proj1_w), self.proj1_b))
        return T.add(T.matmul(h, self.proj2_w), self.proj2_b)


class NfsModel:
    """Scattered-input spectral model: lift, learned interpolation onto an
    equispaced grid, mixing stack, interpolation back, projection."""

    def __init__(self, spec: ModelSpec, seed: int):
        if not spec.variant.startswith("nfs"):
            raise ConfigError(f"NfsModel cannot build variant {spec.variant!r}")
        self.spec = spec
        self.seed = seed
        factory = ParamFactory(seed)
        layer_norm = not spec.variant.endswith("noln")
        kernel_kind = spec.kernel_override or (
            "gaussian" if "gaus" in spec.variant else "flex")
        self.kernel_in = self._make_kernel(factory, "interp_in", kernel_kind)
        self.kernel_out = self._make_kernel(factory, "interp_out", kernel_kind)
        self.core = _MixerCore(spec, factory, layer_norm)
        self.params = factory.params
        self.grid = Mesh.grid(spec.grid_resolution)
        self.modes = ModeSet(spec.grid_resolution, spec.k_max)
        self._geometry_cache: dict[str, dict] = {}

    def _make_kernel(self, factory: ParamFactory, name: str, kind: str):
        if kind == "flex":
            return FlexKernel(factory, name, self.spec.ndim, self.spec.d_a,
                              self.spec.d_v)
        if kind == "gaussian":
            return GaussianKernel(factory, name, self.spec.ndim)
        if kind == "constant":
            return ConstantKernel()
        raise ConfigError(f"unknown kernel kind {kind!r}")

    def geometry(self, mesh: Mesh) -> dict:
        """Neighbor graphs and edge features for one input mesh, cached by
        the mesh content hash so unseen meshes are handled by rebuilding."""
        key = mesh.fingerprint
        if key not in self._geometry_cache:
            if mesh.ndim != self.spec.ndim:
                raise ContractError("mesh dimension does not match the model")
            if self.spec.interp_eps is not None:
                g_in = neighbors_within(mesh.coords, self.grid.coords,
                                        self.spec.interp_eps)
                g_out = neighbors_within(self.grid.coords, mesh.coords,
                                         self.spec.interp_eps)
            else:
                g_in = build_neighbor_graph(mesh.coords, self.grid.coords,
                                            self.spec.budget_c)
                g_out = build_neighbor_graph(self.grid.coords, mesh.coords,
                                             self.spec.budget_c)
            self._geometry_cache[key] = {
                "graph_in": g_in,
                "geo_in": EdgeGeometry(g_in, mesh.coords, self.grid.coords,
                                       scattered_side="src"),
                "graph_out": g_out,
                "geo_out": EdgeGeometry(g_out, self.grid.coords, mesh.coords,
                                        scattered_side="tgt"),
            }
        return self._geometry_cache[key]

    def forward(self, a: np.ndarray, mesh: Mesh, capture: dict | None = None) -> T.Tensor:
        """a: [batch, n_s, n_t] samples on the mesh -> [batch, n_s, n_out]."""
        geom = self.geometry(mesh)
        full = T.Tensor(append_coordinates(a, mesh.coords))
        v = self.core.lift(full)

        w_in = self.kernel_in.edge_weights(full, geom["geo_in"])
        v_grid = interp_apply(v, w_in, geom["graph_in"], self.spec.interp_norm)
        if capture is not None:
            capture["pre_stack"] = v_grid

        shape = (v_grid.shape[0],) + self.spec.grid_resolution + (self.spec.d_v,)
        v_nd = T.reshape(v_grid, shape)
        v_nd = self.core.run_stack(v_nd, self.modes)
        v_grid = T.reshape(v_nd, v_grid.shape)
        if capture is not None:
            capture["post_stack"] = v_grid

        w_out = self.kernel_out.edge_weights(full, geom["geo_out"])
        v_out = interp_apply(v_grid, w_out, geom["graph_out"],
                             self.spec.interp_norm)
        return self.core.project(v_out)

    def project_state(self, state: T.Tensor) -> T.Tensor:
        """Map a captured grid state through this model's own projector."""
        return self.core.project(state)


class FnoModel:
    """Equispaced baseline: lift, mixing stack, projection; the input mesh
    must be an equispaced grid (no interpolation layers)."""

    layer_norm = False

    def __init__(self, spec: ModelSpec, seed: int):
        self.spec = spec
        self.seed = seed
        factory = ParamFactory(seed)
        self.core = _MixerCore(spec, factory, self.layer_norm)
        self.params = factory.params
        self._modes_cache: dict[tuple, ModeSet] = {}

    def _modes(self, resolution: tuple) -> ModeSet:
        if resolution not in self._modes_cache:
            self._modes_cache[resolution] = ModeSet(resolution, self.spec.k_max)
        return self._modes_cache[resolution]

    def forward(self, a: np.ndarray, mesh: Mesh, capture: dict | None = None) -> T.Tensor:
        if not mesh.equispaced:
            raise ContractError("fno/pfno variants need an equispaced mesh")
        res = mesh.resolution
        modes = self._modes(res)
        full = T.Tensor(append_coordinates(a, mesh.coords))
        v = self.core.lift(full)
        shape = (v.shape[0],) + res + (self.spec.d_v,)
        v_nd = T.reshape(v, shape)
        if capture is not None:
            capture["pre_stack"] = T.reshape(v_nd, v.shape)
        v_nd = self.core.run_stack(v_nd, modes)
        v_flat = T.reshape(v_nd, v.shape)
        if capture is not None:
            capture["post_stack"] = v_flat
        return self.core.project(v_flat)

    def project_state(self, state: T.Tensor) -> T.Tensor:
        return self.core.project(state)


class PfnoModel:
    """Patchified equispaced baseline: non-overlapping patches become
    channels, the mixing stack runs on the coarse grid, then patches are
    restored.  LayerNorm is on."""

    def __init__(self, spec: ModelSpec, seed: int):
        self.spec = spec
        self.seed = seed
        p = spec.patch_size
        if p < 1:
            raise ConfigError("patch_size must be >= 1")
        factory = ParamFactory(seed)
        d_patch_in = spec.d_a * p**spec.ndim
        self.embed_w, self.embed_b = factory.linear("embed", d_patch_in, spec.d_v)
        self.layers = [
            FnoLayer(factory, f"layers.{i}", spec.d_v, spec.k_max, spec.ndim,
                     layer_norm=True)
            for i in range(spec.depth)
        ]
        d_patch_out = spec.n_out * p**spec.ndim
        self.deembed_w, self.deembed_b = factory.linear("deembed", spec.d_v,
                                                        d_patch_out)
        self.params = factory.params

    def forward(self, a: np.ndarray, mesh: Mesh, capture: dict | None = None) -> T.Tensor:
        if not mesh.equispaced:
            raise ContractError("fno/pfno variants need an equispaced mesh")
        p = self.spec.patch_size
        res = mesh.resolution
        for r in res:
            if r % p:
                raise ConfigError("grid extents must be divisible by patch_size")
        coarse = tuple(r // p for r in res)
        if self.spec.k_max > min(coarse) // 2:
            raise ConfigError("k_max exceeds the Nyquist of the patched grid")
        modes = ModeSet(coarse, self.spec.k_max)

        full = T.Tensor(append_coordinates(a, mesh.coords))
        batch = full.shape[0]
        grid_nd = T.reshape(full, (batch,) + res + (self.spec.d_a,))
        patched = patchify(grid_nd, p)  # [B, *coarse, d_a * p^d]
        v = T.add(T.matmul(patched, self.embed_w), self.embed_b)
        for layer in self.layers:
            v = layer.forward(v, modes)
        out = T.add(T.matmul(v, self.deembed_w), self.deembed_b)
        unpatched = unpatchify(out, p, self.spec.n_out)  # [B, *res, n_out]
        return T.reshape(unpatched, (batch, mesh.n_points, self.spec.n_out))


def patchify(grid_nd: T.Tensor, p: int) -> T.Tensor:
    """[B, r_1..r_d, c] -> [B, r_1/p..r_d/p, c*p^d]; within each patch block
    the original channels vary fastest, patch cells raster-scan above them."""
    shape = grid_nd.shape
    d = len(shape) - 2
    batch, c = shape[0], shape[-1]
    split = [batch]
    for r in shape[1:-1]:
        split += [r // p, p]
    split.append(c)
    x = T.reshape(grid_nd, tuple(split))
    # [B, r1/p, p, r2/p, p, .., c] -> [B, r1/p, r2/p, .., p, p, .., c]
    order = [0] + [1 + 2 * i for i in range(d)] + [2 + 2 * i for i in range(d)] \
        + [1 + 2 * d]
    x = T.transpose(x, tuple(order))
    coarse = tuple(shape[1 + i] // p for i in range(d))
    return T.reshape(x, (batch,) + coarse + (c * p**d,))


def unpatchify(coarse_nd: T.Tensor, p: int, c: int) -> T.Tensor:
    """Inverse of patchify for channel count c."""
    shape = coarse_nd.shape
    d = len(shape) - 2
    batch = shape[0]
    coarse = shape[1:-1]
    x = T.reshape(coarse_nd, (batch,) + coarse + (p,) * d + (c,))
    order = [0]
    for i in range(d):
        order += [1 + i, 1 + d + i]
    order.append(1 + 2 * d)
    x = T.transpose(x, tuple(order))
    full = tuple(coarse[i] * p for i in range(d))
    return T.reshape(x, (batch,) + full + (c,))


def build_model(spec: ModelSpec, seed: int):
    if spec.variant == "fno":
        return FnoModel(spec, seed)
    if spec.variant == "pfno":
        return PfnoModel(spec, seed)
    return NfsModel(spec, seed)


# ---------------------------------------------------------------------------
# checkpoints


def save_model(model, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_json(directory / "spec.json", {
        "model": model.spec.to_dict(),
        "seed": model.seed,
    })
    pdir = directory / "params"
    pdir.mkdir(exist_ok=True)
    for p in model.params:
        save_tensor(pdir / f"{p.name}.nft", p.data)


def load_model(directory):
    directory = Path(directory)
    meta = read_json(directory / "spec.json")
    spec = ModelSpec.from_dict(meta["model"])
    model = build_model(spec, int(meta["seed"]))
    pdir = directory / "params"
    for p in model.params:
        path = pdir / f"{p.name}.nft"
        if not path.exists():
            raise ContractError(f"checkpoint is missing parameter {p.name!r}")
        value = load_tensor(path)
        if value.shape != p.data.shape:
            raise ContractError(f"checkpoint shape mismatch for {p.name!r}")
        p.data = value
    return model
