"""Gridding NUFFT and learned-interpolation edge machinery."""

import math

import numpy as np
import pytest

from nfsolver import tensor as T
from nfsolver.errors import ContractError, NumericError
from nfsolver.interp import (
    EdgeGeometry,
    HeatKernelParams,
    gridding_nufft,
    heat_kernel,
    interp_apply,
)
from nfsolver.meshes import Mesh, build_neighbor_graph, neighbors_within
from nfsolver.spectral import ModeSet, dft_array


def nudft_direct(values, coords, modes: ModeSet):
    """Direct non-uniform DFT: per retained mode k, sum_i f_i e^{-2i pi k.x_i}.

    Python loop over modes; no FFT, no gridding."""
    grids = modes.frequency_grids()
    flat_freqs = np.stack([g.reshape(-1) for g in grids], axis=1)  # [M, d]
    out = np.zeros(len(flat_freqs), dtype=np.complex128)
    for m, k in enumerate(flat_freqs):
        phase = np.exp(-2j * np.pi * (coords @ k.astype(np.float64)))
        out[m] = np.sum(values * phase)
    return out.reshape(modes.block_extents)


class TestHeatKernel:
    def test_direct_truncated_sum(self):
        # tau=0.1, offset 0, span 3: sum over |l|<=3 of exp(-l^2/0.4)
        want = sum(math.exp(-(l**2) / 0.4) for l in range(-3, 4))
        got = heat_kernel(np.array([[0.0]]), tau=0.1, span=3)[0]
        assert got == pytest.approx(want, rel=1e-14)

    def test_even_symmetry_and_periodicity(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-0.5, 0.5, size=(50, 2))
        assert np.allclose(heat_kernel(x, 0.05), heat_kernel(-x, 0.05))
        assert np.allclose(heat_kernel(x, 0.05, span=3),
                           heat_kernel(x + 1.0, 0.05, span=3), rtol=1e-12)

    def test_rejects_nonpositive_tau(self):
        with pytest.raises(ContractError):
            heat_kernel(np.zeros((1, 1)), 0.0)


class TestGriddingNufft:
    def test_zero_values_zero_spectrum(self):
        mesh = Mesh.random(64, 1, np.random.default_rng(1))
        out = gridding_nufft(np.zeros(64), mesh, 64, k_max=5)
        assert out.shape == (9,)
        assert np.all(out == 0)

    def test_exact_on_coincident_grid_any_tau(self):
        # sources on the grid itself: sampled-kernel deconvolution recovers
        # the plain DFT essentially exactly, wide or narrow kernel alike
        res = 32
        grid = Mesh.grid((res,))
        rng = np.random.default_rng(2)
        f = rng.normal(size=res)
        full = dft_array(f, axes=(0,))
        modes = ModeSet((res,), 6)
        want = full[modes.axis_indices[0]]
        for tau in (1.0 / (math.pi * res), 1e-6):
            got = gridding_nufft(f, grid, res, k_max=6,
                                 params=HeatKernelParams(tau=tau))
            rel = np.max(np.abs(got - want)) / np.max(np.abs(want))
            assert rel < 1e-6, f"tau={tau}: rel={rel}"

    def test_pure_mode_on_random_mesh(self):
        # cos mode m=5 on 256 scattered points: dominant frequency |k|=5,
        # coefficient within 5% of the direct non-uniform DFT
        rng = np.random.default_rng(3)
        mesh = Mesh.random(256, 1, rng)
        m = 5
        f = np.cos(2 * np.pi * m * mesh.coords[:, 0])
        k_max = 13
        got = gridding_nufft(f, mesh, 256, k_max=k_max)
        modes = ModeSet((256,), k_max)
        want = nudft_direct(f, mesh.coords, modes)
        freqs = modes.axis_freqs[0]
        assert abs(freqs[np.argmax(np.abs(got))]) == m
        at_m = freqs.tolist().index(m)
        assert abs(got[at_m] - want[at_m]) / abs(want[at_m]) < 0.05

    def test_matches_direct_oracle_all_modes_1d(self):
        rng = np.random.default_rng(4)
        mesh = Mesh.random(200, 1, rng)
        x = mesh.coords[:, 0]
        f = np.sin(2 * np.pi * x) + 0.5 * np.cos(2 * np.pi * 3 * x) + 0.1
        k_max = 8
        got = gridding_nufft(f, mesh, 128, k_max=k_max)
        want = nudft_direct(f, mesh.coords, ModeSet((128,), k_max))
        scale = np.max(np.abs(want))
        assert np.max(np.abs(got - want)) / scale < 0.01

    def test_matches_direct_oracle_2d(self):
        rng = np.random.default_rng(5)
        mesh = Mesh.random(300, 2, rng)
        xy = mesh.coords
        f = np.cos(2 * np.pi * (2 * xy[:, 0] - xy[:, 1])) + 0.3
        k_max = 4
        got = gridding_nufft(f, mesh, 32, k_max=k_max)
        want = nudft_direct(f, xy, ModeSet((32, 32), k_max))
        scale = np.max(np.abs(want))
        assert got.shape == (7, 7)
        assert np.max(np.abs(got - want)) / scale < 0.02

    def test_channels_match_separate_runs(self):
        rng = np.random.default_rng(6)
        mesh = Mesh.random(100, 1, rng)
        f = rng.normal(size=(100, 2))
        both = gridding_nufft(f, mesh, 64, k_max=5)
        assert both.shape == (9, 2)
        for c in range(2):
            single = gridding_nufft(f[:, c], mesh, 64, k_max=5)
            assert np.allclose(both[:, c], single, rtol=1e-12, atol=1e-12)

    def test_linear_in_values(self):
        rng = np.random.default_rng(7)
        mesh = Mesh.random(80, 1, rng)
        f1 = rng.normal(size=80)
        f2 = rng.normal(size=80)
        a = gridding_nufft(2.0 * f1 - 3.0 * f2, mesh, 64, k_max=4)
        b = 2.0 * gridding_nufft(f1, mesh, 64, k_max=4) \
            - 3.0 * gridding_nufft(f2, mesh, 64, k_max=4)
        assert np.allclose(a, b, rtol=1e-10, atol=1e-12)

    def test_overflow_guard(self):
        mesh = Mesh.random(32, 1, np.random.default_rng(8))
        with pytest.raises(NumericError):
            gridding_nufft(np.ones(32), mesh, 8, k_max=3,
                           params=HeatKernelParams(tau=1.0))

    def test_rejects_non_power_of_two_grid(self):
        mesh = Mesh.random(32, 1, np.random.default_rng(9))
        with pytest.raises(ContractError):
            gridding_nufft(np.ones(32), mesh, 24, k_max=3)


class TestEdgeGeometry:
    def test_offsets_and_scattered_side(self):
        src = np.array([[0.0], [0.9]])
        tgt = np.array([[0.1]])
        g = neighbors_within(src, tgt, 0.25)
        geo = EdgeGeometry(g, src, tgt, scattered_side="src")
        # both sources are neighbors; offsets wrap: 0.1-0.0=0.1, 0.1-0.9=0.2
        assert np.allclose(sorted(geo.offsets[:, 0].tolist()), [0.1, 0.2])
        assert np.allclose(np.sort(geo.scat_coords[:, 0]), [0.0, 0.9])
        geo_t = EdgeGeometry(g, src, tgt, scattered_side="tgt")
        assert np.allclose(geo_t.scat_coords, 0.1)
        assert geo.geo_features.shape == (2, 2)

    def test_rejects_bad_side(self):
        src = np.array([[0.0]])
        g = neighbors_within(src, src, 0.1)
        with pytest.raises(ContractError):
            EdgeGeometry(g, src, src, scattered_side="both")


def interp_oracle(v, w, graph, norm):
    """Dense two-loop reference for the weighted neighborhood aggregation."""
    B, S, C = v.shape
    Tn = graph.n_targets
    out = np.zeros((B, Tn, C))
    for b in range(B):
        for t in range(Tn):
            lo, hi = graph.splits[t], graph.splits[t + 1]
            for e in range(lo, hi):
                out[b, t] += v[b, graph.src_index[e]] * w[b, e]
            scale = (hi - lo) if norm == "neighbor_count" else S
            out[b, t] /= scale
    return out


class TestInterpApply:
    def make_case(self, seed=0):
        rng = np.random.default_rng(seed)
        src = rng.uniform(0, 1, size=(30, 2))
        tgt = rng.uniform(0, 1, size=(12, 2))
        graph = build_neighbor_graph(src, tgt)
        v = rng.normal(size=(2, 30, 3))
        w = rng.normal(size=(2, graph.n_edges, 3))
        return graph, v, w

    def test_two_loop_oracle_both_norms(self):
        graph, v, w = self.make_case()
        for norm in ("neighbor_count", "n_s"):
            got = interp_apply(T.Tensor(v), T.Tensor(w), graph, norm=norm)
            want = interp_oracle(v, w, graph, norm)
            assert np.allclose(got.data, want, rtol=1e-12, atol=1e-12)

    def test_zero_values_zero_output(self):
        graph, v, w = self.make_case(1)
        out = interp_apply(T.Tensor(np.zeros_like(v)), T.Tensor(w), graph)
        assert np.all(out.data == 0)

    def test_linear_in_values(self):
        graph, v, w = self.make_case(2)
        v2 = np.random.default_rng(3).normal(size=v.shape)
        wt = T.Tensor(w)
        a = interp_apply(T.Tensor(1.5 * v - 2.0 * v2), wt, graph)
        b = T.sub(T.mul(interp_apply(T.Tensor(v), wt, graph), 1.5),
                  T.mul(interp_apply(T.Tensor(v2), wt, graph), 2.0))
        assert np.allclose(a.data, b.data, rtol=1e-12, atol=1e-12)

    def test_constant_weight_single_neighbor_copies(self):
        src = np.array([[0.0], [0.5]])
        tgt = np.array([[0.02], [0.52]])
        graph = neighbors_within(src, tgt, 0.05)
        assert np.array_equal(graph.counts, [1, 1])
        v = np.random.default_rng(4).normal(size=(1, 2, 3))
        w = np.ones((1, graph.n_edges, 1))
        out = interp_apply(T.Tensor(v), T.Tensor(w), graph)
        assert np.allclose(out.data[0, 0], v[0, 0])
        assert np.allclose(out.data[0, 1], v[0, 1])

    def test_permutation_invariance(self):
        # permute the scattered sources; weights depend only on geometry, so
        # a consistently rebuilt graph yields the identical output
        rng = np.random.default_rng(5)
        src = rng.uniform(0, 1, size=(25, 1))
        tgt = Mesh.grid((8,)).coords
        v = rng.normal(size=(1, 25, 2))

        def run(order):
            s = src[order]
            graph = build_neighbor_graph(s, tgt)
            geo = EdgeGeometry(graph, s, tgt, scattered_side="src")
            w = np.exp(-np.sum(geo.offsets**2, axis=1, keepdims=True) / 0.01)
            return interp_apply(T.Tensor(v[:, order]), T.Tensor(w), graph)

        base = run(np.arange(25))
        perm = run(rng.permutation(25))
        assert np.allclose(base.data, perm.data, rtol=1e-12, atol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(6)
        src = rng.uniform(0, 1, size=(10, 1))
        tgt = rng.uniform(0, 1, size=(6, 1))
        graph = build_neighbor_graph(src, tgt)
        v = T.Parameter("v", rng.normal(size=(2, 10, 3)))
        w = T.Parameter("w", rng.normal(size=(2, graph.n_edges, 3)))

        def loss():
            out = interp_apply(v, w, graph)
            return T.tsum(T.mul(out, out))

        worst = T.check_gradients(loss, [v, w], seed=0)
        assert worst < 1e-7

    def test_rejects_unknown_norm(self):
        graph, v, w = self.make_case(7)
        with pytest.raises(ContractError):
            interp_apply(T.Tensor(v), T.Tensor(w), graph, norm="mean")
