"""Generator tests: random fields, the four solvers, and dataset packaging.

Each solver is checked against an independent oracle: the random field
against its stated spectral density by Monte Carlo, Burgers against the exact
single-mode heat decay, KdV against its conservation laws, Darcy against the
analytic unit-square series solution, and the vorticity solver against the
exact spatial-mean ODE.
"""

import numpy as np
import pytest

from nfsolver.datagen import (
    DatasetConfig,
    GrfSpec,
    default_forcing,
    generate_dataset,
    kdv_initial_condition,
    load_dataset,
    sample_grf,
    solve_burgers,
    solve_darcy,
    solve_kdv,
    solve_ns_vorticity,
    spectral_density,
    subsample_indices,
)
from nfsolver.datagen.darcy import conjugate_gradient
from nfsolver.datagen.dataset import _check_mass, simulation_coords
from nfsolver.errors import ConfigError, ContractError, ConvergenceError


# ---------------------------------------------------------------- random field


class TestGrf:
    def test_mode_variances_match_density_1d(self):
        # oracle: E |fft(field)/n|^2 must equal the stated spectral density
        spec = GrfSpec((64,), scale=2.0, shift=10.0, power=1.5)
        rng = np.random.default_rng(7)
        n_draws = 1000
        acc = np.zeros(64)
        for _ in range(n_draws):
            field = sample_grf(spec, rng)
            acc += np.abs(np.fft.fft(field) / 64.0) ** 2
        measured = acc / n_draws
        expected = spectral_density(spec)
        rel = np.abs(measured - expected) / expected
        assert rel.max() < 0.10

    def test_mode_variances_match_density_2d(self):
        spec = GrfSpec((16, 16), scale=1.0, shift=9.0, power=2.0)
        rng = np.random.default_rng(11)
        n_draws = 1000
        acc = np.zeros((16, 16))
        for _ in range(n_draws):
            field = sample_grf(spec, rng)
            acc += np.abs(np.fft.fft2(field) / 256.0) ** 2
        measured = acc / n_draws
        expected = spectral_density(spec)
        rel = np.abs(measured - expected) / expected
        assert rel.max() < 0.12

    def test_real_float_output(self):
        field = sample_grf(GrfSpec((32,), 1.0, 25.0, 2.0), np.random.default_rng(0))
        assert field.dtype == np.float64 and field.shape == (32,)

    def test_deterministic_under_seed(self):
        spec = GrfSpec((32, 32), 1.0, 25.0, 2.0)
        a = sample_grf(spec, np.random.default_rng(5))
        b = sample_grf(spec, np.random.default_rng(5))
        assert np.array_equal(a, b)

    def test_rejects_bad_parameters(self):
        with pytest.raises(ContractError):
            GrfSpec((20,), 1.0, 1.0, 1.0)  # not a power of two
        with pytest.raises(ContractError):
            GrfSpec((16,), -1.0, 1.0, 1.0)


# --------------------------------------------------------------------- burgers


def _low_pass_samples(rng, n_fine, cutoff, scale):
    """A smooth random profile exactly representable on all test grids."""
    spec = GrfSpec((n_fine,), scale=scale, shift=25.0, power=2.0)
    field = sample_grf(spec, rng)
    spectrum = np.fft.rfft(field)
    spectrum[cutoff + 1 :] = 0.0
    return np.fft.irfft(spectrum, n_fine)


class TestBurgers:
    def test_zero_stays_zero(self):
        out = solve_burgers(np.zeros(64), 0.01, np.linspace(0.0, 0.5, 4))
        assert np.array_equal(out, np.zeros((4, 64)))

    def test_mass_conserved(self):
        rng = np.random.default_rng(3)
        u0 = sample_grf(GrfSpec((256,), 62.5, 25.0, 2.0), rng)
        out = solve_burgers(u0, 0.01, np.linspace(0.0, 1.0, 11))
        means = out.mean(axis=1)
        scale = max(abs(means[0]), float(np.sqrt(np.mean(u0**2))))
        assert np.abs(means - means[0]).max() / scale < 1e-8

    def test_single_mode_viscous_decay_matches_heat_kernel(self):
        # oracle: for small amplitude the nonlinearity is negligible and the
        # mode decays exactly like exp(-nu (2 pi)^2 t)
        n, nu, amp, t_end = 64, 0.5, 1e-3, 0.1
        x = np.arange(n) / n
        u0 = amp * np.sin(2.0 * np.pi * x)
        out = solve_burgers(u0, nu, np.linspace(0.0, t_end, 11))
        expected = amp * np.exp(-nu * 4.0 * np.pi**2 * t_end) * np.sin(2.0 * np.pi * x)
        rel = np.linalg.norm(out[-1] - expected) / np.linalg.norm(expected)
        assert rel < 1e-3
        l2 = np.sqrt((out**2).mean(axis=1))
        assert np.all(np.diff(l2) <= 1e-15)  # monotone energy decay

    def test_grid_refinement_convergence(self):
        # halving dx must shrink the terminal error against a 4x-fine
        # reference by at least 3x
        rng = np.random.default_rng(12)
        u0_fine = _low_pass_samples(rng, 512, cutoff=21, scale=62.5)
        times = np.array([0.0, 0.25])
        ref = solve_burgers(u0_fine, 0.01, times)[-1]
        err = {}
        for n in (64, 128):
            sol = solve_burgers(u0_fine[:: 512 // n], 0.01, times)[-1]
            err[n] = np.linalg.norm(sol - ref[:: 512 // n]) / np.sqrt(n)
        assert err[64] / err[128] >= 3.0

    def test_divergence_guard(self):
        u0 = 2.0e3 * np.sin(2.0 * np.pi * np.arange(64) / 64)
        with pytest.raises(ConvergenceError):
            solve_burgers(u0, 0.01, np.array([0.0, 0.1]))

    def test_validation(self):
        with pytest.raises(ContractError):
            solve_burgers(np.zeros(48), 0.01, np.array([0.0, 1.0]))
        with pytest.raises(ContractError):
            solve_burgers(np.zeros(64), -0.1, np.array([0.0, 1.0]))
        with pytest.raises(ContractError):
            solve_burgers(np.zeros(64), 0.01, np.array([0.5, 1.0]))


# ------------------------------------------------------------------------ kdv


class TestKdv:
    def test_zero_stays_zero(self):
        out = solve_kdv(np.zeros(64), np.array([0.0, 0.05]))
        assert np.array_equal(out, np.zeros((2, 64)))

    def test_initial_condition_formula(self):
        # oracle: replay the documented draws and sum the snapped cosines
        n = 128
        u0 = kdv_initial_condition(np.random.default_rng(9), n)
        rng = np.random.default_rng(9)
        a = rng.uniform(0.0, 2.0 * np.pi, 10)
        b = rng.uniform(0.0, 10.0, 10)
        c = rng.normal(0.0, 0.5, 10)
        x = np.arange(n) / n
        expected = np.zeros(n)
        for i in range(10):
            m = max(1, round(0.5 * np.sqrt(max(c[i] + b[i], 0.0))))
            expected += 0.5 * c[i] * np.cos(2.0 * np.pi * m * x - a[i])
        assert np.allclose(u0, expected, atol=1e-14)

    def test_initial_condition_is_band_limited(self):
        u0 = kdv_initial_condition(np.random.default_rng(4), 256)
        spectrum = np.abs(np.fft.rfft(u0))
        assert spectrum[8:].max() < 1e-10  # cycle counts snap to small integers

    def test_mass_conserved(self):
        u0 = kdv_initial_condition(np.random.default_rng(2), 256)
        out = solve_kdv(u0, np.linspace(0.0, 0.3, 7))
        means = out.mean(axis=1)
        scale = max(abs(means[0]), float(np.sqrt(np.mean(u0**2))))
        assert np.abs(means - means[0]).max() / scale < 1e-8

    def test_l2_norm_conserved_short_horizon(self):
        u0 = kdv_initial_condition(np.random.default_rng(5), 256)
        out = solve_kdv(u0, np.linspace(0.0, 0.2, 5))
        l2 = np.sqrt((out**2).mean(axis=1))
        assert np.abs(l2 - l2[0]).max() / l2[0] < 1e-5

    def test_divergence_guard(self):
        with pytest.raises(ConvergenceError):
            solve_kdv(np.full(64, 2.0e3), np.array([0.0, 0.01]))

    def test_validation(self):
        with pytest.raises(ContractError):
            solve_kdv(np.zeros(50), np.array([0.0, 0.1]))
        with pytest.raises(ContractError):
            solve_kdv(np.zeros(64), np.array([0.0, 0.1]), dt_cap=0.0)


# ---------------------------------------------------------------------- darcy


def poisson_center_series() -> float:
    """u(1/2, 1/2) for -lap u = 1 on the unit square, zero boundary."""
    idx = np.arange(1, 400, 2)
    m, n = np.meshgrid(idx, idx, indexing="ij")
    signs = np.sin(m * np.pi / 2.0) * np.sin(n * np.pi / 2.0)
    terms = 16.0 / (np.pi**4 * m * n * (m**2 + n**2)) * signs
    return float(terms.sum())


class TestDarcy:
    def test_constant_coefficient_matches_series_oracle(self):
        center = poisson_center_series()
        u = solve_darcy(np.ones((65, 65)), np.ones((65, 65)))
        assert abs(u.max() - center) < 2e-3
        assert abs(u.max() - 0.07367) < 2e-3

    def test_boundary_nodes_exactly_zero(self):
        rng = np.random.default_rng(8)
        a = np.exp(rng.normal(0.0, 0.5, (33, 33)))
        u = solve_darcy(a, np.ones((33, 33)))
        assert np.all(u[0] == 0.0) and np.all(u[-1] == 0.0)
        assert np.all(u[:, 0] == 0.0) and np.all(u[:, -1] == 0.0)
        assert np.all(u[1:-1, 1:-1] > 0.0)  # positive source, SPD operator

    def test_coefficient_scaling_linearity(self):
        rng = np.random.default_rng(13)
        a = np.where(rng.normal(size=(33, 33)) >= 0.0, 12.0, 3.0)
        f = np.ones((33, 33))
        u1 = solve_darcy(a, f)
        u2 = solve_darcy(2.0 * a, f)
        assert np.abs(u2 - 0.5 * u1).max() < 1e-9

    def test_refinement_agreement(self):
        coarse = solve_darcy(np.ones((65, 65)), np.ones((65, 65))).max()
        fine = solve_darcy(np.ones((257, 257)), np.ones((257, 257))).max()
        assert abs(coarse - fine) < 2e-3

    def test_cg_iteration_cap(self):
        mat = np.array([[4.0, 1.0], [1.0, 3.0]])
        b = np.array([1.0, 2.0])
        with pytest.raises(ConvergenceError):
            conjugate_gradient(lambda v: mat @ v, b, 1e-14, max_iter=1)
        x = conjugate_gradient(lambda v: mat @ v, b, 1e-12, max_iter=10)
        assert np.allclose(mat @ x, b, atol=1e-10)

    def test_validation(self):
        with pytest.raises(ContractError):
            solve_darcy(np.ones((4, 5)), np.ones((4, 5)))
        with pytest.raises(ContractError):
            solve_darcy(np.zeros((5, 5)), np.ones((5, 5)))
        with pytest.raises(ContractError):
            solve_darcy(np.ones((5, 5)), np.ones((6, 6)))


# ------------------------------------------------------------- navier-stokes


class TestNavierStokes:
    def test_zero_state_zero_forcing_stays_zero(self):
        out = solve_ns_vorticity(
            np.zeros((16, 16)), 1e-3, np.linspace(0.0, 0.1, 3),
            forcing=np.zeros((16, 16)),
        )
        assert np.array_equal(out, np.zeros((3, 16, 16)))

    def test_default_forcing_formula(self):
        n = 32
        x = np.arange(n) / n
        phase = 2.0 * np.pi * (x[:, None] + x[None, :])
        expected = 0.1 * (np.sin(phase) + np.cos(phase))
        assert np.allclose(default_forcing(n), expected, atol=1e-15)
        assert abs(default_forcing(n).mean()) < 1e-16

    def test_mean_conserved_with_zero_mean_forcing(self):
        rng = np.random.default_rng(1)
        w0 = sample_grf(GrfSpec((32, 32), 343.0, 49.0, 2.5), rng)
        out = solve_ns_vorticity(w0, 1e-3, np.linspace(0.0, 0.5, 6))
        means = out.reshape(6, -1).mean(axis=1)
        scale = max(abs(means[0]), float(np.sqrt(np.mean(w0**2))))
        assert np.abs(means - means[0]).max() / scale < 1e-8

    def test_mean_law_with_constant_forcing(self):
        # oracle: d/dt mean(w) = mean(f) exactly under periodic boundaries
        rng = np.random.default_rng(2)
        w0 = sample_grf(GrfSpec((32, 32), 343.0, 49.0, 2.5), rng)
        times = np.linspace(0.0, 0.4, 5)
        forcing = np.full((32, 32), 0.3)
        out = solve_ns_vorticity(w0, 1e-3, times, forcing=forcing)
        means = out.reshape(5, -1).mean(axis=1)
        expected = means[0] + 0.3 * times
        scale = max(abs(means[0]), float(np.sqrt(np.mean(w0**2))))
        assert np.abs(means - expected).max() / scale < 1e-8

    def test_enstrophy_non_increasing_unforced(self):
        rng = np.random.default_rng(3)
        w0 = sample_grf(GrfSpec((32, 32), 343.0, 49.0, 2.5), rng)
        out = solve_ns_vorticity(
            w0, 5e-2, np.linspace(0.0, 0.5, 6), forcing=np.zeros((32, 32))
        )
        enstrophy = (out**2).reshape(6, -1).mean(axis=1)
        assert np.all(np.diff(enstrophy) <= 1e-12)

    def test_divergence_guard(self):
        with pytest.raises(ConvergenceError):
            solve_ns_vorticity(np.full((16, 16), 2e3), 1e-3, np.array([0.0, 0.1]))

    def test_validation(self):
        with pytest.raises(ContractError):
            solve_ns_vorticity(np.zeros((16, 8)), 1e-3, np.array([0.0, 0.1]))
        with pytest.raises(ContractError):
            solve_ns_vorticity(
                np.zeros((16, 16)), 1e-3, np.array([0.0, 0.1, 0.15])
            )
        with pytest.raises(ContractError):
            solve_ns_vorticity(np.zeros((16, 16)), -1.0, np.array([0.0, 0.1]))


# -------------------------------------------------------------------- dataset


def small_burgers_config(**overrides):
    base = dict(
        equation="burgers",
        resolution=64,
        time_resolution=6,
        horizon=0.5,
        n_instances=10,
        n_t=2,
        n_out=2,
        subsample="random",
        n_s=32,
        seed=3,
        keep_full=True,
    )
    base.update(overrides)
    return DatasetConfig(**base)


class TestDatasetConfig:
    def test_rejects_bad_settings(self):
        with pytest.raises(ConfigError):
            small_burgers_config(equation="heat")
        with pytest.raises(ConfigError):
            small_burgers_config(n_s=100)  # > 64 simulated points
        with pytest.raises(ConfigError):
            small_burgers_config(n_t=4, n_out=4)  # > time_resolution
        with pytest.raises(ConfigError):
            small_burgers_config(split_fractions=(0.5, 0.5, 0.5))
        with pytest.raises(ConfigError):
            DatasetConfig(equation="darcy", resolution=16, n_t=2, n_out=1, n_s=16)

    def test_dict_roundtrip(self):
        config = small_burgers_config()
        again = DatasetConfig.from_dict(config.to_dict())
        assert again.to_dict() == config.to_dict()
        with pytest.raises(ConfigError):
            DatasetConfig.from_dict({"equation": "burgers", "bogus": 1})


class TestSubsample:
    def test_equispaced_stride_identity(self):
        config = small_burgers_config(subsample="equispaced", n_s=64)
        assert np.array_equal(subsample_indices(config), np.arange(64))

    def test_equispaced_stride_1d(self):
        config = small_burgers_config(subsample="equispaced", n_s=16)
        assert np.array_equal(subsample_indices(config), np.arange(0, 64, 4))

    def test_equispaced_stride_2d(self):
        config = DatasetConfig(
            equation="ns_vorticity", resolution=8, time_resolution=4,
            horizon=0.02, n_instances=2, n_t=2, n_out=2,
            subsample="equispaced", n_s=16, seed=0,
        )
        idx = subsample_indices(config)
        coords = simulation_coords(config)[idx]
        axis = np.array([0.0, 0.25, 0.5, 0.75])
        expected = np.stack(
            [np.repeat(axis, 4), np.tile(axis, 4)], axis=1
        )
        assert np.allclose(coords, expected, atol=1e-15)

    def test_equispaced_needs_compatible_counts(self):
        with pytest.raises(ConfigError):
            subsample_indices(small_burgers_config(subsample="equispaced", n_s=24))

    def test_random_subset_without_duplicates(self):
        config = small_burgers_config()
        idx = subsample_indices(config)
        assert idx.shape == (32,) and len(np.unique(idx)) == 32
        assert idx.min() >= 0 and idx.max() < 64
        assert np.array_equal(idx, subsample_indices(small_burgers_config()))


class TestGenerateDataset:
    def test_roundtrip_and_alignment(self, tmp_path):
        config = small_burgers_config(n_instances=10)
        out = generate_dataset(config, tmp_path / "ds")
        ds = load_dataset(out)
        assert ds.a.shape == (10, 32, 2) and ds.u.shape == (10, 32, 2)
        assert ds.mesh.n_points == 32 and ds.mesh.ndim == 1
        # scattered values are the full-grid values at the chosen indices
        idx = subsample_indices(config)
        assert np.array_equal(ds.a, ds.full_a[:, idx, :])
        assert np.array_equal(ds.u, ds.full_u[:, idx, :])
        assert np.allclose(ds.mesh.coords, ds.full_coords[idx], atol=1e-15)
        # splits partition the instances 7/1/2
        assert len(ds.splits["train"]) == 7
        assert len(ds.splits["val"]) == 1
        assert len(ds.splits["test"]) == 2
        combined = sorted(
            ds.splits["train"] + ds.splits["val"] + ds.splits["test"]
        )
        assert combined == list(range(10))
        a_train, u_train = ds.split("train")
        assert a_train.shape == (7, 32, 2) and u_train.shape == (7, 32, 2)
        # manifest records the frame times: first n_t in, last n_out out
        times = np.linspace(0.0, 0.5, 6)
        assert np.allclose(ds.manifest["input_times"], times[:2])
        assert np.allclose(ds.manifest["target_times"], times[-2:])
        with pytest.raises(ContractError):
            ds.split("holdout")

    def test_regeneration_is_byte_identical(self, tmp_path):
        config = small_burgers_config(n_instances=4)
        first = generate_dataset(config, tmp_path / "one")
        second = generate_dataset(config, tmp_path / "two")
        for name in ("manifest.json", "mesh.nft", "a.nft", "u.nft",
                     "splits.json", "full_a.nft", "full_u.nft"):
            assert (first / name).read_bytes() == (second / name).read_bytes()

    def test_darcy_dataset(self, tmp_path):
        config = DatasetConfig(
            equation="darcy", resolution=16, n_instances=3, n_t=1, n_out=1,
            subsample="random", n_s=64, seed=1, time_resolution=1,
        )
        out = generate_dataset(config, tmp_path / "darcy")
        ds = load_dataset(out)
        assert set(np.unique(ds.full_a)) == {3.0, 12.0}
        # the stored nodes include the x=0 / y=0 boundary where u is pinned
        full_u = ds.full_u.reshape(3, 16, 16)
        assert np.all(full_u[:, 0, :] == 0.0) and np.all(full_u[:, :, 0] == 0.0)
        assert ds.manifest["input_times"] is None

    def test_mass_check_aborts_on_drift(self):
        traj = np.ones((3, 8))
        traj[2] += 1e-6
        with pytest.raises(ConvergenceError):
            _check_mass(traj, "burgers", 0)
