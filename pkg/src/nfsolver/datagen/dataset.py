"""Dataset generation and packaging.

A dataset directory contains:

    manifest.json   generation settings plus derived facts (frame times, dt)
    mesh.nft        [n_s, d]  scattered observation points, shared by every
                    instance and split
    a.nft           [n_instances, n_s, n_t]   model inputs at the mesh
    u.nft           [n_instances, n_s, n_out] regression targets at the mesh
    splits.json     {"train": [...], "val": [...], "test": [...]}
    full_a.nft /    [n_instances, n_grid, n_t(/n_out)] optional full-grid
    full_u.nft      copies used for mesh-invariance evaluation

Instance i is simulated with an independent generator seeded master_seed + i;
the mesh and the split shuffle use dedicated streams derived from the master
seed, so regeneration is byte-identical.  Time-dependent equations store the
first n_t frames as inputs and the last n_out frames as targets.  Each
trajectory is checked against its conservation law before being accepted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, ContractError, ConvergenceError
from ..io_files import load_tensor, read_json, save_tensor, write_json
from ..meshes import Mesh
from .burgers import solve_burgers
from .darcy import solve_darcy
from .grf import GrfSpec, sample_grf
from .kdv import kdv_initial_condition, solve_kdv
from .navier_stokes import default_forcing, solve_ns_vorticity

EQUATIONS = ("burgers", "kdv", "darcy", "ns_vorticity")
SUBSAMPLE_MODES = ("equispaced", "random")
MASS_TOLERANCE = 1.0e-8
MEAN_LAW_TOLERANCE = 1.0e-8


@dataclass
class DatasetConfig:
    equation: str
    resolution: int = 256
    time_resolution: int = 20
    horizon: float = 1.0
    n_instances: int = 120
    n_t: int = 1
    n_out: int = 1
    subsample: str = "random"
    n_s: int = 256
    seed: int = 0
    split_fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    keep_full: bool = True
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.equation not in EQUATIONS:
            raise ConfigError(f"unknown equation {self.equation!r}")
        if self.subsample not in SUBSAMPLE_MODES:
            raise ConfigError(f"unknown subsample mode {self.subsample!r}")
        if self.resolution < 4 or (self.resolution & (self.resolution - 1)):
            raise ConfigError("resolution must be a power of two")
        if self.n_instances < 1:
            raise ConfigError("n_instances must be positive")
        if self.n_t < 1 or self.n_out < 1:
            raise ConfigError("n_t and n_out must be positive")
        if self.equation == "darcy":
            if self.n_t != 1 or self.n_out != 1:
                raise ConfigError("darcy datasets have n_t = n_out = 1")
        elif self.n_t + self.n_out > self.time_resolution:
            raise ConfigError("n_t + n_out frames exceed the time resolution")
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        fr = tuple(float(f) for f in self.split_fractions)
        if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError("split fractions must be three values summing to 1")
        self.split_fractions = fr
        total = self.resolution ** self.ndim
        if self.n_s > total:
            raise ConfigError(
                f"n_s = {self.n_s} exceeds the {total} simulated points"
            )

    @property
    def ndim(self) -> int:
        return 2 if self.equation in ("darcy", "ns_vorticity") else 1

    def to_dict(self) -> dict:
        return {
            "equation": self.equation,
            "resolution": self.resolution,
            "time_resolution": self.time_resolution,
            "horizon": self.horizon,
            "n_instances": self.n_instances,
            "n_t": self.n_t,
            "n_out": self.n_out,
            "subsample": self.subsample,
            "n_s": self.n_s,
            "seed": self.seed,
            "split_fractions": list(self.split_fractions),
            "keep_full": self.keep_full,
            "params": dict(self.params),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetConfig":
        known = {
            "equation", "resolution", "time_resolution", "horizon",
            "n_instances", "n_t", "n_out", "subsample", "n_s", "seed",
            "split_fractions", "keep_full", "params",
        }
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown dataset config fields: {sorted(extra)}")
        kwargs = dict(data)
        if "split_fractions" in kwargs:
            kwargs["split_fractions"] = tuple(kwargs["split_fractions"])
        return cls(**kwargs)


def simulation_coords(config: DatasetConfig) -> np.ndarray:
    """Coordinates of every simulated point, in C (row-major) flat order."""
    n = config.resolution
    if config.ndim == 1:
        return (np.arange(n) / n)[:, None]
    return Mesh.grid((n, n)).coords


def subsample_indices(config: DatasetConfig) -> np.ndarray:
    """Flat indices of the shared scattered mesh into the simulated points."""
    n = config.resolution
    d = config.ndim
    if config.subsample == "equispaced":
        per_axis = int(round(config.n_s ** (1.0 / d)))
        if per_axis**d != config.n_s:
            raise ConfigError(
                f"equispaced subsampling needs n_s with an integer {d}-th root"
            )
        if n % per_axis:
            raise ConfigError(
                f"equispaced subsampling needs {per_axis} to divide {n}"
            )
        stride = n // per_axis
        axis_idx = np.arange(0, n, stride)
        if d == 1:
            return axis_idx
        return (axis_idx[:, None] * n + axis_idx[None, :]).reshape(-1)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 1)))
    return np.sort(rng.choice(n**d, size=config.n_s, replace=False))


def _frame_times(config: DatasetConfig) -> np.ndarray:
    return np.linspace(0.0, config.horizon, config.time_resolution)


def _field_scale(traj: np.ndarray) -> float:
    """Reference magnitude: initial mean or, if that is ~0, the initial RMS."""
    first = traj.reshape(traj.shape[0], -1)[0]
    return max(abs(float(first.mean())), float(np.sqrt(np.mean(first**2))), 1e-12)


def _check_mass(traj: np.ndarray, label: str, index: int) -> None:
    means = traj.reshape(traj.shape[0], -1).mean(axis=1)
    drift = np.abs(means - means[0]).max() / _field_scale(traj)
    if drift > MASS_TOLERANCE:
        raise ConvergenceError(
            f"{label} instance {index}: relative mass drift {drift:.3e} "
            f"exceeds {MASS_TOLERANCE:.0e}"
        )


def _check_mean_law(
    traj: np.ndarray, times: np.ndarray, mean_f: float, index: int
) -> None:
    means = traj.reshape(traj.shape[0], -1).mean(axis=1)
    expected = means[0] + times * mean_f
    drift = np.abs(means - expected).max() / _field_scale(traj)
    if drift > MEAN_LAW_TOLERANCE:
        raise ConvergenceError(
            f"ns_vorticity instance {index}: mean vorticity deviates "
            f"{drift:.3e} (relative) from the forced linear law"
        )


def _simulate_instance(
    config: DatasetConfig, index: int
) -> tuple[np.ndarray, np.ndarray]:
    """Full-grid (a, u) pair for one instance, flattened to [n_grid, frames]."""
    rng = np.random.default_rng(config.seed + index)
    n = config.resolution
    p = config.params
    times = _frame_times(config)

    if config.equation == "burgers":
        nu = float(p.get("nu", 0.01))
        grf = GrfSpec(
            (n,),
            scale=float(p.get("grf_scale", 0.625)),
            shift=float(p.get("grf_shift", 25.0)),
            power=float(p.get("grf_power", 2.0)),
        )
        u0 = sample_grf(grf, rng)
        traj = solve_burgers(u0, nu, times)
        _check_mass(traj, "burgers", index)
    elif config.equation == "kdv":
        u0 = kdv_initial_condition(rng, n)
        traj = solve_kdv(u0, times)
        _check_mass(traj, "kdv", index)
    elif config.equation == "ns_vorticity":
        nu = float(p.get("nu", 1.0e-3))
        grf = GrfSpec(
            (n, n),
            scale=float(p.get("grf_scale", 7.0**3)),
            shift=float(p.get("grf_shift", 49.0)),
            power=float(p.get("grf_power", 2.5)),
        )
        w0 = sample_grf(grf, rng)
        forcing = default_forcing(n)
        traj = solve_ns_vorticity(w0, nu, times, forcing=forcing)
        _check_mean_law(traj, times, float(forcing.mean()), index)
    else:  # darcy
        grf = GrfSpec(
            (n, n),
            scale=float(p.get("grf_scale", 9.0)),
            shift=float(p.get("grf_shift", 9.0)),
            power=float(p.get("grf_power", 2.0)),
        )
        psi = sample_grf(grf, rng)
        hi = float(p.get("coeff_high", 12.0))
        lo = float(p.get("coeff_low", 3.0))
        a_field = np.where(psi >= 0.0, hi, lo)
        # the solver works on the closed node grid [0,1]^2; the GRF is
        # periodic, so wrap-pad, solve, and keep the [0,1)^2 nodes
        a_closed = np.pad(a_field, ((0, 1), (0, 1)), mode="wrap")
        f_closed = np.full((n + 1, n + 1), float(p.get("source", 1.0)))
        u_field = solve_darcy(a_closed, f_closed)[:n, :n]
        return a_field.reshape(-1, 1), u_field.reshape(-1, 1)

    # traj is [time_resolution, space...]; inputs are the first n_t frames,
    # targets the last n_out frames
    flat = traj.reshape(traj.shape[0], -1).T  # [n_grid, frames]
    a = flat[:, : config.n_t]
    u = flat[:, flat.shape[1] - config.n_out :]
    return a, u


def generate_dataset(config: DatasetConfig, out_dir) -> Path:
    """Simulate every instance, subsample onto the shared mesh, write files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    coords = simulation_coords(config)
    chosen = subsample_indices(config)
    mesh_coords = coords[chosen]

    n_grid = coords.shape[0]
    full_a = np.empty((config.n_instances, n_grid, config.n_t))
    full_u = np.empty((config.n_instances, n_grid, config.n_out))
    for i in range(config.n_instances):
        a, u = _simulate_instance(config, i)
        full_a[i] = a
        full_u[i] = u

    ids = np.arange(config.n_instances)
    split_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 2)))
    split_rng.shuffle(ids)
    n_train = int(np.floor(config.split_fractions[0] * config.n_instances))
    n_val = int(np.floor(config.split_fractions[1] * config.n_instances))
    splits = {
        "train": sorted(int(i) for i in ids[:n_train]),
        "val": sorted(int(i) for i in ids[n_train : n_train + n_val]),
        "test": sorted(int(i) for i in ids[n_train + n_val :]),
    }

    times = _frame_times(config) if config.equation != "darcy" else None
    manifest = {
        "format_version": 1,
        "config": config.to_dict(),
        "ndim": config.ndim,
        "n_grid": int(n_grid),
        "input_times": None if times is None else times[: config.n_t].tolist(),
        "target_times": None
        if times is None
        else times[config.time_resolution - config.n_out :].tolist(),
    }

    save_tensor(out / "mesh.nft", mesh_coords)
    save_tensor(out / "a.nft", full_a[:, chosen, :])
    save_tensor(out / "u.nft", full_u[:, chosen, :])
    write_json(out / "splits.json", splits)
    if config.keep_full:
        save_tensor(out / "full_a.nft", full_a)
        save_tensor(out / "full_u.nft", full_u)
    write_json(out / "manifest.json", manifest)
    return out


class Dataset:
    """Loaded dataset directory with split-indexed access."""

    def __init__(self, manifest, mesh, a, u, splits, full_a=None, full_u=None):
        self.manifest = manifest
        self.config = DatasetConfig.from_dict(manifest["config"])
        self.mesh = mesh
        self.a = a
        self.u = u
        self.splits = splits
        self.full_a = full_a
        self.full_u = full_u

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name not in self.splits:
            raise ContractError(f"unknown split {name!r}")
        ids = self.splits[name]
        return self.a[ids], self.u[ids]

    @property
    def full_coords(self) -> np.ndarray:
        return simulation_coords(self.config)


def load_dataset(path) -> Dataset:
    path = Path(path)
    manifest = read_json(path / "manifest.json")
    mesh = Mesh(load_tensor(path / "mesh.nft"))
    a = load_tensor(path / "a.nft")
    u = load_tensor(path / "u.nft")
    splits = read_json(path / "splits.json")
    full_a = full_u = None
    if (path / "full_a.nft").exists():
        full_a = load_tensor(path / "full_a.nft")
        full_u = load_tensor(path / "full_u.nft")
    return Dataset(manifest, mesh, a, u, splits, full_a, full_u)
