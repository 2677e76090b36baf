"""Synthetic PDE trajectory generators and dataset packaging."""

from .grf import GrfSpec, sample_grf, spectral_density
from .burgers import solve_burgers
from .kdv import kdv_initial_condition, solve_kdv
from .darcy import conjugate_gradient, solve_darcy
from .navier_stokes import default_forcing, solve_ns_vorticity
from .dataset import (
    DatasetConfig,
    generate_dataset,
    load_dataset,
    subsample_indices,
)

__all__ = [
    "GrfSpec",
    "sample_grf",
    "spectral_density",
    "solve_burgers",
    "kdv_initial_condition",
    "solve_kdv",
    "conjugate_gradient",
    "solve_darcy",
    "default_forcing",
    "solve_ns_vorticity",
    "DatasetConfig",
    "generate_dataset",
    "load_dataset",
    "subsample_indices",
]
