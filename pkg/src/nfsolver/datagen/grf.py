"""Gaussian random fields on the periodic unit torus.

A field is the Fourier series f(x) = sum_k u_hat(k) e^{2 i pi <k,x>} whose
coefficients are independent complex Gaussians with E|u_hat(k)|^2 = S(k),
made conjugate-symmetric so the field is real.  The spectral density is the
inverse-elliptic power S(k) = scale * (4 pi^2 |k|^2 + shift)^(-power).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError


@dataclass
class GrfSpec:
    resolution: tuple[int, ...]
    scale: float
    shift: float
    power: float

    def __post_init__(self):
        self.resolution = tuple(int(r) for r in np.atleast_1d(self.resolution))
        for r in self.resolution:
            if r < 2 or (r & (r - 1)):
                raise ContractError("GRF resolution must be a power of two")
        if self.scale <= 0 or self.shift <= 0 or self.power <= 0:
            raise ContractError("GRF spectral parameters must be positive")


def spectral_density(spec: GrfSpec) -> np.ndarray:
    """S(k) over the full FFT grid (signed integer frequencies)."""
    sq = np.zeros(spec.resolution)
    for ax, n in enumerate(spec.resolution):
        freq = np.fft.fftfreq(n, d=1.0 / n)  # 0, 1, .., -1 signed
        shape = [1] * len(spec.resolution)
        shape[ax] = n
        sq = sq + (freq.reshape(shape)) ** 2
    return spec.scale * (4.0 * np.pi**2 * sq + spec.shift) ** (-spec.power)


def sample_grf(spec: GrfSpec, rng: np.random.Generator) -> np.ndarray:
    """One real sample on the grid; deterministic under the generator state."""
    density = spectral_density(spec)
    shape = spec.resolution
    raw = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    coeff = raw * np.sqrt(density)
    # conjugate symmetrization u(k) <- (u(k) + conj(u(-k))) / sqrt(2) keeps
    # E|u(k)|^2 = S(k) and makes the series real
    mirrored = coeff.copy()
    for ax in range(len(shape)):
        mirrored = np.flip(np.roll(mirrored, -1, axis=ax), axis=ax)
    sym = (coeff + np.conj(mirrored)) / np.sqrt(2.0)
    field = np.fft.ifftn(sym) * np.prod(shape)
    return np.ascontiguousarray(field.real)
