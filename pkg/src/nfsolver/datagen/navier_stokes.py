"""2-d incompressible Navier-Stokes in vorticity form on the unit torus.

    dw/dt + u . grad w = nu laplace w + f,   u = curl psi,  -laplace psi = w

Pseudo-spectral: the velocity comes from the streamfunction, quadratic
products are 2/3-rule dealiased, diffusion advances with Crank-Nicolson and
advection with second-order Adams-Bashforth (Euler on the first step).  The
constant-in-time forcing enters exactly, so the spatial mean obeys
mean(w)(t) = mean(w0) + t * mean(f) to round-off.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, ConvergenceError

DIVERGENCE_LIMIT = 1.0e3
ADVECTIVE_CFL = 0.5
DEFAULT_DT_CAP = 2.5e-3


def default_forcing(n: int) -> np.ndarray:
    """0.1 * (sin + cos)(2 pi (x1 + x2)) sampled on the n x n grid."""
    x = np.arange(n) / n
    phase = 2.0 * np.pi * (x[:, None] + x[None, :])
    return 0.1 * (np.sin(phase) + np.cos(phase))


def solve_ns_vorticity(
    w0: np.ndarray,
    nu: float,
    t_out: np.ndarray,
    forcing: np.ndarray | None = None,
    dt_cap: float = DEFAULT_DT_CAP,
) -> np.ndarray:
    """Integrate the vorticity from w0, sampling at equispaced times t_out."""
    w0 = np.asarray(w0, dtype=np.float64)
    if w0.ndim != 2 or w0.shape[0] != w0.shape[1]:
        raise ContractError("vorticity initial state must be a square grid")
    n = w0.shape[0]
    if n < 4 or (n & (n - 1)):
        raise ContractError("vorticity resolution must be a power of two")
    if nu <= 0:
        raise ContractError("viscosity must be positive")
    t_out = np.asarray(t_out, dtype=np.float64)
    if t_out.ndim != 1 or t_out.shape[0] < 2 or t_out[0] != 0.0:
        raise ContractError("output times must be increasing and start at 0")
    gaps = np.diff(t_out)
    if np.any(gaps <= 0) or not np.allclose(gaps, gaps[0], rtol=1e-9, atol=1e-12):
        raise ContractError("output times must be equispaced")
    if forcing is None:
        forcing = default_forcing(n)
    forcing = np.asarray(forcing, dtype=np.float64)
    if forcing.shape != w0.shape:
        raise ContractError("forcing must match the vorticity grid")

    freq = np.fft.fftfreq(n, d=1.0 / n)
    kx = 2.0 * np.pi * freq[:, None]
    ky = 2.0 * np.pi * freq[None, :]
    k_sq = kx**2 + ky**2
    inv_k_sq = np.zeros_like(k_sq)
    inv_k_sq[k_sq > 0] = 1.0 / k_sq[k_sq > 0]
    dealias = (np.abs(freq[:, None]) <= n / 3.0) & (np.abs(freq[None, :]) <= n / 3.0)
    f_hat = np.fft.fft2(forcing)

    def advection(w_hat):
        psi_hat = w_hat * inv_k_sq
        u = np.fft.ifft2(1j * ky * psi_hat).real
        v = np.fft.ifft2(-1j * kx * psi_hat).real
        wx = np.fft.ifft2(1j * kx * w_hat).real
        wy = np.fft.ifft2(1j * ky * w_hat).real
        return -np.fft.fft2(u * wx + v * wy) * dealias

    def check(w):
        if not np.all(np.isfinite(w)) or np.abs(w).max() > DIVERGENCE_LIMIT:
            raise ConvergenceError("vorticity solution diverged")

    check(w0)
    # velocity scale from the initial flow decides a single fixed step so the
    # Adams-Bashforth history stays consistent across the whole trajectory
    w_hat = np.fft.fft2(w0)
    psi_hat = w_hat * inv_k_sq
    u0 = np.fft.ifft2(1j * ky * psi_hat).real
    v0 = np.fft.ifft2(-1j * kx * psi_hat).real
    speed = max(np.abs(u0).max(), np.abs(v0).max(), 1e-12)
    dt_target = min(dt_cap, ADVECTIVE_CFL * (1.0 / n) / speed)
    n_sub = max(1, int(np.ceil(gaps[0] / dt_target)))
    dt = gaps[0] / n_sub

    half = 0.5 * dt * nu * k_sq
    decay = (1.0 - half) / (1.0 + half)
    gain = dt / (1.0 + half)

    out = np.empty((t_out.shape[0], n, n))
    out[0] = w0
    prev_adv = None
    for frame in range(1, t_out.shape[0]):
        for _ in range(n_sub):
            adv = advection(w_hat)
            if prev_adv is None:
                blend = adv
            else:
                blend = 1.5 * adv - 0.5 * prev_adv
            w_hat = decay * w_hat + gain * (blend + f_hat)
            prev_adv = adv
        cur = np.fft.ifft2(w_hat).real
        check(cur)
        out[frame] = cur
    return out
