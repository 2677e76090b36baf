"""Viscous Burgers equation on the periodic unit interval.

    du/dt + u du/dx = nu d2u/dx2

integrated pseudo-spectrally with classical RK4.  The nonlinear term is
advanced in conservative form -0.5 d/dx (u^2) so the spatial mean (mass) is
preserved to round-off, and the quadratic product is 2/3-rule dealiased.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, ConvergenceError

DIVERGENCE_LIMIT = 1.0e3
ADVECTIVE_CFL = 0.25
# classical RK4 keeps the pure-diffusion mode nu*k^2*dt on its real stability
# interval (~2.79); 2.5 leaves margin
VISCOUS_STABILITY = 2.5


def _check_finite(u: np.ndarray) -> None:
    if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > DIVERGENCE_LIMIT:
        raise ConvergenceError("Burgers solution diverged")


def solve_burgers(u0: np.ndarray, nu: float, t_out: np.ndarray) -> np.ndarray:
    """Integrate from u0 and return samples at the requested times.

    u0 : [n] initial state on the equispaced grid x_j = j/n (n a power of two)
    t_out : increasing times starting at 0; returns [len(t_out), n]
    """
    u0 = np.asarray(u0, dtype=np.float64)
    if u0.ndim != 1:
        raise ContractError("Burgers initial state must be one-dimensional")
    n = u0.shape[0]
    if n < 4 or (n & (n - 1)):
        raise ContractError("Burgers resolution must be a power of two")
    if nu <= 0:
        raise ContractError("viscosity must be positive")
    t_out = np.asarray(t_out, dtype=np.float64)
    if t_out.ndim != 1 or t_out[0] != 0.0 or np.any(np.diff(t_out) <= 0):
        raise ContractError("output times must be increasing and start at 0")

    k = 2.0 * np.pi * np.fft.fftfreq(n, d=1.0 / n)  # angular wavenumbers
    ik = 1j * k
    k2 = k * k
    dealias = np.abs(np.fft.fftfreq(n, d=1.0 / n)) <= n / 3.0
    dx = 1.0 / n
    dt_visc = VISCOUS_STABILITY / (nu * k2.max())

    def rhs(u_hat):
        u = np.fft.ifft(u_hat).real
        flux_hat = np.fft.fft(0.5 * u * u) * dealias
        return -ik * flux_hat - nu * k2 * u_hat

    u_hat = np.fft.fft(u0)
    out = np.empty((t_out.shape[0], n))
    out[0] = u0
    t_prev = 0.0
    for frame in range(1, t_out.shape[0]):
        span = t_out[frame] - t_prev
        u_cur = np.fft.ifft(u_hat).real
        _check_finite(u_cur)
        dt_adv = ADVECTIVE_CFL * dx / max(np.max(np.abs(u_cur)), 1e-12)
        n_sub = max(1, int(np.ceil(span / min(dt_adv, dt_visc))))
        dt = span / n_sub
        for _ in range(n_sub):
            k1 = rhs(u_hat)
            k2_ = rhs(u_hat + 0.5 * dt * k1)
            k3 = rhs(u_hat + 0.5 * dt * k2_)
            k4 = rhs(u_hat + dt * k3)
            u_hat = u_hat + (dt / 6.0) * (k1 + 2.0 * k2_ + 2.0 * k3 + k4)
        u_cur = np.fft.ifft(u_hat).real
        _check_finite(u_cur)
        out[frame] = u_cur
        t_prev = t_out[frame]
    return out
