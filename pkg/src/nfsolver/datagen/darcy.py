"""Steady Darcy flow on the unit square with zero Dirichlet boundary.

    -div(a(x) grad u(x)) = f(x),  u = 0 on the boundary

Vertex-centered finite volumes on the closed node grid x_ij = (i/n, j/n),
i, j = 0..n: the conductivity of the edge joining two adjacent nodes is the
harmonic mean of their coefficient values, boundary nodes are pinned to zero,
and the interior symmetric positive-definite system is solved with a
hand-rolled conjugate-gradient iteration.  The returned field includes the
(exactly zero) boundary ring.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, ConvergenceError

CG_RELATIVE_TOLERANCE = 1.0e-10


def _harmonic(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    return 2.0 * left * right / (left + right)


def conjugate_gradient(apply_a, b: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    """Solve A x = b for SPD A given as a matrix-free operator."""
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(np.vdot(r, r).real)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return x
    for _ in range(max_iter):
        if np.sqrt(rs) <= tol * b_norm:
            return x
        ap = apply_a(p)
        alpha = rs / float(np.vdot(p, ap).real)
        x += alpha * p
        r -= alpha * ap
        rs_new = float(np.vdot(r, r).real)
        p = r + (rs_new / rs) * p
        rs = rs_new
    if np.sqrt(rs) <= tol * b_norm:
        return x
    raise ConvergenceError("conjugate gradient did not reach the tolerance")


def solve_darcy(a: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Pressure on the closed node grid; a and f are node values [n+1, n+1]."""
    a = np.asarray(a, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 3:
        raise ContractError("Darcy coefficient must be a square node grid (>= 3)")
    if f.shape != a.shape:
        raise ContractError("Darcy source must match the coefficient grid")
    if np.any(a <= 0):
        raise ContractError("Darcy coefficient must be strictly positive")
    m = a.shape[0]
    h = 1.0 / (m - 1)
    # edge conductivities between node (i, j) and (i+1, j) / (i, j+1)
    tx = _harmonic(a[:-1, :], a[1:, :])  # [m-1, m]
    ty = _harmonic(a[:, :-1], a[:, 1:])  # [m, m-1]
    center = tx[:-1, 1:-1] + tx[1:, 1:-1] + ty[1:-1, :-1] + ty[1:-1, 1:]

    def apply_interior(v: np.ndarray) -> np.ndarray:
        u = np.zeros((m, m))
        u[1:-1, 1:-1] = v
        out = center * v
        out -= tx[:-1, 1:-1] * u[:-2, 1:-1]
        out -= tx[1:, 1:-1] * u[2:, 1:-1]
        out -= ty[1:-1, :-1] * u[1:-1, :-2]
        out -= ty[1:-1, 1:] * u[1:-1, 2:]
        return out

    rhs = f[1:-1, 1:-1] * h * h
    unknowns = (m - 2) * (m - 2)
    interior = conjugate_gradient(
        apply_interior, rhs, CG_RELATIVE_TOLERANCE, 10 * unknowns
    )
    u_full = np.zeros((m, m))
    u_full[1:-1, 1:-1] = interior
    return u_full
