"""Discrete Fourier transform pair, symmetric mode truncation, and the
per-mode channel mixing used by the spectral layers.

Transform convention on n equispaced samples of the unit torus:

    forward:  F[k] = sum_j f(x_j) * exp(-2i pi k x_j)        (no scaling)
    inverse:  f[j] = (1/n) sum_k F[k] * exp(+2i pi k x_j)

so inverse(forward(f)) == f.  Power-of-two extents go through the FFT;
anything else falls back to direct summation, and the two paths agree to
1e-10 whenever both apply.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, NumericError


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


_DFT_MATRIX_CACHE: dict[tuple[int, bool], np.ndarray] = {}


def _dft_matrix(n: int, inverse: bool) -> np.ndarray:
    key = (n, inverse)
    mat = _DFT_MATRIX_CACHE.get(key)
    if mat is None:
        j = np.arange(n)
        sign = 2.0j if inverse else -2.0j
        mat = np.exp(sign * np.pi * np.outer(j, j) / n)
        if inverse:
            mat /= n
        _DFT_MATRIX_CACHE[key] = mat
    return mat


def _dft_axis(arr: np.ndarray, axis: int, inverse: bool, use_fft: bool) -> np.ndarray:
    if use_fft:
        return np.fft.ifft(arr, axis=axis) if inverse else np.fft.fft(arr, axis=axis)
    mat = _dft_matrix(arr.shape[axis], inverse)
    # contract the axis against the transform matrix, restore its position
    out = np.tensordot(arr, mat, axes=([axis], [0]))
    return np.moveaxis(out, -1, axis)


def dft_array(arr: np.ndarray, axes: Sequence[int], inverse: bool = False,
              method: str = "auto") -> np.ndarray:
    """Plain-array transform used by the tape op and by data generators."""
    if method not in ("auto", "fft", "direct"):
        raise ContractError(f"unknown dft method {method!r}")
    arr = np.asarray(arr)
    if not np.iscomplexobj(arr):
        arr = arr.astype(np.complex128)
    axes = tuple(ax % arr.ndim for ax in axes)
    if len(set(axes)) != len(axes):
        raise ContractError("dft axes must be distinct")
    for ax in axes:
        pow2 = is_power_of_two(arr.shape[ax])
        if method == "fft" and not pow2:
            raise ContractError("fft method requires power-of-two extents")
        use_fft = pow2 if method == "auto" else (method == "fft")
        arr = _dft_axis(arr, ax, inverse, use_fft)
    return arr


def dft(x, axes: Sequence[int], inverse: bool = False, method: str = "auto") -> T.Tensor:
    """Tape-recorded transform; gradient is the (scaled) adjoint transform."""
    xt = T.as_complex(T._ensure(x))
    data = dft_array(xt.data, axes, inverse=inverse, method=method)
    n_total = 1
    for ax in axes:
        n_total *= xt.data.shape[ax % xt.data.ndim]

    if inverse:
        # y = (1/N) F^H x  =>  adjoint = (1/N) F
        def vjp(g):
            return (dft_array(np.asarray(g), axes, inverse=False) / n_total,)
    else:
        # y = F x  =>  adjoint = F^H = N * inverse
        def vjp(g):
            return (dft_array(np.asarray(g), axes, inverse=True) * n_total,)

    return T._result(data, "dft", (xt,), vjp)


class ModeSet:
    """Symmetrically truncated integer frequencies on a rectangular grid.

    Per axis of extent n the retained frequencies are {0..k_max-1} plus the
    conjugate block {n-k_max+1..n-1}, i.e. signed frequencies
    0, 1, .., k_max-1, -(k_max-1), .., -1.  The set is closed under
    negation, which is what makes real inverse transforms possible after
    mixing with conjugate-symmetric weights.
    """

    def __init__(self, extents: Sequence[int], k_max: int):
        extents = tuple(int(n) for n in extents)
        k_max = int(k_max)
        if not extents:
            raise ContractError("ModeSet needs at least one axis")
        if k_max < 1:
            raise ContractError("k_max must be >= 1")
        for n in extents:
            if k_max > n // 2:
                raise ContractError(
                    f"k_max={k_max} exceeds half the grid extent {n}"
                )
        self.extents = extents
        self.k_max = k_max
        self.axis_indices: list[np.ndarray] = []
        self.axis_freqs: list[np.ndarray] = []
        m = 2 * k_max - 1
        for n in extents:
            idx = np.concatenate([np.arange(k_max), np.arange(n - k_max + 1, n)])
            freq = np.concatenate([np.arange(k_max), np.arange(-(k_max - 1), 0)])
            self.axis_indices.append(idx.astype(np.int64))
            self.axis_freqs.append(freq.astype(np.int64))
        self.block_extents = tuple([m] * len(extents))
        # position of the negated frequency within one axis block
        pair = np.zeros(m, dtype=np.int64)
        pair[1:] = m - np.arange(1, m)
        self.axis_pairing = pair

    @property
    def ndim(self) -> int:
        return len(self.extents)

    @property
    def n_modes(self) -> int:
        return int(np.prod(self.block_extents))

    def frequency_grids(self) -> list[np.ndarray]:
        """Signed frequency of every block position, one array per axis."""
        grids = np.meshgrid(*self.axis_freqs, indexing="ij")
        return [g.astype(np.int64) for g in grids]

    def squared_norms(self) -> np.ndarray:
        """|k|^2 over the block grid."""
        out = np.zeros(self.block_extents, dtype=np.float64)
        for g in self.frequency_grids():
            out += g.astype(np.float64) ** 2
        return out

    def flat_pairing(self) -> np.ndarray:
        """Permutation of flattened block positions mapping k to -k."""
        per_axis = [self.axis_pairing] * self.ndim
        mesh = np.meshgrid(*per_axis, indexing="ij")
        flat = np.zeros(self.block_extents, dtype=np.int64)
        for ax, m in enumerate(mesh):
            flat = flat * self.block_extents[ax] + m
        return flat.reshape(-1)


def truncate_modes(spectrum: T.Tensor, modes: ModeSet, axes: Sequence[int]) -> T.Tensor:
    """Keep only the retained frequencies along the given spatial axes."""
    if len(axes) != modes.ndim:
        raise ContractError("one axis per mode dimension required")
    for ax, n in zip(axes, modes.extents):
        if spectrum.shape[ax % spectrum.ndim] != n:
            raise ContractError("spectrum extents do not match the ModeSet")
    return T.take_block(spectrum, tuple(axes), modes.axis_indices)


def pad_modes(block: T.Tensor, modes: ModeSet, axes: Sequence[int]) -> T.Tensor:
    """Scatter a retained block back into a zero-filled full spectrum."""
    if len(axes) != modes.ndim:
        raise ContractError("one axis per mode dimension required")
    return T.put_block(block, tuple(axes), modes.axis_indices, modes.extents)


def spectral_mix(block: T.Tensor, weights: T.Tensor) -> T.Tensor:
    """Apply one d_v x d_v complex matrix per retained mode.

    block: [..., m_1, .., m_d, d_v] (leading axes broadcast, usually batch)
    weights: [m_1, .., m_d, d_v, d_v]
    """
    wshape = weights.shape
    d_v = wshape[-1]
    if wshape[-2] != d_v:
        raise ContractError("weights must be square per mode")
    mode_shape = wshape[:-2]
    bshape = block.shape
    if bshape[-1] != d_v or bshape[-1 - len(mode_shape) : -1] != mode_shape:
        raise ContractError("block and weights disagree on modes or channels")
    # row-vector times matrix per mode, batched over leading axes
    x = T.reshape(block, bshape[:-1] + (1, d_v))
    y = T.matmul(x, weights)
    return T.reshape(y, bshape)


def init_spectral_weights(rng: np.random.Generator, modes: ModeSet, d_v: int,
                          std: float | None = None) -> np.ndarray:
    """Independent complex Gaussian entries (std = sqrt(E|z|^2) = 1/d_v by
    default), then made conjugate-symmetric across paired modes by copying.

    Self-paired modes (only the all-zero frequency, since the Nyquist index
    is never retained) are forced real.
    """
    if std is None:
        std = 1.0 / d_v
    m = modes.n_modes
    comp = std / np.sqrt(2.0)
    raw = comp * (
        rng.standard_normal((m, d_v, d_v)) + 1j * rng.standard_normal((m, d_v, d_v))
    )
    pairing = modes.flat_pairing()
    for i in range(m):
        j = pairing[i]
        if j == i:
            raw[i] = raw[i].real + 0j
        elif j > i:
            raw[j] = np.conjugate(raw[i])
    return raw.reshape(modes.block_extents + (d_v, d_v))


def conj_symmetrize(weights: T.Tensor, modes: ModeSet) -> T.Tensor:
    """Project weights onto the conjugate-symmetric manifold:
    W(k) <- (W(k) + conj(W(-k))) / 2.  Keeps real outputs real regardless of
    optimizer drift."""
    weights = T._ensure(weights)
    d_v = weights.shape[-1]
    flatw = T.reshape(weights, (modes.n_modes, d_v, d_v))
    mirrored = T.conj(T.gather(flatw, modes.flat_pairing(), axis=0))
    sym = T.mul(T.add(flatw, mirrored), 0.5)
    return T.reshape(sym, weights.shape)


def imag_residue_check(arr: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Assert the imaginary residue of an inverse transform is negligible,
    then return the real part.  Guards against symmetry bugs."""
    re = np.ascontiguousarray(arr.real)
    imag_norm = np.linalg.norm(arr.imag)
    real_norm = np.linalg.norm(re)
    if imag_norm > tol * max(real_norm, 1e-300):
        raise NumericError(
            f"imaginary residue {imag_norm:.3e} exceeds {tol:.1e} of output norm"
        )
    return re
