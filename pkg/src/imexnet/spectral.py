"""FFT solves for shifted group convolutions ``(I + h L) Y = R`` on periodic images.

The implicit operator is ``L = B^T B`` with ``B`` a per-channel (group)
kernel.  Under periodic boundary conditions ``B`` is circulant, so it is
diagonalized by the 2-D DFT of the kernel embedded into image size with its
center at index (0, 0).
"""
from __future__ import annotations

import numpy as np

from .tensor import (
    ShapeError,
    _check_kernel_dims,
    check_finite,
    group_conv2d_adjoint_periodic,
    group_conv2d_periodic,
)

# Discrete Laplace operator used for the fixed-operator propagation demo.
LAPLACIAN_STENCIL = np.array([[-1.0, -4.0, -1.0],
                              [-4.0, 20.0, -4.0],
                              [-1.0, -4.0, -1.0]]) / 6.0

# Default implicit factor B: 5-point Laplacian scaled by 1/sqrt(6).  B^T B is
# positive semidefinite, annihilates constants, and is Laplacian-like.
LAPLACIAN_FACTOR = np.array([[0.0, -1.0, 0.0],
                             [-1.0, 4.0, -1.0],
                             [0.0, -1.0, 0.0]]) / np.sqrt(6.0)

PSD_TOL = 1e-6


def _as_group(K: np.ndarray) -> np.ndarray:
    K = np.asarray(K)
    if K.ndim == 2:
        K = K[None]
    if K.ndim != 3:
        raise ShapeError(f"group kernel must be (c, kh, kw), got {K.shape}")
    return K


def embed_kernel(K: np.ndarray, h: int, w: int) -> np.ndarray:
    """Zero-embed each channel kernel into an ``h x w`` plane, center at (0, 0).

    Kernel entry ``(p, q)`` lands at ``((p - mid1) % h, (q - mid2) % w)``,
    which splits the stencil over the four corners of the plane.
    """
    K = _as_group(K)
    c, kh, kw = K.shape
    _check_kernel_dims(kh, kw, h, w)
    rows = (np.arange(kh) - kh // 2) % h
    cols = (np.arange(kw) - kw // 2) % w
    plane = np.zeros((c, h, w), dtype=K.dtype if K.dtype.kind == "f" else np.float64)
    plane[:, rows[:, None], cols[None, :]] = K
    return plane


def gather_kernel(plane: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Adjoint of :func:`embed_kernel`: read the corner blocks back into a kernel."""
    c, h, w = plane.shape
    rows = (np.arange(kh) - kh // 2) % h
    cols = (np.arange(kw) - kw // 2) % w
    return plane[:, rows[:, None], cols[None, :]]


def symbol(plane: np.ndarray) -> np.ndarray:
    """Full 2-D DFT of each channel of an embedded kernel."""
    return np.fft.fft2(plane, axes=(-2, -1))


def implicit_multiplier(B: np.ndarray, h: float, shape: tuple) -> np.ndarray:
    """``t = 1 / (1 + h |B_hat|^2)`` on the one-sided (rfft) frequency grid."""
    B = _as_group(B)
    Bh = np.fft.rfft2(embed_kernel(B, *shape), axes=(-2, -1))
    return 1.0 / (1.0 + h * (Bh.real ** 2 + Bh.imag ** 2))


def _spectral_apply(X: np.ndarray, t: np.ndarray) -> np.ndarray:
    hw = X.shape[-2:]
    Xh = np.fft.rfft2(X, axes=(-2, -1))
    out = np.fft.irfft2(Xh * t[None].astype(Xh.dtype, copy=False), s=hw, axes=(-2, -1))
    return check_finite(out.astype(X.dtype, copy=False), "implicit solve output")


def _check_step(h: float) -> None:
    if h < 0:
        raise ValueError(f"step size must be non-negative, got {h}")


def solve_group_implicit(X: np.ndarray, B: np.ndarray, h: float) -> np.ndarray:
    """Apply ``(I + h B^T B)^{-1}`` channel-wise via the FFT.

    The multiplier is real, positive and at most 1, so the solve is
    self-adjoint and contractive.
    """
    _check_step(h)
    B = _as_group(B)
    if X.ndim != 4 or X.shape[1] != B.shape[0]:
        raise ShapeError(f"group kernel with {B.shape[0]} channels cannot act on {X.shape}")
    if h == 0:
        return X.copy()
    return _spectral_apply(X, implicit_multiplier(B, h, X.shape[-2:]))


def apply_L(X: np.ndarray, B: np.ndarray) -> np.ndarray:
    """``B^T B X`` evaluated in the spatial domain."""
    B = _as_group(B)
    return group_conv2d_adjoint_periodic(group_conv2d_periodic(X, B), B)


def apply_identity_plus_hL(X: np.ndarray, B: np.ndarray, h: float) -> np.ndarray:
    """``(I + h B^T B) X`` evaluated in the spatial domain."""
    _check_step(h)
    return X + h * apply_L(X, B)


def solve_direct_symmetric(X: np.ndarray, Lk: np.ndarray, h: float) -> np.ndarray:
    """Apply ``(I + h L)^{-1}`` for a directly supplied centro-symmetric PSD stencil ``L``.

    Raises ``ValueError`` if a stencil is not centro-symmetric or its symbol
    has a negative part beyond ``PSD_TOL`` (relative to the symbol's largest
    magnitude).
    """
    _check_step(h)
    Lk = _as_group(Lk)
    if X.ndim != 4 or X.shape[1] != Lk.shape[0]:
        raise ShapeError(f"stencil with {Lk.shape[0]} channels cannot act on {X.shape}")
    flipped = np.flip(Lk, axis=(1, 2))
    if not np.allclose(Lk, flipped, rtol=0, atol=1e-12 * max(1.0, np.abs(Lk).max())):
        raise ValueError("stencil is not centro-symmetric")
    S = np.fft.rfft2(embed_kernel(Lk, *X.shape[-2:]), axes=(-2, -1)).real
    scale = max(np.abs(S).max(), 1e-300)
    if S.min() < -PSD_TOL * scale:
        raise ValueError(f"stencil is not positive semidefinite (symbol min {S.min():.3g})")
    if h == 0:
        return X.copy()
    return _spectral_apply(X, 1.0 / (1.0 + h * np.maximum(S, 0.0)))


def _five_point_symbol(h: int, w: int) -> np.ndarray:
    a = 2 * np.pi * np.fft.fftfreq(h)[:, None]
    b = 2 * np.pi * np.fft.fftfreq(w)[None, :]
    return 4 - 2 * np.cos(a) - 2 * np.cos(b)


def high_frequency_energy(X: np.ndarray, cutoff: float = 4.0) -> float:
    """Spectral energy where the 5-point Laplacian symbol exceeds ``cutoff``.

    The 5-point symbol ``4 - 2 cos a - 2 cos b`` ranges over ``[0, 8]``.
    """
    E = np.abs(np.fft.fft2(X, axes=(-2, -1))) ** 2
    return float(E[..., _five_point_symbol(*X.shape[-2:]) > cutoff].sum())


def high_frequency_fraction(X: np.ndarray, cutoff: float = 4.0) -> float:
    total = float((np.abs(np.fft.fft2(X, axes=(-2, -1))) ** 2).sum())
    if total == 0:
        return 0.0
    return high_frequency_energy(X, cutoff) / total
