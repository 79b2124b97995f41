"""Dense rank-4 tensor arithmetic on periodic images.

Tensors are plain ``numpy`` arrays of shape ``(batch, channels, height, width)``.
Convolutions are true convolutions (kernel index negated) with the kernel
center aligned to the output pixel and all indices wrapped modulo the image
size.  With that convention a symmetric stencil is self-adjoint and the
adjoint of a convolution is a correlation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor, kernel or parameter shapes are incompatible."""


class NumericFailure(ArithmeticError):
    """Raised when an operation produces NaN or Inf."""


def check_finite(X: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(X)):
        raise NumericFailure(f"non-finite values in {what}")
    return X


def _require4(X: np.ndarray, what: str) -> None:
    if X.ndim != 4:
        raise ShapeError(f"{what} must be rank 4 (b, c, h, w), got shape {X.shape}")


def _check_kernel_dims(kh: int, kw: int, h: int, w: int) -> None:
    if kh % 2 == 0 or kw % 2 == 0 or kh < 1 or kw < 1:
        raise ShapeError(f"kernel dims must be odd and positive, got {kh}x{kw}")
    if kh > h or kw > w:
        raise ShapeError(f"kernel {kh}x{kw} larger than image {h}x{w}")


def _patches(X: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Return the shifted copies ``P[b, c, p, q, y, x] = X[b, c, y-p+r1, x-q+r2]``."""
    b, c, h, w = X.shape
    r1, r2 = kh // 2, kw // 2
    Xp = np.pad(X, ((0, 0), (0, 0), (r1, r1), (r2, r2)), mode="wrap")
    P = np.empty((b, c, kh, kw, h, w), dtype=X.dtype)
    for p in range(kh):
        for q in range(kw):
            P[:, :, p, q] = Xp[:, :, 2 * r1 - p:2 * r1 - p + h, 2 * r2 - q:2 * r2 - q + w]
    return P


def _sample_patches(X: np.ndarray, kh: int, kw: int) -> list:
    """Per-sample im2col matrices of shape ``(c*kh*kw, h*w)`` (built one sample at a time)."""
    b, c, h, w = X.shape
    return (_patches(X[i:i + 1], kh, kw).reshape(c * kh * kw, h * w) for i in range(b))


def _result_dtype(*arrays: np.ndarray) -> np.dtype:
    dt = np.result_type(*arrays)
    return dt if dt.kind == "f" else np.dtype(np.float64)


def conv2d_periodic(X: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Multi-channel periodic convolution.

    ``out[b, o] = sum_i K[o, i] * X[b, i]`` where ``*`` is the 2-D circular
    convolution with the kernel center at offset zero.

    Parameters
    ----------
    X : (b, cin, h, w) array
    K : (cout, cin, kh, kw) array, kh and kw odd

    Returns
    -------
    (b, cout, h, w) array
    """
    _require4(X, "input")
    _require4(K, "kernel")
    b, c, h, w = X.shape
    cout, cin, kh, kw = K.shape
    if cin != c:
        raise ShapeError(f"kernel expects {cin} input channels, tensor has {c}")
    _check_kernel_dims(kh, kw, h, w)
    dt = _result_dtype(X, K)
    X = X.astype(dt, copy=False)
    K = K.astype(dt, copy=False)
    out = np.empty((b, cout, h * w), dtype=dt)
    if kh == 1 and kw == 1:
        Xf = X.reshape(b, c, h * w)
        for i in range(b):
            np.matmul(K[:, :, 0, 0], Xf[i], out=out[i])
    else:
        Km = K.reshape(cout, c * kh * kw)
        for i, P in enumerate(_sample_patches(X, kh, kw)):
            np.matmul(Km, P, out=out[i])
    return check_finite(out.reshape(b, cout, h, w), "conv2d output")


def flip_transpose(K: np.ndarray) -> np.ndarray:
    """Kernel of the adjoint operator: spatially flipped, channels swapped."""
    return np.ascontiguousarray(np.flip(K, axis=(2, 3)).transpose(1, 0, 2, 3))


def conv2d_adjoint_periodic(G: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Exact adjoint of :func:`conv2d_periodic` with respect to its input."""
    _require4(G, "input")
    _require4(K, "kernel")
    if G.shape[1] != K.shape[0]:
        raise ShapeError(f"kernel produces {K.shape[0]} channels, tensor has {G.shape[1]}")
    return conv2d_periodic(G, flip_transpose(K))


def conv2d_kernel_grad(X: np.ndarray, G: np.ndarray, kshape: tuple) -> np.ndarray:
    """Adjoint of ``K -> conv2d_periodic(X, K)``: correlate input with cotangent.

    Sums over batch and pixel positions, returning an array of ``kshape``.
    """
    cout, cin, kh, kw = kshape
    b, c, h, w = X.shape
    if G.shape != (b, cout, h, w):
        raise ShapeError(f"cotangent shape {G.shape} does not match {(b, cout, h, w)}")
    if kh == 1 and kw == 1:
        patches = iter(X.reshape(b, c, h * w))
    else:
        patches = _sample_patches(X, kh, kw)
    G = G.reshape(b, cout, h * w)
    dK = np.zeros((cout, c * kh * kw), dtype=np.result_type(X, G))
    for i, P in enumerate(patches):  # fixed order: samples accumulate 0, 1, 2, ...
        dK += G[i] @ P.T
    return dK.reshape(kshape)


def group_conv2d_periodic(X: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Per-channel periodic convolution: channel ``i`` sees only ``B[i]``."""
    _require4(X, "input")
    if B.ndim != 3:
        raise ShapeError(f"group kernel must be (c, kh, kw), got {B.shape}")
    b, c, h, w = X.shape
    if B.shape[0] != c:
        raise ShapeError(f"group kernel has {B.shape[0]} channels, tensor has {c}")
    _, kh, kw = B.shape
    _check_kernel_dims(kh, kw, h, w)
    dt = _result_dtype(X, B)
    X = X.astype(dt, copy=False)
    r1, r2 = kh // 2, kw // 2
    Xp = np.pad(X, ((0, 0), (0, 0), (r1, r1), (r2, r2)), mode="wrap")
    out = np.zeros(X.shape, dtype=dt)
    tmp = np.empty(X.shape, dtype=dt)
    for p in range(kh):
        for q in range(kw):
            wpq = B[:, p, q].astype(dt)[None, :, None, None]
            np.multiply(Xp[:, :, 2 * r1 - p:2 * r1 - p + h, 2 * r2 - q:2 * r2 - q + w], wpq, out=tmp)
            out += tmp
    return check_finite(out, "group conv output")


def group_conv2d_adjoint_periodic(G: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`group_conv2d_periodic` (correlation with each ``B[i]``)."""
    return group_conv2d_periodic(G, np.ascontiguousarray(np.flip(B, axis=(1, 2))))


def group_kernel_grad(X: np.ndarray, G: np.ndarray, kshape: tuple) -> np.ndarray:
    """Adjoint of ``B -> group_conv2d_periodic(X, B)``."""
    c, kh, kw = kshape
    r1, r2 = kh // 2, kw // 2
    h, w = X.shape[2:]
    Xp = np.pad(X, ((0, 0), (0, 0), (r1, r1), (r2, r2)), mode="wrap")
    dB = np.empty(kshape, dtype=np.result_type(X, G))
    for p in range(kh):
        for q in range(kw):
            shifted = Xp[:, :, 2 * r1 - p:2 * r1 - p + h, 2 * r2 - q:2 * r2 - q + w]
            dB[:, p, q] = np.einsum("bchw,bchw->c", G, shifted)
    return dB


@dataclass(frozen=True)
class NormParams:
    """Affine parameters of instance normalization (per channel)."""

    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if np.shape(self.gamma) != np.shape(self.beta):
            raise ShapeError("gamma and beta must have the same shape")

    @classmethod
    def identity(cls, c: int, dtype=np.float64, eps: float = 1e-5) -> "NormParams":
        return cls(np.ones(c, dtype), np.zeros(c, dtype), eps)


def instance_norm(X: np.ndarray, p: NormParams) -> np.ndarray:
    """Per-sample, per-channel spatial standardization followed by ``gamma * . + beta``.

    The variance is the population variance over the ``h * w`` positions.
    """
    _require4(X, "input")
    c = X.shape[1]
    if np.shape(p.gamma) != (c,):
        raise ShapeError(f"norm params have {np.shape(p.gamma)} channels, tensor has {c}")
    mean = X.mean(axis=(2, 3), keepdims=True)
    var = X.var(axis=(2, 3), keepdims=True)
    xhat = (X - mean) / np.sqrt(var + p.eps)
    out = xhat * p.gamma[None, :, None, None] + p.beta[None, :, None, None]
    return check_finite(out.astype(X.dtype, copy=False), "instance norm output")


def relu(X: np.ndarray) -> np.ndarray:
    return np.maximum(X, 0)


def add(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    if np.shape(X) != np.shape(Y):
        raise ShapeError(f"cannot add shapes {np.shape(X)} and {np.shape(Y)}")
    return check_finite(X + Y, "sum")


def scale(X: np.ndarray, s: float) -> np.ndarray:
    return check_finite(X * s, "scaled tensor")


def conv1x1(X: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Channel mixing ``out[b, o] = sum_i W[o, i] X[b, i]``; ``W`` is (cout, cin)."""
    W = np.asarray(W)
    if W.ndim != 2:
        raise ShapeError(f"mixing matrix must be 2-D, got {W.shape}")
    return conv2d_periodic(X, W[:, :, None, None])


def inner(X: np.ndarray, Y: np.ndarray) -> float:
    """Euclidean inner product accumulated in double precision."""
    return float(np.dot(np.ravel(X).astype(np.float64), np.ravel(Y).astype(np.float64)))
