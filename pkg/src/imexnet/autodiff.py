"""Minimal reverse-mode differentiation over a fixed set of tensor primitives.

A :class:`Tape` records every primitive applied to a :class:`Var`.  The
primitives below work on plain arrays too (no recording happens when none of
the inputs is a ``Var``), so model code is written once and used for both
inference and training.

    tape = Tape()
    x = tape.leaf(X)
    loss = total(relu(conv2d(x, K)))
    grads = tape.backward(loss)
    grads[x]
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import spectral
from . import tensor as T


class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "tape", "__weakref__")

    def __init__(self, value: np.ndarray, tape: "Tape"):
        self.value = value
        self.tape = tape

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def dtype(self):
        return np.asarray(self.value).dtype

    def __repr__(self):
        return f"Var(shape={self.shape}, dtype={self.dtype})"


@dataclass(frozen=True)
class Primitive:
    name: str
    forward: Callable
    # vjp(g, out, *input_values, **kwargs) -> one cotangent (or None) per input
    vjp: Callable


@dataclass
class Node:
    prim: Primitive
    inputs: tuple
    kwargs: dict
    output: Var


@dataclass
class Tape:
    leaves: list = field(default_factory=list)
    nodes: list = field(default_factory=list)

    def leaf(self, value) -> Var:
        v = Var(np.asarray(value), self)
        self.leaves.append(v)
        return v

    def backward(self, root: Var, cotangent: float = 1.0) -> dict:
        """Gradients of the scalar ``root`` w.r.t. every Var that influenced it.

        Returns a dict keyed by ``Var``.  Raises ``ValueError`` for a
        non-scalar root and ``NumericFailure`` if any cotangent is not finite.
        """
        if not isinstance(root, Var) or root.tape is not self:
            raise ValueError("root is not recorded on this tape")
        if np.size(root.value) != 1:
            raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
        grads = {id(root): np.full(np.shape(root.value), cotangent, dtype=root.dtype)}
        owner = {id(root): root}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            vals = [_value(x) for x in node.inputs]
            cots = node.prim.vjp(g, node.output.value, *vals, **node.kwargs)
            for x, c in zip(node.inputs, cots):
                if c is None or not isinstance(x, Var):
                    continue
                T.check_finite(np.asarray(c), f"gradient of {node.prim.name}")
                key = id(x)
                if key in grads:
                    grads[key] = grads[key] + c
                else:
                    grads[key] = c
                    owner[key] = x
        return {owner[k]: g for k, g in grads.items()}

    def clear(self) -> None:
        """Drop all recorded nodes and leaves.

        Vars reference their tape and the tape references its Vars, so a
        finished tape is a reference cycle; clearing it frees the saved
        intermediates immediately instead of at the next cyclic collection.
        """
        self.nodes.clear()
        self.leaves.clear()

    def replay(self) -> list:
        """Recompute every node output from the leaves (without mutating the tape)."""
        values = {id(v): v.value for v in self.leaves}
        outs = []
        for node in self.nodes:
            vals = [values.get(id(x), x.value) if isinstance(x, Var) else x for x in node.inputs]
            out = node.prim.forward(*vals, **node.kwargs)
            values[id(node.output)] = out
            outs.append(out)
        return outs


def _value(x):
    return x.value if isinstance(x, Var) else x


def _apply(prim: Primitive, *inputs, **kwargs):
    tape = None
    for x in inputs:
        if isinstance(x, Var):
            if tape is not None and x.tape is not tape:
                raise ValueError("inputs recorded on different tapes")
            tape = x.tape
    out = prim.forward(*[_value(x) for x in inputs], **kwargs)
    if tape is None:
        return out
    var = Var(out, tape)
    tape.nodes.append(Node(prim, inputs, kwargs, var))
    return var


def value(x):
    """Underlying array of a Var (or the array itself)."""
    return _value(x)


# ---------------------------------------------------------------------------
# primitives

_CONV = Primitive(
    "conv2d",
    T.conv2d_periodic,
    lambda g, out, x, k: (T.conv2d_adjoint_periodic(g, k), T.conv2d_kernel_grad(x, g, k.shape)),
)


def conv2d(x, k):
    return _apply(_CONV, x, k)


def _add_bias_fwd(x, b):
    return x + b[None, :, None, None]


_ADD_BIAS = Primitive("add_bias", _add_bias_fwd, lambda g, out, x, b: (g, g.sum(axis=(0, 2, 3))))


def add_bias(x, b):
    return _apply(_ADD_BIAS, x, b)


def _norm_fwd(x, gamma, beta, eps):
    return T.instance_norm(x, T.NormParams(gamma, beta, eps))


def _norm_vjp(g, out, x, gamma, beta, eps):
    mean = x.mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(x.var(axis=(2, 3), keepdims=True) + eps)
    xhat = (x - mean) * inv
    dxhat = g * gamma[None, :, None, None]
    dx = inv * (dxhat - dxhat.mean(axis=(2, 3), keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=(2, 3), keepdims=True))
    return (dx.astype(x.dtype, copy=False),
            (g * xhat).sum(axis=(0, 2, 3)).astype(gamma.dtype, copy=False),
            g.sum(axis=(0, 2, 3)).astype(beta.dtype, copy=False))


_NORM = Primitive("instance_norm", _norm_fwd, _norm_vjp)


def instance_norm(x, gamma, beta, eps: float = 1e-5):
    return _apply(_NORM, x, gamma, beta, eps=eps)


_RELU = Primitive("relu", T.relu, lambda g, out, x: (g * (x > 0),))


def relu(x):
    return _apply(_RELU, x)


_ADD = Primitive("add", T.add, lambda g, out, x, y: (g, g))


def add(x, y):
    return _apply(_ADD, x, y)


_SCALE = Primitive("scale", lambda x, s: T.scale(x, s), lambda g, out, x, s: (g * s,))


def scale(x, s: float):
    return _apply(_SCALE, x, s=s)


_GCONV = Primitive(
    "group_conv",
    T.group_conv2d_periodic,
    lambda g, out, x, B: (T.group_conv2d_adjoint_periodic(g, B), T.group_kernel_grad(x, g, B.shape)),
)


def group_conv(x, B):
    return _apply(_GCONV, x, B)


def _gconv_adj_vjp(g, out, x, B):
    # adjoint(x, B) = group_conv(x, flip(B))
    dflip = T.group_kernel_grad(x, g, B.shape)
    return T.group_conv2d_periodic(g, B), np.flip(dflip, axis=(1, 2))


_GCONV_ADJ = Primitive("group_conv_adjoint", T.group_conv2d_adjoint_periodic, _gconv_adj_vjp)


def group_conv_adjoint(x, B):
    return _apply(_GCONV_ADJ, x, B)


def _solve_vjp(g, out, x, B, h):
    dx = spectral.solve_group_implicit(g, B, h)
    if h == 0:
        return dx, np.zeros_like(B)
    # t = 1 / (1 + h S), S = |B_hat|^2.  dL/dt is real and even, so the
    # one-sided spectrum carries everything: dL/dB = gather(2 N irfft(dL/dS * B_hat)).
    hw = x.shape[-2:]
    n = hw[0] * hw[1]
    Bhat = np.fft.rfft2(spectral.embed_kernel(B.astype(np.float64), *hw), axes=(-2, -1))
    t = 1.0 / (1.0 + h * (Bhat.real ** 2 + Bhat.imag ** 2))
    Xh = np.fft.rfft2(x, axes=(-2, -1))
    Gh = np.fft.rfft2(g, axes=(-2, -1))
    dt = (Xh * np.conj(Gh)).real.astype(np.float64).sum(axis=0) / n
    dS = -h * t * t * dt
    dplane = 2.0 * n * np.fft.irfft2(dS * Bhat, s=hw, axes=(-2, -1))
    dB = spectral.gather_kernel(dplane, B.shape[1], B.shape[2])
    return dx, dB.astype(B.dtype, copy=False)


_SOLVE = Primitive(
    "solve_group_implicit",
    lambda x, B, h: spectral.solve_group_implicit(x, B, h),
    _solve_vjp,
)


def solve_implicit(x, B, h: float):
    """``(I + h B^T B)^{-1} x``, differentiable in both ``x`` and ``B``."""
    return _apply(_SOLVE, x, B, h=h)


def _wce_parts(logits, labels, weights):
    C = logits.shape[1]
    if labels.min() < 0 or labels.max() >= C:
        raise ValueError(f"label out of range [0, {C})")
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    z = e.sum(axis=1, keepdims=True)
    lse = (m + np.log(z))[:, 0]
    picked = np.take_along_axis(logits, labels[:, None].astype(np.intp), axis=1)[:, 0]
    wpix = np.asarray(weights, dtype=logits.dtype)[labels]
    return e / z, lse - picked, wpix


def _wce_fwd(logits, labels, weights):
    _, nll, wpix = _wce_parts(logits, labels, weights)
    total = wpix.astype(np.float64).sum()
    return np.asarray((wpix * nll).astype(np.float64).sum() / total, dtype=logits.dtype)


def _wce_vjp(g, out, logits, labels, weights):
    p, _, wpix = _wce_parts(logits, labels, weights)
    total = wpix.astype(np.float64).sum()
    onehot = np.zeros_like(p)
    np.put_along_axis(onehot, labels[:, None].astype(np.intp), 1.0, axis=1)
    d = (p - onehot) * (wpix / total)[:, None]
    return (g * d).astype(logits.dtype, copy=False)


_WCE = Primitive(
    "weighted_cross_entropy",
    lambda logits, labels, weights: _wce_fwd(logits, labels, weights),
    lambda g, out, logits, labels, weights: (_wce_vjp(g, out, logits, labels, weights),),
)


def weighted_cross_entropy(logits, labels: np.ndarray, weights):
    """Weighted mean of per-pixel negative log-softmax at the true label.

    ``sum_pix w[label] * nll / sum_pix w[label]``; ``labels`` is (b, h, w).
    """
    return _apply(_WCE, logits, labels=np.asarray(labels), weights=np.asarray(weights))


_SUM = Primitive("sum", lambda x: np.asarray(x.sum(dtype=np.float64), dtype=x.dtype),
                 lambda g, out, x: (np.full(x.shape, g, dtype=x.dtype),))


def total(x):
    return _apply(_SUM, x)


_INNER = Primitive("inner", lambda x, c: np.asarray(T.inner(x, c), dtype=x.dtype),
                   lambda g, out, x, c: ((g * c).astype(x.dtype, copy=False),))


def inner_const(x, c: np.ndarray):
    """``<x, c>`` for a constant ``c``; turns a tensor output into a scalar probe."""
    return _apply(_INNER, x, c=np.asarray(c))


PRIMITIVES = (_CONV, _ADD_BIAS, _NORM, _RELU, _ADD, _SCALE, _GCONV, _GCONV_ADJ, _SOLVE, _WCE, _SUM,
              _INNER)
