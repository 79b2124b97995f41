"""Residual, IMEX and diffusion-reaction steps and the staged networks built from them.

All functions accept plain arrays or taped :class:`~imexnet.autodiff.Var`
values, so the same forward pass serves inference, probes and training.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .rng import Rng
from .spectral import LAPLACIAN_FACTOR
from .tensor import NormParams, ShapeError

MODES = ("explicit", "imex", "dr")
INITS = ("symmetric", "positive")
ACTIVATIONS = ("relu", "identity")

# Seed of the fixed explicit kernels used by the propagation demo.
DEMO_SEED = 7
DEMO_WIDTH = 4
# Implicit demo step: one solve must lift every pixel of a 64x64 frame above 1e-12.
DEMO_IMPLICIT_H = 20.0


@dataclass
class StageSpec:
    width: int
    layers: int
    mode: str = "imex"
    h: float = 1.0
    kernel: int = 3

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError(f"stage width must be positive, got {self.width}")
        if self.layers < 0:
            raise ValueError(f"layer count must be non-negative, got {self.layers}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not self.h > 0:
            raise ValueError(f"step size must be positive, got {self.h}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel size must be odd and positive, got {self.kernel}")


@dataclass
class NetworkSpec:
    """Staged architecture: opening conv, step layers per stage, 1x1 classifier."""

    stages: list
    input_channels: int = 1
    n_classes: int = 4
    opening: int = 1
    norm: bool = True
    activation: str = "relu"
    init: str = "symmetric"
    seed: int = 0
    size: int = 64

    def __post_init__(self):
        if not self.stages:
            raise ValueError("a network needs at least one stage")
        self.stages = [s if isinstance(s, StageSpec) else StageSpec(**s) for s in self.stages]
        if self.input_channels <= 0 or self.n_classes <= 0:
            raise ValueError("input_channels and n_classes must be positive")
        if self.opening < 1 or self.opening % 2 == 0:
            raise ValueError(f"opening kernel must be odd, got {self.opening}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.init not in INITS:
            raise ValueError(f"unknown init {self.init!r}; expected one of {INITS}")

    def with_mode(self, mode: str) -> "NetworkSpec":
        """Same architecture with every stage switched to ``mode``."""
        stages = [StageSpec(s.width, s.layers, mode, s.h, s.kernel) for s in self.stages]
        return NetworkSpec(stages, self.input_channels, self.n_classes, self.opening, self.norm,
                           self.activation, self.init, self.seed, self.size)


@dataclass
class LayerParams:
    K1: object
    K2: object
    norm: Optional[NormParams] = None
    B: object = None


@dataclass
class FieldOfViewReport:
    coverage_fraction: float
    max_radius: int
    per_layer: list = field(default_factory=list)  # (coverage, radius) after opening and each layer
    responses: list = field(default_factory=list, repr=False)  # (h, w) response maps, same order


# ---------------------------------------------------------------------------
# parameters

def param_shapes(net: NetworkSpec) -> dict:
    """Ordered ``name -> shape`` map; the order is the checkpoint layout."""
    shapes = {}
    w0 = net.stages[0].width
    shapes["open.W"] = (w0, net.input_channels, net.opening, net.opening)
    shapes["open.b"] = (w0,)
    prev = w0
    for si, st in enumerate(net.stages):
        if st.width != prev:
            shapes[f"proj{si}.W"] = (st.width, prev, 1, 1)
            shapes[f"proj{si}.b"] = (st.width,)
        m, k = st.width, st.kernel
        for li in range(st.layers):
            pre = f"s{si}.l{li}."
            shapes[pre + "K1"] = (m, m, k, k)
            shapes[pre + "K2"] = (m, m, k, k)
            if net.norm:
                shapes[pre + "gamma"] = (m,)
                shapes[pre + "beta"] = (m,)
            if st.mode != "explicit":
                shapes[pre + "B"] = (m, 3, 3)
        prev = st.width
    shapes["cls.W"] = (net.n_classes, prev, 1, 1)
    shapes["cls.b"] = (net.n_classes,)
    return shapes


def parameter_count(net: NetworkSpec) -> int:
    return int(sum(np.prod(s) for s in param_shapes(net).values()))


def init_params(net: NetworkSpec, dtype=np.float32) -> dict:
    """Initialize every parameter from ``Rng(net.seed)`` in declaration order.

    Convolution weights draw from U[0, 1) (``init="positive"``) or from
    U(-a, a) with ``a = sqrt(1 / fan_in)`` (``init="symmetric"``).  Biases
    and norm shifts start at 0, norm scales at 1, implicit kernels at the
    Laplacian factor.
    """
    rng = Rng(net.seed)
    params = {}
    for name, shape in param_shapes(net).items():
        kind = name.rsplit(".", 1)[1]
        if kind in ("W", "K1", "K2"):
            if net.init == "positive":
                v = rng.uniform_array(shape)
            else:
                a = np.sqrt(1.0 / (shape[1] * shape[2] * shape[3]))
                v = rng.uniform_array(shape, -a, a)
        elif kind == "gamma":
            v = np.ones(shape)
        elif kind == "B":
            v = np.broadcast_to(LAPLACIAN_FACTOR, shape).copy()
        else:
            v = np.zeros(shape)
        params[name] = v.astype(dtype)
    return params


def check_params(net: NetworkSpec, params: dict) -> None:
    shapes = param_shapes(net)
    if list(params) != list(shapes):
        missing = sorted(set(shapes) - set(params))
        extra = sorted(set(params) - set(shapes))
        raise ShapeError(f"parameters do not match network (missing {missing}, unexpected {extra})")
    for name, shape in shapes.items():
        if tuple(np.shape(ad.value(params[name]))) != shape:
            raise ShapeError(f"{name}: expected shape {shape}, got {np.shape(ad.value(params[name]))}")


def layer_params(net: NetworkSpec, params: dict, si: int, li: int, eps: float = 1e-5) -> LayerParams:
    pre = f"s{si}.l{li}."
    norm = NormParams(params[pre + "gamma"], params[pre + "beta"], eps) if net.norm else None
    return LayerParams(params[pre + "K1"], params[pre + "K2"], norm, params.get(pre + "B"))


# ---------------------------------------------------------------------------
# steps

def layer_f(Y, p: LayerParams, activation: str = "relu"):
    """``K2 * act(norm(K1 * Y))``; normalization is skipped when ``p.norm`` is None."""
    Z = ad.conv2d(Y, p.K1)
    if p.norm is not None:
        Z = ad.instance_norm(Z, p.norm.gamma, p.norm.beta, p.norm.eps)
    if activation == "relu":
        Z = ad.relu(Z)
    return ad.conv2d(Z, p.K2)


def resnet_step(Y, p: LayerParams, h: float, activation: str = "relu"):
    """Forward Euler: ``Y + h f(Y)``."""
    return ad.add(Y, ad.scale(layer_f(Y, p, activation), h))


def _require_B(p: LayerParams) -> None:
    if p.B is None:
        raise ValueError("implicit step requires an implicit kernel B")


def apply_L(Y, B):
    return ad.group_conv_adjoint(ad.group_conv(Y, B), B)


def imex_step(Y, p: LayerParams, h: float, activation: str = "relu"):
    """``(I + hL)^{-1} (Y + h L Y + h f(Y))`` with ``L = B^T B``."""
    _require_B(p)
    rhs = ad.add(ad.add(Y, ad.scale(apply_L(Y, p.B), h)), ad.scale(layer_f(Y, p, activation), h))
    return ad.solve_implicit(rhs, p.B, h)


def dr_step(Y, p: LayerParams, h: float, activation: str = "relu"):
    """Diffusion-reaction variant: ``(I + hL)^{-1} (Y + h f(Y))``."""
    _require_B(p)
    return ad.solve_implicit(ad.add(Y, ad.scale(layer_f(Y, p, activation), h)), p.B, h)


STEPS = {"explicit": resnet_step, "imex": imex_step, "dr": dr_step}


# ---------------------------------------------------------------------------
# networks

def _conv_bias(X, W, b):
    return ad.add_bias(ad.conv2d(X, W), b)


def forward(net: NetworkSpec, params: dict, X, trace: Optional[list] = None, eps: float = 1e-5):
    """Logits of shape ``(b, n_classes, h, w)``.

    When ``trace`` is a list, the features after the opening conv, after
    every step layer and the final logits are appended to it.
    """
    xv = ad.value(X)
    if np.ndim(xv) != 4 or xv.shape[1] != net.input_channels:
        raise ShapeError(f"input must be (b, {net.input_channels}, h, w), got {np.shape(xv)}")
    for n in xv.shape[2:]:
        if n < 1 or n & (n - 1):
            raise ShapeError(f"spatial dims must be powers of two, got {xv.shape[2:]}")
    check_params(net, params)
    Y = _conv_bias(X, params["open.W"], params["open.b"])
    if trace is not None:
        trace.append(Y)
    for si, st in enumerate(net.stages):
        if f"proj{si}.W" in params:
            Y = _conv_bias(Y, params[f"proj{si}.W"], params[f"proj{si}.b"])
        step = STEPS[st.mode]
        for li in range(st.layers):
            Y = step(Y, layer_params(net, params, si, li, eps), st.h, net.activation)
            if trace is not None:
                trace.append(Y)
    logits = _conv_bias(Y, params["cls.W"], params["cls.b"])
    if trace is not None:
        trace.append(logits)
    return logits


def support_stats(response: np.ndarray, center: tuple, eps: float) -> tuple:
    """Coverage fraction and periodic Chebyshev radius of ``|response| > eps``."""
    mask = np.abs(response) > eps
    h, w = mask.shape
    if not mask.any():
        return 0.0, 0
    ys, xs = np.nonzero(mask)
    dy = np.abs(ys - center[0])
    dx = np.abs(xs - center[1])
    dy = np.minimum(dy, h - dy)
    dx = np.minimum(dx, w - dx)
    return float(mask.mean()), int(np.maximum(dy, dx).max())


def receptive_field_probe(net: NetworkSpec, params: dict, eps: float, size: Optional[int] = None,
                          dtype=np.float64) -> FieldOfViewReport:
    """Propagate a unit delta at the image center and measure where it reaches.

    The response is ``|F(delta) - F(0)|`` maximized over channels, so biases
    and normalization offsets do not count as propagated signal.  Entries of
    ``per_layer`` follow the opening conv and each step layer; the headline
    numbers are those of the last feature map (the classifier is pointwise
    and is not probed).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    s = size or net.size
    center = (s // 2, s // 2)
    delta = np.zeros((1, net.input_channels, s, s), dtype)
    delta[0, 0, center[0], center[1]] = 1.0
    p64 = {k: np.asarray(v, dtype) for k, v in params.items()}
    t_delta, t_zero = [], []
    forward(net, p64, delta, t_delta)
    forward(net, p64, np.zeros_like(delta), t_zero)
    responses = [np.abs(a - b).max(axis=(0, 1)) for a, b in zip(t_delta[:-1], t_zero[:-1])]
    per_layer = [support_stats(resp, center, eps) for resp in responses]
    cov, rad = per_layer[-1]
    return FieldOfViewReport(cov, rad, per_layer, responses)


def demo_network(mode: str, layers: int, h: float, size: int = 64, width: int = DEMO_WIDTH) -> NetworkSpec:
    """Norm-free single-stage network used for propagation pictures."""
    return NetworkSpec([StageSpec(width, layers, mode, h, 3)], input_channels=1, n_classes=1,
                       opening=1, norm=False, activation="relu", init="symmetric", seed=DEMO_SEED,
                       size=size)


def demo_params(net: NetworkSpec) -> dict:
    """Fixed-seed explicit kernels, Laplacian-factor B, identity opening and readout."""
    params = init_params(net, np.float64)
    params["open.W"][:] = 1.0
    params["cls.W"][:] = 1.0 / net.stages[-1].width
    return params


def implicit_overhead(net: NetworkSpec) -> list:
    """Per stage: implicit-kernel parameters per layer over explicit-kernel parameters per layer."""
    out = []
    for st in net.stages:
        m, k = st.width, st.kernel
        out.append((9 * m) / (2 * k * k * m * m))
    return out
