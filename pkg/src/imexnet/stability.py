"""Scalar model-problem stability: ``y' = lambda y`` stepped explicitly or with an IMEX shift.

With ``L = alpha I`` an IMEX step multiplies the state by
``(1 + h lambda + h alpha) / (1 + h alpha)``; forward Euler multiplies by
``1 + h lambda``.  For ``Re(lambda) < 0`` the IMEX factor is at most one in
magnitude once ``alpha >= |lambda|^2 / (2 |Re lambda|) - 1/h``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import autodiff as ad
from .layers import NetworkSpec, forward
from .rng import Rng

# Returned by alpha_bound when no finite shift stabilizes the step
# (some nonzero lambda on the imaginary axis).
UNBOUNDED = math.inf


def magnification_imex(lam: complex, h: float, alpha: float) -> float:
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    return abs((1 + h * lam + h * alpha) / (1 + h * alpha))


def magnification_forward_euler(lam: complex, h: float) -> float:
    return abs(1 + h * lam)


def alpha_bound(lams: Iterable[complex], h: float) -> float:
    """Smallest ``alpha >= 0`` that keeps every IMEX factor at or below one.

    Returns :data:`UNBOUNDED` if a nonzero ``lambda`` has zero real part.
    Raises ``ValueError`` for ``Re(lambda) > 0``, which lies outside the
    stability hypothesis.
    """
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    best = 0.0
    for lam in lams:
        lam = complex(lam)
        if lam.real > 0:
            raise ValueError(f"lambda {lam} has positive real part")
        damping = -lam.real
        mag2 = lam.real ** 2 + lam.imag ** 2
        if mag2 == 0:
            continue
        if damping == 0:
            return UNBOUNDED
        best = max(best, mag2 / (2 * damping) - 1 / h)
    return best


def is_unbounded(alpha: float) -> bool:
    return math.isinf(alpha)


@dataclass
class StabilityReport:
    lambdas: np.ndarray       # complex grid, shape (n, n)
    factor_fe: np.ndarray
    factor_imex: np.ndarray
    alpha: float
    h: float

    @property
    def max_imex(self) -> float:
        return float(self.factor_imex.max())

    @property
    def unbounded(self) -> bool:
        return is_unbounded(self.alpha)

    def csv_rows(self) -> list:
        rows = [("lambda_re", "lambda_im", "h", "alpha", "factor_fe", "factor_imex")]
        alpha = "unbounded" if self.unbounded else repr(float(self.alpha))
        for lam, fe, im in zip(self.lambdas.ravel(), self.factor_fe.ravel(), self.factor_imex.ravel()):
            rows.append((repr(float(lam.real)), repr(float(lam.imag)), repr(float(self.h)), alpha,
                         repr(float(fe)), repr(float(im))))
        return rows


def _axis(lo: float, hi: float, n: int) -> np.ndarray:
    if lo > hi:
        raise ValueError(f"empty range [{lo}, {hi}]")
    if lo == hi:
        return np.array([float(lo)])
    return np.linspace(lo, hi, n)


def stability_grid(re_range: tuple, im_range: tuple, n: int, h: float, alpha="auto") -> StabilityReport:
    """Both magnification factors on an ``n x n`` grid of ``lambda``.

    ``alpha="auto"`` uses :func:`alpha_bound` over the grid points.  With an
    unbounded shift the IMEX column is evaluated in the ``alpha -> inf``
    limit, where the factor tends to one.
    """
    if n < 1:
        raise ValueError("grid needs at least one point per axis")
    re = _axis(*re_range, n)
    im = _axis(*im_range, n)
    lams = re[None, :] + 1j * im[:, None]
    if isinstance(alpha, str):
        if alpha != "auto":
            raise ValueError(f"alpha must be a number or 'auto', got {alpha!r}")
        alpha = alpha_bound(lams.ravel(), h)
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    fe = np.abs(1 + h * lams)
    if is_unbounded(alpha):
        imex = np.ones_like(fe)
    else:
        if alpha < 0:
            raise ValueError(f"alpha must be non-negative, got {alpha}")
        imex = np.abs((1 + h * lams + h * alpha) / (1 + h * alpha))
    return StabilityReport(lams, fe, imex, float(alpha), float(h))


def perturbation_probe(net: NetworkSpec, params: dict, X: np.ndarray, delta_scale: float,
                       seed: int = 0, n_trials: int = 1, zero_perturbation: bool = False) -> list:
    """Mean ratio ``|dY_j| / |dY_0|`` after each step layer for random input perturbations.

    ``dY_0`` is the perturbation of the features entering the first step
    layer.  Perturbations are CLT-Gaussian draws scaled to
    ``delta_scale * |X|``.  A zero perturbation yields ratio 1 everywhere.
    """
    if not delta_scale > 0:
        raise ValueError("delta_scale must be positive")
    rng = Rng(seed)
    X = np.asarray(X, dtype=np.float64)
    p64 = {k: np.asarray(ad.value(v), np.float64) for k, v in params.items()}
    base = []
    forward(net, p64, X, base)
    base = base[:-1]
    sums = np.zeros(len(base))
    for _ in range(n_trials):
        d = rng.normal_array(X.shape)
        if zero_perturbation:
            d[:] = 0.0
        else:
            d *= delta_scale * np.linalg.norm(X) / np.linalg.norm(d)
        pert = []
        forward(net, p64, X + d, pert)
        diffs = [np.linalg.norm(a - b) for a, b in zip(pert[:-1], base)]
        if diffs[0] == 0:
            sums += 1.0
        else:
            sums += np.array(diffs) / diffs[0]
    return [float(v) for v in sums / n_trials]
