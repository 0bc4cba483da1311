"""Monotone CDF inversion on the log scale.

Two independent routes are provided: a scalar Brent solver used for precise
single quantiles, and a vectorized bisection used for bulk sampling and as a
cross-check of the scalar route.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy.optimize import brentq

LOWER_START = 1e-6
MAX_DOUBLINGS = 200
LN2 = math.log(2.0)


class BracketError(RuntimeError):
    """Raised when the bracket around a quantile cannot be established."""

    def __init__(self, message: str, bracket: tuple[float, float]):
        super().__init__(f"{message} (last bracket: [{bracket[0]:.6g}, {bracket[1]:.6g}])")
        self.bracket = bracket


def invert_scalar(cdf: Callable[[float], float], q: float, x: float,
                  xtol: float = 1e-14) -> float:
    """Smallest y > 0 with ``cdf(y) >= q`` for a nondecreasing ``cdf``.

    The search runs on log(y). The initial bracket is ``[1e-6, max(1, x)]``;
    the upper end is doubled until the CDF reaches ``q`` (at most 200 times)
    and the lower end halved until it falls below ``q``.
    """
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    lo = math.log(LOWER_START)
    hi = math.log(max(1.0, x))

    def f(log_y: float) -> float:
        return cdf(math.exp(log_y)) - q

    f_hi = f(hi)
    n = 0
    while f_hi < 0.0:
        n += 1
        if n > MAX_DOUBLINGS:
            raise BracketError("conditional CDF never reached q",
                               (math.exp(lo), math.exp(hi)))
        hi += LN2
        f_hi = f(hi)
    f_lo = f(lo)
    n = 0
    while f_lo > 0.0:
        n += 1
        if n > MAX_DOUBLINGS:
            raise BracketError("conditional CDF never dropped below q",
                               (math.exp(lo), math.exp(hi)))
        lo -= LN2
        f_lo = f(lo)
    if f_lo == 0.0:
        return math.exp(lo)
    if f_hi == 0.0:
        return math.exp(hi)
    root = brentq(f, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500)
    return math.exp(root)


def invert_bisect(cdf: Callable[[np.ndarray], np.ndarray], q: np.ndarray,
                  x: np.ndarray, n_iter: int = 64) -> np.ndarray:
    """Vectorized bisection counterpart of :func:`invert_scalar`.

    ``cdf`` maps an array of y values (same shape as ``q``) to probabilities.
    Returns an array of quantiles; raises :class:`BracketError` if any entry
    cannot be bracketed.
    """
    q = np.asarray(q, dtype=float)
    x = np.broadcast_to(np.asarray(x, dtype=float), q.shape)
    lo = np.full(q.shape, math.log(LOWER_START))
    hi = np.log(np.maximum(1.0, x))

    bad = cdf(np.exp(hi)) < q
    n = 0
    while bad.any():
        n += 1
        if n > MAX_DOUBLINGS:
            i = np.flatnonzero(bad.ravel())[0]
            raise BracketError("conditional CDF never reached q",
                               (math.exp(lo.ravel()[i]), math.exp(hi.ravel()[i])))
        hi = np.where(bad, hi + LN2, hi)
        bad = cdf(np.exp(hi)) < q
    bad = cdf(np.exp(lo)) > q
    n = 0
    while bad.any():
        n += 1
        if n > MAX_DOUBLINGS:
            i = np.flatnonzero(bad.ravel())[0]
            raise BracketError("conditional CDF never dropped below q",
                               (math.exp(lo.ravel()[i]), math.exp(hi.ravel()[i])))
        lo = np.where(bad, lo - LN2, lo)
        bad = cdf(np.exp(lo)) > q

    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        below = cdf(np.exp(mid)) < q
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max(hi - lo) < 1e-15:
            break
    return np.exp(0.5 * (lo + hi))
