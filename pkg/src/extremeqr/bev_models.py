"""Parametric bivariate extreme-value distributions on unit-Frechet margins.

Three dependence families are available: :class:`Logistic`,
:class:`HuslerReiss` and :class:`ColesTawn`. For each one we expose the joint
CDF ``G(x, y) = exp(-V(x, y))``, the conditional CDF of ``Y`` given ``X = x``
and its inverse, the conditional quantile (regression line) ``y_{q|x}``.

The conditional CDF is ``(dG/dx)(x, y) / f_X(x)`` with ``f_X`` the unit-Frechet
density, which gives the common form ``bracket(x, y) * G(x, y) * exp(1/x)``.
Everything is evaluated in log space because unit-Frechet values are huge in
the tails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import betainc, betaln, log_ndtr, ndtr, xlog1py, xlogy

from ._roots import BracketError, invert_bisect, invert_scalar

__all__ = [
    "Logistic", "HuslerReiss", "ColesTawn", "BevModel", "FrechetPoint",
    "BracketError", "joint_cdf", "log_joint_cdf", "exponent_measure",
    "conditional_cdf", "conditional_quantile", "conditional_quantile_bisect",
    "logistic_manifold_approx", "regularized_incomplete_beta",
    "beta_density", "extremal_coefficient", "logistic_angular_density",
]

P_MIN = 1e-300
P_MAX = 1.0 - 1e-16
SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Logistic:
    """Logistic (Gumbel) model, ``V = (x^{-1/alpha} + y^{-1/alpha})^alpha``.

    ``alpha = 1`` is independence; ``alpha -> 0`` is perfect dependence.
    """

    alpha: float

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"Logistic alpha must lie in (0, 1], got {self.alpha}")


@dataclass(frozen=True)
class HuslerReiss:
    """Husler-Reiss model with dependence parameter ``lam`` (small = strong)."""

    lam: float

    def __post_init__(self):
        if not (0.0 < self.lam < math.inf):
            raise ValueError(f"HuslerReiss lambda must be positive and finite, got {self.lam}")


@dataclass(frozen=True)
class ColesTawn:
    """Coles-Tawn (Dirichlet) model with positive shape parameters."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0.0 and self.beta > 0.0) or math.isinf(self.alpha + self.beta):
            raise ValueError(
                f"ColesTawn alpha and beta must be positive, got {self.alpha}, {self.beta}")


BevModel = Union[Logistic, HuslerReiss, ColesTawn]


@dataclass(frozen=True)
class FrechetPoint:
    """A point on the unit-Frechet scale."""

    x: float
    y: float

    def __post_init__(self):
        if not (self.x > 0.0 and self.y > 0.0):
            raise ValueError(f"Frechet coordinates must be positive, got ({self.x}, {self.y})")

    @property
    def w(self) -> float:
        """Pseudo-angle ``x / (x + y)``."""
        return self.x / (self.x + self.y)


def _check_positive(*arrays):
    out = []
    for a in arrays:
        a = np.asarray(a, dtype=float)
        if np.any(~(a > 0.0)):
            raise ValueError("coordinates must be strictly positive")
        out.append(a)
    return out


def regularized_incomplete_beta(t, a, b):
    """Regularized incomplete beta function ``I_t(a, b)`` (the Beta(a, b) CDF)."""
    t = np.asarray(t, dtype=float)
    if np.any((t < 0.0) | (t > 1.0)):
        raise ValueError("t must lie in [0, 1]")
    if np.any(np.asarray(a) <= 0) or np.any(np.asarray(b) <= 0):
        raise ValueError("a and b must be positive")
    out = betainc(a, b, t)
    return float(out) if out.ndim == 0 else out


def beta_density(t, a, b):
    """Beta(a, b) density, zero outside [0, 1]."""
    t = np.asarray(t, dtype=float)
    inside = (t > 0.0) & (t < 1.0)
    tc = np.where(inside, t, 0.5)
    logpdf = xlogy(a - 1.0, tc) + xlog1py(b - 1.0, -tc) - betaln(a, b)
    return np.where(inside, np.exp(logpdf), 0.0)


# --- exponent measures -----------------------------------------------------

def _logistic_log_s(alpha, x, y):
    # log(x^{-1/a} + y^{-1/a}) without overflow
    return np.logaddexp(-np.log(x) / alpha, -np.log(y) / alpha)


def _hr_args(lam, x, y):
    r = np.log(y / x) / (2.0 * lam)
    return lam + r, lam - r


def _ct_arg(model: ColesTawn, x, y):
    # Beta argument, renamed from the usual "q" to avoid clashing with quantile levels
    a_y = model.alpha / y
    b_x = model.beta / x
    return a_y / (a_y + b_x), a_y + b_x


def exponent_measure(model: BevModel, x, y):
    """``V(x, y)`` for the given model (vectorized)."""
    x, y = _check_positive(x, y)
    if isinstance(model, Logistic):
        return np.exp(model.alpha * _logistic_log_s(model.alpha, x, y))
    if isinstance(model, HuslerReiss):
        a, b = _hr_args(model.lam, x, y)
        return ndtr(a) / x + ndtr(b) / y
    if isinstance(model, ColesTawn):
        s, _ = _ct_arg(model, x, y)
        al, be = model.alpha, model.beta
        return (1.0 - betainc(al + 1.0, be, s)) / x + betainc(al, be + 1.0, s) / y
    raise TypeError(f"unknown model {model!r}")


def log_joint_cdf(model: BevModel, x, y):
    return -exponent_measure(model, x, y)


def joint_cdf(model: BevModel, x, y=None):
    """Joint CDF ``G(x, y)``; accepts a :class:`FrechetPoint` in place of ``x, y``."""
    if isinstance(x, FrechetPoint):
        x, y = x.x, x.y
    out = np.exp(log_joint_cdf(model, x, y))
    return float(out) if np.ndim(out) == 0 else out


def extremal_coefficient(model: BevModel) -> float:
    """``V(1, 1)``: 1 for perfect dependence, 2 for independence."""
    return float(exponent_measure(model, 1.0, 1.0))


# --- conditional distribution ----------------------------------------------

def _log_conditional(model: BevModel, y, x):
    """log of the conditional CDF, or ``(log_factor, bracket)`` pieces."""
    log_g = log_joint_cdf(model, x, y)
    if isinstance(model, Logistic):
        al = model.alpha
        log_s = _logistic_log_s(al, x, y)
        return log_g + 1.0 / x + (al - 1.0) * log_s + (1.0 - 1.0 / al) * np.log(x)
    if isinstance(model, HuslerReiss):
        lam = model.lam
        a, b = _hr_args(lam, x, y)
        phi_a = np.exp(-0.5 * a * a) / SQRT_2PI
        phi_b = np.exp(-0.5 * b * b) / SQRT_2PI
        bracket = ndtr(a) + phi_a / (2.0 * lam) - (x / y) * phi_b / (2.0 * lam)
        # bracket is a probability-like quantity; cancellation can push it below 0
        bracket = np.clip(bracket, 0.0, None)
        with np.errstate(divide="ignore"):
            return log_g + 1.0 / x + np.log(bracket)
    if isinstance(model, ColesTawn):
        al, be = model.alpha, model.beta
        s, gamma = _ct_arg(model, x, y)
        bracket = (1.0 - betainc(al + 1.0, be, s)
                   + (al + 1.0) * be / gamma * beta_density(s, al + 2.0, be + 1.0)
                   - (x / y) * al * (be + 1.0) / gamma * beta_density(s, al + 1.0, be + 2.0))
        bracket = np.clip(bracket, 0.0, None)
        with np.errstate(divide="ignore"):
            return log_g + 1.0 / x + np.log(bracket)
    raise TypeError(f"unknown model {model!r}")


def conditional_cdf(model: BevModel, y, x):
    """``P(Y <= y | X = x)`` on unit-Frechet margins (vectorized)."""
    y, x = _check_positive(y, x)
    with np.errstate(over="ignore", under="ignore"):
        out = np.exp(_log_conditional(model, y, x))
    out = np.where(out <= P_MIN, 0.0, np.minimum(out, P_MAX))
    return float(out) if out.ndim == 0 else out


def conditional_quantile(model: BevModel, q: float, x: float) -> float:
    """Conditional quantile ``y_{q|x}`` by bracketed root finding on log(y).

    Raises :class:`BracketError` (carrying the last bracket) if the conditional
    CDF plateaus below ``q``.
    """
    if not x > 0.0:
        raise ValueError(f"x must be positive, got {x}")
    return invert_scalar(lambda y: conditional_cdf(model, y, x), q, x)


def conditional_quantile_bisect(model: BevModel, q, x, n_iter: int = 64):
    """Vectorized bisection inverse of :func:`conditional_cdf`."""
    q = np.asarray(q, dtype=float)
    x = np.asarray(x, dtype=float)
    q, x = np.broadcast_arrays(q, x)
    x = x.copy()
    return invert_bisect(lambda y: conditional_cdf(model, y, x), q, x, n_iter=n_iter)


def logistic_manifold_approx(alpha: float, q: float, x):
    """Linear large-``x`` approximation of the logistic regression line.

    ``y ~ intercept(alpha, q) + slope(alpha, q) * x`` with
    ``slope = (q^{-1/(1-alpha)} - 1)^{-alpha}`` and the intercept from the
    first-order correction of the exact conditional CDF in ``1/x``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("approximation requires 0 < alpha < 1 (alpha = 1 is independence)")
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    a = alpha
    base = q ** (1.0 / (a - 1.0))
    intercept = (a / (1.0 - a) * (base - 1.0) ** (-a - 1.0)
                 * (q ** (a / (a - 1.0)) - 1.0) * base)
    slope = (q ** (-1.0 / (1.0 - a)) - 1.0) ** (-a)
    return intercept + slope * np.asarray(x, dtype=float)


def logistic_angular_density(alpha: float, w):
    """Angular density of the logistic model, normalized to a probability density."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("angular density exists for 0 < alpha < 1")
    w = np.asarray(w, dtype=float)
    a = alpha
    return (0.5 * (1.0 / a - 1.0) * (w * (1.0 - w)) ** (-1.0 - 1.0 / a)
            * (w ** (-1.0 / a) + (1.0 - w) ** (-1.0 / a)) ** (a - 2.0))
