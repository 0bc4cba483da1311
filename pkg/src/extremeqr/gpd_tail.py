"""Generalized Pareto tail tools.

Conditional exceedance probabilities, the orthogonal ``(nu, xi)``
parametrization with ``nu = sigma * (xi + 1)``, its deviance and gradient, and
quantile extrapolation above an intermediate threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "XI_ZERO", "GpdParams", "OrthoGpdParams", "reparam", "inverse_reparam",
    "gpd_exceedance_prob", "ogpd_loss", "ogpd_loss_grad",
    "extrapolate_quantile", "return_level_tau",
]

# below this |xi| the xi = 0 series forms are used
XI_ZERO = 1e-6


@dataclass(frozen=True)
class GpdParams:
    sigma: float
    xi: float

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.xi > -0.5:
            raise ValueError(f"xi must exceed -0.5, got {self.xi}")


@dataclass(frozen=True)
class OrthoGpdParams:
    nu: float
    xi: float

    def __post_init__(self):
        if not self.nu > 0.0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if not self.xi > -0.5:
            raise ValueError(f"xi must exceed -0.5, got {self.xi}")

    @property
    def sigma(self) -> float:
        return self.nu / (self.xi + 1.0)


def reparam(p: GpdParams) -> OrthoGpdParams:
    return OrthoGpdParams(nu=p.sigma * (p.xi + 1.0), xi=p.xi)


def inverse_reparam(o: OrthoGpdParams) -> GpdParams:
    return GpdParams(sigma=o.nu / (o.xi + 1.0), xi=o.xi)


def gpd_exceedance_prob(y, u, p: GpdParams | OrthoGpdParams, tau0: float):
    """``P(Y > y | X = x) ~ (1 - tau0) * (1 + xi (y - u) / sigma)_+^{-1/xi}`` for ``y > u``."""
    if isinstance(p, OrthoGpdParams):
        p = inverse_reparam(p)
    y = np.asarray(y, dtype=float)
    excess = y - np.asarray(u, dtype=float)
    if np.any(excess <= 0.0):
        raise ValueError("y must exceed the threshold u")
    sigma, xi = p.sigma, p.xi
    if abs(xi) < XI_ZERO:
        # log(1 + xi t)/xi = t - xi t^2/2 + O(xi^2)
        t = excess / sigma
        surv = np.exp(-(t - 0.5 * xi * t * t))
    else:
        base = 1.0 + xi * excess / sigma
        with np.errstate(divide="ignore"):
            surv = np.where(base > 0.0, np.exp(-np.log(np.where(base > 0, base, 1.0)) / xi), 0.0)
    out = (1.0 - tau0) * surv
    return float(out) if out.ndim == 0 else out


def ogpd_loss(z, nu, xi):
    """Orthogonal GPD deviance (negative log-likelihood) of exceedances ``z``.

    ``(1 + 1/xi) log(1 + xi (xi + 1) z / nu) + log(nu) - log(xi + 1)``.
    Points outside the support (``xi < 0``) get ``+inf``.
    """
    z, nu, xi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (z, nu, xi)))
    b = z / nu
    small = np.abs(xi) < XI_ZERO
    arg = xi * (xi + 1.0) * b
    inside = arg > -1.0
    safe_xi = np.where(small, 1.0, xi)
    safe_arg = np.where(inside, arg, 0.0)
    general = (1.0 + 1.0 / safe_xi) * np.log1p(safe_arg) + np.log(nu) - np.log1p(xi)
    series = (np.log(nu) + b + xi * (2.0 * b - 0.5 * b * b - 1.0)
              + xi * xi * (0.5 + b - 1.5 * b * b + b ** 3 / 3.0))
    out = np.where(small, series, np.where(inside, general, np.inf))
    return float(out) if out.ndim == 0 else out


def _phi(A):
    """``log1p(A) - A / (1 + A)`` without cancellation near 0."""
    A = np.asarray(A, dtype=float)
    small = np.abs(A) < 1e-3
    As = np.where(small, A, 0.0)
    series = As * As * (0.5 + As * (-2.0 / 3.0 + As * (0.75 + As * (-0.8 + As * (5.0 / 6.0)))))
    Ad = np.where(small, 0.0, A)
    direct = np.log1p(Ad) - Ad / (1.0 + Ad)
    return np.where(small, series, direct)


def ogpd_loss_grad(z, nu, xi):
    """Gradient ``(d/dnu, d/dxi)`` of :func:`ogpd_loss`; zero outside the support."""
    z, nu, xi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (z, nu, xi)))
    b = z / nu
    small = np.abs(xi) < XI_ZERO
    a = (1.0 + xi) * b
    g = 1.0 + xi * a
    inside = small | (g > 0.0)
    sxi = np.where(small, 1.0, xi)
    sg = np.where(g > 0.0, g, 1.0)

    d_nu = (1.0 - (1.0 + xi) * a / sg) / nu
    # -log(g)/xi^2 and the 1/xi term cancel for small xi; regroup through
    # phi(A) = log1p(A) - A/(1+A) = O(A^2), with A = g - 1
    d_xi = -_phi(sg - 1.0) / (sxi * sxi) + 2.0 * (1.0 + xi) * b / sg - 1.0 / (1.0 + xi)

    d_nu_s = (1.0 - b - xi * (2.0 * b - b * b) - xi * xi * (b - 3.0 * b * b + b ** 3)) / nu
    d_xi_s = -1.0 + 2.0 * b - 0.5 * b * b + xi * (1.0 + 2.0 * b - 3.0 * b * b + 2.0 * b ** 3 / 3.0)

    d_nu = np.where(small, d_nu_s, np.where(inside, d_nu, 0.0))
    d_xi = np.where(small, d_xi_s, np.where(inside, d_xi, 0.0))
    if d_nu.ndim == 0:
        return float(d_nu), float(d_xi)
    return d_nu, d_xi


def extrapolate_quantile(q0, o, tau0: float, tau):
    """Extreme quantile at level ``tau`` from the ``tau0`` threshold ``q0``.

    ``o`` is an :class:`OrthoGpdParams` or a ``(nu, xi)`` pair of arrays.
    """
    if isinstance(o, OrthoGpdParams):
        nu, xi = o.nu, o.xi
    elif isinstance(o, GpdParams):
        nu, xi = o.sigma * (o.xi + 1.0), o.xi
    else:
        nu, xi = o
    nu = np.asarray(nu, dtype=float)
    xi = np.asarray(xi, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < tau0) or np.any(tau >= 1.0):
        raise ValueError("need tau0 <= tau < 1")
    sigma = nu / (xi + 1.0)
    log_r = np.log1p(-tau0) - np.log1p(-tau)
    small = np.abs(xi) < XI_ZERO
    safe_xi = np.where(small, 1.0, xi)
    general = sigma * np.expm1(safe_xi * log_r) / safe_xi
    series = sigma * log_r * (1.0 + xi * log_r / 2.0 + xi * xi * log_r ** 2 / 6.0)
    out = np.asarray(q0, dtype=float) + np.where(small, series, general)
    return float(out) if out.ndim == 0 else out


def return_level_tau(n_per_year: int, T: int) -> float:
    """Probability level of the ``T``-year return level with ``n_per_year`` records a year."""
    if n_per_year * T <= 1:
        raise ValueError("need n_per_year * T > 1")
    return 1.0 - 1.0 / (n_per_year * T)
