"""Bernstein-polynomial angular densities on the two-dimensional simplex.

An angular density of order ``J`` is a mixture of Beta (two-dimensional
Dirichlet) densities,

    h(w) = sum_{a1 + a2 = J, a_i >= 1} pi_a * Beta(w; a1, a2),

whose weights satisfy the normalization ``sum pi = 1`` and the mean constraint
``sum a1 * pi = J / 2``. The two extremal weights, at multi-indices
``(J-1, 1)`` and ``(1, J-1)``, are pinned by the constraints. The remaining
``J - 3`` weights are free and parametrized through a generalized logit.

Only ``d = 2`` is supported.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np
from scipy.special import betaincc, betainc, betaln, xlog1py, xlogy

from ._roots import invert_bisect, invert_scalar

__all__ = [
    "D", "AngularWeights", "AngularPoint", "InfeasibleWeightsError",
    "multi_indices", "pinned_indices", "free_indices", "dirichlet_density",
    "resolve_weights", "weights_from_pi", "bernstein_density",
    "bernstein_conditional_cdf", "bernstein_conditional_quantile",
    "bernstein_conditional_quantile_bisect", "constraint_residuals",
    "weights_to_json", "weights_from_json",
]

D = 2
P_MIN = 1e-300
P_MAX = 1.0 - 1e-16


class InfeasibleWeightsError(ValueError):
    """The logits imply a nonpositive pinned weight."""


def multi_indices(J: int) -> list[tuple[int, int]]:
    """All ``(a1, a2)`` with ``a1 + a2 = J`` and ``a_i >= 1``, ordered by ``a1``."""
    if J < D:
        raise ValueError(f"order J must be at least {D}, got {J}")
    return [(a1, J - a1) for a1 in range(1, J)]


def pinned_indices(J: int) -> list[tuple[int, int]]:
    if J == D:
        return [(1, 1)]
    return [(J - 1, 1), (1, J - 1)]


def free_indices(J: int) -> list[tuple[int, int]]:
    pinned = set(pinned_indices(J))
    return [a for a in multi_indices(J) if a not in pinned]


@dataclass(frozen=True)
class AngularPoint:
    w: float

    def __post_init__(self):
        if not 0.0 < self.w < 1.0:
            raise ValueError(f"angular coordinate must lie in (0, 1), got {self.w}")


@dataclass(frozen=True, eq=False)
class AngularWeights:
    """Weights of a Bernstein angular density.

    ``pi[k]`` is the weight of multi-index ``indices[k]``; ``pi_logit`` holds the
    auxiliary logits of the free weights, in the order of ``free_set``.
    """

    J: int
    pi: np.ndarray
    pi_logit: np.ndarray = field(default_factory=lambda: np.zeros(0))
    d: int = D

    @property
    def indices(self) -> list[tuple[int, int]]:
        return multi_indices(self.J)

    @property
    def free_set(self) -> list[tuple[int, int]]:
        return free_indices(self.J)

    @property
    def a1(self) -> np.ndarray:
        return np.arange(1, self.J, dtype=float)

    @property
    def a2(self) -> np.ndarray:
        return self.J - self.a1

    @property
    def m(self) -> int:
        return comb(self.J - 1, self.d - 1)

    def as_dict(self) -> dict[tuple[int, int], float]:
        return dict(zip(self.indices, map(float, self.pi)))


def constraint_residuals(weights: AngularWeights) -> np.ndarray:
    """Residuals of normalization and the two mean constraints."""
    pi, a1, a2, J = weights.pi, weights.a1, weights.a2, weights.J
    return np.array([
        pi.sum() - 1.0,
        a1 @ pi - J / D,
        a2 @ pi - J / D,
    ])


@lru_cache(maxsize=None)
def _positions(J: int):
    idx = multi_indices(J)
    pos = {a: k for k, a in enumerate(idx)}
    return np.array([pos[a] for a in free_indices(J)], dtype=int), \
        np.array([pos[a] for a in pinned_indices(J)], dtype=int)


def resolve_weights(pi_logit, J: int) -> AngularWeights:
    """Full weight vector from the free logits.

    Free weights are ``exp(l) / (d + sum exp(l))``; the two pinned weights solve
    the normalization and first mean constraint (the second mean constraint is
    implied for ``d = 2``).
    """
    pi_logit = np.asarray(pi_logit, dtype=float).reshape(-1)
    free_pos, pin_pos = _positions(J)
    if pi_logit.size != free_pos.size:
        raise ValueError(f"J={J} has {free_pos.size} free weights, got {pi_logit.size} logits")
    if np.any(np.isnan(pi_logit) | (pi_logit == np.inf)):
        raise ValueError("logits must be finite (or -inf)")
    a1 = np.arange(1, J, dtype=float)
    pi = np.zeros(J - 1)
    if J == D:
        pi[0] = 1.0
        return AngularWeights(J=J, pi=pi, pi_logit=pi_logit)

    shift = max(0.0, float(pi_logit.max())) if pi_logit.size else 0.0
    e = np.exp(pi_logit - shift)
    free = e / (D * np.exp(-shift) + e.sum())
    pi[free_pos] = free
    s0 = free.sum()
    s1 = a1[free_pos] @ free
    # pinned a=(J-1,1), b=(1,J-1): pa + pb = 1 - s0, (J-1) pa + pb = J/2 - s1
    A = np.array([[1.0, 1.0], [a1[pin_pos[0]], a1[pin_pos[1]]]])
    rhs = np.array([1.0 - s0, J / D - s1])
    pinned = np.linalg.solve(A, rhs)
    if np.any(pinned <= 0.0):
        raise InfeasibleWeightsError(f"pinned weights {pinned} not positive")
    pi[pin_pos] = pinned
    if np.any(pi <= 0.0):
        raise InfeasibleWeightsError("free weight underflowed to zero")
    return AngularWeights(J=J, pi=pi, pi_logit=pi_logit)


def weights_from_pi(pi, J: int, tol: float = 1e-10) -> AngularWeights:
    """Validate a full weight vector and attach its logits."""
    pi = np.asarray(pi, dtype=float).reshape(-1)
    if pi.size != J - 1:
        raise ValueError(f"J={J} needs {J - 1} weights, got {pi.size}")
    if np.any(pi <= 0.0):
        raise ValueError("weights must be positive")
    free_pos, _ = _positions(J)
    free = pi[free_pos]
    logits = np.log(free) + np.log(D) - np.log1p(-free.sum()) if J > D else np.zeros(0)
    w = AngularWeights(J=J, pi=pi, pi_logit=logits)
    res = constraint_residuals(w)
    if np.max(np.abs(res)) > tol:
        raise ValueError(f"weights violate constraints, residuals {res}")
    return w


def dirichlet_density(w, alpha) -> np.ndarray:
    """Two-dimensional Dirichlet density at ``(w, 1 - w)``."""
    a1, a2 = alpha
    if a1 < 1 or a2 < 1:
        raise ValueError("multi-index entries must be >= 1")
    w = np.asarray(w, dtype=float)
    out = np.exp(xlogy(a1 - 1, w) + xlog1py(a2 - 1, -w) - betaln(a1, a2))
    return float(out) if out.ndim == 0 else out


def _basis(J: int, w) -> np.ndarray:
    """Beta basis values, shape ``w.shape + (J-1,)``."""
    w = np.asarray(w, dtype=float)[..., None]
    a1 = np.arange(1, J, dtype=float)
    a2 = J - a1
    return np.exp(xlogy(a1 - 1, w) + xlog1py(a2 - 1, -w) - betaln(a1, a2))


def bernstein_density(weights: AngularWeights, w):
    """Angular density ``h(w)``."""
    if isinstance(w, AngularPoint):
        w = w.w
    out = _basis(weights.J, w) @ weights.pi
    return float(out) if np.ndim(out) == 0 else out


def _log_conditional(J: int, pi: np.ndarray, y, x):
    """log G_{Y|X}(y|x); ``pi`` has shape ``(..., J-1)`` broadcastable with x, y."""
    a1 = np.arange(1, J, dtype=float)
    a2 = J - a1
    wxy = (x / (x + y))[..., None]
    upper = betaincc(a1 + 1.0, a2, wxy)   # 1 - Be(w; a1+1, a2)
    lower = betainc(a1, a2 + 1.0, wxy)    # Be(w; a1, a2+1)
    v = (2.0 / J) * np.sum(pi * (a1 * upper / x[..., None] + a2 * lower / y[..., None]), axis=-1)
    s = np.sum(pi * a1 * upper, axis=-1)
    with np.errstate(divide="ignore"):
        return -v + 1.0 / x + np.log(2.0 * s / J)


def bernstein_conditional_cdf(weights: AngularWeights, y, x):
    """Conditional CDF of ``Y`` given ``X = x`` induced by the angular density."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(~(y > 0)) or np.any(~(x > 0)):
        raise ValueError("x and y must be positive")
    y, x = np.broadcast_arrays(y, x)
    with np.errstate(over="ignore", under="ignore"):
        out = np.exp(_log_conditional(weights.J, weights.pi, y, x))
    out = np.where(out <= P_MIN, 0.0, np.minimum(out, P_MAX))
    return float(out) if out.ndim == 0 else out


def bernstein_conditional_quantile(weights: AngularWeights, q: float, x: float) -> float:
    """Regression-line value ``y_{q|x}`` for the Bernstein model."""
    if not x > 0:
        raise ValueError(f"x must be positive, got {x}")
    return invert_scalar(lambda y: bernstein_conditional_cdf(weights, y, x), q, x)


def bernstein_conditional_quantile_bisect(J: int, pi, q: float, x) -> np.ndarray:
    """Quantiles for many weight vectors and covariates at once.

    ``pi`` has shape ``(n_draws, J-1)`` and ``x`` shape ``(n_x,)``; returns an
    ``(n_draws, n_x)`` array.
    """
    pi = np.atleast_2d(np.asarray(pi, dtype=float))
    x = np.asarray(x, dtype=float).reshape(-1)
    X = np.broadcast_to(x[None, :], (pi.shape[0], x.size)).copy()
    P = pi[:, None, :]
    Q = np.full(X.shape, float(q))

    def cdf(y):
        with np.errstate(over="ignore", under="ignore"):
            return np.exp(_log_conditional(J, P, y, X))

    return invert_bisect(cdf, Q, X)


def weights_to_json(weights: AngularWeights) -> str:
    return json.dumps({
        "J": weights.J,
        "indices": [list(a) for a in weights.indices],
        "weights": [float(v) for v in weights.pi],
    }, indent=2)


def weights_from_json(text: str) -> AngularWeights:
    obj = json.loads(text)
    J = int(obj["J"])
    if [tuple(a) for a in obj["indices"]] != multi_indices(J):
        raise ValueError("multi-indices do not match the order J")
    return weights_from_pi(obj["weights"], J)
