"""Posterior inference for Bernstein angular densities.

The free weights are sampled on their logit scale with a componentwise
adaptive random-walk Metropolis sampler. The prior is a Dirichlet with small
concentration on the full weight vector, restricted to the constraint set and
carried to the logit scale with its Jacobian. The likelihood is the product of
the angular density at the pseudo-angles of threshold exceedances.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .angular_model import (
    AngularWeights, InfeasibleWeightsError, _basis, bernstein_conditional_quantile_bisect,
    constraint_residuals, free_indices, resolve_weights,
)

__all__ = [
    "McmcConfig", "PosteriorChain", "RegressionBand", "log_prior",
    "angular_log_likelihood", "log_posterior_logit", "run_chain",
    "posterior_regression_line", "write_chain_csv", "write_band_csv",
]

MIN_ANGLES = 10
CONSTRAINT_TOL = 1e-10


@dataclass(frozen=True)
class McmcConfig:
    chain_length: int = 10_000
    burn_in: int = 4_000
    target_accept: float = 0.44
    adapt_interval: int = 50
    prior_concentration: float = 1e-4
    seed: int = 0
    J: int = 8
    initial_step: float = 1.0
    adapt_gain: float = 0.1

    def __post_init__(self):
        if not 0 <= self.burn_in < self.chain_length:
            raise ValueError("burn_in must be smaller than chain_length")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.prior_concentration <= 0:
            raise ValueError("prior concentration must be positive")
        if self.adapt_interval < 1:
            raise ValueError("adapt_interval must be positive")


@dataclass
class PosteriorChain:
    """Post burn-in draws of the weight vector plus sampler diagnostics."""

    J: int
    weights: np.ndarray           # (n_draws, J-1)
    logits: np.ndarray            # (n_draws, |F|)
    accept_rates: np.ndarray      # per free component, post burn-in
    log_posterior_trace: np.ndarray  # full chain, one value per iteration
    step_sizes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    burn_in: int = 0

    @property
    def draws(self) -> list[AngularWeights]:
        return [AngularWeights(J=self.J, pi=p.copy(), pi_logit=l.copy())
                for p, l in zip(self.weights, self.logits)]

    def __len__(self):
        return self.weights.shape[0]


def log_prior(weights: AngularWeights, c: float) -> float:
    """Dirichlet(c 1_m) log density of the weights times the constraint indicator.

    Additive constants are dropped.
    """
    pi = weights.pi
    if np.any(pi <= 0.0) or np.max(np.abs(constraint_residuals(weights))) > CONSTRAINT_TOL:
        return -math.inf
    return float((c - 1.0) * np.sum(np.log(pi)))


def angular_log_likelihood(angles: Sequence[float], weights: AngularWeights) -> float:
    """Sum of ``log h(w_i)`` over the pseudo-angles."""
    w = np.asarray(angles, dtype=float).reshape(-1)
    if w.size == 0:
        raise ValueError("need at least one angle")
    if np.any((w <= 0.0) | (w >= 1.0)):
        raise ValueError("angles must lie strictly inside (0, 1)")
    return float(np.sum(np.log(_basis(weights.J, w) @ weights.pi)))


def _log_jacobian(weights: AngularWeights, free_pos: np.ndarray) -> float:
    # generalized-logit map: |d pi_F / d logit| = prod(pi_F) * (1 - sum pi_F)
    free = weights.pi[free_pos]
    return float(np.sum(np.log(free)) + math.log1p(-free.sum()))


@lru_cache(maxsize=None)
def _free_positions(J: int) -> np.ndarray:
    idx = {(a1, J - a1): k for k, a1 in enumerate(range(1, J))}
    return np.array([idx[a] for a in free_indices(J)], dtype=int)


def log_posterior_logit(logits, J: int, basis: np.ndarray, c: float):
    """Log posterior on the logit scale; returns ``(value, weights or None)``."""
    try:
        weights = resolve_weights(logits, J)
    except InfeasibleWeightsError:
        return -math.inf, None
    lp = log_prior(weights, c)
    if not math.isfinite(lp):
        return -math.inf, None
    dens = basis @ weights.pi
    if np.any(dens <= 0.0):
        return -math.inf, None
    value = lp + _log_jacobian(weights, _free_positions(J)) + float(np.sum(np.log(dens)))
    return value, weights


def run_chain(angles, config: McmcConfig = McmcConfig(),
              init_logits=None) -> PosteriorChain:
    """Componentwise adaptive random-walk Metropolis over the free logits.

    Step sizes are tuned every ``adapt_interval`` iterations during burn-in,
    ``s <- s * exp(gain * (acceptance - target))``, then frozen. Infeasible
    proposals are rejected.
    """
    w = np.asarray(angles, dtype=float).reshape(-1)
    if w.size < MIN_ANGLES:
        raise ValueError(f"need at least {MIN_ANGLES} angles, got {w.size}")
    if np.any((w <= 0.0) | (w >= 1.0)):
        raise ValueError("angles must lie strictly inside (0, 1)")
    J = config.J
    k = len(free_indices(J))
    basis = _basis(J, w)
    c = config.prior_concentration
    rng = np.random.default_rng(config.seed)

    theta = np.zeros(k) if init_logits is None else np.asarray(init_logits, dtype=float).copy()
    current, weights = log_posterior_logit(theta, J, basis, c)
    if weights is None:
        raise ValueError("initial logits are infeasible")

    n_keep = config.chain_length - config.burn_in
    kept_w = np.empty((n_keep, J - 1))
    kept_l = np.empty((n_keep, k))
    trace = np.empty(config.chain_length)
    step = np.full(k, config.initial_step)
    batch_acc = np.zeros(k)
    post_acc = np.zeros(k)

    for it in range(config.chain_length):
        noise = rng.standard_normal(k)
        log_u = np.log(rng.random(k))
        for j in range(k):
            prop = theta.copy()
            prop[j] += step[j] * noise[j]
            value, prop_w = log_posterior_logit(prop, J, basis, c)
            if prop_w is not None and log_u[j] < value - current:
                theta, current, weights = prop, value, prop_w
                if it < config.burn_in:
                    batch_acc[j] += 1
                else:
                    post_acc[j] += 1
        trace[it] = current
        if it < config.burn_in and (it + 1) % config.adapt_interval == 0:
            rate = batch_acc / config.adapt_interval
            step *= np.exp(config.adapt_gain * (rate - config.target_accept))
            batch_acc[:] = 0
        if it >= config.burn_in:
            kept_w[it - config.burn_in] = weights.pi
            kept_l[it - config.burn_in] = theta

    return PosteriorChain(
        J=J, weights=kept_w, logits=kept_l,
        accept_rates=post_acc / n_keep if k else np.zeros(0),
        log_posterior_trace=trace, step_sizes=step, burn_in=config.burn_in,
    )


@dataclass
class RegressionBand:
    """Posterior summary of a regression line ``x -> y_{q|x}``."""

    q: float
    x: np.ndarray
    mean: np.ndarray
    lower95: np.ndarray
    upper95: np.ndarray
    per_draw: np.ndarray  # (n_thinned_draws, n_x)


def posterior_regression_line(chain: PosteriorChain, q: float, x_grid, thin: int = 10) -> RegressionBand:
    """Mean and 95% band of ``y_{q|x}`` across thinned posterior draws."""
    if len(chain) == 0:
        raise ValueError("empty chain")
    x = np.asarray(x_grid, dtype=float).reshape(-1)
    pi = chain.weights[::thin] if len(chain) > 1 else chain.weights
    ys = bernstein_conditional_quantile_bisect(chain.J, pi, q, x)
    return RegressionBand(
        q=q, x=x, mean=ys.mean(axis=0),
        lower95=np.quantile(ys, 0.025, axis=0), upper95=np.quantile(ys, 0.975, axis=0),
        per_draw=ys,
    )


def write_chain_csv(chain: PosteriorChain, path) -> None:
    """One row per kept draw: iteration, log posterior, weights."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iteration", "log_posterior"] + [f"pi_{a1}_{chain.J - a1}" for a1 in range(1, chain.J)])
        for i, row in enumerate(chain.weights):
            it = chain.burn_in + i
            wr.writerow([it, repr(float(chain.log_posterior_trace[it]))] + [repr(float(v)) for v in row])


def write_band_csv(band: RegressionBand, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "mean", "lo", "hi"])
        for row in zip(band.x, band.mean, band.lower95, band.upper95):
            wr.writerow([repr(float(v)) for v in row])
