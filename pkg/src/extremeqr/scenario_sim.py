"""Simulated benchmark data.

Scenario 1 is a nonlinear time series with a folded-normal conditional
response. Scenarios 2-4 are i.i.d. draws from bivariate extreme-value models
(Husler-Reiss, Logistic, Coles-Tawn) on unit-Frechet margins.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtri

from .bev_models import (
    BevModel, ColesTawn, HuslerReiss, Logistic, conditional_quantile_bisect,
)

__all__ = [
    "SeriesDataset", "ScenarioPreset", "scenario_preset", "scenario1_sigma",
    "simulate_scenario1", "true_scenario1_quantile", "sample_bev",
    "simulate_scenario", "split_ranges", "empirical_extremal_coefficient",
    "SPLIT_FRACTIONS",
]

SPLIT_FRACTIONS = (0.5, 0.2, 0.3)
SCENARIO1_BURN_IN = 50
_Y_COEF = np.array([2.0, 1.0, 1.0, 1.0, 1.0])
_X_COEF = np.array([3.0, 2.0, 1.0, 1.0, 1.0])


def split_ranges(n: int, fractions=SPLIT_FRACTIONS) -> dict[str, tuple[int, int]]:
    """Contiguous train/valid/test index ranges in time order."""
    f = np.asarray(fractions, dtype=float)
    if f.size != 3 or np.any(f < 0) or abs(f.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must be three nonnegative numbers summing to 1")
    a = int(round(n * f[0]))
    b = int(round(n * (f[0] + f[1])))
    return {"train": (0, a), "valid": (a, b), "test": (b, n)}


@dataclass
class SeriesDataset:
    """Paired sequences with a time-ordered train/valid/test split.

    ``x`` is ``(N,)`` for a single covariate or ``(N, p)`` for several.
    """

    x: np.ndarray
    y: np.ndarray
    split: dict[str, tuple[int, int]]
    sigma_truth: Optional[np.ndarray] = None
    seed: Optional[int] = None
    scenario: Optional[int] = None
    t: Optional[np.ndarray] = None
    covariate_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        n = self.y.shape[0]
        if self.x.shape[0] != n:
            raise ValueError("x and y must have equal lengths")
        if self.sigma_truth is not None and len(self.sigma_truth) != n:
            raise ValueError("sigma_truth must match the series length")
        bounds = [self.split[k] for k in ("train", "valid", "test")]
        prev = 0
        for lo, hi in bounds:
            if lo != prev or hi < lo:
                raise ValueError(f"splits must be contiguous and ordered, got {self.split}")
            prev = hi
        if prev != n:
            raise ValueError("splits must cover the series")
        if self.t is None:
            self.t = np.arange(n)

    def __len__(self):
        return self.y.shape[0]

    @property
    def x2d(self) -> np.ndarray:
        return self.x.reshape(len(self), -1)

    def labels(self) -> np.ndarray:
        out = np.empty(len(self), dtype=object)
        for name, (lo, hi) in self.split.items():
            out[lo:hi] = name
        return out

    def to_csv(self, path) -> None:
        p = self.x2d.shape[1]
        names = self.covariate_names or (["x"] if p == 1 else [f"x_{i + 1}" for i in range(p)])
        header = ["t"] + names + ["y"]
        if self.sigma_truth is not None:
            header.append("sigma_truth")
        header.append("split")
        labels = self.labels()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for i in range(len(self)):
                row = [str(self.t[i])] + [repr(float(v)) for v in self.x2d[i]] + [repr(float(self.y[i]))]
                if self.sigma_truth is not None:
                    row.append(repr(float(self.sigma_truth[i])))
                row.append(labels[i])
                wr.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "SeriesDataset":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: no data rows")
        cols = list(rows[0].keys())
        for required in ("y", "split"):
            if required not in cols:
                raise ValueError(f"{path}: missing column '{required}'")
        xcols = [c for c in cols if c == "x" or c.startswith("x_")]
        if not xcols:
            raise ValueError(f"{path}: no covariate column (x or x_*)")
        x = np.array([[float(r[c]) for c in xcols] for r in rows])
        if x.shape[1] == 1:
            x = x[:, 0]
        y = np.array([float(r["y"]) for r in rows])
        labels = [r["split"] for r in rows]
        split = {}
        for name in ("train", "valid", "test"):
            idx = [i for i, lab in enumerate(labels) if lab == name]
            split[name] = (idx[0], idx[-1] + 1) if idx else None
        # empty splits collapse onto their neighbours' boundary
        pos = 0
        for name in ("train", "valid", "test"):
            if split[name] is None:
                split[name] = (pos, pos)
            pos = split[name][1]
        sigma = np.array([float(r["sigma_truth"]) for r in rows]) if "sigma_truth" in cols else None
        t = np.array([r.get("t", i) for i, r in enumerate(rows)])
        try:
            t = t.astype(int)
        except ValueError:
            pass
        names = xcols if len(xcols) > 1 or xcols[0] != "x" else []
        return cls(x=x, y=y, split=split, sigma_truth=sigma, t=t, covariate_names=names)


@dataclass(frozen=True)
class ScenarioPreset:
    id: int
    kind: str                      # "timeseries" or "bev"
    model: Optional[BevModel] = None
    description: str = ""


_PRESETS = {
    1: ScenarioPreset(1, "timeseries", None, "nonlinear time series, folded-normal response"),
    2: ScenarioPreset(2, "bev", HuslerReiss(0.1), "strongly dependent extremes"),
    3: ScenarioPreset(3, "bev", Logistic(0.9), "weakly dependent extremes"),
    4: ScenarioPreset(4, "bev", ColesTawn(0.5, 100.0), "asymmetric intermediate dependence"),
}


def scenario_preset(scenario_id: int) -> ScenarioPreset:
    try:
        return _PRESETS[int(scenario_id)]
    except (KeyError, ValueError):
        raise ValueError(f"unknown scenario {scenario_id!r}; expected one of 1-4") from None


def scenario1_sigma(y_lags, x_lags) -> np.ndarray:
    """Conditional scale from the five most recent lags (most recent first)."""
    y_lags = np.asarray(y_lags, dtype=float)
    x_lags = np.asarray(x_lags, dtype=float)
    var = 1.0 + 0.1 * (y_lags ** 2 @ _Y_COEF) + 0.1 * (x_lags ** 2 @ _X_COEF)
    return np.sqrt(var)


def simulate_scenario1(N: int, seed: int, fractions=SPLIT_FRACTIONS,
                       burn_in: int = SCENARIO1_BURN_IN) -> SeriesDataset:
    """``X_t = 0.4 X_{t-1} + |e_t|`` and ``Y_t = sigma_t |e'_t|``; zero initial lags."""
    if N < 100:
        raise ValueError("N must be at least 100")
    rng = np.random.default_rng(seed)
    total = N + burn_in
    noise = rng.standard_normal((total, 2))
    x = np.zeros(total + 5)
    y = np.zeros(total + 5)
    sig = np.zeros(total + 5)
    for k in range(5, total + 5):
        y_lags = y[k - 5:k][::-1]
        x_lags = x[k - 5:k][::-1]
        sig[k] = scenario1_sigma(y_lags, x_lags)
        x[k] = 0.4 * x[k - 1] + abs(noise[k - 5, 0])
        y[k] = sig[k] * abs(noise[k - 5, 1])
    keep = slice(5 + burn_in, total + 5)
    return SeriesDataset(x=x[keep].copy(), y=y[keep].copy(), split=split_ranges(N, fractions),
                         sigma_truth=sig[keep].copy(), seed=seed, scenario=1)


def true_scenario1_quantile(sigma_t, tau):
    """Folded-normal quantile ``sigma_t * Phi^{-1}((1 + tau) / 2)``."""
    out = np.asarray(sigma_t, dtype=float) * ndtri((1.0 + np.asarray(tau, dtype=float)) / 2.0)
    return float(out) if np.ndim(out) == 0 else out


def sample_bev(model: BevModel, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Pairs with unit-Frechet margins: ``X`` by inversion, ``Y | X`` by conditional inversion."""
    rng = np.random.default_rng(seed)
    u = rng.random((n, 2))
    u = np.clip(u, 1e-300, None)
    x = -1.0 / np.log(u[:, 0])
    y = conditional_quantile_bisect(model, u[:, 1], x)
    return x, y


def simulate_scenario(scenario_id: int, N: int, seed: int, fractions=SPLIT_FRACTIONS) -> SeriesDataset:
    preset = scenario_preset(scenario_id)
    if preset.kind == "timeseries":
        return simulate_scenario1(N, seed, fractions)
    x, y = sample_bev(preset.model, N, seed)
    return SeriesDataset(x=x, y=y, split=split_ranges(N, fractions), seed=seed, scenario=preset.id)


def empirical_extremal_coefficient(x, y) -> float:
    """Estimate of ``V(1, 1)`` from unit-Frechet pairs: ``n / sum(1 / max(x, y))``."""
    m = np.maximum(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    return float(m.size / np.sum(1.0 / m))
