"""Marginal transforms, exceedance selection, windows and error metrics."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .scenario_sim import SeriesDataset

__all__ = [
    "MetricReport", "Windows", "frechet_transform", "frechet_score", "inverse_frechet",
    "select_threshold", "pseudo_angles", "rmse", "mae", "make_windows",
    "write_reports_csv", "run_benchmark",
]


def frechet_transform(values) -> np.ndarray:
    """Empirical unit-Frechet scores ``-1 / log(rank / (n + 1))``, average ranks for ties."""
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise ValueError("need at least one value")
    r = rankdata(v, method="average")
    return -1.0 / np.log(r / (v.size + 1.0))


def frechet_score(values, reference) -> np.ndarray:
    """Unit-Frechet scores of new ``values`` under the empirical CDF of ``reference``.

    Uses ``#(reference <= v) / (n + 1)`` clamped to ``[1/(n+1), n/(n+1)]``, which
    agrees with :func:`frechet_transform` on untied reference points.
    """
    ref = np.sort(np.asarray(reference, dtype=float).reshape(-1))
    n = ref.size
    r = np.searchsorted(ref, np.asarray(values, dtype=float), side="right")
    r = np.clip(r, 1, n)
    return -1.0 / np.log(r / (n + 1.0))


def inverse_frechet(z, reference) -> np.ndarray:
    """Map unit-Frechet values back to the scale of ``reference``.

    Uses the type-7 empirical quantile of ``reference`` at probability
    ``exp(-1/z)``; probabilities beyond the sample range are clamped to it.
    """
    p = np.exp(-1.0 / np.asarray(z, dtype=float))
    return np.quantile(np.asarray(reference, dtype=float), np.clip(p, 0.0, 1.0))


def select_threshold(xhat, yhat, level: float = 0.98):
    """Threshold ``u`` (type-7 quantile of ``xhat + yhat``) and indices with sum above it."""
    xhat = np.asarray(xhat, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if xhat.shape != yhat.shape:
        raise ValueError("xhat and yhat must have equal lengths")
    if not 0.0 <= level < 1.0:
        raise ValueError("level must lie in [0, 1) (level >= 1 leaves no exceedances)")
    s = xhat + yhat
    if level == 0.0:
        # every point is retained, including the minimum
        return float(np.min(s)), np.arange(s.size)
    u = float(np.quantile(s, level))
    return u, np.flatnonzero(s > u)


def pseudo_angles(xhat, yhat) -> np.ndarray:
    xhat = np.asarray(xhat, dtype=float)
    return xhat / (xhat + np.asarray(yhat, dtype=float))


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {truth.size} targets")
    if pred.size == 0:
        raise ValueError("empty inputs")
    return pred, truth


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    d = np.abs(pred - truth)
    m = d.max()
    if not np.isfinite(m) or m == 0.0:
        return float(m)
    # scaling by the largest error avoids underflow and overflow of the squares
    return float(m * np.sqrt(np.mean((d / m) ** 2)))


def mae(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean(np.abs(pred - truth)))


@dataclass(frozen=True)
class MetricReport:
    method: str
    scenario: str
    rmse: float
    mae: float
    tau: float
    n: int
    status: str = "ok"

    def __post_init__(self):
        if self.status == "ok" and not (self.mae >= 0.0 and self.rmse >= self.mae * (1 - 1e-12)):
            raise ValueError(f"expected rmse >= mae >= 0, got {self.rmse}, {self.mae}")


def write_reports_csv(reports, path) -> None:
    fields = ["method", "scenario", "rmse", "mae", "tau", "n", "status"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(fields)
        for r in reports:
            d = asdict(r)
            wr.writerow([d["method"], d["scenario"], repr(d["rmse"]), repr(d["mae"]),
                         repr(d["tau"]), d["n"], d["status"]])


@dataclass
class Windows:
    """Sliding covariate windows.

    ``features[k]`` is an ``(s, p + 1)`` block for target index ``target[k]``;
    columns are the covariates followed by the lagged response.
    """

    features: np.ndarray
    target: np.ndarray
    s: int
    lead_x: bool

    def __len__(self):
        return self.target.size

    def last_x(self) -> np.ndarray:
        """Covariates of the most recent window row (first covariate column if several)."""
        return self.features[:, -1, 0]

    def subset(self, mask) -> "Windows":
        return Windows(self.features[mask], self.target[mask], self.s, self.lead_x)

    def in_range(self, lo: int, hi: int) -> "Windows":
        return self.subset((self.target >= lo) & (self.target < hi))


def make_windows(series: SeriesDataset, s: int = 10, lead_x: bool = False) -> Windows:
    """Stack ``s`` lagged ``(x, y)`` rows per target.

    The window of target ``t`` holds rows ``j = t-s .. t-1`` as ``(x_j, y_j)``.
    With ``lead_x`` the covariate is advanced one step, ``(x_{j+1}, y_j)``,
    so the last row carries the current covariate ``x_t``. The response
    ``y_t`` never enters its own window.
    """
    n = len(series)
    if n <= s:
        raise ValueError(f"series length {n} must exceed the window length {s}")
    x = series.x2d
    y = series.y[:, None]
    shift = 1 if lead_x else 0
    rows = np.hstack([x[shift:n - 1 + shift] if shift else x[:n - 1], y[:n - 1]])
    # rows[j] = (x_{j+shift}, y_j) for j = 0 .. n-2
    idx = np.arange(s, n)[:, None] - s + np.arange(s)[None, :]
    return Windows(features=rows[idx], target=np.arange(s, n), s=s, lead_x=lead_x)


def run_benchmark(scenario_id, methods=("bernstein_mcmc", "eqrn"), config=None):
    """Convenience alias for :func:`extremeqr.benchmark.run_benchmark`."""
    from .benchmark import BenchmarkConfig, run_benchmark as _run

    return _run(scenario_id, methods, config or BenchmarkConfig())
