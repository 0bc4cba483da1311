"""Intermediate conditional quantiles.

* :func:`fit_linear_qr` - linear quantile regression by minimizing the
  pinball loss with iteratively reweighted least squares.
* :class:`QuantileForest` - a quantile regression forest: CART trees grown on
  bootstrap samples, with predictions given by the weighted empirical quantile
  of the training responses sharing a leaf with the query point. In
  out-of-bag mode only trees whose bootstrap sample excluded the point vote.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from sklearn.tree import DecisionTreeRegressor

__all__ = [
    "LinearQrModel", "fit_linear_qr", "pinball_loss",
    "ForestConfig", "QuantileForest", "fit_quantile_forest", "forest_quantile",
    "OobUndefinedError",
]

log = logging.getLogger(__name__)


def pinball_loss(residuals, tau: float) -> float:
    r = np.asarray(residuals, dtype=float)
    return float(np.sum(r * (tau - (r < 0))))


@dataclass(frozen=True)
class LinearQrModel:
    beta_q: np.ndarray  # intercept first
    tau: float

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.beta_q[0] + X @ self.beta_q[1:]


def _design(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.hstack([np.ones((X.shape[0], 1)), X])


def fit_linear_qr(X, y, tau: float, eps: float = 1e-8, max_iter: int = 50,
                  tol: float = 1e-10) -> LinearQrModel:
    """Linear tau-quantile regression by IRLS on the pinball loss.

    Each pass solves a weighted least-squares problem with weights
    ``c_i / max(|r_i|, eps)``, where ``c_i`` is ``tau`` above the fit and
    ``1 - tau`` below. The IRLS iterate then seeds an exact basis-exchange
    polish, so the returned fit is a true minimizer.
    """
    A = _design(X) if np.ndim(X) else np.ones((len(y), 1))
    y = np.asarray(y, dtype=float)
    n, k = A.shape
    if n != y.size:
        raise ValueError("X and y have different numbers of rows")
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} rows for {k} coefficients")
    if np.linalg.matrix_rank(A) < k:
        raise np.linalg.LinAlgError("design matrix is rank deficient")

    beta = np.linalg.lstsq(A, y, rcond=None)[0]
    for _ in range(max_iter):
        r = y - A @ beta
        c = np.where(r >= 0, tau, 1.0 - tau)
        w = c / np.maximum(np.abs(r), eps)
        Aw = A * w[:, None]
        new = np.linalg.solve(A.T @ Aw, Aw.T @ y)
        done = np.max(np.abs(new - beta)) < tol
        beta = new
        if done:
            break

    return LinearQrModel(beta_q=_vertex_polish(A, y, tau, beta), tau=tau)


def _start_basis(A, r) -> list[int]:
    """Greedy nonsingular basis from the observations closest to the fit."""
    basis: list[int] = []
    for i in np.argsort(np.abs(r), kind="stable"):
        trial = basis + [int(i)]
        if np.linalg.matrix_rank(A[trial]) == len(trial):
            basis = trial
            if len(basis) == A.shape[1]:
                break
    return basis


def _vertex_polish(A, y, tau, beta, max_pivots: int | None = None) -> np.ndarray:
    """Exact optimum by basis exchange, warm-started at the IRLS solution.

    The pinball objective is piecewise linear and attains its minimum at a fit
    interpolating k observations. Each step moves one basic observation off
    the fit along the steepest improving edge and stops at the best kink.
    """
    n, k = A.shape
    basis = _start_basis(A, y - A @ beta)
    scale = np.abs(y).sum() + 1.0
    for _ in range(max_pivots or 20 * n):
        beta = np.linalg.solve(A[basis], y[basis])
        r = y - A @ beta
        r[basis] = 0.0
        D = np.linalg.inv(A[basis])          # column j moves basic point j alone
        best = None
        for j in range(k):
            for sgn in (1.0, -1.0):
                c = A @ (sgn * D[:, j])       # residual i changes by -t*c_i
                dr = -c
                slope = np.where(r > 0, tau * dr, np.where(r < 0, (tau - 1) * dr,
                                 np.where(dr > 0, tau * dr, (tau - 1) * dr))).sum()
                if slope < -1e-13 * scale and (best is None or slope < best[0]):
                    best = (slope, j, c)
        if best is None:
            return beta
        slope, j, c = best
        # walk the kinks t_i = r_i / c_i > 0 until the slope turns nonnegative
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(c) > 1e-14, r / c, np.inf)
        t[basis] = np.inf
        cand = np.flatnonzero((t >= 0) & np.isfinite(t))
        cand = cand[np.argsort(t[cand], kind="stable")]
        enter = None
        for i in cand:
            slope += abs(c[i])
            enter = int(i)
            if slope >= 0:
                break
        if enter is None:
            return beta                       # unbounded direction cannot occur with full rank
        basis[j] = enter
    return np.linalg.solve(A[basis], y[basis])


# --- quantile regression forest --------------------------------------------

class OobUndefinedError(ValueError):
    """No tree left the requested training point out of its bootstrap sample."""


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 1000
    min_leaf: int = 5
    max_features: int | None = None   # default ceil(p / 3)
    bootstrap: bool = True
    seed: int = 0


@dataclass
class _Tree:
    left: np.ndarray
    right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray

    def apply(self, X32: np.ndarray) -> np.ndarray:
        node = np.zeros(X32.shape[0], dtype=np.int64)
        rows = np.arange(X32.shape[0])
        active = self.left[node] >= 0
        while active.any():
            nd = node[active]
            go_left = X32[rows[active], self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.left[node] >= 0
        return node


@dataclass
class QuantileForest:
    """Fitted forest: tree arrays, in-bag counts and training responses."""

    trees: list[_Tree]
    inbag: np.ndarray        # (n_train, n_trees) bootstrap multiplicities
    train_leaf: np.ndarray   # (n_train, n_trees) leaf node of each training point
    y: np.ndarray
    config: ForestConfig
    n_features: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def apply(self, X) -> np.ndarray:
        X32 = np.asarray(X, dtype=np.float32).reshape(-1, self.n_features)
        return np.stack([t.apply(X32) for t in self.trees], axis=1)

    def oob_mask(self) -> np.ndarray:
        return self.inbag == 0

    # -- weights --
    def _leaf_matrix(self):
        """Sparse (n_train x total_nodes) matrix of in-bag count / leaf size."""
        n, T = self.inbag.shape
        offsets = np.cumsum([0] + [t.left.size for t in self.trees])
        rows, cols, vals = [], [], []
        for k in range(T):
            cnt = self.inbag[:, k]
            members = np.flatnonzero(cnt)
            leaves = self.train_leaf[members, k]
            size = np.bincount(leaves, weights=cnt[members], minlength=self.trees[k].left.size)
            rows.append(members)
            cols.append(offsets[k] + leaves)
            vals.append(cnt[members] / size[leaves])
        M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, offsets[-1]))
        return M, offsets

    def weights(self, leaves: np.ndarray, tree_mask: np.ndarray) -> sp.csr_matrix:
        """Co-membership weights (n_query x n_train), rows normalized to 1."""
        M, offsets = self._leaf_matrix()
        nq, T = leaves.shape
        qr, qc = np.nonzero(tree_mask)
        Q = sp.csr_matrix((np.ones(qr.size), (qr, offsets[qc] + leaves[qr, qc])),
                          shape=(nq, offsets[-1]))
        W = (Q @ M.T).tocsr()
        votes = tree_mask.sum(axis=1).astype(float)
        W = sp.diags(1.0 / np.maximum(votes, 1.0)) @ W
        return W.tocsr()

    def to_files(self, path) -> None:
        """Binary little-endian arrays plus a JSON sidecar ``<path>.json``."""
        path = Path(path)
        sizes = [t.left.size for t in self.trees]
        meta = {
            "format": "quantile-forest-v1",
            "config": asdict(self.config),
            "n_features": self.n_features,
            "n_train": int(self.y.size),
            "node_counts": sizes,
            "blocks": ["y:<f8", "inbag:<u4", "train_leaf:<i4", "left:<i4", "right:<i4",
                       "feature:<i4", "threshold:<f8"],
        }
        with open(path, "wb") as fh:
            fh.write(self.y.astype("<f8").tobytes())
            fh.write(self.inbag.astype("<u4").tobytes())
            fh.write(self.train_leaf.astype("<i4").tobytes())
            for name, dt in (("left", "<i4"), ("right", "<i4"), ("feature", "<i4"), ("threshold", "<f8")):
                fh.write(np.concatenate([getattr(t, name) for t in self.trees]).astype(dt).tobytes())
        Path(str(path) + ".json").write_text(json.dumps(meta, indent=2), encoding="utf-8")

    @classmethod
    def from_files(cls, path) -> "QuantileForest":
        path = Path(path)
        meta = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
        if meta.get("format") != "quantile-forest-v1":
            raise ValueError(f"{path}: unknown forest format")
        n, T = meta["n_train"], len(meta["node_counts"])
        total = sum(meta["node_counts"])
        buf = path.read_bytes()
        pos = 0

        def take(count, dt):
            nonlocal pos
            arr = np.frombuffer(buf, dtype=dt, count=count, offset=pos)
            pos += arr.nbytes
            return arr

        y = take(n, "<f8").astype(float)
        inbag = take(n * T, "<u4").reshape(n, T).astype(np.int64)
        train_leaf = take(n * T, "<i4").reshape(n, T).astype(np.int64)
        arrays = {name: take(total, dt) for name, dt in
                  (("left", "<i4"), ("right", "<i4"), ("feature", "<i4"), ("threshold", "<f8"))}
        bounds = np.cumsum([0] + meta["node_counts"])
        trees = [_Tree(*(arrays[nm][bounds[k]:bounds[k + 1]].astype(np.int64 if nm != "threshold" else float)
                         for nm in ("left", "right", "feature", "threshold")))
                 for k in range(T)]
        return cls(trees=trees, inbag=inbag, train_leaf=train_leaf, y=y,
                   config=ForestConfig(**meta["config"]), n_features=meta["n_features"])


def fit_quantile_forest(X, y, config: ForestConfig = ForestConfig()) -> QuantileForest:
    """Grow ``config.n_trees`` variance-reduction CART trees on bootstrap samples."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n < 50:
        raise ValueError(f"need at least 50 samples, got {n}")
    if y.size != n:
        raise ValueError("X and y have different numbers of rows")
    constant = np.flatnonzero(np.ptp(X, axis=0) == 0)
    if constant.size:
        log.warning("constant feature columns %s will never be split", constant.tolist())
    mtry = config.max_features or math.ceil(p / 3)
    rng = np.random.default_rng(config.seed)
    seeds = rng.integers(0, 2**31 - 1, size=config.n_trees)
    X32 = X.astype(np.float32)

    trees, inbag, leaves = [], np.zeros((n, config.n_trees), dtype=np.int64), \
        np.zeros((n, config.n_trees), dtype=np.int64)
    for k in range(config.n_trees):
        tree_rng = np.random.default_rng(seeds[k])
        if config.bootstrap:
            counts = np.bincount(tree_rng.integers(0, n, size=n), minlength=n)
        else:
            counts = np.ones(n, dtype=np.int64)
        est = DecisionTreeRegressor(min_samples_leaf=config.min_leaf, max_features=mtry,
                                    random_state=int(seeds[k]))
        est.fit(X32, y, sample_weight=counts.astype(float))
        tr = est.tree_
        t = _Tree(tr.children_left.astype(np.int64), tr.children_right.astype(np.int64),
                  tr.feature.astype(np.int64), tr.threshold.astype(float))
        trees.append(t)
        inbag[:, k] = counts
        leaves[:, k] = t.apply(X32)
    return QuantileForest(trees=trees, inbag=inbag, train_leaf=leaves, y=y,
                          config=config, n_features=p)


def _weighted_quantiles(W: sp.csr_matrix, y: np.ndarray, taus: np.ndarray,
                        chunk: int = 512) -> np.ndarray:
    """``inf{y : F_w(y) >= tau}`` per row of ``W``; shape (n_query, n_tau)."""
    order = np.argsort(y, kind="stable")
    ys = y[order]
    out = np.empty((W.shape[0], taus.size))
    for lo in range(0, W.shape[0], chunk):
        block = W[lo:lo + chunk][:, order].toarray()
        cum = np.cumsum(block, axis=1)
        total = cum[:, -1:]
        for j, tau in enumerate(taus):
            # tiny slack absorbs cumulative-sum rounding; cum > 0 skips zero-weight leaders
            hit = (cum >= tau * total * (1.0 - 1e-12)) & (cum > 0)
            out[lo:lo + chunk, j] = ys[np.argmax(hit, axis=1)]
    return out


def forest_quantile(forest: QuantileForest, x=None, tau=0.9, mode: str = "standard",
                    index=None):
    """Weighted empirical ``tau``-quantile of training responses.

    ``mode="standard"`` predicts at covariate rows ``x`` with all trees.
    ``mode="oob"`` predicts at training points ``index`` (all points when
    ``None``) using only trees that left them out of bag.
    Returns an array of shape ``(n_query,)`` for scalar ``tau`` or
    ``(n_query, n_tau)`` otherwise.
    """
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    if np.any((taus < 0) | (taus > 1)):
        raise ValueError("tau must lie in [0, 1]")
    if mode == "standard":
        if x is None:
            raise ValueError("standard mode needs covariates x")
        leaves = forest.apply(x)
        mask = np.ones_like(leaves, dtype=bool)
    elif mode == "oob":
        idx = np.arange(forest.y.size) if index is None else np.atleast_1d(np.asarray(index))
        leaves = forest.train_leaf[idx]
        mask = forest.oob_mask()[idx]
        missing = np.flatnonzero(~mask.any(axis=1))
        if missing.size:
            raise OobUndefinedError(f"no out-of-bag tree for training points {idx[missing].tolist()}")
    else:
        raise ValueError(f"unknown mode {mode!r}")
    W = forest.weights(leaves, mask)
    q = _weighted_quantiles(W, forest.y, taus)
    return q[:, 0] if np.ndim(tau) == 0 else q
