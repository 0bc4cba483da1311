"""Extreme quantile regression network.

A small network maps a covariate window to orthogonal GPD parameters
``(nu, xi)``. It is trained on threshold exceedances by minimizing the
orthogonal GPD deviance plus an L2 weight penalty, and extreme quantiles are
obtained by extrapolating from the intermediate quantile.

Two architectures share the same output head:

* ``recurrent``: one LSTM layer over the ``s`` window steps, last hidden
  state, optional tanh dense layers, linear output.
* ``feedforward``: flattened window, tanh dense layers, linear output.

Everything is plain numpy with hand-written backpropagation.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit
from scipy.stats import genpareto

from .gpd_tail import OrthoGpdParams, extrapolate_quantile, ogpd_loss, ogpd_loss_grad

__all__ = [
    "EqrnConfig", "EqrnModel", "ExceedanceSet", "EmptyExceedanceError",
    "TrainingDivergedError", "extract_exceedances", "init_model", "forward",
    "forward_batch", "objective", "train", "predict_extreme_quantile",
    "save_checkpoint", "load_checkpoint", "XI_LOW", "XI_HIGH", "NU_FLOOR",
]

log = logging.getLogger(__name__)

XI_LOW, XI_HIGH = -0.49, 1.0
NU_FLOOR = 1e-6
_XI_OPEN_LOW = float(np.nextafter(XI_LOW, 0.0))
_XI_OPEN_HIGH = float(np.nextafter(XI_HIGH, 0.0))
CHECKPOINT_MAGIC = b"EQRNCKP1"
ARCHITECTURES = ("recurrent", "feedforward")


class EmptyExceedanceError(ValueError):
    """No response exceeds its intermediate quantile (tau0 too high?)."""


class TrainingDivergedError(RuntimeError):
    pass


# --- data -----------------------------------------------------------------

@dataclass
class ExceedanceSet:
    indices: np.ndarray
    z: np.ndarray
    features: np.ndarray  # (k, s, p + 1) raw windows aligned with z

    def __len__(self):
        return self.z.size


def extract_exceedances(y, q0hat, windows=None) -> ExceedanceSet:
    """Keep the positions where ``y`` exceeds ``q0hat``; ``z = y - q0hat``."""
    y = np.asarray(y, dtype=float).reshape(-1)
    q0hat = np.asarray(q0hat, dtype=float).reshape(-1)
    if y.shape != q0hat.shape:
        raise ValueError("y and q0hat must have equal lengths")
    feats = getattr(windows, "features", windows)
    if feats is not None:
        feats = np.asarray(feats, dtype=float)
        if feats.shape[0] != y.size:
            raise ValueError("windows must align with y")
    idx = np.flatnonzero(y > q0hat)
    if idx.size == 0:
        raise EmptyExceedanceError("no exceedances above the intermediate quantile")
    z = y[idx] - q0hat[idx]
    f = feats[idx] if feats is not None else np.zeros((idx.size, 1, 1))
    return ExceedanceSet(indices=idx, z=z, features=f)


# --- model ----------------------------------------------------------------

@dataclass(frozen=True)
class EqrnConfig:
    architecture: str = "recurrent"
    recurrent_state_dim: int = 64
    dense_layers: tuple[int, ...] = ()
    l2_lambda: float = 1e-4
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 500
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be nonnegative")
        if self.recurrent_state_dim < 1 or any(int(d) < 1 for d in self.dense_layers):
            raise ValueError("layer sizes must be positive")
        object.__setattr__(self, "dense_layers", tuple(int(d) for d in self.dense_layers))


@dataclass
class EqrnModel:
    config: EqrnConfig
    n_features: int          # per window step (covariates + lagged response)
    s: int
    tau0: float
    weights: np.ndarray      # flat parameter vector
    feature_mean: np.ndarray
    feature_std: np.ndarray
    training_log: list = field(default_factory=list)  # (epoch, train_loss, valid_loss)

    @property
    def architecture(self) -> str:
        return self.config.architecture

    def layout(self):
        return _layout(self.config, self.n_features, self.s)

    def params(self, flat=None) -> dict[str, np.ndarray]:
        return _unflatten(self.weights if flat is None else flat, self.layout())

    def standardize(self, features) -> np.ndarray:
        f = np.asarray(features, dtype=float)
        if f.ndim == 2:
            f = f[None]
        if f.shape[1:] != (self.s, self.n_features):
            raise ValueError(f"window shape {f.shape[1:]} does not match ({self.s}, {self.n_features})")
        return (f - self.feature_mean) / self.feature_std


def _layout(config: EqrnConfig, n_features: int, s: int):
    shapes = []
    if config.architecture == "recurrent":
        H = config.recurrent_state_dim
        shapes += [("lstm_Wx", (n_features, 4 * H)), ("lstm_Wh", (H, 4 * H)), ("lstm_b", (4 * H,))]
        width = H
    else:
        width = s * n_features
    for k, d in enumerate(config.dense_layers):
        shapes += [(f"dense{k}_W", (width, d)), (f"dense{k}_b", (d,))]
        width = d
    shapes += [("out_W", (width, 2)), ("out_b", (2,))]
    return shapes


def _unflatten(flat, layout) -> dict[str, np.ndarray]:
    out, pos = {}, 0
    for name, shape in layout:
        size = math.prod(shape)
        out[name] = flat[pos:pos + size].reshape(shape)
        pos += size
    if pos != flat.size:
        raise ValueError(f"weight vector has {flat.size} entries, layout needs {pos}")
    return out


def _n_params(layout) -> int:
    return sum(math.prod(shape) for _, shape in layout)


def init_model(config: EqrnConfig, n_features: int, s: int, tau0: float,
               feature_mean=None, feature_std=None, nu0: float = 1.0, xi0: float = 0.1) -> EqrnModel:
    """Glorot-uniform weights; output bias set so the initial output is ``(nu0, xi0)``."""
    layout = _layout(config, n_features, s)
    rng = np.random.default_rng(config.seed)
    flat = np.zeros(_n_params(layout))
    p = _unflatten(flat, layout)
    for name, shape in layout:
        if len(shape) == 2:
            fan_in, fan_out = shape
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            p[name][...] = rng.uniform(-lim, lim, size=shape)
    p["out_W"] *= 0.1
    if config.architecture == "recurrent":
        H = config.recurrent_state_dim
        p["lstm_b"][H:2 * H] = 1.0  # forget gate starts open
    p["out_b"][0] = _softplus_inv(max(nu0 - NU_FLOOR, 1e-3))
    frac = (np.clip(xi0, XI_LOW + 0.05, XI_HIGH - 0.05) - XI_LOW) / (XI_HIGH - XI_LOW)
    p["out_b"][1] = math.log(frac / (1.0 - frac))
    mean = np.zeros(n_features) if feature_mean is None else np.asarray(feature_mean, dtype=float)
    std = np.ones(n_features) if feature_std is None else np.asarray(feature_std, dtype=float)
    return EqrnModel(config=config, n_features=n_features, s=s, tau0=tau0, weights=flat,
                     feature_mean=mean, feature_std=std)


def _softplus(z):
    return np.logaddexp(0.0, z)


def _softplus_inv(v: float) -> float:
    return v + math.log(-math.expm1(-v))


def _output_maps(raw):
    nu = _softplus(raw[:, 0]) + NU_FLOOR
    xi = XI_LOW + (XI_HIGH - XI_LOW) * expit(raw[:, 1])
    # saturated sigmoids round onto the endpoints; keep the interval open
    xi = np.clip(xi, _XI_OPEN_LOW, _XI_OPEN_HIGH)
    return nu, xi


# --- forward / backward ----------------------------------------------------

def _net_forward(p, X, arch, H):
    """Raw 2-vector outputs for standardized windows ``X`` (B, s, F) plus a cache."""
    B, T, _ = X.shape
    cache = {"X": X}
    if arch == "recurrent":
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        steps = []
        for t in range(T):
            a = X[:, t] @ p["lstm_Wx"] + h @ p["lstm_Wh"] + p["lstm_b"]
            i = expit(a[:, :H])
            f = expit(a[:, H:2 * H])
            g = np.tanh(a[:, 2 * H:3 * H])
            o = expit(a[:, 3 * H:])
            c_prev, h_prev = c, h
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            steps.append((h_prev, c_prev, i, f, g, o, tc))
        cache["steps"] = steps
        act = h
    else:
        act = X.reshape(B, -1)
    acts = [act]
    k = 0
    while f"dense{k}_W" in p:
        act = np.tanh(act @ p[f"dense{k}_W"] + p[f"dense{k}_b"])
        acts.append(act)
        k += 1
    cache["acts"] = acts
    raw = act @ p["out_W"] + p["out_b"]
    return raw, cache


def _net_backward(p, grads, cache, d_raw, arch, H):
    acts = cache["acts"]
    grads["out_W"] += acts[-1].T @ d_raw
    grads["out_b"] += d_raw.sum(axis=0)
    d_act = d_raw @ p["out_W"].T
    k = len(acts) - 2
    while k >= 0:
        d_pre = d_act * (1.0 - acts[k + 1] ** 2)
        grads[f"dense{k}_W"] += acts[k].T @ d_pre
        grads[f"dense{k}_b"] += d_pre.sum(axis=0)
        d_act = d_pre @ p[f"dense{k}_W"].T
        k -= 1
    if arch != "recurrent":
        return
    X = cache["X"]
    dh = d_act
    dc = np.zeros_like(dh)
    for t in range(X.shape[1] - 1, -1, -1):
        h_prev, c_prev, i, f, g, o, tc = cache["steps"][t]
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc ** 2)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        da = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g ** 2), do * o * (1 - o)], axis=1)
        grads["lstm_Wx"] += X[:, t].T @ da
        grads["lstm_Wh"] += h_prev.T @ da
        grads["lstm_b"] += da.sum(axis=0)
        dh = da @ p["lstm_Wh"].T
        dc = dc * f


def forward_batch(model: EqrnModel, windows, flat=None, standardized: bool = False):
    """``(nu, xi)`` arrays for a stack of windows (or a single window)."""
    X = np.asarray(windows, dtype=float) if standardized else model.standardize(windows)
    raw, _ = _net_forward(model.params(flat), X, model.architecture, model.config.recurrent_state_dim)
    return _output_maps(raw)


def forward(model: EqrnModel, window) -> OrthoGpdParams:
    w = np.asarray(window, dtype=float)
    if w.ndim != 2:
        raise ValueError(f"expected one (s, p + 1) window, got shape {w.shape}")
    nu, xi = forward_batch(model, w)
    return OrthoGpdParams(nu=float(nu[0]), xi=float(xi[0]))


def objective(model: EqrnModel, X, z, flat=None, with_grad: bool = True):
    """Mean deviance over in-support samples plus ``lambda * ||W||^2``.

    ``X`` holds standardized windows. Samples outside the fitted support are
    dropped from the mean; returns ``(value, grad, n_used)``.
    """
    flat = model.weights if flat is None else flat
    p = model.params(flat)
    H = model.config.recurrent_state_dim
    raw, cache = _net_forward(p, X, model.architecture, H)
    nu, xi = _output_maps(raw)
    losses = ogpd_loss(z, nu, xi)
    ok = np.isfinite(losses)
    n_used = int(ok.sum())
    lam = model.config.l2_lambda
    value = (float(losses[ok].mean()) if n_used else 0.0) + lam * float(flat @ flat)
    if not with_grad:
        return value, None, n_used
    grad = 2.0 * lam * flat
    if n_used:
        g_nu, g_xi = ogpd_loss_grad(z, nu, xi)
        scale = ok / n_used
        d_raw = np.empty_like(raw)
        d_raw[:, 0] = g_nu * expit(raw[:, 0]) * scale
        sx = expit(raw[:, 1])
        d_raw[:, 1] = g_xi * (XI_HIGH - XI_LOW) * sx * (1.0 - sx) * scale
        grads = _unflatten(np.zeros_like(flat), model.layout())
        _net_backward(p, grads, cache, d_raw, model.architecture, H)
        grad = grad + np.concatenate([grads[name].reshape(-1) for name, _ in model.layout()])
    return value, grad, n_used


def _valid_loss(model: EqrnModel, X, z, flat=None) -> float:
    nu, xi = forward_batch(model, X, flat=flat, standardized=True)
    losses = ogpd_loss(z, nu, xi)
    return float(np.mean(losses)) if np.all(np.isfinite(losses)) else math.inf


# --- training ---------------------------------------------------------------

def _standardization(features):
    f = np.asarray(features, dtype=float)
    mean = f.mean(axis=(0, 1))
    std = f.std(axis=(0, 1))
    return mean, np.where(std > 0, std, 1.0)


def _unconditional_fit(z):
    xi, _, scale = genpareto.fit(z, floc=0.0)
    xi = float(np.clip(xi, XI_LOW + 0.05, XI_HIGH - 0.05))
    return scale * (1.0 + xi), xi


def train(train_set: ExceedanceSet, valid_set: ExceedanceSet, tau0: float,
          config: EqrnConfig = EqrnConfig(), feature_stats=None) -> EqrnModel:
    """Adam on mini-batches with early stopping on the validation deviance.

    ``feature_stats`` is ``(mean, std)`` per window column; by default they
    come from the training exceedance windows.
    """
    if len(train_set) == 0 or len(valid_set) == 0:
        raise ValueError("training and validation sets must be nonempty")
    _, s, F = train_set.features.shape
    mean, std = feature_stats if feature_stats is not None else _standardization(train_set.features)
    nu0, xi0 = _unconditional_fit(train_set.z)
    model = init_model(config, F, s, tau0, mean, std, nu0=nu0, xi0=xi0)
    Xt = model.standardize(train_set.features)
    Xv = model.standardize(valid_set.features)
    zt, zv = train_set.z, valid_set.z

    rng = np.random.default_rng(config.seed + 1)
    m = np.zeros_like(model.weights)
    v = np.zeros_like(model.weights)
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0
    best = _valid_loss(model, Xv, zv)
    best_w = model.weights.copy()
    model.training_log = [(0, objective(model, Xt, zt, with_grad=False)[0], best)]
    since_best = 0
    nan_streak = 0
    n = zt.size
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n)
        batch_vals = []
        for lo in range(0, n, config.batch_size):
            idx = perm[lo:lo + config.batch_size]
            val, grad, used = objective(model, Xt[idx], zt[idx])
            batch_vals.append(val)
            if not np.all(np.isfinite(grad)):
                continue
            step += 1
            m = b1 * m + (1 - b1) * grad
            v = b2 * v + (1 - b2) * grad * grad
            mhat = m / (1 - b1 ** step)
            vhat = v / (1 - b2 ** step)
            model.weights = model.weights - config.learning_rate * mhat / (np.sqrt(vhat) + eps)
        train_loss = float(np.mean(batch_vals))
        nan_streak = nan_streak + 1 if math.isnan(train_loss) else 0
        if nan_streak >= 2:
            raise TrainingDivergedError(f"training loss was NaN in epochs {epoch - 1} and {epoch}")
        valid_loss = _valid_loss(model, Xv, zv)
        model.training_log.append((epoch, train_loss, valid_loss))
        if valid_loss < best:
            best, best_w, since_best = valid_loss, model.weights.copy(), 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    model.weights = best_w
    log.info("trained %d epochs, best validation deviance %.5f", len(model.training_log) - 1, best)
    return model


def best_valid_loss(model: EqrnModel) -> float:
    return min(v for _, _, v in model.training_log)


# --- prediction ---------------------------------------------------------------

def predict_extreme_quantile(model: EqrnModel, windows, q0hat, tau):
    """Extrapolate from ``q0hat`` at ``tau0`` to ``tau`` with the fitted GPD parameters."""
    if np.any(np.asarray(tau) < model.tau0):
        raise ValueError(f"tau must be at least tau0={model.tau0}")
    w = np.asarray(windows, dtype=float)
    single = w.ndim == 2
    nu, xi = forward_batch(model, w)
    q = extrapolate_quantile(np.asarray(q0hat, dtype=float), (nu, xi), model.tau0, tau)
    q = np.asarray(q, dtype=float)
    return float(q.reshape(-1)[0]) if single and q.size == 1 else q


# --- checkpoints ----------------------------------------------------------------

def save_checkpoint(model: EqrnModel, path) -> None:
    header = {
        "config": asdict(model.config),
        "n_features": model.n_features,
        "s": model.s,
        "tau0": model.tau0,
        "feature_mean": [float(v) for v in model.feature_mean],
        "feature_std": [float(v) for v in model.feature_std],
        "n_weights": int(model.weights.size),
        "training_log": [[int(e), float(a), float(b)] for e, a, b in model.training_log],
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        fh.write(model.weights.astype("<f8").tobytes())


def load_checkpoint(path) -> EqrnModel:
    buf = Path(path).read_bytes()
    if buf[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not an EQRN checkpoint")
    (n,) = struct.unpack("<Q", buf[8:16])
    header = json.loads(buf[16:16 + n].decode("utf-8"))
    weights = np.frombuffer(buf, dtype="<f8", offset=16 + n).astype(float)
    if weights.size != header["n_weights"]:
        raise ValueError(f"{path}: truncated weight block")
    cfg = header["config"]
    cfg["dense_layers"] = tuple(cfg["dense_layers"])
    return EqrnModel(
        config=EqrnConfig(**cfg), n_features=header["n_features"], s=header["s"],
        tau0=header["tau0"], weights=weights,
        feature_mean=np.array(header["feature_mean"]), feature_std=np.array(header["feature_std"]),
        training_log=[tuple(r) for r in header["training_log"]],
    )
