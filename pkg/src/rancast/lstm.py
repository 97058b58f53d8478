"""Compact multivariate LSTM regressor trained by full backpropagation
through time under the weighted absolute-error loss.

Everything is plain float64 numpy. Parameters live in a flat dict:

    l{j}_wx : (4H, D_j)  input weights of layer j, gate order i, f, g, o
    l{j}_wh : (4H, H)    recurrent weights
    l{j}_b  : (4H,)      gate biases
    head_w  : (H,)       affine readout of the last hidden state
    head_b  : ()         readout bias

The cell follows the standard recurrence: gates i/f/o are sigmoids, the
candidate g a tanh, c_t = f*c + i*g and h_t = o*tanh(c_t).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataset import FoldPlan, fit_matrix_normalizer
from .errors import (
    AllDivergedError,
    ConfigError,
    DataError,
    DivergenceError,
    ShapeMismatchError,
)
from .loss import LossConfig, wmae, wmae_grad


@dataclass(frozen=True)
class LstmSpec:
    """Network shape: D inputs, H hidden units per layer, L lookback hours."""

    input_dim: int
    hidden: int = 16
    layers: int = 1
    lookback: int = 24

    def __post_init__(self):
        for name in ("input_dim", "hidden", "layers", "lookback"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")

    def param_shapes(self) -> dict[str, tuple]:
        shapes = {}
        for j in range(self.layers):
            d = self.input_dim if j == 0 else self.hidden
            shapes[f"l{j}_wx"] = (4 * self.hidden, d)
            shapes[f"l{j}_wh"] = (4 * self.hidden, self.hidden)
            shapes[f"l{j}_b"] = (4 * self.hidden,)
        shapes["head_w"] = (self.hidden,)
        shapes["head_b"] = ()
        return shapes


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings. The adaptive-moment optimizer keeps its standard
    decay constants; only the learning rate is meant to be searched."""

    learning_rate: float = 3e-3
    epochs: int = 40
    l2: float = 0.0
    batch_size: int = 64
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("learning rate, epochs, and batch size must be positive")
        if self.l2 < 0:
            raise ConfigError("l2 penalty must be non-negative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1 and self.eps > 0):
            raise ConfigError("invalid optimizer constants")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def weight_keys(spec: LstmSpec) -> tuple[str, ...]:
    """Parameters subject to the L2 penalty (weight matrices, not biases)."""
    keys = []
    for j in range(spec.layers):
        keys += [f"l{j}_wx", f"l{j}_wh"]
    keys.append("head_w")
    return tuple(keys)


def init_params(spec: LstmSpec, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform init in +-1/sqrt(H) for matrices, zeros for biases."""
    limit = 1.0 / np.sqrt(spec.hidden)
    params: dict[str, np.ndarray] = {}
    for key, shape in spec.param_shapes().items():
        if key.endswith("_b"):
            params[key] = np.zeros(shape)
        else:
            params[key] = rng.uniform(-limit, limit, shape)
    return params


def _forward(spec: LstmSpec, params: dict, X: np.ndarray, need_cache: bool):
    if X.ndim != 3 or X.shape[1] != spec.lookback or X.shape[2] != spec.input_dim:
        raise ShapeMismatchError(
            f"window batch has shape {X.shape}, spec expects"
            f" (*, {spec.lookback}, {spec.input_dim})"
        )
    n, L, _ = X.shape
    H = spec.hidden
    inp = np.ascontiguousarray(np.moveaxis(X, 1, 0))  # (L, N, D)
    caches = []
    for j in range(spec.layers):
        wx, wh, b = params[f"l{j}_wx"], params[f"l{j}_wh"], params[f"l{j}_b"]
        hs = np.zeros((L + 1, n, H))
        cs = np.zeros((L + 1, n, H))
        gi = np.empty((L, n, H))
        gf = np.empty((L, n, H))
        gg = np.empty((L, n, H))
        go = np.empty((L, n, H))
        tc = np.empty((L, n, H))
        for t in range(L):
            z = inp[t] @ wx.T + hs[t] @ wh.T + b
            gi[t] = _sigmoid(z[:, :H])
            gf[t] = _sigmoid(z[:, H:2 * H])
            gg[t] = np.tanh(z[:, 2 * H:3 * H])
            go[t] = _sigmoid(z[:, 3 * H:])
            cs[t + 1] = gf[t] * cs[t] + gi[t] * gg[t]
            tc[t] = np.tanh(cs[t + 1])
            hs[t + 1] = go[t] * tc[t]
        if need_cache:
            caches.append((inp, gi, gf, gg, go, cs, hs, tc))
        inp = hs[1:]
    yhat = inp[-1] @ params["head_w"] + params["head_b"]
    return yhat, caches


def forward(spec: LstmSpec, params: dict, X: np.ndarray) -> np.ndarray:
    """Predict the (normalized) next-hour target for a batch of windows."""
    yhat, _ = _forward(spec, params, np.asarray(X, dtype=float), need_cache=False)
    return yhat


def _backward(spec: LstmSpec, params: dict, caches, dy: np.ndarray) -> dict[str, np.ndarray]:
    L = spec.lookback
    H = spec.hidden
    n = len(dy)
    grads = {k: np.zeros(shape) for k, shape in spec.param_shapes().items()}

    top_h_last = caches[-1][6][L]
    grads["head_w"] = top_h_last.T @ dy
    grads["head_b"] = np.asarray(dy.sum())

    # External hidden-state gradient per timestep; the top layer only gets
    # the readout gradient at the final step, lower layers get the input
    # gradients of the layer above.
    dh_seq = np.zeros((L, n, H))
    dh_seq[L - 1] = dy[:, None] * params["head_w"][None, :]

    for j in reversed(range(spec.layers)):
        inp, gi, gf, gg, go, cs, hs, tc = caches[j]
        wx = params[f"l{j}_wx"]
        wh = params[f"l{j}_wh"]
        d_in = wx.shape[1]
        dwx = np.zeros_like(wx)
        dwh = np.zeros_like(wh)
        db = np.zeros(4 * H)
        dx_seq = np.empty((L, n, d_in))
        dh_next = np.zeros((n, H))
        dc_next = np.zeros((n, H))
        for t in reversed(range(L)):
            dh = dh_seq[t] + dh_next
            do = dh * tc[t]
            dc = dc_next + dh * go[t] * (1.0 - tc[t] ** 2)
            di = dc * gg[t]
            df = dc * cs[t]
            dg = dc * gi[t]
            dzi = di * gi[t] * (1.0 - gi[t])
            dzf = df * gf[t] * (1.0 - gf[t])
            dzg = dg * (1.0 - gg[t] ** 2)
            dzo = do * go[t] * (1.0 - go[t])
            dz = np.concatenate([dzi, dzf, dzg, dzo], axis=1)
            dwx += dz.T @ inp[t]
            dwh += dz.T @ hs[t]
            db += dz.sum(axis=0)
            dx_seq[t] = dz @ wx
            dh_next = dz @ wh
            dc_next = dc * gf[t]
        grads[f"l{j}_wx"] = dwx
        grads[f"l{j}_wh"] = dwh
        grads[f"l{j}_b"] = db
        dh_seq = dx_seq
    return grads


def loss_and_grads(spec: LstmSpec, params: dict, X: np.ndarray, y: np.ndarray,
                   loss_cfg: LossConfig, l2: float = 0.0):
    """Objective = mean wmae over the batch + l2 * squared weight norm.

    Returns ``(objective, data_loss, grads)``.
    """
    yhat, caches = _forward(spec, params, X, need_cache=True)
    err = yhat - y
    data_loss = float(np.mean(wmae(err, loss_cfg.w)))
    dy = wmae_grad(err, loss_cfg.w) / len(y)
    grads = _backward(spec, params, caches, dy)
    objective = data_loss
    if l2 > 0:
        for key in weight_keys(spec):
            objective += l2 * float(np.sum(params[key] ** 2))
            grads[key] += 2.0 * l2 * params[key]
    return objective, data_loss, grads


class _Adam:
    def __init__(self, params: dict, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        c = self.cfg
        self.t += 1
        correct1 = 1.0 - c.beta1 ** self.t
        correct2 = 1.0 - c.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
            mhat = self.m[k] / correct1
            vhat = self.v[k] / correct2
            params[k] = params[k] - c.learning_rate * mhat / (np.sqrt(vhat) + c.eps)


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    train_curve: list[float]
    val_curve: list[float]


def train(spec: LstmSpec, inputs: np.ndarray, targets: np.ndarray,
          train_cfg: TrainConfig, loss_cfg: LossConfig,
          val_inputs: np.ndarray | None = None,
          val_targets: np.ndarray | None = None) -> TrainResult:
    """Train by mini-batch BPTT; deterministic for a fixed seed.

    Aborts with a diagnostic as soon as any batch objective or validation
    loss turns non-finite.
    """
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if len(inputs) == 0:
        raise DataError("training needs at least one sample")
    if len(inputs) != len(targets):
        raise DataError("inputs and targets lengths differ")
    rng = np.random.default_rng(train_cfg.seed)
    params = init_params(spec, rng)
    opt = _Adam(params, train_cfg)
    n = len(targets)
    train_curve: list[float] = []
    val_curve: list[float] = []
    for epoch in range(train_cfg.epochs):
        perm = rng.permutation(n)
        total = 0.0
        for s in range(0, n, train_cfg.batch_size):
            idx = perm[s:s + train_cfg.batch_size]
            objective, data_loss, grads = loss_and_grads(
                spec, params, inputs[idx], targets[idx], loss_cfg, train_cfg.l2
            )
            if not np.isfinite(objective):
                raise DivergenceError(
                    f"non-finite training loss at epoch {epoch}, batch {s // train_cfg.batch_size}"
                )
            opt.step(params, grads)
            total += data_loss * len(idx)
        train_curve.append(total / n)
        if val_inputs is not None and len(val_inputs):
            val_err = forward(spec, params, val_inputs) - val_targets
            val_loss = float(np.mean(wmae(val_err, loss_cfg.w)))
            if not np.isfinite(val_loss):
                raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
            val_curve.append(val_loss)
    return TrainResult(params, train_curve, val_curve)


def check_gradients(loss_cfg: LossConfig, seed: int, spec: LstmSpec | None = None,
                    n_samples: int = 3, step: float = 1e-5) -> float:
    """Compare BPTT gradients against central finite differences on a tiny
    model; returns the maximum relative error over all parameters.

    The evaluation point is resampled if any sample error lands exactly on
    the loss kink at zero.
    """
    if spec is None:
        spec = LstmSpec(input_dim=3, hidden=4, layers=2, lookback=6)
    rng = np.random.default_rng(seed)
    for _ in range(16):
        params = init_params(spec, rng)
        X = rng.normal(size=(n_samples, spec.lookback, spec.input_dim))
        y = rng.normal(size=n_samples)
        err = forward(spec, params, X) - y
        if np.min(np.abs(err)) > 1e-3:  # keep finite differences off the kink
            break
    else:
        raise DataError("could not find a kink-free evaluation point")

    _, _, grads = loss_and_grads(spec, params, X, y, loss_cfg)

    def objective() -> float:
        yhat = forward(spec, params, X)
        return float(np.mean(wmae(yhat - y, loss_cfg.w)))

    worst = 0.0
    for key in spec.param_shapes():
        g = np.atleast_1d(grads[key])
        p = np.atleast_1d(params[key])
        for i in range(p.size):
            orig = p.flat[i]
            p.flat[i] = orig + step
            hi = objective()
            p.flat[i] = orig - step
            lo = objective()
            p.flat[i] = orig
            numeric = (hi - lo) / (2.0 * step)
            denom = max(abs(g.flat[i]) + abs(numeric), 1e-4)
            worst = max(worst, abs(g.flat[i] - numeric) / denom)
    return worst


def encode_candidate(spec: LstmSpec, cfg: TrainConfig) -> str:
    """Canonical encoding of a grid point, used for deterministic tie-breaks."""
    return json.dumps({"spec": vars(spec), "train": vars(cfg)}, sort_keys=True)


@dataclass
class GridSearchResult:
    best_spec: LstmSpec
    best_config: TrainConfig
    scores: list[float]  # mean cross-validation loss per candidate, inf if diverged


def grid_search(candidates, matrix: np.ndarray, columns, fold_plan: FoldPlan,
                loss_cfg: LossConfig, skip_normalize=frozenset(),
                target_col: int = 0) -> GridSearchResult:
    """Pick the candidate with the lowest mean validation loss across folds.

    ``matrix`` is the raw feature matrix over the span covered by the fold
    plan; each fold fits its own normalizer on its training rows. Candidates
    whose training diverges on any fold score infinity; ties break on the
    candidate encoding.
    """
    candidates = list(candidates)
    if not candidates:
        raise ConfigError("grid search needs at least one candidate")
    matrix = np.asarray(matrix, dtype=float)
    scores: list[float] = []
    for spec, cfg in candidates:
        if spec.input_dim != matrix.shape[1]:
            raise ShapeMismatchError(
                f"candidate expects {spec.input_dim} inputs, matrix has {matrix.shape[1]}"
            )
        fold_losses = []
        for (ta, tb), (va, vb) in fold_plan.folds:
            norm = fit_matrix_normalizer(matrix[ta:tb], columns, skip=skip_normalize)
            normed = norm.transform_matrix(matrix, columns)
            target = normed[:, target_col]
            Xtr, ytr = _range_samples(normed, target, spec.lookback, ta, tb)
            Xva, yva = _range_samples(normed, target, spec.lookback, va, vb)
            if len(ytr) == 0 or len(yva) == 0:
                raise DataError("fold ranges too short for the lookback window")
            try:
                result = train(spec, Xtr, ytr, cfg, loss_cfg)
            except DivergenceError:
                fold_losses = [np.inf]
                break
            val_err = forward(spec, result.params, Xva) - yva
            fold_losses.append(float(np.mean(wmae(val_err, loss_cfg.w))))
        scores.append(float(np.mean(fold_losses)))
    if all(not np.isfinite(s) for s in scores):
        raise AllDivergedError("every grid candidate diverged")
    order = sorted(
        range(len(candidates)),
        key=lambda i: (scores[i], encode_candidate(*candidates[i])),
    )
    best = order[0]
    return GridSearchResult(candidates[best][0], candidates[best][1], scores)


def _range_samples(matrix: np.ndarray, target: np.ndarray, lookback: int,
                   begin: int, end: int):
    """Samples whose target index falls in [begin, end); windows may reach
    back before ``begin`` but never past their target."""
    first = max(begin, lookback)
    if first >= end:
        return np.empty((0, lookback, matrix.shape[1])), np.empty(0)
    idx = np.arange(first, end)
    win = idx[:, None] + np.arange(-lookback, 0)[None, :]
    return matrix[win], target[idx]
