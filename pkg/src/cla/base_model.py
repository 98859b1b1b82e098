"""Feed-forward regressor trained by full-batch gradient descent."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class TrainingError(RuntimeError):
    pass


class DivergenceError(TrainingError):
    pass


ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "relu": (lambda z: np.maximum(z, 0.0), lambda a: (a > 0).astype(float)),
    "linear": (lambda z: z, lambda a: np.ones_like(a)),
}


@dataclass
class BaseParams:
    """Weights and biases of a dense network with one linear output unit.

    ``weights[l]`` has shape (fan_in, fan_out); activations apply to every
    layer except the last.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or len(self.activations) != len(self.weights) - 1:
            raise ValueError("need one bias per layer and one activation per hidden layer")
        for w0, w1 in zip(self.weights, self.weights[1:]):
            if w0.shape[1] != w1.shape[0]:
                raise ValueError(f"layer shapes {w0.shape} -> {w1.shape} do not chain")
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[1],):
                raise ValueError(f"bias shape {b.shape} does not match weight {w.shape}")
        if self.weights[-1].shape[1] != 1:
            raise ValueError("output layer must have a single unit")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    def copy(self) -> "BaseParams":
        return BaseParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], list(self.activations))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def with_flat(self, vec) -> "BaseParams":
        vec = np.asarray(vec, dtype=float)
        ws, bs, i = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(vec[i:i + w.size].reshape(w.shape))
            i += w.size
            bs.append(vec[i:i + b.size].copy())
            i += b.size
        return BaseParams(ws, bs, list(self.activations))

    def to_dict(self) -> dict:
        # row-major (fan_in, fan_out) weight arrays
        return {
            "layer_sizes": self.layer_sizes,
            "activations": list(self.activations),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BaseParams":
        params = cls(
            [np.asarray(w, dtype=float) for w in d["weights"]],
            [np.asarray(b, dtype=float) for b in d["biases"]],
            list(d["activations"]),
        )
        if params.layer_sizes != list(d["layer_sizes"]):
            raise ValueError("layer_sizes disagree with weight shapes")
        return params

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def equals(self, other: "BaseParams") -> bool:
        return (
            self.activations == other.activations
            and len(self.weights) == len(other.weights)
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )


@dataclass
class TrainConfig:
    hidden: tuple[int, ...] = (8,)
    activation: str = "tanh"
    learning_rate: float = 0.05
    max_epochs: int = 400
    patience: int = 50
    split: tuple[float, float, float] = (0.75, 0.05, 0.25)
    seed: int = 0
    min_rows: int = 20

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        split = tuple(float(s) for s in self.split)
        if len(split) != 3 or min(split) <= 0:
            raise ValueError(f"split needs three positive proportions, got {split}")
        # proportions, not fractions: 75/5/25 is accepted and rescaled
        total = sum(split)
        self.split = tuple(s / total for s in split)
        if self.learning_rate <= 0 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("learning_rate, max_epochs and patience must be positive")


def init_params(n_inputs: int, hidden=(8,), activation: str = "tanh", seed=0) -> BaseParams:
    """Glorot-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = [n_inputs, *hidden, 1]
    ws = [rng.standard_normal((a, b)) * np.sqrt(2.0 / (a + b)) for a, b in zip(sizes, sizes[1:])]
    bs = [np.zeros(b) for b in sizes[1:]]
    return BaseParams(ws, bs, [activation] * len(hidden))


def _forward(params: BaseParams, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    a = x
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w + b
        a = ACTIVATIONS[params.activations[l]][0](z) if l < len(params.activations) else z
        acts.append(a)
    return acts


def predict(params: BaseParams, features) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[1] != params.n_inputs:
        raise ValueError(f"expected (n, {params.n_inputs}) features, got {x.shape}")
    return _forward(params, x)[-1][:, 0]


def mse(params: BaseParams, features, targets) -> float:
    return float(np.mean((predict(params, features) - np.asarray(targets, dtype=float)) ** 2))


def loss_and_gradient(params: BaseParams, x: np.ndarray, y: np.ndarray) -> tuple[float, list, list]:
    """Mean squared error and its gradient w.r.t. every weight and bias."""
    acts = _forward(params, x)
    n = x.shape[0]
    resid = acts[-1][:, 0] - y
    loss = float(np.mean(resid ** 2))
    delta = (2.0 / n) * resid[:, None]
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for l in range(len(params.weights) - 1, -1, -1):
        gw[l] = acts[l].T @ delta
        gb[l] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ params.weights[l].T) * ACTIVATIONS[params.activations[l - 1]][1](acts[l])
    return loss, gw, gb


def split_rows(n: int, fractions, seed) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Random permutation cut into contiguous train/validation/test blocks."""
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = max(1, int(round(fractions[1] * n)))
    n_train = min(n_train, n - n_val)
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


@dataclass
class TrainResult:
    params: BaseParams
    validation_error: float
    epochs: int
    train_idx: np.ndarray = field(repr=False)
    val_idx: np.ndarray = field(repr=False)
    test_idx: np.ndarray = field(repr=False)


def train(features, targets, cfg: TrainConfig) -> TrainResult:
    """Fit by full-batch gradient descent on the training split, keeping the
    parameters with the lowest validation MSE (early stopping)."""
    x = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise TrainingError(f"features {x.shape} and targets {y.shape} do not align")
    if x.shape[0] < cfg.min_rows:
        raise TrainingError(f"need at least {cfg.min_rows} rows to train, got {x.shape[0]}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise TrainingError("features and targets must be finite")

    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    tr, va, te = split_rows(x.shape[0], cfg.split, seeds[0])
    params = init_params(x.shape[1], cfg.hidden, cfg.activation, seeds[1])
    xt, yt, xv, yv = x[tr], y[tr], x[va], y[va]

    best = params.copy()
    best_val = mse(params, xv, yv)
    stale = 0
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        loss, gw, gb = loss_and_gradient(params, xt, yt)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite training loss at epoch {epoch}")
        for l in range(len(params.weights)):
            params.weights[l] -= cfg.learning_rate * gw[l]
            params.biases[l] -= cfg.learning_rate * gb[l]
        val = mse(params, xv, yv)
        if not np.isfinite(val):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        if val < best_val:
            best, best_val, stale = params.copy(), val, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return TrainResult(best, best_val, epoch, tr, va, te)


def absolute_error(forecasts, realized) -> tuple[np.ndarray, float]:
    """Per-row |forecast - realized| and their cross-sectional mean."""
    f = np.asarray(forecasts, dtype=float)
    r = np.asarray(realized, dtype=float)
    if f.shape != r.shape:
        raise ValueError(f"length mismatch: {f.shape} vs {r.shape}")
    if f.size == 0:
        raise ValueError("empty forecast vector")
    err = np.abs(f - r)
    return err, float(err.mean())


def gradient_check(params: BaseParams, features, targets, step: float = 1e-6) -> float:
    """Compare analytic gradients with central finite differences.

    Returns max |analytic - numeric| over all parameters, divided by the
    largest gradient magnitude (0 when both gradients vanish).
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    _, gw, gb = loss_and_gradient(params, x, y)
    analytic = np.concatenate([a.ravel() for pair in zip(gw, gb) for a in pair])
    theta = params.flat()
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[i] += step
        dn[i] -= step
        numeric[i] = (mse(params.with_flat(up), x, y) - mse(params.with_flat(dn), x, y)) / (2 * step)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max())
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)
