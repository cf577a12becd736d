"""Minibatch training, evaluation and the Adam update used by both loops."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .network import NetworkModel

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Raised when the loss becomes non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    epochs: int = 500
    lr: float = 1e-3
    lr_theta: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    patience: int = 30
    val_fraction: float = 0.1
    init: str = "he"  # "keep" trains the weights the model already holds

    def __post_init__(self):
        for name in ("batch_size", "epochs", "lr", "lr_theta", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.val_fraction <= 0.5:
            raise ValueError("val_fraction must lie in (0, 0.5]")
        if self.init not in ("he", "keep"):
            raise ValueError(f"unknown init {self.init!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, size_or_shape, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(size_or_shape)
        self.v = np.zeros(size_or_shape)
        self.t = 0
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad**2
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class History:
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_mse: float = float("inf")

    def to_dict(self) -> dict:
        return asdict(self)


def split_indices(n: int, val_fraction: float, rng: np.random.Generator):
    perm = rng.permutation(n)
    n_val = max(1, int(round(val_fraction * n))) if n > 1 else 0
    return perm[n_val:], perm[:n_val]


def batched_predict(model: NetworkModel, x, batch: int = 2048) -> np.ndarray:
    return np.concatenate([model.forward(x[i : i + batch]) for i in range(0, len(x), batch)]) if len(x) else np.zeros(0)


def train(model: NetworkModel, features, labels, cfg: TrainConfig) -> tuple[NetworkModel, History]:
    """Adam on MSE with early stopping; returns the best-validation weights.

    With ``init="he"`` the weights are initialised from ``cfg.seed`` unless the
    model already has non-zero weights; ``init="keep"`` leaves them as given.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    if len(x) == 0:
        raise ValueError("empty dataset")
    if len(x) != len(y):
        raise ValueError("features and labels differ in length")
    rng = np.random.default_rng(cfg.seed)
    if cfg.init == "he" and not np.any(model.weights):
        model.init_weights(rng)
    tr, va = split_indices(len(x), cfg.val_fraction, rng)
    if len(va) == 0:
        va = tr
    opt = Adam(model.n_params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    hist = History()
    best_w, stale = model.weights.copy(), 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(tr)
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            loss, grad, _ = model.gradients(x[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {i // cfg.batch_size}")
            model.weights = opt.step(model.weights, grad)
            total += loss * len(idx)
        val = float(np.mean((batched_predict(model, x[va]) - y[va]) ** 2))
        if not np.isfinite(val):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        hist.train_mse.append(total / len(tr))
        hist.val_mse.append(val)
        if val < hist.best_val_mse:
            hist.best_val_mse, hist.best_epoch = val, epoch
            best_w, stale = model.weights.copy(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.weights = best_w
    log.info("trained %d epochs, best val mse %.3e at epoch %d", len(hist.val_mse), hist.best_val_mse, hist.best_epoch)
    return model, hist


@dataclass
class Metrics:
    mse: float
    residuals: np.ndarray
    predictions: np.ndarray
    labels: np.ndarray

    def summary(self) -> dict:
        r = self.residuals
        return {
            "mse": self.mse,
            "n": int(len(r)),
            "mean_residual": float(r.mean()),
            "max_abs_residual": float(np.abs(r).max()),
            "residual_quantiles": {q: float(np.quantile(r, float(q))) for q in ("0.05", "0.5", "0.95")},
        }


def evaluate(predict, features, labels) -> Metrics:
    """MSE of ``predict`` on a dataset.

    ``predict`` is a NetworkModel (features are real vectors), anything with a
    ``predict`` method such as a HybridModel (features are density matrices),
    or a plain callable on the whole feature batch.
    """
    y = np.asarray(labels, dtype=float)
    if len(y) == 0:
        raise ValueError("empty dataset")
    if isinstance(predict, NetworkModel):
        pred = batched_predict(predict, np.asarray(features, dtype=float))
    else:
        fn = getattr(predict, "predict", predict)
        pred = np.asarray(fn(np.asarray(features)), dtype=float)
    if pred.shape != y.shape:
        raise ValueError(f"{len(pred)} predictions for {len(y)} labels")
    r = pred - y
    return Metrics(float(np.mean(r**2)), r, pred, y)
