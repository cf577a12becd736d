"""Joint training of local measurement parameters and a regressor.

The forward map is rho -> p(ab|xy; theta) -> network -> prediction. The
theta-gradient is the network's input gradient pulled back through the
analytic correlation Jacobian.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..measurements import (
    MeasurementParams,
    check_correlation_array,
    correlation_vjp,
    grid_layout,
    params_correlations,
)
from .network import NetworkModel, fnn_build
from .train import Adam, History, TrainConfig, TrainingError, split_indices

log = logging.getLogger(__name__)

LAYOUTS = ("flat", "grid")


def correlation_features(p: np.ndarray, layout: str = "flat") -> np.ndarray:
    """(S, N, N, d, d) probabilities -> (S, F) network inputs."""
    if layout == "grid":
        return grid_layout(p).reshape(len(p), -1)
    return p.reshape(len(p), -1)


def _features_cotangent(g: np.ndarray, shape, layout: str) -> np.ndarray:
    n, _, d, _ = shape
    g = g.reshape(len(g), -1)
    if layout == "grid":
        return np.moveaxis(g.reshape(len(g), n, d, n, d), 2, 3)
    return g.reshape((len(g),) + tuple(shape))


@dataclass
class HybridModel:
    params: MeasurementParams
    network: NetworkModel
    layout: str = "flat"

    def features(self, rhos: np.ndarray) -> np.ndarray:
        return correlation_features(params_correlations(rhos, self.params), self.layout)

    def predict(self, rhos: np.ndarray, batch: int = 1024) -> np.ndarray:
        out = [self.network.forward(self.features(rhos[i : i + batch])) for i in range(0, len(rhos), batch)]
        return np.concatenate(out) if out else np.zeros(0)

    def copy(self) -> "HybridModel":
        p = self.params
        return HybridModel(MeasurementParams(p.theta.copy(), p.n_settings, p.dim, p.tied), self.network.copy(), self.layout)


def hybrid_loss_and_grad(model: HybridModel, rhos: np.ndarray, labels: np.ndarray):
    """(mse, d/d network weights, d/d theta) on one batch of states."""
    p = params_correlations(rhos, model.params)
    loss, g_w, g_x = model.network.gradients(correlation_features(p, model.layout), labels)
    cot = _features_cotangent(g_x, p.shape[1:], model.layout)
    g_theta = correlation_vjp(rhos, model.params, cot[None])[0]
    return loss, g_w, g_theta


@dataclass
class HybridState:
    model: HybridModel
    epoch: int = 0
    best_val_mse: float = float("inf")
    history: History = field(default_factory=History)


def _check_epoch(model: HybridModel, rhos: np.ndarray) -> np.ndarray:
    model.params.devices()  # raises if any device is not orthonormal
    p = params_correlations(rhos, model.params)
    check_correlation_array(p)
    return correlation_features(p, model.layout)


def hybrid_train(
    rhos,
    labels,
    n_settings: int,
    dim: int,
    cfg: TrainConfig,
    network: NetworkModel | None = None,
    init: str = "zeros",
    tied: bool = False,
    layout: str = "flat",
) -> tuple[HybridState, History]:
    """Train theta and network weights together with Adam on the MSE.

    ``rhos`` is an (S, d^2, d^2) array or a list of DensityMatrix. Features
    are regenerated from the current theta for every minibatch, and the
    validation features once per epoch; the returned state holds the best
    validation snapshot.
    """
    if n_settings < 1:
        raise ValueError("n_settings must be >= 1")
    if layout not in LAYOUTS:
        raise ValueError(f"layout must be one of {LAYOUTS}")
    rhos = np.asarray([getattr(r, "matrix", r) for r in rhos], dtype=complex)
    y = np.asarray(labels, dtype=float)
    if len(rhos) == 0 or len(rhos) != len(y):
        raise ValueError("need a nonempty set of states with one label each")
    if not np.all(np.isfinite(y)):
        raise ValueError("labels must be finite")

    if init == "zeros":
        params = MeasurementParams.zeros(n_settings, dim, tied)
    elif init == "cglmp":
        params = MeasurementParams.cglmp(n_settings, dim, tied)
    else:
        raise ValueError(f"unknown theta initialisation {init!r}")
    n_feat = n_settings**2 * dim**2
    net = network if network is not None else fnn_build(n_feat)
    if net.input_dim != n_feat:
        raise ValueError(f"network takes {net.input_dim} inputs, correlations have {n_feat}")
    rng = np.random.default_rng(cfg.seed)
    if cfg.init == "he" and not np.any(net.weights):
        net.init_weights(rng)
    model = HybridModel(params, net, layout)

    tr, va = split_indices(len(y), cfg.val_fraction, rng)
    if len(va) == 0:
        va = tr
    opt_w = Adam(net.n_params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    opt_t = Adam(params.theta.shape, cfg.lr_theta, cfg.beta1, cfg.beta2, cfg.adam_eps)
    state = HybridState(model.copy())
    hist = state.history
    stale = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(tr)
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            loss, g_w, g_t = hybrid_loss_and_grad(model, rhos[idx], y[idx])
            if not (np.isfinite(loss) and np.all(np.isfinite(g_t))):
                raise TrainingError(f"non-finite loss or theta gradient at epoch {epoch}, batch {i // cfg.batch_size}")
            net.weights = opt_w.step(net.weights, g_w)
            params.theta = opt_t.step(params.theta, g_t)
            total += loss * len(idx)
        feats = _check_epoch(model, rhos[va])
        val = float(np.mean((net.forward(feats) - y[va]) ** 2))
        if not np.isfinite(val):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        hist.train_mse.append(total / len(tr))
        hist.val_mse.append(val)
        if val < hist.best_val_mse:
            hist.best_val_mse, hist.best_epoch = val, epoch
            state.model, state.best_val_mse, stale = model.copy(), val, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
        state.epoch = epoch + 1
    log.info("hybrid: %d epochs, best val mse %.3e at epoch %d", len(hist.val_mse), hist.best_val_mse, hist.best_epoch)
    return state, hist
