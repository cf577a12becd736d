"""Turning states into network inputs for each method."""

from __future__ import annotations

import numpy as np

from ..measurements import MeasurementParams, params_correlations, states_array
from ..ml.hybrid import correlation_features
from ..qcore import partial_trace_array
from .config import ExperimentConfig


def moment_parties(task: str) -> tuple[str, ...]:
    # coherent information: {mu(rho_A), mu(rho)}; REE: {mu(rho_A), mu(rho_B), mu(rho)}
    return ("A", "AB") if task == "coherent-info" else ("A", "B", "AB")


def _trace_powers(m: np.ndarray, orders) -> dict[int, np.ndarray]:
    w = np.clip(np.linalg.eigvalsh(m), 0.0, None)
    return {k: np.sum(w**k, axis=-1) for k in orders}


def moment_features(rhos: np.ndarray, d: int, orders, parties) -> np.ndarray:
    """(S, len(orders) * len(parties)); order-major, then the listed parties."""
    rhos = np.asarray(rhos)
    blocks = {
        "A": partial_trace_array(rhos, d, d, "A"),
        "B": partial_trace_array(rhos, d, d, "B"),
        "AB": rhos,
    }
    powers = {p: _trace_powers(blocks[p], orders) for p in parties}
    return np.stack([powers[p][k] for k in orders for p in parties], axis=1)


def density_features(rhos: np.ndarray) -> np.ndarray:
    """Real and imaginary parts of every entry, so states can be rebuilt exactly."""
    rhos = np.asarray(rhos)
    flat = rhos.reshape(len(rhos), -1)
    return np.concatenate([flat.real, flat.imag], axis=1)


def density_from_features(x: np.ndarray, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = d * d
    half = n * n
    if x.shape[1] != 2 * half:
        raise ValueError(f"density features for d={d} have length {2 * half}, got {x.shape[1]}")
    return (x[:, :half] + 1j * x[:, half:]).reshape(len(x), n, n)


def cglmp_features(rhos: np.ndarray, d: int, n_settings: int, layout: str = "flat") -> np.ndarray:
    p = params_correlations(np.asarray(rhos), MeasurementParams.cglmp(n_settings, d))
    return correlation_features(p, layout)


def descriptor(cfg: ExperimentConfig) -> str:
    if cfg.method == "moments":
        parties = ",".join(moment_parties(cfg.task))
        return f"moments:parties={parties}:m={','.join(map(str, cfg.moment_orders))}"
    if cfg.method == "correlation-fixed":
        return f"correlation-cglmp:N={cfg.n_settings}:layout={cfg.layout}"
    return "density-matrix"


def feature_length(cfg: ExperimentConfig) -> int:
    if cfg.method == "moments":
        return len(cfg.moment_orders) * len(moment_parties(cfg.task))
    if cfg.method == "correlation-fixed":
        return cfg.n_settings**2 * cfg.d**2
    return 2 * cfg.d**4


def build_features(cfg: ExperimentConfig, rhos) -> np.ndarray:
    rhos = states_array(rhos) if not isinstance(rhos, np.ndarray) else rhos
    if cfg.method == "moments":
        return moment_features(rhos, cfg.d, cfg.moment_orders, moment_parties(cfg.task))
    if cfg.method == "correlation-fixed":
        return cglmp_features(rhos, cfg.d, cfg.n_settings, cfg.layout)
    return density_features(rhos)
