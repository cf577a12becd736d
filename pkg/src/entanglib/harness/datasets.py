"""Labelled state sets and the line-delimited dataset file format.

A dataset file starts with one header object, then one record per line::

    {"header": {"descriptor": ..., "dim_a": 3, "dim_b": 3, "feature_length": 36, ...}}
    {"features": [...], "label": 0.41, "meta": {"family": ..., "d": 3, "bin": 12, "seed": 7, "descriptor": ...}}

Floats are written with Python's shortest round-trip repr, so reading a
file back gives bit-identical arrays.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..measures import ReeConfig, coherent_information, ree_isotropic_analytic, ree_label
from ..states import (
    SamplerConfig,
    StratificationSpec,
    isotropic,
    noisy_me_family,
    rng_stream,
    sample_ginibre,
    sample_separable,
    stratified_sample,
)
from .config import ExperimentConfig
from .features import build_features, descriptor, feature_length

log = logging.getLogger(__name__)

FORMAT = "entanglib-dataset/1"
SPLITS = {"train": 0, "test": 1, "isotropic": 2}


class DatasetError(ValueError):
    """A dataset file is malformed or does not fit the requested use."""


@dataclass
class LabelledStates:
    """Density matrices with labels and per-state provenance."""

    rhos: np.ndarray  # (S, D, D) complex
    labels: np.ndarray
    meta: list[dict]
    report: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class Dataset:
    header: dict
    features: np.ndarray  # (S, F)
    labels: np.ndarray
    meta: list[dict]

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def descriptor(self) -> str:
        return self.header["descriptor"]


def _coherent_states(cfg: ExperimentConfig, split: str) -> LabelledStates:
    s = cfg.sampling
    per_bin = cfg.scaled(s.per_bin if split == "train" else s.per_bin_test)
    spec = StratificationSpec("coherent-information", s.lower, cfg.upper, s.bin_width, per_bin, s.max_attempts_per_bin)
    sampler = SamplerConfig(seed=cfg.seed, ensemble=s.ensemble, dim=cfg.d, rank=s.rank)
    res = stratified_sample(spec, sampler, coherent_information, stream=SPLITS[split])
    meta = [{"family": s.ensemble, "d": cfg.d, "bin": b, "seed": cfg.seed} for _, _, b in res.items]
    return LabelledStates(
        np.stack([r.matrix for r, _, _ in res.items]),
        np.array([v for _, v, _ in res.items]),
        meta,
        res.report_lines(),
    )


def _ree_states(cfg: ExperimentConfig, split: str) -> LabelledStates:
    r = cfg.ree
    d = cfg.d
    if split == "isotropic":
        eps = np.linspace(0.0, 1.0, r.n_isotropic)
        rhos = np.stack([isotropic(d, e).matrix for e in eps])
        meta = [{"family": "isotropic", "d": d, "bin": None, "seed": cfg.seed, "eps": float(e)} for e in eps]
        return LabelledStates(rhos, np.array([ree_isotropic_analytic(d, e) for e in eps]), meta)
    n_fam = cfg.scaled(r.n_family if split == "train" else r.n_test_family)
    n_sep = r.n_separable if split == "train" else r.n_test_separable
    n_sep = cfg.scaled(n_sep) if n_sep else 0
    rng = rng_stream(cfg.seed, SPLITS[split], 0)
    rhos, labels, meta = [], [], []
    for i in range(n_fam):
        eps = float(rng.uniform())
        rho = noisy_me_family(d, eps, sample_ginibre(SamplerConfig(dim=d), rng))
        labels.append(ree_label(rho, ReeConfig(restarts=r.restarts, seed=cfg.seed + i)))
        rhos.append(rho.matrix)
        meta.append({"family": "noisy-maximally-entangled", "d": d, "bin": None, "seed": cfg.seed, "eps": eps})
    rng = rng_stream(cfg.seed, SPLITS[split], 1)
    for _ in range(n_sep):
        rho = sample_separable(SamplerConfig(dim=d, ensemble="separable-mixture"), rng)
        labels.append(ree_label(rho))
        rhos.append(rho.matrix)
        meta.append({"family": "separable-mixture", "d": d, "bin": None, "seed": cfg.seed})
    return LabelledStates(np.stack(rhos), np.array(labels), meta)


def generate_states(cfg: ExperimentConfig, split: str = "train") -> LabelledStates:
    """Sample and label the states of one split; fully determined by ``cfg``."""
    if split not in SPLITS:
        raise ValueError(f"split must be one of {tuple(SPLITS)}")
    if cfg.task == "coherent-info":
        if split == "isotropic":
            raise ValueError("the isotropic split belongs to the REE task")
        return _coherent_states(cfg, split)
    return _ree_states(cfg, split)


def make_dataset(cfg: ExperimentConfig, states: LabelledStates, split: str = "train") -> Dataset:
    desc = descriptor(cfg)
    x = build_features(cfg, states.rhos)
    header = {
        "format": FORMAT,
        "descriptor": desc,
        "task": cfg.task,
        "split": split,
        "dim_a": cfg.d,
        "dim_b": cfg.d,
        "feature_length": int(x.shape[1]),
        "count": len(states),
        "config_hash": cfg.digest(),
    }
    meta = [dict(m, descriptor=desc) for m in states.meta]
    return Dataset(header, x, np.asarray(states.labels, dtype=float), meta)


def write_dataset(path, ds: Dataset) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        f.write(json.dumps({"header": ds.header}, sort_keys=True) + "\n")
        for x, y, m in zip(ds.features, ds.labels, ds.meta):
            rec = {"features": [float(v) for v in x], "label": float(y), "meta": m}
            f.write(json.dumps(rec, sort_keys=True, allow_nan=False) + "\n")


def read_dataset(path) -> Dataset:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise DatasetError(f"cannot read dataset {path}: {e}") from None
    if not lines:
        raise DatasetError(f"{path} is empty")
    try:
        header = json.loads(lines[0])["header"]
        records = [json.loads(line) for line in lines[1:] if line.strip()]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise DatasetError(f"{path} is not a dataset file: {e}") from None
    n = header.get("feature_length")
    for i, rec in enumerate(records):
        if len(rec["features"]) != n:
            raise DatasetError(f"record {i} has {len(rec['features'])} features, header says {n}")
        if not math.isfinite(rec["label"]):
            raise DatasetError(f"record {i} has a non-finite label")
    x = np.array([r["features"] for r in records], dtype=float).reshape(len(records), n)
    y = np.array([r["label"] for r in records], dtype=float)
    return Dataset(header, x, y, [r["meta"] for r in records])


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def check_descriptor(ds: Dataset, cfg: ExperimentConfig) -> None:
    want = descriptor(cfg)
    if ds.descriptor != want:
        raise DatasetError(f"dataset holds {ds.descriptor!r} features, config expects {want!r}")
    if ds.header.get("dim_a") != cfg.d:
        raise DatasetError(f"dataset is for d={ds.header.get('dim_a')}, config has d={cfg.d}")
    if ds.features.shape[1] != feature_length(cfg):
        raise DatasetError("feature length does not match the config")
