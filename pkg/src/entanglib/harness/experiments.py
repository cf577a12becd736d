"""Training, evaluation and the table-reproduction studies."""

from __future__ import annotations

import csv
import json
import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..measurements import MeasurementParams
from ..ml import HybridModel, History, Metrics, NetworkModel, TrainingError, cnn_build, evaluate, fnn_build, hybrid_train, train
from ..ml.train import batched_predict
from .checkpoint import Checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig
from .datasets import Dataset, DatasetError, LabelledStates, check_descriptor, file_digest, generate_states, make_dataset, write_dataset
from .features import density_from_features

log = logging.getLogger(__name__)

STUDIES = ("table2", "table3", "table4", "table5")


def build_network(cfg: ExperimentConfig, n_features: int) -> NetworkModel:
    if cfg.network == "fnn":
        return fnn_build(n_features)
    side = cfg.n_settings * cfg.d
    return cnn_build(side, cfg.network.split("-")[1])


@dataclass
class TrainedModel:
    network: NetworkModel
    params: MeasurementParams | None
    layout: str
    history: History
    descriptor: str
    d: int

    def predict(self, ds: Dataset) -> np.ndarray:
        if ds.descriptor != self.descriptor:
            raise DatasetError(f"model takes {self.descriptor!r} features, dataset holds {ds.descriptor!r}")
        if self.params is None:
            if ds.features.shape[1] != self.network.input_dim:
                raise DatasetError("feature length does not match the network input")
            return batched_predict(self.network, ds.features)
        rhos = density_from_features(ds.features, self.d)
        return HybridModel(self.params, self.network, self.layout).predict(rhos)

    @classmethod
    def from_checkpoint(cls, ck: Checkpoint) -> "TrainedModel":
        m = ck.manifest
        hist = History(**m["history"]) if isinstance(m.get("history"), dict) else History()
        return cls(ck.network, ck.params, ck.layout, hist, m["descriptor"], m["d"])


def train_model(cfg: ExperimentConfig, ds: Dataset) -> TrainedModel:
    """Fit the configured method on a training dataset."""
    if len(ds) == 0:
        raise DatasetError("training dataset is empty")
    check_descriptor(ds, cfg)
    tc = cfg.train_config()
    if cfg.method == "correlation-learnable":
        n_feat = cfg.n_settings**2 * cfg.d**2
        net = build_network(cfg, n_feat)
        rhos = density_from_features(ds.features, cfg.d)
        state, hist = hybrid_train(rhos, ds.labels, cfg.n_settings, cfg.d, tc, network=net, init=cfg.theta_init, tied=cfg.tied, layout=cfg.layout)
        return TrainedModel(state.model.network, state.model.params, cfg.layout, hist, ds.descriptor, cfg.d)
    net, hist = train(build_network(cfg, ds.features.shape[1]), ds.features, ds.labels, tc)
    return TrainedModel(net, None, cfg.layout, hist, ds.descriptor, cfg.d)


def evaluate_model(model: TrainedModel, ds: Dataset) -> Metrics:
    if len(ds) == 0:
        raise DatasetError("test dataset is empty")
    return evaluate(lambda _: model.predict(ds), ds.features, ds.labels)


def save_model(path, model: TrainedModel, cfg: ExperimentConfig, dataset_digest: str | None = None) -> Path:
    return save_checkpoint(
        path,
        model.network,
        model.params,
        descriptor=model.descriptor,
        layout=model.layout,
        d=model.d,
        method=cfg.method,
        task=cfg.task,
        config_hash=cfg.digest(),
        seeds={"data": cfg.seed, "train": cfg.effective_train_seed},
        dataset_digest=dataset_digest,
        history=model.history.to_dict(),
    )


def write_scatter(path, labels, predictions) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["true", "predicted"])
        for t, p in zip(labels, predictions):
            w.writerow([repr(float(t)), repr(float(p))])


# ---- studies -------------------------------------------------------------


@dataclass
class Cell:
    name: str
    overrides: dict
    split: str = "test"
    seeds: tuple = (0,)  # offsets added to the training seed
    mses: list = field(default_factory=list)
    status: str = "pending"
    error: str | None = None
    seconds: float = 0.0

    @property
    def mse(self) -> float | None:
        return statistics.median(self.mses) if self.mses and self.status == "ok" else None


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def study_base(study: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    base = base or ExperimentConfig()
    if study == "table3":
        return base.replace(task="ree", d=2)
    return base.replace(task="coherent-info", d=3)


def study_cells(study: str, n_seeds: int = 3) -> list[Cell]:
    fixed = {"method": "correlation-fixed", "moment_orders": None}
    learn = {"method": "correlation-learnable", "moment_orders": None, "theta_init": "zeros"}
    mom = {"method": "moments", "n_settings": None, "network": "fnn", "layout": "flat"}
    if study in ("table2", "table3"):
        cells = [
            Cell("correlation N=2", dict(fixed, n_settings=2)),
            Cell("moments m=2", dict(mom, moment_orders=(2,))),
            Cell("moments m=2,3", dict(mom, moment_orders=(2, 3))),
        ]
        if study == "table3":
            cells += [Cell(c.name + " (isotropic)", c.overrides, split="isotropic") for c in cells]
        return cells
    if study == "table4":
        return [Cell(f"CGLMP N={n}", dict(fixed, n_settings=n)) for n in (2, 3, 4)]
    if study == "table5":
        seeds = tuple(range(n_seeds))
        return [Cell("CGLMP N=2", dict(fixed, n_settings=2), seeds=seeds)] + [
            Cell(f"learnable N={n}", dict(learn, n_settings=n), seeds=seeds) for n in (2, 3, 4)
        ]
    raise ConfigError(f"study must be one of {STUDIES}, got {study!r}")


def _ratio(a, b):
    return a / b if a is not None and b else None


def study_checks(study: str, cells: list[Cell]) -> list[Check]:
    m = {c.name: c.mse for c in cells}

    def check(name, cond, detail):
        ok = all(v is not None for v in cond[1])
        return Check(name, bool(ok and cond[0]()), detail if ok else "missing cell result")

    out = []
    if study == "table2":
        c, m2, m23 = m["correlation N=2"], m["moments m=2"], m["moments m=2,3"]
        out.append(check("moments m=2,3 < moments m=2 < correlation N=2", (lambda: m23 < m2 < c, [c, m2, m23]), f"{m23} < {m2} < {c}"))
        out.append(check("moments m=2 <= 0.5 x correlation N=2", (lambda: m2 <= 0.5 * c, [c, m2]), f"ratio {_ratio(m2, c)}"))
        out.append(check("moment MSEs within [1e-4, 2e-2]", (lambda: all(1e-4 <= v <= 2e-2 for v in (m2, m23)), [m2, m23]), f"{m2}, {m23}"))
    elif study == "table3":
        gen = [m["correlation N=2"], m["moments m=2"], m["moments m=2,3"]]
        out.append(check("every method reaches test MSE <= 2e-2", (lambda: max(gen) <= 2e-2, gen), f"{gen}"))
        out.append(
            check(
                "moment methods <= correlation N=2",
                (lambda: max(gen[1:]) <= gen[0], gen),
                f"m=2 {gen[1]}, m=2,3 {gen[2]}, correlation {gen[0]}",
            )
        )
    elif study == "table4":
        base = m["CGLMP N=2"]
        for n in (3, 4):
            v = m[f"CGLMP N={n}"]
            gain = None if v is None or base is None else (base - v) / base
            out.append(check(f"CGLMP N={n} improves on N=2 by < 35%", (lambda g=gain: g < 0.35, [gain]), f"relative gain {gain}"))
    elif study == "table5":
        f2, l2, l3, l4 = m["CGLMP N=2"], m["learnable N=2"], m["learnable N=3"], m["learnable N=4"]
        out.append(check("learnable N=3 <= 0.6 x CGLMP N=2", (lambda: l3 <= 0.6 * f2, [f2, l3]), f"ratio {_ratio(l3, f2)}"))
        out.append(check("learnable N=4 <= learnable N=2", (lambda: l4 <= l2, [l2, l4]), f"{l4} vs {l2}"))
    return out


@dataclass
class Report:
    study: str
    scale: float
    config_hash: str
    datasets: dict
    cells: list[Cell]
    checks: list[Check]
    seconds: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "study": self.study,
            "scale": self.scale,
            "config_hash": self.config_hash,
            "datasets": self.datasets,
            "cells": [
                {"name": c.name, "split": c.split, "status": c.status, "error": c.error, "mse": c.mse, "mse_per_seed": c.mses, "seconds": round(c.seconds, 1)}
                for c in self.cells
            ],
            "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks],
            "seconds": round(self.seconds, 1),
        }

    def lines(self) -> list[str]:
        out = [f"study {self.study} scale {self.scale} config {self.config_hash[:12]}"]
        for name, digest in sorted(self.datasets.items()):
            out.append(f"  dataset {name} sha256 {digest[:16]}")
        for c in self.cells:
            val = f"{c.mse:.5f}" if c.mse is not None else c.status.upper()
            seeds = f"  seeds {[round(v, 5) for v in c.mses]}" if len(c.seeds) > 1 and c.mses else ""
            out.append(f"  {c.name:<28} {c.split:<9} {val}{seeds}")
        for c in self.checks:
            out.append(f"  [{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
        return out


def reproduce(study: str, base: ExperimentConfig | None = None, out: str | Path | None = None, n_seeds: int = 3) -> Report:
    """Run every cell of a study; a failing cell is recorded and the rest continue."""
    t0 = time.time()
    cfg0 = study_base(study, base)
    cells = study_cells(study, n_seeds)
    out = Path(out or cfg0.out) / study
    splits = sorted({"train"} | {c.split for c in cells})
    states: dict[str, LabelledStates] = {s: generate_states(cfg0, s) for s in splits}
    for s in splits:
        for line in states[s].report:
            log.info("%s %s", s, line)
    digests = {}
    for cell in cells:
        t = time.time()
        try:
            cfg = cfg0.replace(**cell.overrides)
            tr = make_dataset(cfg, states["train"], "train")
            te = make_dataset(cfg, states[cell.split], cell.split)
            slug = cell.name.replace(" ", "_").replace("=", "").replace(",", "-").replace("(", "").replace(")", "")
            for split, ds in (("train", tr), (cell.split, te)):
                p = out / "data" / f"{slug.split('_isotropic')[0]}.{split}.jsonl"
                if not p.exists():
                    write_dataset(p, ds)
                digests[p.name] = file_digest(p)
            for k in cell.seeds:
                run = cfg.replace(train_seed=cfg.effective_train_seed + k)
                model = train_model(run, tr)
                metrics = evaluate_model(model, te)
                if not np.isfinite(metrics.mse):
                    raise TrainingError("non-finite test MSE")
                cell.mses.append(metrics.mse)
                write_scatter(out / "scatter" / f"{slug}.seed{k}.csv", metrics.labels, metrics.predictions)
                log.info("%s %s seed %d: mse %.5f", study, cell.name, k, metrics.mse)
            cell.status = "ok"
        except Exception as e:  # a failed cell must not sink the study
            log.exception("cell %s failed", cell.name)
            cell.status, cell.error = "failed", f"{type(e).__name__}: {e}"
        cell.seconds = time.time() - t
    report = Report(study, cfg0.scale, cfg0.digest(), digests, cells, study_checks(study, cells), time.time() - t0)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    (out / "report.txt").write_text("\n".join(report.lines()) + "\n")
    return report
