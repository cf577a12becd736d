"""Command line entry point.

    entanglib gen-dataset --config cfg.json [--seed S] [--out DIR] [--scale F]
    entanglib train --config cfg.json --train DIR/train.jsonl [--out DIR]
    entanglib evaluate --checkpoint DIR/checkpoint.json --test DIR/test.jsonl [--out DIR]
    entanglib reproduce {table2,table3,table4,table5} [--config cfg.json] [--scale F] [--out DIR]

Exit codes: 0 success, 2 configuration or input error, 3 runtime failure
(non-finite loss, failed study checks).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..ml import TrainingError
from ..qcore import StateError
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, ExperimentConfig, load_config
from .datasets import DatasetError, file_digest, generate_states, make_dataset, read_dataset, write_dataset
from .experiments import STUDIES, TrainedModel, evaluate_model, reproduce, save_model, train_model, write_scatter

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("entanglib")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "scale", None) is not None:
        changes["scale"] = args.scale
    if getattr(args, "out", None) is not None:
        changes["out"] = args.out
    return cfg.replace(**changes) if changes else cfg


def cmd_gen_dataset(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out)
    splits = ["train", "test"] + (["isotropic"] if cfg.task == "ree" and cfg.ree.n_isotropic else [])
    for split in splits:
        states = generate_states(cfg, split)
        if len(states) == 0:
            raise DatasetError(f"no states generated for {split}")
        ds = make_dataset(cfg, states, split)
        path = out / f"{split}.jsonl"
        write_dataset(path, ds)
        print(f"{split}: {len(ds)} records, {ds.features.shape[1]} features -> {path}")
        for line in states.report:
            print(f"  {line}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    ds = read_dataset(args.train)
    if len(ds) == 0:
        raise DatasetError(f"{args.train} holds no records")
    model = train_model(cfg, ds)
    out = Path(cfg.out)
    path = save_model(out / "checkpoint.json", model, cfg, file_digest(args.train))
    (out / "history.json").write_text(json.dumps(model.history.to_dict(), indent=2) + "\n")
    h = model.history
    print(f"trained {len(h.val_mse)} epochs, best val mse {h.best_val_mse:.6g} at epoch {h.best_epoch} -> {path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = TrainedModel.from_checkpoint(load_checkpoint(args.checkpoint))
    ds = read_dataset(args.test)
    metrics = evaluate_model(model, ds)
    out = Path(args.out or Path(args.checkpoint).parent)
    out.mkdir(parents=True, exist_ok=True)
    summary = dict(metrics.summary(), descriptor=ds.descriptor, dataset_digest=file_digest(args.test))
    (out / "metrics.json").write_text(json.dumps(summary, indent=2) + "\n")
    write_scatter(out / "scatter.csv", metrics.labels, metrics.predictions)
    print(f"mse {metrics.mse:.6g} on {len(ds)} records -> {out / 'metrics.json'}")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    cfg = _config(args)
    report = reproduce(args.study, cfg, args.out or cfg.out, n_seeds=args.seeds)
    print("\n".join(report.lines()))
    failed = [c for c in report.cells if c.status != "ok"]
    return EXIT_OK if report.passed and not failed else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="entanglib", description="Learn entanglement measures from measurement data.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON experiment config")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--scale", type=float, help="dataset size factor in (0, 1]")

    sp = sub.add_parser("gen-dataset", help="sample, label and featurise train/test states")
    common(sp)
    sp.set_defaults(func=cmd_gen_dataset)

    sp = sub.add_parser("train", help="fit a model to a training dataset")
    common(sp)
    sp.add_argument("--train", required=True, help="training dataset (.jsonl)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="score a checkpoint on a test dataset")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("reproduce", help="run one of the comparison studies end to end")
    sp.add_argument("study", choices=STUDIES)
    common(sp, config_required=False)
    sp.add_argument("--seeds", type=int, default=3, help="training seeds per cell where the study takes a median")
    sp.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DatasetError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, StateError, FloatingPointError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
