"""Experiment configuration: JSON files parsed into frozen dataclasses."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..ml import TrainConfig
from ..states import ENSEMBLES

TASKS = ("coherent-info", "ree")
METHODS = ("correlation-fixed", "correlation-learnable", "moments")
NETWORKS = ("fnn", "cnn-d5", "cnn-d8", "cnn-d10")
LAYOUTS = ("flat", "grid")


class ConfigError(ValueError):
    """The configuration is malformed or internally inconsistent."""


@dataclass(frozen=True)
class SamplingConfig:
    """Stratified sampling of coherent-information task states.

    ``upper`` of None means log2 d, the largest reachable value.
    """

    ensemble: str = "ginibre-rank-k"
    rank: int | None = None
    lower: float = -1.5
    upper: float | None = None
    bin_width: float = 0.1
    per_bin: int = 260
    per_bin_test: int = 65
    max_attempts_per_bin: int = 1_000_000

    def __post_init__(self):
        if self.ensemble not in ENSEMBLES:
            raise ConfigError(f"unknown ensemble {self.ensemble!r}")
        if self.per_bin < 1 or self.per_bin_test < 1 or self.bin_width <= 0:
            raise ConfigError("per_bin, per_bin_test and bin_width must be positive")


@dataclass(frozen=True)
class ReeTaskConfig:
    """Counts for the noisy maximally entangled family plus separable states."""

    n_family: int = 600
    n_separable: int = 100
    n_test_family: int = 60
    n_test_separable: int = 20
    n_isotropic: int = 11
    restarts: int = 5

    def __post_init__(self):
        if min(self.n_family, self.n_test_family) < 1 or min(self.n_separable, self.n_test_separable, self.n_isotropic) < 0:
            raise ConfigError("REE state counts must be positive")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "coherent-info"
    method: str = "correlation-fixed"
    d: int = 3
    n_settings: int | None = None
    moment_orders: tuple[int, ...] | None = None
    network: str = "fnn"
    layout: str = "flat"
    theta_init: str = "zeros"
    tied: bool = False
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    ree: ReeTaskConfig = field(default_factory=ReeTaskConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 7
    train_seed: int | None = None
    scale: float = 1.0
    out: str = "runs"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.d < 2:
            raise ConfigError("d must be >= 2")
        if self.seed < 0 or (self.train_seed is not None and self.train_seed < 0):
            raise ConfigError("seeds must be non-negative")
        if not 0 < self.scale <= 1:
            raise ConfigError(f"scale must lie in (0, 1], got {self.scale}")
        # unset method fields take their defaults; set but foreign ones are errors
        if self.method == "moments" and self.moment_orders is None:
            object.__setattr__(self, "moment_orders", (2,))
        if self.method != "moments" and self.n_settings is None:
            object.__setattr__(self, "n_settings", 2)
        if self.method == "moments":
            if self.n_settings is not None:
                raise ConfigError("n_settings only applies to correlation methods")
            if not self.moment_orders or any(int(m) != m or m < 2 for m in self.moment_orders):
                raise ConfigError("moments method needs moment_orders, integers >= 2")
            if len(set(self.moment_orders)) != len(self.moment_orders):
                raise ConfigError("moment_orders must be distinct")
            if self.network != "fnn" or self.layout != "flat":
                raise ConfigError("moment features feed the fnn with flat layout")
        else:
            if self.moment_orders is not None:
                raise ConfigError("moment_orders only applies to the moments method")
            if self.n_settings < 1:
                raise ConfigError("correlation methods need n_settings >= 1")
        if self.network not in NETWORKS:
            raise ConfigError(f"network must be one of {NETWORKS}")
        if self.layout not in LAYOUTS:
            raise ConfigError(f"layout must be one of {LAYOUTS}")
        if self.network != "fnn" and self.layout != "grid":
            raise ConfigError("cnn networks need the grid layout")
        if self.theta_init not in ("zeros", "cglmp"):
            raise ConfigError("theta_init must be 'zeros' or 'cglmp'")
        if self.tied and self.method != "correlation-learnable":
            raise ConfigError("tied only applies to correlation-learnable")

    @property
    def upper(self) -> float:
        return math.log2(self.d) if self.sampling.upper is None else self.sampling.upper

    @property
    def effective_train_seed(self) -> int:
        return self.seed if self.train_seed is None else self.train_seed

    def train_config(self) -> TrainConfig:
        return dataclasses.replace(self.train, seed=self.effective_train_seed)

    def scaled(self, n: int) -> int:
        return max(1, int(round(n * self.scale)))

    def replace(self, **changes) -> "ExperimentConfig":
        try:
            return dataclasses.replace(self, **changes)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["moment_orders"] is not None:
            d["moment_orders"] = list(d["moment_orders"])
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        raw = dict(raw)
        nested = {"sampling": SamplingConfig, "ree": ReeTaskConfig, "train": TrainConfig}
        try:
            for key, kind in nested.items():
                if key in raw:
                    sub = raw[key]
                    if not isinstance(sub, dict):
                        raise ConfigError(f"{key} must be an object")
                    raw[key] = kind(**sub)
            if raw.get("moment_orders") is not None:
                raw["moment_orders"] = tuple(raw["moment_orders"])
            return cls(**raw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None

    def digest(self) -> str:
        """sha256 of the canonical JSON form, excluding the output path."""
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    return ExperimentConfig.from_dict(raw)
