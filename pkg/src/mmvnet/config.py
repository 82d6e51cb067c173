"""Scenario, training and run configuration objects."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from typing import Any


class ConfigError(ValueError):
    """Raised when a configuration is inconsistent or incomplete."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


@dataclasses.dataclass
class SystemConfig:
    """Scenario scalars for one simulated downlink estimation setup.

    M / N are the transmit / receive antenna counts, T the pilot length
    per frame, L the number of jointly processed frames.  s_bar bounds the
    per-frame row sparsity, s_c the overlap between adjacent frames.
    L_e / L_c are the coarse / fine network depths.
    """

    M: int
    N: int
    T: int
    L: int
    s_bar: int
    s_c: int
    snr_db: float
    L_e: int
    L_c: int
    seed: int
    complex_pilot: bool = False
    normalize_pilot: bool = False

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        for name in ("M", "N", "T", "L", "s_bar", "s_c", "L_e", "L_c"):
            v = getattr(self, name)
            _require(isinstance(v, int) and v >= 1, f"{name} must be a positive integer, got {v!r}")
        _require(self.N < self.M, f"N ({self.N}) must be smaller than M ({self.M})")
        _require(self.T <= self.M, f"T ({self.T}) must not exceed M ({self.M})")
        _require(0 < self.s_c < self.s_bar <= self.M,
                 f"need 0 < s_c < s_bar <= M, got s_c={self.s_c}, s_bar={self.s_bar}, M={self.M}")
        _require(isinstance(self.seed, int), "seed must be an integer")
        snr = self.snr_db
        _require(isinstance(snr, (int, float)) and not math.isnan(snr),
                 f"snr_db must be a real number or +inf, got {snr!r}")

    # frequently used derived shapes
    @property
    def nl(self) -> int:
        return self.N * self.L

    @property
    def rows(self) -> int:
        """Row count of the real-lifted channel matrix."""
        return 2 * self.M

    @property
    def obs_rows(self) -> int:
        """Row count of the real-lifted observation matrix."""
        return 2 * self.T

    @property
    def noiseless(self) -> bool:
        return math.isinf(self.snr_db)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        if math.isinf(self.snr_db):
            d["snr_db"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SystemConfig":
        d = dict(d)
        if d.get("snr_db") in ("inf", "Infinity", None):
            d["snr_db"] = math.inf
        return _from_dict(cls, d)


@dataclasses.dataclass
class TrainConfig:
    """Hyperparameters for the layer-wise training schedule."""

    learning_rate: float = 5e-4
    momentum: float = 0.0
    batch_size: int = 32
    val_batch_size: int = 100
    train_count: int = 20000
    val_count: int = 5000
    test_count: int = 1000
    max_epochs_per_stage: int = 30
    early_stop_patience: int = 5
    seed: int = 0
    teacher_prior: bool = False

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        _require(self.learning_rate > 0, "learning_rate must be positive")
        _require(0.0 <= self.momentum < 1.0, "momentum must lie in [0, 1)")
        _require(self.batch_size >= 1, "batch_size must be >= 1")
        _require(self.train_count >= self.batch_size, "train_count must be >= batch_size")
        _require(self.val_count >= 1 and self.test_count >= 1, "val/test counts must be >= 1")
        _require(self.max_epochs_per_stage >= 1, "max_epochs_per_stage must be >= 1")
        _require(self.early_stop_patience >= 1, "early_stop_patience must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        return _from_dict(cls, d)


@dataclasses.dataclass
class SweepSpec:
    axis: str = "snr"
    values: list = dataclasses.field(default_factory=lambda: [5.0, 10.0, 15.0, 20.0, 25.0, 30.0])
    samples_per_cell: int = 200
    shared_checkpoints: bool = True

    def __post_init__(self) -> None:
        _require(self.axis in ("snr", "s_c", "T", "S"), f"unknown sweep axis {self.axis!r}")
        _require(len(self.values) >= 1, "sweep values must be non-empty")
        _require(self.samples_per_cell >= 1, "samples_per_cell must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SweepSpec":
        return _from_dict(cls, d)


SCHEMA_VERSION = 1

_DEFAULT_SCHEMES = ["C-F-BSS", "C-F-BFSJ", "BCD-MMV-baseline"]


@dataclasses.dataclass
class RunConfig:
    """Top-level configuration consumed by the command-line entry points."""

    system: SystemConfig
    train: TrainConfig
    schemes: list
    dataset_dir: str
    checkpoint_dir: str
    output_dir: str
    sweep: SweepSpec
    lam: float | None = None
    nmse_variant: str = "paper_unsquared"

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        version = d.get("schema_version")
        _require(version is not None, "missing config field: schema_version")
        _require(version == SCHEMA_VERSION,
                 f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        for field in ("system", "paths"):
            _require(field in d, f"missing config field: {field}")
        paths = d["paths"]
        for field in ("dataset_dir", "checkpoint_dir", "output_dir"):
            _require(field in paths, f"missing config field: paths.{field}")
        system = SystemConfig.from_dict(d["system"])
        train = TrainConfig.from_dict(d.get("train", {}))
        sweep = SweepSpec.from_dict(d.get("sweep", {}))
        schemes = list(d.get("schemes", _DEFAULT_SCHEMES))
        variant = d.get("nmse_variant", "paper_unsquared")
        _require(variant in ("paper_unsquared", "squared"),
                 f"nmse_variant must be 'paper_unsquared' or 'squared', got {variant!r}")
        return cls(
            system=system,
            train=train,
            schemes=schemes,
            dataset_dir=paths["dataset_dir"],
            checkpoint_dir=paths["checkpoint_dir"],
            output_dir=paths["output_dir"],
            sweep=sweep,
            lam=d.get("lambda"),
            nmse_variant=variant,
        )

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                d = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {path}: {exc}") from exc
        return cls.from_dict(d)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "system": self.system.to_dict(),
            "train": self.train.to_dict(),
            "schemes": list(self.schemes),
            "paths": {
                "dataset_dir": self.dataset_dir,
                "checkpoint_dir": self.checkpoint_dir,
                "output_dir": self.output_dir,
            },
            "sweep": self.sweep.to_dict(),
            "lambda": self.lam,
            "nmse_variant": self.nmse_variant,
        }


def _from_dict(cls, d: dict[str, Any]):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    _require(not unknown, f"unknown config fields for {cls.__name__}: {sorted(unknown)}")
    required = {f.name for f in dataclasses.fields(cls)
                if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING}
    missing = required - set(d)
    if missing:
        raise ConfigError(f"missing config field: {sorted(missing)[0]}")
    return cls(**d)


def config_hash(obj: Any) -> str:
    """Stable hex digest of a configuration-like object (dict or dataclass)."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        obj = obj.to_dict() if hasattr(obj, "to_dict") else dataclasses.asdict(obj)
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()
