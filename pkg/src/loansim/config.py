"""Declarative experiment configuration with YAML round-trip.

One file describes the whole experiment grid; CLI flags override single
keys. All randomness derives from the one root seed via named substreams.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields

import yaml

from .evaluation import (ORIGIN_ACCURACY, ORIGIN_FIXED, ORIGIN_SOCIAL_COST,
                         ThresholdPolicy)
from .learners import (GBDT, RANDOM_FOREST, EnsembleParams, gbdt_params,
                       random_forest_params)

OUT_ROOT_ENV = "LOANSIM_OUT"

_KIND_ALIASES = {"rf": RANDOM_FOREST, "random_forest": RANDOM_FOREST,
                 "gbdt": GBDT}


class ConfigError(ValueError):
    pass


@dataclass
class PreprocessSpec:
    drop_top_null_columns: int = 0
    drop_null_rows: bool = True
    correlation_top_m: int | None = None
    correlation_pair_threshold: float = 0.85
    target_majority_share: float | None = None


@dataclass
class DatasetSpec:
    path: str | None = None
    label_column: str | None = None
    positive_means_default: bool = True
    cache: str | None = None
    preprocess: PreprocessSpec = field(default_factory=PreprocessSpec)

    def validate(self) -> None:
        if self.path is None and self.cache is None:
            raise ConfigError("dataset needs a raw 'path' or a 'cache' file")
        if self.path is not None and self.label_column is None:
            raise ConfigError("a raw dataset path needs 'label_column'")


@dataclass
class LearnerSpec:
    kind: str = "rf"
    n_trees: int | None = None
    max_depth: int | None = None
    min_samples_leaf: int | None = None
    feature_subsample: str | int | None = None
    learning_rate: float | None = None
    bootstrap: bool | None = None

    def to_params(self, seed: int) -> EnsembleParams:
        kind = _KIND_ALIASES.get(self.kind)
        if kind is None:
            raise ConfigError(f"unknown model kind {self.kind!r} "
                              f"(expected rf or gbdt)")
        overrides = {f: getattr(self, f)
                     for f in ("n_trees", "max_depth", "min_samples_leaf",
                               "feature_subsample", "learning_rate", "bootstrap")
                     if getattr(self, f) is not None}
        if kind == RANDOM_FOREST:
            overrides.pop("learning_rate", None)
            return random_forest_params(seed=seed, **overrides)
        overrides.pop("bootstrap", None)
        return gbdt_params(seed=seed, **overrides)


@dataclass
class SweepSpec:
    grid_step: float = 0.0001
    costs: list[float] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    train_fraction: float = 0.8

    def validate(self) -> None:
        if any(c < 0 for c in self.costs):
            raise ConfigError("sweep costs must be non-negative")


@dataclass
class SimulateSpec:
    n0: int | str = "auto"
    n_prime: int | None = None
    iterations: int = 10
    thresholds: list = field(default_factory=lambda: ["acc"])
    refit_each_iteration: bool = True

    def validate(self) -> None:
        if isinstance(self.n0, str) and self.n0 != "auto":
            raise ConfigError(f"n0 must be an integer or 'auto', got {self.n0!r}")
        if self.iterations < 1:
            raise ConfigError("simulate.iterations must be >= 1")
        for spec in self.thresholds:
            parse_threshold_spec(spec)


@dataclass
class CalibrationSpec:
    k: int = 1000
    eval_fraction: float = 0.2
    repeats: int = 3
    window: int = 5
    slope_eps: float = 0.002


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs"
    dataset: DatasetSpec | None = None
    datasets: dict[str, DatasetSpec] = field(default_factory=dict)
    learner: LearnerSpec = field(default_factory=LearnerSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    simulate: SimulateSpec = field(default_factory=SimulateSpec)
    calibration: CalibrationSpec = field(default_factory=CalibrationSpec)

    def validate(self) -> None:
        self.sweep.validate()
        self.simulate.validate()
        if self.dataset is not None:
            self.dataset.validate()
        for spec in self.datasets.values():
            spec.validate()

    def select_dataset(self, name: str | None) -> tuple[str, DatasetSpec]:
        """Pick the dataset spec a command should operate on."""
        if name is not None:
            if name not in self.datasets:
                raise ConfigError(f"dataset {name!r} not defined; have "
                                  f"{sorted(self.datasets)}")
            return name, self.datasets[name]
        if self.dataset is not None:
            return "dataset", self.dataset
        if len(self.datasets) == 1:
            return next(iter(self.datasets.items()))
        raise ConfigError("config defines several datasets; pass --dataset <name>")

    def resolved_out_dir(self) -> str:
        """Output root; the environment variable overrides the config key."""
        return os.environ.get(OUT_ROOT_ENV, self.out_dir)


def parse_threshold_spec(spec) -> ThresholdPolicy:
    """'acc' | 'sc:<c>' | a float in [0, 1] -> ThresholdPolicy."""
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return ThresholdPolicy(origin=ORIGIN_FIXED, tau=float(spec))
    if isinstance(spec, str):
        text = spec.strip()
        if text == "acc":
            return ThresholdPolicy(origin=ORIGIN_ACCURACY)
        if text.startswith("sc:"):
            return ThresholdPolicy(origin=ORIGIN_SOCIAL_COST,
                                   cost=float(text[3:]))
        try:
            return ThresholdPolicy(origin=ORIGIN_FIXED, tau=float(text))
        except ValueError:
            pass
    raise ConfigError(f"cannot parse threshold spec {spec!r} "
                      f"(expected 'acc', 'sc:<c>' or a number)")


def _build(cls, payload: dict, context: str):
    known = {f.name for f in fields(cls)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown {context} keys: {sorted(unknown)}")
    return cls(**payload)


def config_from_dict(payload: dict) -> ExperimentConfig:
    payload = dict(payload or {})
    nested = {}
    if "dataset" in payload:
        nested["dataset"] = _dataset_from_dict(payload.pop("dataset"))
    if "datasets" in payload:
        nested["datasets"] = {name: _dataset_from_dict(spec)
                              for name, spec in payload.pop("datasets").items()}
    for key, cls in (("learner", LearnerSpec), ("sweep", SweepSpec),
                     ("simulate", SimulateSpec), ("calibration", CalibrationSpec)):
        if key in payload:
            nested[key] = _build(cls, payload.pop(key) or {}, key)
    cfg = _build(ExperimentConfig, {**payload, **nested}, "config")
    cfg.validate()
    return cfg


def _dataset_from_dict(payload: dict) -> DatasetSpec:
    payload = dict(payload or {})
    pre = payload.pop("preprocess", None)
    spec = _build(DatasetSpec, payload, "dataset")
    if pre is not None:
        spec.preprocess = _build(PreprocessSpec, pre, "preprocess")
    return spec


def config_to_dict(cfg: ExperimentConfig) -> dict:
    payload = asdict(cfg)
    if payload["dataset"] is None:
        del payload["dataset"]
    if not payload["datasets"]:
        del payload["datasets"]
    return payload


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        payload = yaml.safe_load(fh)
    if payload is None:
        payload = {}
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return config_from_dict(payload)


def save_config(cfg: ExperimentConfig, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=True,
                       default_flow_style=False)
