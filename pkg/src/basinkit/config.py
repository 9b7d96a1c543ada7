"""Experiment configuration: a YAML document with strict keys and explicit seeds."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .data import CsvSchema, SyntheticConfig
from .ensemble import DEFAULT_DELTA, DEFAULT_T_GRID
from .nn import Architecture
from .train import DEFAULT_GAMMA_GRID, OptimizerConfig, TrainConfig

PROFILES = ("desk", "full")


class ConfigError(ValueError):
    pass


@dataclass
class CsvDataset:
    path: str
    seed: int
    schema: dict = field(default_factory=dict)
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    held_out_sites: int | None = None

    def csv_schema(self) -> CsvSchema:
        return _build(CsvSchema, self.schema, "dataset.csv.schema")


@dataclass
class PretrainSettings:
    seed: int
    epochs: int = 60
    n_subjects: int = 3000


@dataclass
class TrainingSettings:
    seed: int
    n_models: int = 10
    epochs: int = 60
    batch_size: int = 32
    optimizer: dict = field(default_factory=dict)
    gamma: float = 0.5
    gamma_grid: tuple[float, ...] = DEFAULT_GAMMA_GRID
    tune_gamma: bool = True
    head_init_scale: float = 0.1
    pretrain: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_models < 1:
            raise ValueError(f"n_models must be >= 1, got {self.n_models}")
        if not self.gamma_grid or not all(0 < g < 1 for g in self.gamma_grid):
            raise ValueError(f"gamma_grid values must lie in (0, 1), got {list(self.gamma_grid)}")

    def train_config(self) -> TrainConfig:
        opt = _build(OptimizerConfig, self.optimizer, "training.optimizer")
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, optimizer=opt, gamma=self.gamma,
                           seed=self.seed, head_init_scale=self.head_init_scale)

    def pretrain_settings(self) -> PretrainSettings:
        return _build(PretrainSettings, self.pretrain, "training.pretrain")


@dataclass
class EnsembleSettings:
    seed: int
    t_grid: tuple[int, ...] = DEFAULT_T_GRID
    p: int = 1000
    delta: float = DEFAULT_DELTA
    replace: bool = True


@dataclass
class LandscapeSettings:
    seed: int
    n_lambda: int = 30
    pairs_per_scenario: int = 10
    partition: str = "test"

    def __post_init__(self):
        if self.partition not in ("test", "validation"):
            raise ConfigError(f"landscape.partition must be 'test' or 'validation', got {self.partition!r}")


@dataclass
class ExperimentConfig:
    task_id: str
    architecture: Architecture
    training: TrainingSettings
    ensemble: EnsembleSettings
    landscape: LandscapeSettings
    synthetic: SyntheticConfig | None = None
    csv: CsvDataset | None = None
    output_dir: str = "runs/desk"

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Every seed in the document replaced by ``seed``."""
        r = dataclasses.replace
        cfg = r(self, training=r(self.training, seed=seed,
                                  pretrain={**self.training.pretrain, "seed": seed}),
                ensemble=r(self.ensemble, seed=seed), landscape=r(self.landscape, seed=seed))
        if cfg.synthetic is not None:
            cfg = r(cfg, synthetic=r(cfg.synthetic, seed=seed))
        if cfg.csv is not None:
            cfg = r(cfg, csv=r(cfg.csv, seed=seed))
        return cfg

    def with_profile(self, profile: str) -> "ExperimentConfig":
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}, expected one of {PROFILES}")
        if profile == "desk":
            return self
        r = dataclasses.replace
        return r(self, training=r(self.training, epochs=200, n_models=90), ensemble=r(self.ensemble, p=100_000))


def _build(cls, raw, where):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(raw).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    required = {
        f.name for f in dataclasses.fields(cls)
        if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
    }
    if cls in (SyntheticConfig, PretrainSettings):
        required.add("seed")
    missing = sorted(required - set(raw))
    if missing:
        raise ConfigError(f"{where}: missing required key(s) {', '.join(missing)}")
    values = dict(raw)
    for key in ("t_grid", "gamma_grid", "ratios", "hidden_dims"):
        if key in values and isinstance(values[key], list):
            values[key] = tuple(values[key])
    try:
        return cls(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


TOP_KEYS = {"task_id", "dataset", "architecture", "training", "ensemble", "landscape", "output"}


def from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping at the top level")
    unknown = sorted(set(doc) - TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
    for key in ("dataset", "architecture", "training", "ensemble", "landscape"):
        if key not in doc:
            raise ConfigError(f"missing section {key!r}")
    dataset = doc["dataset"] or {}
    if not isinstance(dataset, dict) or len(dataset) != 1 or next(iter(dataset)) not in ("synthetic", "csv"):
        raise ConfigError("dataset must hold exactly one of 'synthetic' or 'csv'")
    synthetic = csv_ds = None
    if "synthetic" in dataset:
        synthetic = _build(SyntheticConfig, dataset["synthetic"], "dataset.synthetic")
    else:
        csv_ds = _build(CsvDataset, dataset["csv"], "dataset.csv")
        csv_ds.csv_schema()
    training = _build(TrainingSettings, doc["training"], "training")
    try:
        training.train_config()
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"training: {e}") from None
    training.pretrain_settings()
    output = doc.get("output") or {}
    if set(output) - {"dir"}:
        raise ConfigError(f"output: unknown key(s) {', '.join(sorted(set(output) - {'dir'}))}")
    return ExperimentConfig(
        task_id=str(doc.get("task_id", "synthetic")),
        architecture=_build(Architecture, doc["architecture"], "architecture"),
        training=training,
        ensemble=_build(EnsembleSettings, doc["ensemble"], "ensemble"),
        landscape=_build(LandscapeSettings, doc["landscape"], "landscape"),
        synthetic=synthetic,
        csv=csv_ds,
        output_dir=str(output.get("dir", "runs/desk")),
    )


def load_config(path) -> ExperimentConfig:
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from None
    return from_dict(doc)


def default_config_text() -> str:
    return resources.files("basinkit").joinpath("configs/desk.yaml").read_text(encoding="utf-8")


def default_config() -> ExperimentConfig:
    return from_dict(yaml.safe_load(default_config_text()))
