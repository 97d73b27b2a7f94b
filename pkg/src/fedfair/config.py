"""Experiment configuration: parse, validate, materialize defaults.

Config files are JSON. Unknown keys are errors, every default is written
back out on serialization (the manifest never hides a knob), and
parse -> serialize -> parse is the identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .data import DataSchema, SchemaError
from .federation import FederationConfig
from .privacy import PrivacyConfig, PrivacyConfigError
from .trainer import FairnessConfig


class ConfigError(ValueError):
    """Configuration file is malformed or violates an invariant."""


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


@dataclass(frozen=True)
class TrainingConfig:
    lr_theta: float = 0.01
    batch_size: int = 64
    eval_fraction: float = 0.2

    def __post_init__(self):
        if self.lr_theta <= 0:
            raise ConfigError(f"TrainingConfig.lr_theta: must be > 0, got {self.lr_theta}")
        if self.batch_size < 1:
            raise ConfigError(f"TrainingConfig.batch_size: must be >= 1, got {self.batch_size}")
        if not (0.0 < self.eval_fraction < 1.0):
            raise ConfigError(
                f"TrainingConfig.eval_fraction: must be in (0, 1), got {self.eval_fraction}"
            )


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run depends on, seed included."""

    csv_path: str
    schema: DataSchema
    seed: int = 0
    hidden_dims: tuple[int, ...] = (100, 100, 100)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    federation: FederationConfig = field(default_factory=FederationConfig)
    fairness: FairnessConfig = field(default_factory=FairnessConfig)
    privacy: PrivacyConfig = field(default_factory=PrivacyConfig)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "data": {"csv": self.csv_path, "schema": self.schema.to_dict()},
            "model": {"hidden_dims": list(self.hidden_dims)},
            "training": {
                "lr_theta": self.training.lr_theta,
                "batch_size": self.training.batch_size,
                "eval_fraction": self.training.eval_fraction,
            },
            "federation": {
                "n_clients": self.federation.n_clients,
                "clients_per_round": self.federation.clients_per_round,
                "rounds": self.federation.rounds,
                "fair_epochs": self.federation.fair_epochs,
                "private_epochs": self.federation.private_epochs,
                "aggregation": self.federation.aggregation,
                "weighted": self.federation.weighted,
            },
            "fairness": {
                "constraints": list(self.fairness.constraints),
                "mu_demp": self.fairness.mu_demp,
                "mu_eo": self.fairness.mu_eo,
                "mu_di": self.fairness.mu_di,
                "lambda_max": self.fairness.lambda_max,
                "eta_lambda": self.fairness.eta_lambda,
                "aggregation": self.fairness.aggregation,
                "eps_div": self.fairness.eps_div,
            },
            "privacy": self.privacy.to_dict(),
        }

    def with_privacy(self, privacy: PrivacyConfig) -> "ExperimentConfig":
        return ExperimentConfig(
            csv_path=self.csv_path,
            schema=self.schema,
            seed=self.seed,
            hidden_dims=self.hidden_dims,
            training=self.training,
            federation=self.federation,
            fairness=self.fairness,
            privacy=privacy,
        )

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return ExperimentConfig(
            csv_path=self.csv_path,
            schema=self.schema,
            seed=seed,
            hidden_dims=self.hidden_dims,
            training=self.training,
            federation=self.federation,
            fairness=self.fairness,
            privacy=self.privacy,
        )


def config_from_dict(raw: dict, base_dir: Optional[Path] = None) -> ExperimentConfig:
    _check_keys(
        raw,
        {"seed", "data", "model", "training", "federation", "fairness", "privacy"},
        "config",
    )
    if "data" not in raw:
        raise ConfigError("config: missing required section 'data'")
    data = raw["data"]
    _check_keys(data, {"csv", "schema"}, "data")
    if "csv" not in data or "schema" not in data:
        raise ConfigError("data: both 'csv' and 'schema' are required")
    try:
        schema = DataSchema.from_dict(data["schema"])
    except SchemaError as exc:
        raise ConfigError(f"data.schema: {exc}")

    csv_path = data["csv"]
    if base_dir is not None and not Path(csv_path).is_absolute():
        csv_path = str((base_dir / csv_path).resolve())

    model = raw.get("model", {})
    _check_keys(model, {"hidden_dims"}, "model")
    hidden = tuple(model.get("hidden_dims", (100, 100, 100)))
    if len(hidden) < 1 or any(h < 1 for h in hidden):
        raise ConfigError(f"model.hidden_dims: need positive widths, got {list(hidden)}")

    training_raw = raw.get("training", {})
    _check_keys(training_raw, {"lr_theta", "batch_size", "eval_fraction"}, "training")
    training = TrainingConfig(**training_raw)

    fed_raw = raw.get("federation", {})
    _check_keys(
        fed_raw,
        {
            "n_clients",
            "clients_per_round",
            "rounds",
            "fair_epochs",
            "private_epochs",
            "aggregation",
            "weighted",
        },
        "federation",
    )
    try:
        federation = FederationConfig(**fed_raw)
    except ValueError as exc:
        raise ConfigError(str(exc))

    fair_raw = dict(raw.get("fairness", {}))
    _check_keys(
        fair_raw,
        {
            "constraints",
            "mu_demp",
            "mu_eo",
            "mu_di",
            "lambda_max",
            "eta_lambda",
            "aggregation",
            "eps_div",
        },
        "fairness",
    )
    if "constraints" in fair_raw:
        fair_raw["constraints"] = tuple(fair_raw["constraints"])
    try:
        fairness = FairnessConfig(**fair_raw)
    except ValueError as exc:
        raise ConfigError(str(exc))

    priv_raw = raw.get("privacy", {})
    _check_keys(
        priv_raw,
        {"enabled", "epsilon", "delta", "clip_bound", "sigma", "sensitivity"},
        "privacy",
    )
    try:
        privacy = PrivacyConfig(**priv_raw)
    except PrivacyConfigError as exc:
        raise ConfigError(str(exc))

    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError(f"seed: must be an integer, got {seed!r}")

    if schema.n_groups != 2:
        raise ConfigError(
            "data.schema: runs require exactly 2 sensitive groups "
            f"(got {schema.n_groups}); the metrics CSV schema is two-group"
        )

    return ExperimentConfig(
        csv_path=csv_path,
        schema=schema,
        seed=seed,
        hidden_dims=hidden,
        training=training,
        federation=federation,
        fairness=fairness,
        privacy=privacy,
    )


def parse_config(path) -> ExperimentConfig:
    """Read, validate, and fully materialize a JSON config file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    cfg = config_from_dict(raw, base_dir=path.parent)
    if not Path(cfg.csv_path).exists():
        raise ConfigError(f"data.csv: file not found: {cfg.csv_path}")
    return cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical JSON with every default materialized."""
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
