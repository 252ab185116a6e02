"""Experiment configuration: one YAML file holds every knob of a run.

Validation is exhaustive: all problems in a config are collected and reported
together before aborting, so a config can be fixed in one pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .context import DiscretizationConfig
from .data import SyntheticConfig
from .losses import SEMANTIC_TYPES, LossConfig
from .nn import BranchSpec, NetworkSpec
from .strategies import STRATEGY_KINDS, StrategyConfig, TrainConfig

__all__ = ["ConfigError", "NetworkConfig", "ExperimentConfig", "load_config"]

DEFAULT_ALPHA_GRID = tuple(range(1, 31))


class ConfigError(ValueError):
    """One or more problems in an experiment config; message lists them all."""

    def __init__(self, errors: list[str], source: str):
        self.errors = errors
        lines = "\n".join(f"  - {e}" for e in errors)
        super().__init__(f"{source}: {len(errors)} config problem(s):\n{lines}")


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyperparameters; input sizes come from the data at run time."""

    phone_filters: tuple[int, ...] = (32, 64, 96)
    phone_kernels: tuple[int, ...] = (24, 16, 8)
    watch_filters: tuple[int, ...] = (32, 64, 96)
    watch_kernels: tuple[int, ...] = (16, 8, 4)
    pool: int = 4
    branch_dense: int = 128
    context_dense: int = 8
    trunk_dense: int = 256
    dropout: float = 0.1

    def to_spec(self, phone_channels: int, phone_length: int, watch_channels: int,
                watch_length: int, context_size: int, classes: int) -> NetworkSpec:
        return NetworkSpec(
            phone=BranchSpec(phone_channels, phone_length, self.phone_filters,
                             self.phone_kernels, self.pool, self.branch_dense),
            watch=BranchSpec(watch_channels, watch_length, self.watch_filters,
                             self.watch_kernels, self.pool, self.branch_dense),
            context_size=context_size, classes=classes,
            context_dense=self.context_dense, trunk_dense=self.trunk_dense,
            dropout=self.dropout)


@dataclass
class ExperimentConfig:
    """Validated contents of one experiment YAML file."""

    rules: Path
    output_dir: Path
    strategies: list[StrategyConfig]
    fractions: list[float]
    repetitions: int
    seeds: list[int]
    fold_k: int = 1
    fold_seed: int = 0
    window_seconds: float = 4.0
    dataset_dir: Path | None = None
    synthetic: SyntheticConfig | None = None
    alpha_grid: tuple[int, ...] = DEFAULT_ALPHA_GRID
    network: NetworkConfig = field(default_factory=NetworkConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    discretization: DiscretizationConfig = field(default_factory=DiscretizationConfig)


_TOP_LEVEL_KEYS = {
    "rules", "output_dir", "window_seconds", "dataset", "strategies", "fractions",
    "fold_k", "fold_seed", "repetitions", "seeds", "alpha_grid", "network",
    "training", "discretization",
}

_SYNTHETIC_KEYS = {
    "users", "windows_per_user", "violation_rate", "noise", "seed", "window_seconds",
    "phone_channels", "watch_channels", "phone_rate", "watch_rate", "confusability",
    "unobserved_bias",
}

_NETWORK_KEYS = {
    "phone_filters", "phone_kernels", "watch_filters", "watch_kernels", "pool",
    "branch_dense", "context_dense", "trunk_dense", "dropout",
}

_TRAINING_KEYS = {"epochs", "batch_size", "patience", "learning_rate"}


def _parse_strategies(raw: Any, errors: list[str]) -> list[StrategyConfig]:
    strategies: list[StrategyConfig] = []
    if not isinstance(raw, list) or not raw:
        errors.append("strategies: must be a non-empty list")
        return strategies
    for i, entry in enumerate(raw):
        where = f"strategies[{i}]"
        if not isinstance(entry, Mapping) or "kind" not in entry:
            errors.append(f"{where}: each strategy needs a 'kind'")
            continue
        kind = entry["kind"]
        if kind not in STRATEGY_KINDS:
            errors.append(f"{where}: unknown kind {kind!r} "
                          f"(expected one of {', '.join(STRATEGY_KINDS)})")
            continue
        extra = set(entry) - {"kind", "semantic_type", "alpha"}
        if extra:
            errors.append(f"{where}: unknown key(s) {sorted(extra)}")
        loss = LossConfig()
        if kind == "semantic_loss":
            semantic_type = entry.get("semantic_type")
            if semantic_type not in SEMANTIC_TYPES or semantic_type == "none":
                errors.append(f"{where}: semantic_loss needs semantic_type, one of "
                              f"{', '.join(t for t in SEMANTIC_TYPES if t != 'none')}")
                continue
            alpha = entry.get("alpha", 0)
            try:
                loss = LossConfig(semantic_type, float(alpha))
            except (TypeError, ValueError) as exc:
                errors.append(f"{where}: {exc}")
                continue
        elif "semantic_type" in entry or "alpha" in entry:
            errors.append(f"{where}: semantic_type/alpha only apply to semantic_loss")
        try:
            strategies.append(StrategyConfig(kind, loss))
        except ValueError as exc:
            errors.append(f"{where}: {exc}")
    return strategies


def load_config(path: str | Path) -> ExperimentConfig:
    """Load and validate an experiment YAML file; raises ConfigError listing
    every problem found."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(["config file not found"], str(path)) from None
    except yaml.YAMLError as exc:
        raise ConfigError([f"not valid YAML: {exc}"], str(path)) from None
    if not isinstance(raw, Mapping):
        raise ConfigError(["top level must be a mapping"], str(path))

    errors: list[str] = []
    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        errors.append(f"unknown top-level key(s): {sorted(unknown)}")

    rules = Path(str(raw.get("rules", "")))
    if "rules" not in raw:
        errors.append("rules: required (path to the knowledge rule file)")
    elif not rules.is_file():
        errors.append(f"rules: file not found: {rules}")

    if "output_dir" not in raw:
        errors.append("output_dir: required")
    output_dir = Path(str(raw.get("output_dir", "out")))

    window_seconds = raw.get("window_seconds", 4.0)
    if not isinstance(window_seconds, (int, float)) or window_seconds <= 0:
        errors.append("window_seconds: must be a positive number")

    dataset = raw.get("dataset")
    dataset_dir = None
    synthetic = None
    if not isinstance(dataset, Mapping) or len(set(dataset) & {"directory", "synthetic"}) != 1:
        errors.append("dataset: must contain exactly one of 'directory' or 'synthetic'")
    elif "directory" in dataset:
        dataset_dir = Path(str(dataset["directory"]))
        if not dataset_dir.is_dir():
            errors.append(f"dataset.directory: not a directory: {dataset_dir}")
    else:
        syn = dataset["synthetic"]
        if not isinstance(syn, Mapping):
            errors.append("dataset.synthetic: must be a mapping")
        else:
            unknown = set(syn) - _SYNTHETIC_KEYS
            if unknown:
                errors.append(f"dataset.synthetic: unknown key(s) {sorted(unknown)}")
            else:
                try:
                    synthetic = SyntheticConfig(
                        window_seconds=float(window_seconds)
                        if isinstance(window_seconds, (int, float)) else 4.0,
                        **{k: syn[k] for k in syn if k != "window_seconds"})
                except (TypeError, ValueError) as exc:
                    errors.append(f"dataset.synthetic: {exc}")

    strategies = _parse_strategies(raw.get("strategies"), errors)
    needs_rules = any(s.kind != "baseline" for s in strategies)
    if needs_rules and "rules" not in raw:
        errors.append("rules: required for knowledge-based strategies "
                      f"({', '.join(s.kind for s in strategies if s.kind != 'baseline')})")

    fractions = raw.get("fractions", [1.0])
    if (not isinstance(fractions, list) or not fractions
            or not all(isinstance(f, (int, float)) and 0 < f <= 1 for f in fractions)):
        errors.append("fractions: must be a non-empty list of numbers in (0, 1]")
        fractions = [1.0]

    repetitions = raw.get("repetitions", 5)
    if not isinstance(repetitions, int) or repetitions < 1:
        errors.append("repetitions: must be a positive integer")
        repetitions = 1

    seeds = raw.get("seeds")
    if (not isinstance(seeds, list) or not seeds
            or not all(isinstance(s, int) for s in seeds)):
        errors.append("seeds: must be a non-empty list of integers")
        seeds = [0]
    elif len(seeds) < repetitions:
        errors.append(f"seeds: need at least one per repetition "
                      f"({len(seeds)} given, {repetitions} repetitions)")

    fold_k = raw.get("fold_k", 1)
    if not isinstance(fold_k, int) or fold_k < 1:
        errors.append("fold_k: must be a positive integer")
        fold_k = 1
    fold_seed = raw.get("fold_seed", 0)
    if not isinstance(fold_seed, int):
        errors.append("fold_seed: must be an integer")
        fold_seed = 0

    alpha_grid = raw.get("alpha_grid", list(DEFAULT_ALPHA_GRID))
    if (not isinstance(alpha_grid, list)
            or not all(isinstance(a, int) and a >= 0 for a in alpha_grid)):
        errors.append("alpha_grid: must be a list of non-negative integers")
        alpha_grid = list(DEFAULT_ALPHA_GRID)

    network = NetworkConfig()
    raw_net = raw.get("network", {})
    if not isinstance(raw_net, Mapping):
        errors.append("network: must be a mapping")
    else:
        unknown = set(raw_net) - _NETWORK_KEYS
        if unknown:
            errors.append(f"network: unknown key(s) {sorted(unknown)}")
        else:
            kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in raw_net.items()}
            try:
                network = NetworkConfig(**kwargs)
            except (TypeError, ValueError) as exc:
                errors.append(f"network: {exc}")

    training = TrainConfig()
    raw_train = raw.get("training", {})
    if not isinstance(raw_train, Mapping):
        errors.append("training: must be a mapping")
    else:
        unknown = set(raw_train) - _TRAINING_KEYS
        if unknown:
            errors.append(f"training: unknown key(s) {sorted(unknown)}")
        else:
            try:
                training = TrainConfig(**raw_train)
            except (TypeError, ValueError) as exc:
                errors.append(f"training: {exc}")

    discretization = DiscretizationConfig()
    raw_disc = raw.get("discretization", {})
    if not isinstance(raw_disc, Mapping):
        errors.append("discretization: must be a mapping")
    else:
        kwargs = dict(raw_disc)
        if "speed_thresholds" in kwargs:
            kwargs["speed_thresholds"] = tuple(kwargs["speed_thresholds"])
        try:
            discretization = DiscretizationConfig(**kwargs)
        except (TypeError, ValueError) as exc:
            errors.append(f"discretization: {exc}")

    if errors:
        raise ConfigError(errors, str(path))
    return ExperimentConfig(
        rules=rules, output_dir=output_dir, strategies=strategies,
        fractions=[float(f) for f in fractions], repetitions=repetitions,
        seeds=list(seeds), fold_k=fold_k, fold_seed=fold_seed,
        window_seconds=float(window_seconds), dataset_dir=dataset_dir,
        synthetic=synthetic, alpha_grid=tuple(alpha_grid), network=network,
        training=training, discretization=discretization)
