"""The four classification strategies sharing one network core.

``baseline``
    Purely data-driven: cross-entropy training, plain forward at inference.
``semantic_loss``
    Trains with cross-entropy plus a weighted knowledge-consistency penalty
    (see :mod:`nesyhar.losses`); inference is a plain forward pass with no
    knowledge access at all, which is the whole point of the strategy.
``symbolic_features``
    Adds the binary consistency vector as an extra network input (concatenated
    with the branch features); the reasoner must run at inference too.
``context_refinement``
    Trains like the baseline; at inference, probabilities of
    context-inconsistent activities are zeroed and the rest renormalized.

Training follows a fixed protocol: Adam, shuffled mini-batches, a validation
loss evaluated after every epoch, and early stopping that restores the
parameters of the best validation epoch.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .context import DiscretizationConfig
from .data import EncodedDataset, EncodedSample
from .knowledge import ContextDimension, ContextVocabulary, KnowledgeModel
from .losses import LossConfig, combined_loss_batch
from .nn import AdamState, NetworkSpec, adam_step, backward, build_network, forward

log = logging.getLogger(__name__)

__all__ = [
    "STRATEGY_KINDS",
    "StrategyConfig",
    "TrainConfig",
    "TrainedModel",
    "TrainingDiverged",
    "EarlyStopping",
    "consistency_masks",
    "train",
    "refine",
    "predict",
    "predict_many",
    "save_model",
    "load_model",
]

STRATEGY_KINDS = ("baseline", "semantic_loss", "symbolic_features", "context_refinement")


class TrainingDiverged(RuntimeError):
    """The training loss became non-finite."""


@dataclass(frozen=True)
class StrategyConfig:
    """Which strategy to run and, for semantic_loss, its penalty configuration."""

    kind: str
    loss: LossConfig = LossConfig()

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"strategy kind must be one of {STRATEGY_KINDS}, "
                             f"got {self.kind!r}")
        if self.kind == "semantic_loss" and self.loss.semantic_type == "none":
            raise ValueError("semantic_loss strategy needs a semantic loss type")

    @property
    def needs_knowledge_for_training(self) -> bool:
        return self.kind in ("semantic_loss", "symbolic_features")

    @property
    def needs_knowledge_for_inference(self) -> bool:
        return self.kind in ("symbolic_features", "context_refinement")

    @property
    def training_loss(self) -> LossConfig:
        return self.loss if self.kind == "semantic_loss" else LossConfig()

    @property
    def uses_infusion(self) -> bool:
        return self.kind == "symbolic_features"

    @property
    def label(self) -> str:
        if self.kind == "semantic_loss":
            return f"semantic_loss[{self.loss.semantic_type},a={self.loss.alpha:g}]"
        return self.kind

    def training_signature(self) -> tuple:
        """Strategies with equal signatures train identical networks
        (baseline and context_refinement differ only at inference)."""
        loss = self.training_loss
        return (loss.semantic_type, loss.alpha, self.uses_infusion)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization protocol: epoch cap 200, batch size 32, patience 5.

    ``val_metric`` optionally replaces the default early-stopping signal (the
    training loss evaluated on the validation set); it receives the epoch
    number and current parameters and must return a value to minimize.
    """

    epochs: int = 200
    batch_size: int = 32
    patience: int = 5
    learning_rate: float = 1e-3
    val_metric: Callable[[int, dict], float] | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size and patience must be positive")


class EarlyStopping:
    """Track the best value seen; stop after `patience` non-improving updates."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.stale = 0

    def update(self, value: float) -> bool:
        """Record one epoch's value; returns True when it improved the best."""
        if value < self.best:
            self.best = value
            self.stale = 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


@dataclass
class TrainedModel:
    """A trained network plus everything needed to run it on new windows."""

    kind: str
    spec: NetworkSpec
    params: dict
    activities: tuple[str, ...]
    vocabulary: ContextVocabulary
    loss: LossConfig
    window_seconds: float | None = None
    discretization: DiscretizationConfig | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.spec.infusion != (self.kind == "symbolic_features"):
            raise ValueError("spec has an infusion input iff kind is symbolic_features")


def consistency_masks(knowledge: KnowledgeModel, dataset: EncodedDataset) -> np.ndarray:
    """Per-sample binary consistency vectors, with one reasoner call per
    distinct context state (states are discrete and few, and the reasoner is
    pure, so caching is sound)."""
    if knowledge.vocabulary != dataset.vocabulary:
        raise ValueError("dataset and knowledge model use different context vocabularies")
    cache: dict[bytes, np.ndarray] = {}
    masks = np.empty((len(dataset), knowledge.num_activities), dtype=np.float64)
    for i, row in enumerate(dataset.context):
        key = row.tobytes()
        vec = cache.get(key)
        if vec is None:
            state = dataset.vocabulary.decode_state(row)
            vec = knowledge.consistency_vector(state).astype(np.float64)
            cache[key] = vec
        masks[i] = vec
    return masks


def train(train_data: EncodedDataset, val_data: EncodedDataset, strategy: StrategyConfig,
          spec: NetworkSpec, seed: int, knowledge: KnowledgeModel | None = None,
          cfg: TrainConfig = TrainConfig(), window_seconds: float | None = None,
          discretization: DiscretizationConfig | None = None) -> TrainedModel:
    """Train one strategy; returns the parameters of the best validation epoch.

    train_data/val_data are the caller's split (the evaluation harness uses
    90/10). Baseline and context_refinement train with cross-entropy only;
    semantic_loss adds the configured penalty; symbolic_features feeds the
    consistency vector through the infusion input.
    """
    if len(train_data) == 0 or len(val_data) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if strategy.needs_knowledge_for_training and knowledge is None:
        raise ValueError(f"strategy {strategy.kind!r} needs a knowledge model for training")

    k = len(train_data.activities)
    counts = np.bincount(train_data.labels, minlength=k)
    if (counts == 0).any():
        missing = [train_data.activities[i] for i in np.flatnonzero(counts == 0)]
        warnings.warn(f"training split has no samples for: {', '.join(missing)}",
                      stacklevel=2)

    if strategy.uses_infusion:
        spec = replace(spec, infusion=True)
    loss_cfg = strategy.training_loss

    needs_masks = strategy.uses_infusion or (
        loss_cfg.semantic_type != "none" and loss_cfg.alpha > 0.0)
    train_masks = consistency_masks(knowledge, train_data) if needs_masks else None
    val_masks = consistency_masks(knowledge, val_data) if needs_masks else None
    train_infusion = train_masks if strategy.uses_infusion else None
    val_infusion = val_masks if strategy.uses_infusion else None

    params = build_network(spec, seed)
    opt_state = AdamState.fresh(params)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
    stopper = EarlyStopping(cfg.patience)
    best_params = {name: p.copy() for name, p in params.items()}
    best_epoch = 0
    n = len(train_data)
    steps = 0
    epoch = 0

    def validation_loss() -> float:
        probs, _ = forward(params, spec, val_data.phone, val_data.watch, val_data.context,
                           infusion=val_infusion, mode="infer")
        value, _ = combined_loss_batch(probs, val_data.labels, val_masks, loss_cfg)
        return value

    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            probs, trace = forward(
                params, spec, train_data.phone[idx], train_data.watch[idx],
                train_data.context[idx],
                infusion=None if train_infusion is None else train_infusion[idx],
                mode="train", rng=rng)
            value, grad_probs = combined_loss_batch(
                probs, train_data.labels[idx],
                None if train_masks is None else train_masks[idx], loss_cfg)
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss {value} at epoch {epoch}, step {steps}")
            grads = backward(trace, grad_probs)
            params, opt_state = adam_step(params, grads, opt_state, lr=cfg.learning_rate)
            steps += 1
        monitored = (cfg.val_metric(epoch, params) if cfg.val_metric is not None
                     else validation_loss())
        if stopper.update(monitored):
            best_params = {name: p.copy() for name, p in params.items()}
            best_epoch = epoch
        if stopper.should_stop:
            break

    return TrainedModel(
        kind=strategy.kind, spec=spec, params=best_params,
        activities=train_data.activities, vocabulary=train_data.vocabulary,
        loss=loss_cfg, window_seconds=window_seconds, discretization=discretization,
        meta={"epochs_run": epoch, "steps_run": steps, "best_epoch": best_epoch,
              "best_val_loss": stopper.best, "seed": seed},
    )


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def refine(probs: np.ndarray, consistent) -> tuple[np.ndarray, bool]:
    """Zero out context-inconsistent probabilities and renormalize.

    Returns (refined distribution, fallback flag). When no consistent activity
    exists or the consistent probability mass is zero, the input is returned
    unchanged and the fallback flag is set.
    """
    probs = np.asarray(probs, dtype=np.float64)
    mask = np.asarray(consistent, dtype=bool)
    mass = probs[mask].sum()
    if mass <= 0.0:
        return probs.copy(), True
    out = np.where(mask, probs, 0.0)
    return out / mass, False


def _forward_infer(model: TrainedModel, phone, watch, context, infusion=None):
    probs, _ = forward(model.params, model.spec, phone, watch, context,
                       infusion=infusion, mode="infer")
    return probs


def predict_many(model: TrainedModel, data: EncodedDataset,
                 knowledge: KnowledgeModel | None = None):
    """Classify every sample of a dataset.

    Returns (predicted indices, probability matrix, per-sample diagnostics).
    Baseline and semantic_loss models never touch the knowledge model; the
    other two kinds require it. Diagnostics carry the consistency vector (and,
    for context_refinement, the fallback flag) whenever the reasoner ran.
    """
    if model.kind in ("symbolic_features", "context_refinement") and knowledge is None:
        raise ValueError(f"{model.kind!r} models need a knowledge model at inference")

    diagnostics: list[dict] = [{} for _ in range(len(data))]
    if model.kind == "symbolic_features":
        masks = consistency_masks(knowledge, data)
        probs = _forward_infer(model, data.phone, data.watch, data.context, infusion=masks)
        for i in range(len(data)):
            diagnostics[i]["consistent"] = masks[i].astype(np.int64)
    elif model.kind == "context_refinement":
        masks = consistency_masks(knowledge, data)
        raw = _forward_infer(model, data.phone, data.watch, data.context)
        probs = np.empty_like(raw)
        for i in range(len(data)):
            probs[i], fallback = refine(raw[i], masks[i])
            diagnostics[i]["consistent"] = masks[i].astype(np.int64)
            diagnostics[i]["fallback"] = fallback
    else:
        probs = _forward_infer(model, data.phone, data.watch, data.context)

    return probs.argmax(axis=1), probs, diagnostics


def predict(model: TrainedModel, sample: EncodedSample,
            knowledge: KnowledgeModel | None = None):
    """Classify a single window; see :func:`predict_many`."""
    data = EncodedDataset(
        phone=sample.phone[None], watch=sample.watch[None], context=sample.context[None],
        labels=np.array([-1 if sample.label is None else sample.label]),
        users=("",), activities=model.activities, vocabulary=model.vocabulary)
    preds, probs, diagnostics = predict_many(model, data, knowledge)
    return int(preds[0]), probs[0], diagnostics[0]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CHECKPOINT_VERSION = 1


def _vocab_to_dict(vocab: ContextVocabulary) -> list[dict]:
    return [{"name": d.name, "values": list(d.values), "exclusive": d.exclusive}
            for d in vocab.dimensions]


def _vocab_from_dict(dims: list[dict]) -> ContextVocabulary:
    return ContextVocabulary(tuple(
        ContextDimension(d["name"], tuple(d["values"]), d["exclusive"]) for d in dims))


def save_model(model: TrainedModel, path: str | Path) -> Path:
    """Write a checkpoint (.npz); the parameter arrays round-trip bit-exactly."""
    path = Path(path)
    meta = {
        "version": _CHECKPOINT_VERSION,
        "kind": model.kind,
        "spec": model.spec.to_dict(),
        "activities": list(model.activities),
        "vocabulary": _vocab_to_dict(model.vocabulary),
        "loss": {"semantic_type": model.loss.semantic_type, "alpha": model.loss.alpha},
        "window_seconds": model.window_seconds,
        "discretization": None if model.discretization is None else {
            "speed_thresholds": list(model.discretization.speed_thresholds),
            "height_epsilon": model.discretization.height_epsilon,
            "place_map": dict(model.discretization.place_map),
            "place_location": dict(model.discretization.place_location),
            "weather_map": dict(model.discretization.weather_map),
        },
        "meta": model.meta,
    }
    arrays = {f"param:{name}": value for name, value in model.params.items()}
    np.savez(path, meta=json.dumps(meta, sort_keys=True), **arrays)
    return path if path.suffix == ".npz" else path.with_suffix(path.suffix + ".npz")


def load_model(path: str | Path) -> TrainedModel:
    """Load a checkpoint written by :func:`save_model`."""
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["meta"]))
        if meta.get("version") != _CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        params = {name[len("param:"):]: archive[name] for name in archive.files
                  if name.startswith("param:")}
    disc = None
    if meta["discretization"] is not None:
        d = meta["discretization"]
        disc = DiscretizationConfig(
            speed_thresholds=tuple(d["speed_thresholds"]),
            height_epsilon=d["height_epsilon"], place_map=d["place_map"],
            place_location=d["place_location"], weather_map=d["weather_map"])
    return TrainedModel(
        kind=meta["kind"],
        spec=NetworkSpec.from_dict(meta["spec"]),
        params=params,
        activities=tuple(meta["activities"]),
        vocabulary=_vocab_from_dict(meta["vocabulary"]),
        loss=LossConfig(meta["loss"]["semantic_type"], meta["loss"]["alpha"]),
        window_seconds=meta["window_seconds"],
        discretization=disc,
        meta=meta["meta"],
    )
