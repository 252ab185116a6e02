"""Leave-k-users-out evaluation: folds, metrics, the experiment grid, reports.

The harness trains every (strategy, training fraction, repetition, fold) cell
and records its confusion matrix on the fold's held-out users. Per repetition,
fold confusions are pooled and summarized as macro F1; aggregates report the
mean and a 95% confidence interval across repetitions (normal approximation,
mean +- 1.96 * s / sqrt(n)).

Conventions, stated once: confusion rows are true activities, columns are
predictions. A class with zero true and zero predicted instances contributes
F1 = 0 and is flagged. The 90/10 train/validation split is per-window within
the training users. Strategies whose training is identical (baseline and
context_refinement) share one trained network per cell.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .context import DiscretizationConfig
from .data import EncodedDataset, downsample_training
from .knowledge import KnowledgeModel
from .nn import NetworkSpec
from .strategies import StrategyConfig, TrainConfig, predict_many, train

log = logging.getLogger(__name__)

__all__ = [
    "Fold",
    "FoldPlan",
    "ExperimentCell",
    "ExperimentReport",
    "make_folds",
    "confusion_matrix",
    "per_class_f1",
    "macro_f1",
    "confidence_interval",
    "split_train_validation",
    "run_experiment",
    "grid_search_alpha",
    "write_report",
    "format_report_table",
]


@dataclass(frozen=True)
class Fold:
    test_users: tuple[str, ...]
    train_users: tuple[str, ...]


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[Fold, ...]
    k: int
    seed: int


def make_folds(users: Sequence[str], k: int, seed: int) -> FoldPlan:
    """Partition users into ceil(n/k) disjoint test groups of size k.

    Every user appears in exactly one test group (the last group may be
    smaller); the grouping is a seeded shuffle, deterministic per seed.
    """
    users = list(users)
    if k < 1:
        raise ValueError("fold size k must be >= 1")
    if k > len(users):
        raise ValueError(f"fold size k={k} exceeds the {len(users)} available users")
    order = list(users)
    np.random.default_rng(seed).shuffle(order)
    folds = []
    for start in range(0, len(order), k):
        test = tuple(sorted(order[start:start + k]))
        rest = tuple(sorted(u for u in order if u not in test))
        folds.append(Fold(test_users=test, train_users=rest))
    return FoldPlan(folds=tuple(folds), k=k, seed=seed)


def confusion_matrix(y_true, y_pred, k: int) -> np.ndarray:
    """k x k integer matrix; rows are true activities, columns predictions."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in length")
    matrix = np.zeros((k, k), dtype=np.int64)
    np.add.at(matrix, (y_true, y_pred), 1)
    return matrix


def per_class_f1(confusion: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-class F1 plus a flag mask for classes with zero support and zero
    predictions (their F1 is 0 by convention)."""
    confusion = np.asarray(confusion)
    if confusion.ndim != 2 or confusion.shape[0] != confusion.shape[1] or confusion.size == 0:
        raise ValueError(f"confusion matrix must be square and non-empty, "
                         f"got shape {confusion.shape}")
    diag = np.diag(confusion).astype(np.float64)
    true_totals = confusion.sum(axis=1)
    pred_totals = confusion.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(pred_totals > 0, diag / pred_totals, 0.0)
        recall = np.where(true_totals > 0, diag / true_totals, 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2.0 * precision * recall / np.where(pr > 0, pr, 1.0), 0.0)
    absent = (true_totals == 0) & (pred_totals == 0)
    return f1, absent


def macro_f1(confusion: np.ndarray) -> float:
    """Unweighted mean of per-class F1 scores."""
    f1, absent = per_class_f1(confusion)
    if absent.any():
        log.warning("macro F1 includes %d class(es) with zero support and zero "
                    "predictions, counted as 0", int(absent.sum()))
    return float(f1.mean())


def confidence_interval(values: Sequence[float], level: float = 0.95) -> tuple[float, float]:
    """Mean and half-width of the normal-approximation confidence interval.

    Uses mean +- z * (sample stddev / sqrt(n)) with z = 1.96 at the 95% level.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        raise ValueError("confidence interval needs at least 2 values")
    if level == 0.95:
        z = 1.96
    else:
        from statistics import NormalDist
        z = NormalDist().inv_cdf((1.0 + level) / 2.0)
    return float(values.mean()), float(z * values.std(ddof=1) / np.sqrt(values.size))


def split_train_validation(data: EncodedDataset, val_fraction: float,
                           seed: int) -> tuple[EncodedDataset, EncodedDataset]:
    """Per-window split of pooled training-user data (90/10 by default usage)."""
    n = len(data)
    n_val = max(1, int(round(val_fraction * n)))
    if n_val >= n:
        raise ValueError("validation split would consume the whole training set")
    perm = np.random.default_rng(seed).permutation(n)
    return data.subset(np.sort(perm[n_val:])), data.subset(np.sort(perm[:n_val]))


@dataclass(frozen=True)
class ExperimentCell:
    strategy: str
    fraction: float
    repetition: int
    fold: int
    confusion: np.ndarray | None
    alpha: float | None = None
    error: str | None = None

    @property
    def test_windows(self) -> int:
        return 0 if self.confusion is None else int(self.confusion.sum())


@dataclass
class ExperimentReport:
    activities: tuple[str, ...]
    fractions: tuple[float, ...]
    strategies: tuple[str, ...]
    repetitions: int
    cells: list[ExperimentCell] = field(default_factory=list)
    rep_scores: dict = field(default_factory=dict)   # (strategy, fraction) -> list[float]

    def aggregate(self, strategy: str, fraction: float) -> tuple[float, float]:
        return confidence_interval(self.rep_scores[(strategy, fraction)])

    def mean_f1(self, strategy: str, fraction: float) -> float:
        return float(np.mean(self.rep_scores[(strategy, fraction)]))


def _cell_seed(base_seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=base_seed, spawn_key=tuple(key))


@dataclass(frozen=True)
class _FoldJob:
    """Everything one (repetition, fold) worker needs; must be picklable."""

    rep: int
    fold_idx: int
    seed: int
    pool: EncodedDataset
    test: EncodedDataset
    strategies: tuple[StrategyConfig, ...]
    fractions: tuple[float, ...]
    spec: NetworkSpec
    knowledge: KnowledgeModel | None
    train_cfg: TrainConfig
    val_fraction: float
    alpha_grid: tuple[int, ...]
    window_seconds: float | None
    discretization: DiscretizationConfig | None


def _run_fold_job(job: _FoldJob) -> list[ExperimentCell]:
    """All strategy x fraction cells of one (repetition, fold); cells are
    returned in (fraction, strategy) order."""
    from .losses import LossConfig

    k = len(job.pool.activities)
    split_seed = int(_cell_seed(job.seed, job.fold_idx, 0).generate_state(1)[0])
    sample_seed = int(_cell_seed(job.seed, job.fold_idx, 1).generate_state(1)[0])
    train_seed = int(_cell_seed(job.seed, job.fold_idx, 2).generate_state(1)[0])
    train_full, val_data = split_train_validation(job.pool, job.val_fraction,
                                                  seed=split_seed)
    cells: list[ExperimentCell] = []
    for f_idx, fraction in enumerate(job.fractions):
        train_data = downsample_training(train_full, fraction, seed=sample_seed + f_idx)
        model_cache: dict = {}
        for strategy in job.strategies:
            try:
                chosen_alpha = None
                cfg = strategy
                if (strategy.kind == "semantic_loss" and job.alpha_grid
                        and strategy.loss.alpha == 0.0):
                    chosen_alpha, _ = grid_search_alpha(
                        strategy, job.alpha_grid, [(train_data, val_data)],
                        job.spec, job.knowledge, job.train_cfg, seed=train_seed)
                    cfg = StrategyConfig(strategy.kind, LossConfig(
                        strategy.loss.semantic_type, float(chosen_alpha)))
                elif strategy.kind == "semantic_loss":
                    chosen_alpha = strategy.loss.alpha
                signature = cfg.training_signature()
                model = model_cache.get(signature)
                if model is None:
                    model = train(
                        train_data, val_data, cfg, job.spec, seed=train_seed,
                        knowledge=job.knowledge, cfg=job.train_cfg,
                        window_seconds=job.window_seconds,
                        discretization=job.discretization)
                    model_cache[signature] = model
                if model.kind != cfg.kind:
                    # the cache hands one cross-entropy network to both
                    # baseline and context_refinement
                    model = dataclasses.replace(model, kind=cfg.kind)
                if cfg.kind in ("baseline", "semantic_loss"):
                    preds, _, _ = predict_many(model, job.test)
                else:
                    preds, _, _ = predict_many(model, job.test, job.knowledge)
                confusion = confusion_matrix(job.test.labels, preds, k)
                cells.append(ExperimentCell(strategy.label, fraction, job.rep,
                                            job.fold_idx, confusion, alpha=chosen_alpha))
            except Exception as exc:  # noqa: BLE001 - a cell may fail, run continues
                log.exception("cell %s failed",
                              (strategy.label, fraction, job.rep, job.fold_idx))
                cells.append(ExperimentCell(strategy.label, fraction, job.rep,
                                            job.fold_idx, None, error=str(exc)))
    return cells


def run_experiment(encoded_by_user: Mapping[str, EncodedDataset],
                   strategies: Sequence[StrategyConfig],
                   fractions: Sequence[float],
                   repetitions: int,
                   fold_k: int,
                   seeds: Sequence[int],
                   spec: NetworkSpec,
                   knowledge: KnowledgeModel | None = None,
                   train_cfg: TrainConfig = TrainConfig(),
                   fold_seed: int = 0,
                   val_fraction: float = 0.1,
                   alpha_grid: Sequence[int] = (),
                   window_seconds: float | None = None,
                   discretization: DiscretizationConfig | None = None,
                   workers: int = 1) -> ExperimentReport:
    """Run the full strategy x fraction x repetition x fold grid.

    Fully deterministic given the seed list (one seed per repetition),
    regardless of the worker count: (repetition, fold) jobs are independent
    and their seeding does not depend on scheduling. A failing cell is
    recorded with its error and the run continues. Strategies with identical
    training signatures share one trained model per cell.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if len(seeds) < repetitions:
        raise ValueError(f"need at least {repetitions} seeds, got {len(seeds)}")
    if any(s.needs_knowledge_for_training or s.needs_knowledge_for_inference
           for s in strategies) and knowledge is None:
        raise ValueError("knowledge model required by at least one strategy")

    users = sorted(encoded_by_user)
    plan = make_folds(users, fold_k, fold_seed)
    k = len(next(iter(encoded_by_user.values())).activities)
    report = ExperimentReport(
        activities=next(iter(encoded_by_user.values())).activities,
        fractions=tuple(fractions),
        strategies=tuple(s.label for s in strategies),
        repetitions=repetitions)

    jobs = []
    for rep in range(repetitions):
        for fold_idx, fold in enumerate(plan.folds):
            assert not set(fold.test_users) & set(fold.train_users)
            jobs.append(_FoldJob(
                rep=rep, fold_idx=fold_idx, seed=int(seeds[rep]),
                pool=EncodedDataset.concatenate(
                    [encoded_by_user[u] for u in fold.train_users]),
                test=EncodedDataset.concatenate(
                    [encoded_by_user[u] for u in fold.test_users]),
                strategies=tuple(strategies), fractions=tuple(fractions),
                spec=spec, knowledge=knowledge, train_cfg=train_cfg,
                val_fraction=val_fraction, alpha_grid=tuple(alpha_grid),
                window_seconds=window_seconds, discretization=discretization))

    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(_run_fold_job, jobs))
    else:
        results = [_run_fold_job(job) for job in jobs]

    per_rep_confusions: dict = {}
    for cells in results:
        for cell in cells:
            report.cells.append(cell)
            if cell.confusion is not None:
                per_rep_confusions.setdefault(
                    (cell.strategy, cell.fraction, cell.repetition),
                    np.zeros((k, k), dtype=np.int64))[...] += cell.confusion

    for key in sorted(per_rep_confusions):
        label, fraction, rep = key
        report.rep_scores.setdefault((label, fraction), []).append(
            macro_f1(per_rep_confusions[key]))
    return report


def grid_search_alpha(strategy: StrategyConfig, alphas: Sequence[int],
                      validation_folds: Sequence[tuple[EncodedDataset, EncodedDataset]],
                      spec: NetworkSpec, knowledge: KnowledgeModel,
                      train_cfg: TrainConfig, seed: int) -> tuple[int, dict]:
    """Pick the alpha with the best mean validation macro F1; ties to the
    lowest alpha. Deterministic given the seed."""
    from .losses import LossConfig

    if not alphas:
        raise ValueError("alpha grid is empty")
    if strategy.kind != "semantic_loss":
        raise ValueError("alpha grid search only applies to semantic_loss")
    scores: dict = {}
    k = len(validation_folds[0][0].activities)
    for alpha in alphas:
        cfg = StrategyConfig(strategy.kind,
                             LossConfig(strategy.loss.semantic_type, float(alpha)))
        fold_scores = []
        for train_data, val_data in validation_folds:
            model = train(train_data, val_data, cfg, spec, seed=seed,
                          knowledge=knowledge, cfg=train_cfg)
            preds, _, _ = predict_many(model, val_data)
            fold_scores.append(macro_f1(confusion_matrix(val_data.labels, preds, k)))
        scores[int(alpha)] = float(np.mean(fold_scores))
    best = max(sorted(scores), key=lambda a: scores[a])
    return best, scores


# ---------------------------------------------------------------------------
# Report output
# ---------------------------------------------------------------------------

def format_report_table(report: ExperimentReport) -> str:
    """Human-readable strategies x fractions table, mean F1 with CI half-width."""
    fractions = report.fractions
    header = ["strategy"] + [f"{f * 100:g}%" for f in fractions]
    rows = [header]
    for label in report.strategies:
        row = [label]
        for fraction in fractions:
            scores = report.rep_scores.get((label, fraction))
            if not scores:
                row.append("failed")
            elif len(scores) == 1:
                row.append(f"{scores[0]:.4f}")
            else:
                mean, half = confidence_interval(scores)
                row.append(f"{mean:.4f} (±{half:.3f})")
        rows.append(row)
    widths = [max(len(r[c]) for r in rows) for c in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("-" * (sum(widths) + 2 * (len(widths) - 1)))
    return "\n".join(lines) + "\n"


def write_report(report: ExperimentReport, out_dir: str | Path) -> dict[str, Path]:
    """Write cells.csv (every cell), summary.csv (aggregates + per-rep scores),
    and summary.txt (the human-readable table). Deterministic output."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}

    cells_path = out_dir / "cells.csv"
    with open(cells_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["strategy", "fraction", "repetition", "fold", "test_windows",
                         "alpha", "error", "confusion"])
        for cell in report.cells:
            writer.writerow([
                cell.strategy, repr(cell.fraction), cell.repetition, cell.fold,
                cell.test_windows,
                "" if cell.alpha is None else repr(float(cell.alpha)),
                cell.error or "",
                "" if cell.confusion is None else json.dumps(cell.confusion.tolist()),
            ])
    paths["cells"] = cells_path

    summary_path = out_dir / "summary.csv"
    with open(summary_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["strategy", "fraction", "mean_macro_f1", "ci95_halfwidth",
                         "repetitions", "rep_macro_f1"])
        for label in report.strategies:
            for fraction in report.fractions:
                scores = report.rep_scores.get((label, fraction), [])
                if len(scores) >= 2:
                    mean, half = confidence_interval(scores)
                elif scores:
                    mean, half = scores[0], 0.0
                else:
                    mean, half = float("nan"), float("nan")
                writer.writerow([label, repr(fraction), repr(mean), repr(half),
                                 len(scores), json.dumps([repr(s) for s in scores])])
    paths["summary"] = summary_path

    table_path = out_dir / "summary.txt"
    table_path.write_text(format_report_table(report), encoding="utf-8")
    paths["table"] = table_path
    return paths
