"""
Forward-chaining evaluation.

The time-sorted dataset is cut into equal parts; fold k trains on the parts
before part k+1 and tests on part k+1. Models are compared by ROC AUC computed
with the Mann-Whitney rank statistic.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from app.core.errors import DegenerateAUCError, InputError, SplitError
from app.core.seeding import derive_int_seed
from app.schemas.config import (
    EvalConfig,
    FeaturizerConfig,
    ModelVariant,
    WindowMode,
)
from app.schemas.evaluation import EvalCell, FoldResult, RocPoint, ThresholdRow
from app.services.featurizer import Dataset, Normalizer, build_dataset, fit_normalizer, relabel
from app.services.ingest import ValidatedLog
from app.services.models import (
    TRAINERS,
    TrainedModel,
    model_filename,
    save_model,
    score_dataset,
)


logger = logging.getLogger(__name__)


PART_COUNT = 5

Trainer = Callable[..., Any]


# ============================================================================
# Forward chaining
# ============================================================================

@dataclass(frozen=True)
class Fold:
    """Train and test index ranges of one fold (``index`` starts at 1)."""
    index: int
    train: range
    test: range


@dataclass(frozen=True)
class FoldPlan:
    part_count: int
    window: WindowMode
    parts: tuple[range, ...]
    folds: tuple[Fold, ...]


def partition(n: int, part_count: int = PART_COUNT) -> tuple[range, ...]:
    """Consecutive parts of near-equal size; the first ``n % part_count`` get one extra."""
    base, extra = divmod(n, part_count)
    parts = []
    start = 0
    for k in range(part_count):
        size = base + (1 if k < extra else 0)
        parts.append(range(start, start + size))
        start += size
    return tuple(parts)


def forward_chain_split(
    dataset: Dataset,
    part_count: int = PART_COUNT,
    window: WindowMode = WindowMode.EXPANDING,
) -> FoldPlan:
    """
    Plan the forward-chaining folds over a time-sorted dataset.

    Args:
        dataset: Items in global time order.
        part_count: Number of parts; there are ``part_count - 1`` folds.
        window: ``expanding`` trains on all earlier parts, ``sliding`` on the
            immediately preceding part only.

    Returns:
        FoldPlan: Parts and folds as index ranges.

    Raises:
        SplitError: If the dataset has fewer items than parts, or is not
            sorted by time.
    """
    n = len(dataset)
    if n < part_count:
        raise SplitError(f"dataset has {n} items; forward chaining needs at least {part_count}")
    timestamps = [item.timestamp for item in dataset]
    if any(later < earlier for earlier, later in zip(timestamps, timestamps[1:])):
        raise SplitError("dataset items are not sorted by timestamp")

    parts = partition(n, part_count)
    folds = []
    for k in range(1, part_count):
        first = 0 if window == WindowMode.EXPANDING else parts[k - 1].start
        folds.append(Fold(index=k, train=range(first, parts[k - 1].stop), test=parts[k]))
    return FoldPlan(part_count=part_count, window=window, parts=parts, folds=tuple(folds))


# ============================================================================
# ROC / AUC
# ============================================================================

def _validate_binary(scores: Sequence[float], labels: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise InputError("scores and labels must be 1-D sequences of equal length")
    if not np.isin(y, (0, 1)).all():
        raise InputError("labels must be 0 or 1")
    positives = int(y.sum())
    if positives == 0 or positives == y.size:
        raise DegenerateAUCError("AUC is undefined when only one class is present")
    return s, y.astype(np.int64)


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """
    ROC AUC as the Mann-Whitney rank statistic.

    Equals the fraction of (positive, negative) pairs in which the positive
    scores higher, counting ties as one half.

    Raises:
        DegenerateAUCError: If only one class is present.
    """
    s, y = _validate_binary(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    ranks = rankdata(s, method="average")
    u = float(ranks[y == 1].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> list[RocPoint]:
    """
    ROC points at every distinct score, from (0, 0) to (1, 1).

    The threshold of a point is the lowest score predicted positive.
    """
    s, y = _validate_binary(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos

    order = np.argsort(-s, kind="stable")
    sorted_scores = s[order]
    sorted_labels = y[order]
    tp = np.cumsum(sorted_labels)
    fp = np.cumsum(1 - sorted_labels)
    # last index of each run of equal scores
    ends = np.nonzero(np.append(sorted_scores[1:] != sorted_scores[:-1], True))[0]

    points = [RocPoint(false_positive_rate=0.0, true_positive_rate=0.0, threshold=None)]
    for i in ends:
        points.append(
            RocPoint(
                false_positive_rate=float(fp[i]) / n_neg,
                true_positive_rate=float(tp[i]) / n_pos,
                threshold=float(sorted_scores[i]),
            )
        )
    return points


def roc_area(points: Sequence[RocPoint]) -> float:
    """Trapezoidal area under an ROC polyline."""
    fpr = np.array([p.false_positive_rate for p in points])
    tpr = np.array([p.true_positive_rate for p in points])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


# ============================================================================
# Thresholds
# ============================================================================

def confusion_at(scores: Sequence[float], labels: Sequence[int], threshold: float) -> ThresholdRow:
    """
    Metrics when predicting positive iff ``score >= threshold``.

    Precision is 1.0 when nothing is predicted positive.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    predicted = s >= threshold
    tp = int(np.sum(predicted & y))
    fp = int(np.sum(predicted & ~y))
    fn = int(np.sum(~predicted & y))
    tn = int(np.sum(~predicted & ~y))
    return ThresholdRow(
        threshold=float(threshold),
        true_positives=tp,
        false_positives=fp,
        true_negatives=tn,
        false_negatives=fn,
        precision=tp / (tp + fp) if tp + fp else 1.0,
        recall=tp / (tp + fn) if tp + fn else 0.0,
        specificity=tn / (tn + fp) if tn + fp else 1.0,
    )


def threshold_table(scores: Sequence[float], labels: Sequence[int]) -> list[ThresholdRow]:
    """
    Metrics at a threshold just above the top score, then at every distinct
    score in descending order (recall is non-decreasing down the table).
    """
    s, y = _validate_binary(scores, labels)
    distinct = np.unique(s)[::-1]
    thresholds = [float(np.nextafter(distinct[0], np.inf))] + [float(t) for t in distinct]
    return [confusion_at(s, y, t) for t in thresholds]


def threshold_sweep(model: TrainedModel, items: Dataset) -> list[ThresholdRow]:
    """
    Precision, recall and specificity of a model across thresholds.

    Raises:
        InputError: If the items are empty.
        DegenerateAUCError: If the items hold a single class.
    """
    if len(items) == 0:
        raise InputError("threshold sweep needs at least one item")
    return threshold_table(score_dataset(model, items), items.labels)


# ============================================================================
# Experiment matrix
# ============================================================================

@dataclass(frozen=True)
class _CellTask:
    variant: ModelVariant
    gamma: int
    M: int
    dataset: Dataset
    plan: FoldPlan
    normalizers: tuple[Normalizer, ...]
    config: EvalConfig
    save_dir: Path | None


def _cell_seed(config: EvalConfig, task: _CellTask, fold: int) -> int:
    return derive_int_seed(config.seed, "M", task.M, "gamma", task.gamma, "fold", fold, "model", task.variant.value)


def _run_cell(task: _CellTask, trainers: Mapping[ModelVariant, Trainer] | None = None) -> EvalCell:
    trainer = (trainers or TRAINERS)[task.variant]
    results: list[FoldResult] = []
    for fold, normalizer in zip(task.plan.folds, task.normalizers):
        train = task.dataset.subset(fold.train)
        test = task.dataset.subset(fold.test)
        seed = _cell_seed(task.config, task, fold.index)
        positive_rate = float(test.labels.mean())
        summary = dict(fold=fold.index, train_size=len(train), test_size=len(test),
                       test_positive_rate=positive_rate, seed=seed)

        if positive_rate in (0.0, 1.0):
            logger.warning(
                f"{task.variant.display_name} M={task.M} gamma={task.gamma} fold {fold.index}: "
                f"test part holds a single class"
            )
            results.append(FoldResult(**summary, auc=None, degenerate=True))
            continue

        model_config = task.config.model.model_copy(
            update={"variant": task.variant, "M": task.M, "seed": seed}
        )
        model = trainer(train, model_config, normalizer)
        scores = score_dataset(model, test)
        fold_auc = auc(scores, test.labels)
        results.append(FoldResult(**summary, auc=fold_auc, roc=roc_curve(scores, test.labels)))
        logger.info(
            f"{task.variant.display_name} M={task.M} gamma={task.gamma} fold {fold.index}: AUC={fold_auc:.4f}"
        )

        if task.save_dir is not None and isinstance(model, TrainedModel):
            save_model(model, task.save_dir / model_filename(task.variant, task.M, task.gamma, fold.index))

    degenerate_folds = [r.fold for r in results if r.degenerate]
    aucs = [r.auc for r in results]
    if degenerate_folds:
        mean_auc = std_auc = None
    else:
        mean_auc = float(np.mean(aucs))
        std_auc = float(np.std(aucs))
    return EvalCell(
        variant=task.variant,
        gamma=task.gamma,
        M=task.M,
        window=task.plan.window,
        item_count=len(task.dataset),
        fold_aucs=aucs,
        mean_auc=mean_auc,
        std_auc=std_auc,
        degenerate=bool(degenerate_folds),
        degenerate_folds=degenerate_folds,
        folds=results,
    )


def _cell_order(cell: EvalCell, variants: list[ModelVariant]) -> tuple[int, int, int]:
    return (cell.M, cell.gamma, variants.index(cell.variant))


def evaluate_matrix(
    log: ValidatedLog,
    gammas: list[int] | None = None,
    Ms: list[int] | None = None,
    variants: list[ModelVariant] | None = None,
    seed: int | None = None,
    *,
    config: EvalConfig | None = None,
    jobs: int = 1,
    save_dir: str | Path | None = None,
    trainers: Mapping[ModelVariant, Trainer] | None = None,
) -> list[EvalCell]:
    """
    Run every (M, gamma, variant) cell of the experiment grid.

    For each M the dataset is built once and relabeled per gamma. For each
    fold the normalizer is fit on the training part only and shared by all
    variants, so every model sees identical folds and identical features.

    Args:
        log: Validated event log.
        gammas, Ms, variants, seed: Override the matching ``config`` fields.
        config: Grid and protocol settings; defaults to ``EvalConfig()``.
        jobs: Worker processes for grid cells; results do not depend on it.
        save_dir: When set, every fold model is saved there.
        trainers: Replacement trainers by variant (single-process only).

    Returns:
        list[EvalCell]: Cells ordered by (M, gamma, variant order).

    Raises:
        SplitError: If a dataset has fewer than ``part_count`` items.
    """
    config = config or EvalConfig()
    overrides = {
        key: value
        for key, value in {"gammas": gammas, "Ms": Ms, "variants": variants, "seed": seed}.items()
        if value is not None
    }
    if overrides:
        config = EvalConfig.model_validate({**config.model_dump(), **overrides})
    out_dir = Path(save_dir) if save_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    tasks: list[_CellTask] = []
    for M in config.Ms:
        fconfig = FeaturizerConfig(M=M, gamma=config.gammas[0], emit_policy=config.emit_policy)
        base = build_dataset(log, config.sessionizer, fconfig)
        plan = forward_chain_split(base, config.part_count, config.window)
        normalizers = tuple(fit_normalizer(base.subset(fold.train)) for fold in plan.folds)
        for gamma in config.gammas:
            dataset = relabel(base, gamma)
            for variant in config.variants:
                tasks.append(_CellTask(variant, gamma, M, dataset, plan, normalizers, config, out_dir))

    logger.info(f"Evaluating {len(tasks)} cells with {jobs} worker(s)")
    if jobs > 1 and trainers is None:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_run_cell, tasks))
    else:
        cells = [_run_cell(task, trainers) for task in tasks]

    return sorted(cells, key=lambda cell: _cell_order(cell, config.variants))
