"""Segment-level evaluation: macro-F1 and cross-validated threshold search.

Real-valued polarity scores become neg/neu/pos labels through two
thresholds fitted by exhaustive grid search; fitting happens on the
k-1 training folds of a document-level split and is scored on the
held-out fold, with the mean held-out macro-F1 reported across folds.
Macro-F1 is the unweighted mean of the three per-class F1 scores and
is therefore unaffected by class imbalance.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import models, polarity
from .errors import ValidationError

LABELS = ("neg", "neu", "pos")
_LABEL_INDEX = {label: i for i, label in enumerate(LABELS)}


@dataclass
class ClassScores:
    precision: float
    recall: float
    f1: float


@dataclass
class MacroF1:
    per_class: dict[str, ClassScores]
    macro: float
    confusion: np.ndarray  # (3, 3) counts, gold rows / predicted columns


def _scores_from_confusion(confusion: np.ndarray) -> MacroF1:
    per_class = {}
    f1s = []
    for i, label in enumerate(LABELS):
        tp = confusion[i, i]
        fp = confusion[:, i].sum() - tp
        fn = confusion[i, :].sum() - tp
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[label] = ClassScores(float(precision), float(recall), float(f1))
        f1s.append(f1)
    return MacroF1(per_class=per_class, macro=float(np.mean(f1s)), confusion=confusion)


def confusion_matrix(gold, predicted) -> np.ndarray:
    if len(gold) != len(predicted):
        raise ValidationError(f"{len(gold)} gold labels vs {len(predicted)} predictions")
    out = np.zeros((3, 3), dtype=np.int64)
    for g, p in zip(gold, predicted):
        try:
            out[_LABEL_INDEX[g], _LABEL_INDEX[p]] += 1
        except KeyError as exc:
            raise ValidationError(f"unknown label {exc}") from None
    return out


def macro_f1(gold, predicted) -> MacroF1:
    """Per-class precision/recall/F1 plus their unweighted mean.

    A class with neither gold members nor predictions scores F1 = 0 by
    convention, which matters for degenerate fixtures.
    """
    return _scores_from_confusion(confusion_matrix(gold, predicted))


def majority_baseline(gold) -> list[str]:
    """Predict the most frequent label everywhere; ties pick neg < neu < pos."""
    if len(gold) == 0:
        raise ValidationError("majority baseline needs at least one label")
    counts = Counter(gold)
    winner = max(LABELS, key=lambda l: (counts.get(l, 0), -_LABEL_INDEX[l]))
    return [winner] * len(gold)


@dataclass
class FoldPlan:
    """Disjoint document-index folds whose sizes differ by at most one."""

    folds: list[np.ndarray]

    @classmethod
    def make(cls, num_docs: int, k: int, seed: int = 0) -> "FoldPlan":
        if k < 2:
            raise ValidationError(f"need at least 2 folds, got {k}")
        if num_docs < k:
            raise ValidationError(f"{num_docs} documents cannot fill {k} folds")
        order = np.random.default_rng(seed).permutation(num_docs)
        return cls(folds=[np.sort(f) for f in np.array_split(order, k)])

    @property
    def k(self) -> int:
        return len(self.folds)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.concatenate([f for i, f in enumerate(self.folds) if i != fold])


def threshold_grid(step: float = 0.05) -> np.ndarray:
    if not 0.0 < step <= 2.0:
        raise ValidationError(f"grid step {step} outside (0, 2]")
    points = int(round(2.0 / step))
    return np.linspace(-1.0, 1.0, points + 1)


def fit_thresholds(scores, gold, grid=None) -> tuple[polarity.Thresholds, float]:
    """Exhaustive grid search for the macro-F1-maximizing (t1, t2), t1 <= t2.

    Ties prefer the narrowest neutral band (smallest t2 - t1), then the
    smallest t1, making the search deterministic. Counting uses sorted
    per-class score arrays, so each candidate costs a few binary
    searches instead of a full relabeling pass.
    """
    grid = threshold_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValidationError("cannot fit thresholds without scores")
    if s.min() < -1.0 - 1e-9 or s.max() > 1.0 + 1e-9:
        raise ValidationError("polarity scores must lie in [-1, 1]")
    by_class = []
    for label in LABELS:
        mask = np.fromiter((g == label for g in gold), dtype=bool, count=len(gold))
        by_class.append(np.sort(s[mask]))
    totals = np.array([c.size for c in by_class])
    best = None
    confusion = np.zeros((3, 3), dtype=np.int64)
    for i, t1 in enumerate(grid):
        lo = [np.searchsorted(c, t1, side="left") for c in by_class]  # strictly below t1
        for t2 in grid[i:]:
            for row, c in enumerate(by_class):
                hi = c.size - np.searchsorted(c, t2, side="right")  # strictly above t2
                confusion[row, 0] = lo[row]
                confusion[row, 2] = hi
                confusion[row, 1] = totals[row] - lo[row] - hi
            macro = _scores_from_confusion(confusion).macro
            key = (macro, -(t2 - t1), -t1)
            if best is None or key > best[0]:
                best = (key, (float(t1), float(t2)))
    (macro, _, _), (t1, t2) = best
    return polarity.Thresholds(t1, t2), float(macro)


@dataclass
class ThresholdSearchResult:
    mean_macro_f1: float
    fold_scores: list[float]
    fold_thresholds: list[polarity.Thresholds]
    fold_results: list[MacroF1]
    thresholds: polarity.Thresholds  # fitted on all documents, for deployment

    def mean_class_f1(self, label: str) -> float:
        return float(np.mean([r.per_class[label].f1 for r in self.fold_results]))


def threshold_search(doc_scores, doc_gold, folds: FoldPlan | None = None, k: int = 10,
                     grid_step: float = 0.05, seed: int = 0) -> ThresholdSearchResult:
    """Cross-validated threshold selection over per-document score lists.

    Folds partition documents, never individual segments, so segments
    of one document cannot straddle a train/test boundary.
    """
    if len(doc_scores) != len(doc_gold):
        raise ValidationError("documents in scores and gold disagree")
    if folds is None:
        folds = FoldPlan.make(len(doc_scores), k, seed=seed)
    grid = threshold_grid(grid_step)

    def flatten(indices):
        scores = np.concatenate([np.asarray(doc_scores[i], dtype=np.float64) for i in indices])
        gold = [g for i in indices for g in doc_gold[i]]
        return scores, gold

    fold_scores, fold_thresholds, fold_results = [], [], []
    for fold_idx in range(folds.k):
        train_scores, train_gold = flatten(folds.train_indices(fold_idx))
        thresholds, _ = fit_thresholds(train_scores, train_gold, grid)
        test_scores, test_gold = flatten(folds.folds[fold_idx])
        predicted = polarity.discretize_many(test_scores, thresholds)
        result = macro_f1(test_gold, predicted)
        fold_scores.append(result.macro)
        fold_thresholds.append(thresholds)
        fold_results.append(result)
    all_scores, all_gold = flatten(np.arange(len(doc_scores)))
    final_thresholds, _ = fit_thresholds(all_scores, all_gold, grid)
    return ThresholdSearchResult(
        mean_macro_f1=float(np.mean(fold_scores)),
        fold_scores=fold_scores,
        fold_thresholds=fold_thresholds,
        fold_results=fold_results,
        thresholds=final_thresholds,
    )


def majority_baseline_cv(doc_gold, folds: FoldPlan) -> float:
    """Mean held-out macro-F1 of the training-fold majority class."""
    scores = []
    for fold_idx in range(folds.k):
        train_gold = [g for i in folds.train_indices(fold_idx) for g in doc_gold[i]]
        test_gold = [g for i in folds.folds[fold_idx] for g in doc_gold[i]]
        winner = majority_baseline(train_gold)[0]
        scores.append(macro_f1(test_gold, [winner] * len(test_gold)).macro)
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# model variants


@dataclass
class EvalReport:
    """Cross-validated segment classification scores for one model variant."""

    variant: dict
    macro_f1: float
    per_class: dict[str, ClassScores]
    thresholds: polarity.Thresholds
    fold_thresholds: list[polarity.Thresholds]
    fold_scores: list[float]

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "macro_f1": self.macro_f1,
            "per_class": {
                label: {"precision": c.precision, "recall": c.recall, "f1": c.f1}
                for label, c in self.per_class.items()
            },
            "thresholds": {"t1": self.thresholds.t1, "t2": self.thresholds.t2},
            "fold_thresholds": [{"t1": t.t1, "t2": t.t2} for t in self.fold_thresholds],
            "fold_scores": self.fold_scores,
        }


def variant_scores(params: models.ModelParams, docs, source: str = "segment",
                   gated: bool = True, batch_size: int = 64):
    """Per-document (scores, gold) lists for one scoring variant."""
    config = params.config
    if source == "segment" and config.kind != "milnet":
        raise ValidationError(f"{config.kind} has no segment-level predictions")
    weights = polarity.class_weights(config.num_classes)
    doc_scores, doc_gold = [], []
    for result in models.batch_outputs(params, docs, batch_size=batch_size):
        gold = [s.gold for s in result.doc.segments]
        if any(g is None for g in gold):
            raise ValidationError(f"document {result.doc.id!r} lacks segment labels")
        verdicts = polarity.segment_verdicts(
            result.doc_probs, result.attention, weights,
            segment_probs=result.segment_probs, source=source,
        )
        key = (lambda v: v.gated_polarity) if gated else (lambda v: v.polarity)
        doc_scores.append([key(v) for v in verdicts])
        doc_gold.append(gold)
    return doc_scores, doc_gold


def evaluate_variant(params: models.ModelParams, docs, source: str = "segment",
                     gated: bool = True, folds: int = 10, grid_step: float = 0.05,
                     seed: int = 0, batch_size: int = 64) -> EvalReport:
    """Score a variant (polarity source x gating) with CV threshold selection."""
    doc_scores, doc_gold = variant_scores(params, docs, source=source, gated=gated,
                                          batch_size=batch_size)
    search = threshold_search(doc_scores, doc_gold, k=folds, grid_step=grid_step, seed=seed)
    per_class = {
        label: ClassScores(
            precision=float(np.mean([r.per_class[label].precision for r in search.fold_results])),
            recall=float(np.mean([r.per_class[label].recall for r in search.fold_results])),
            f1=search.mean_class_f1(label),
        )
        for label in LABELS
    }
    return EvalReport(
        variant={
            "model": params.config.kind,
            "attention_mode": params.config.attention_mode,
            "source": source,
            "gated": gated,
        },
        macro_f1=search.mean_macro_f1,
        per_class=per_class,
        thresholds=search.thresholds,
        fold_thresholds=search.fold_thresholds,
        fold_scores=search.fold_scores,
    )
