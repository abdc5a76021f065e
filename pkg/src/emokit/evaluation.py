"""Scoring protocol: 1/C threshold binarization and macro-F1.

A class counts as predicted (or true) when its share strictly exceeds 1/C,
so an exactly uniform vector maps to all zeros.  Per-class precision,
recall, and F1 use the zero-denominator-means-zero convention; macro-F1 is
their unweighted mean over all C classes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .aggregation import LabelKind, LabelRecord
from .corpus import EmotionTaxonomy, PredictionRecord
from .errors import EvaluationError

MultiHot = tuple[int, ...]


@dataclass(frozen=True)
class ClassScore:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvalResult:
    macro_f1: float
    per_class: tuple[ClassScore, ...]
    n_samples: int

    def to_json(self, taxonomy: EmotionTaxonomy | None = None,
                dataset: str = "", fold: int | None = None) -> dict:
        names = taxonomy.classes if taxonomy else [
            f"class_{i}" for i in range(len(self.per_class))]
        return {
            "dataset": dataset,
            "fold": fold,
            "macro_f1": self.macro_f1,
            "per_class": [
                {"class": name, "precision": s.precision, "recall": s.recall, "f1": s.f1}
                for name, s in zip(names, self.per_class)
            ],
            "n_samples": self.n_samples,
        }


def binarize(distribution: Sequence[float]) -> MultiHot:
    """bit_c = 1 iff distribution_c > 1/C (strictly)."""
    C = len(distribution)
    if C < 2:
        raise EvaluationError(f"need >= 2 classes to binarize, got {C}")
    threshold = 1.0 / C
    for v in distribution:
        if not math.isfinite(v) or v < 0:
            raise EvaluationError(f"distribution entries must be finite and >= 0, got {v!r}")
    return tuple(1 if v > threshold else 0 for v in distribution)


def gold_to_multihot(label: LabelRecord, taxonomy: EmotionTaxonomy) -> MultiHot:
    """Ground-truth bits for one label record (dropped records are not scorable)."""
    if label.kind is LabelKind.DISTRIBUTION:
        if len(label.distribution) != taxonomy.C:
            raise EvaluationError(
                f"gold '{label.utterance_id}' has dimension {len(label.distribution)}, "
                f"expected {taxonomy.C}")
        return binarize(label.distribution)
    if label.kind is LabelKind.SINGLE:
        idx = taxonomy.index(label.clazz)
        return tuple(1 if i == idx else 0 for i in range(taxonomy.C))
    raise EvaluationError(f"gold '{label.utterance_id}' was dropped; not scorable",
                          utterance_id=label.utterance_id)


def macro_f1(preds: Sequence[MultiHot], golds: Sequence[MultiHot]) -> EvalResult:
    """Multi-label macro-F1 over aligned prediction/gold bit rows."""
    if len(preds) != len(golds):
        raise EvaluationError(
            f"prediction/gold length mismatch: {len(preds)} vs {len(golds)}")
    if not preds:
        raise EvaluationError("cannot score an empty set")
    p = np.asarray(preds, dtype=np.int64)
    g = np.asarray(golds, dtype=np.int64)
    if p.shape != g.shape or p.ndim != 2:
        raise EvaluationError(f"shape mismatch: preds {p.shape} vs golds {g.shape}")

    tp = ((p == 1) & (g == 1)).sum(axis=0).astype(np.float64)
    fp = ((p == 1) & (g == 0)).sum(axis=0).astype(np.float64)
    fn = ((p == 0) & (g == 1)).sum(axis=0).astype(np.float64)

    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)

    per_class = tuple(ClassScore(float(precision[c]), float(recall[c]), float(f1[c]))
                      for c in range(p.shape[1]))
    return EvalResult(macro_f1=float(f1.mean()), per_class=per_class, n_samples=len(preds))


def evaluate_predictions(predictions: Sequence[PredictionRecord],
                         golds: Sequence[LabelRecord],
                         taxonomy: EmotionTaxonomy,
                         restrict_ids: Sequence[str] | None = None) -> EvalResult:
    """Join predictions to gold labels by utterance id and score.

    ``restrict_ids`` limits scoring to one partition split (e.g. a fold's test
    set).  Every scorable gold in scope must be predicted exactly once; extra
    or missing ids are errors, never silently ignored.
    """
    scope = set(restrict_ids) if restrict_ids is not None else None
    gold_by_id: dict[str, LabelRecord] = {}
    for rec in golds:
        if scope is not None and rec.utterance_id not in scope:
            continue
        if rec.kind is LabelKind.DROPPED:
            continue
        gold_by_id[rec.utterance_id] = rec

    pred_by_id: dict[str, PredictionRecord] = {}
    for rec in predictions:
        if scope is not None and rec.utterance_id not in scope:
            raise EvaluationError(f"prediction for out-of-scope utterance "
                                  f"'{rec.utterance_id}'", utterance_id=rec.utterance_id)
        pred_by_id[rec.utterance_id] = rec

    missing = sorted(set(gold_by_id) - set(pred_by_id))
    if missing:
        raise EvaluationError(f"missing predictions for {len(missing)} utterances",
                              missing=missing)
    extra = sorted(set(pred_by_id) - set(gold_by_id))
    if extra:
        raise EvaluationError(f"predictions for {len(extra)} unknown utterances",
                              extra=extra)
    if not gold_by_id:
        raise EvaluationError("no scorable utterances in scope")

    ids = sorted(gold_by_id)
    pred_bits = []
    gold_bits = []
    for utt_id in ids:
        dist = pred_by_id[utt_id].distribution
        if len(dist) != taxonomy.C:
            raise EvaluationError(
                f"prediction '{utt_id}' has dimension {len(dist)}, expected {taxonomy.C}")
        pred_bits.append(binarize(dist))
        gold_bits.append(gold_to_multihot(gold_by_id[utt_id], taxonomy))
    return macro_f1(pred_bits, gold_bits)


def combine_folds(results: Sequence[EvalResult], mode: str = "mean") -> float:
    """Dataset score across folds: unweighted mean (default) or sample-pooled."""
    if not results:
        raise EvaluationError("no fold results to combine")
    if mode == "mean":
        return float(np.mean([r.macro_f1 for r in results]))
    if mode == "pooled":
        total = sum(r.n_samples for r in results)
        return float(sum(r.macro_f1 * r.n_samples for r in results) / total)
    raise EvaluationError(f"unknown fold combination mode '{mode}'")


def relative_gain(baseline: float, improved: float) -> float:
    """Percentage gain of ``improved`` over ``baseline``; baseline must be > 0."""
    if baseline <= 0:
        raise EvaluationError(f"relative gain needs baseline > 0, got {baseline}")
    return 100.0 * (improved - baseline) / baseline


def ccc(x: Sequence[float], y: Sequence[float]) -> float:
    """Concordance correlation coefficient with population (biased) moments.

    ccc = 2 cov(x, y) / (var(x) + var(y) + (mean(x) - mean(y))^2)
    """
    if len(x) != len(y):
        raise EvaluationError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise EvaluationError("need at least 2 points")
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    mx, my = xa.mean(), ya.mean()
    vx, vy = xa.var(), ya.var()
    cov = ((xa - mx) * (ya - my)).mean()
    denom = vx + vy + (mx - my) ** 2
    if denom == 0.0:
        raise EvaluationError("ccc undefined: both inputs constant with equal means")
    return float(2.0 * cov / denom)
