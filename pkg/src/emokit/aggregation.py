"""Vote aggregation: majority (MR), plurality (PR), all-inclusive (AR) rules.

Vote counts are per label instance: a rater selecting k emotions contributes
k instances.  The majority test, however, is taken against the number of
annotating raters, which is the only reading under which two classes can
simultaneously hold a majority (each backed by more than half the raters
via multi-select); such utterances are dropped as ambiguous.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .corpus import EmotionTaxonomy, UtteranceAnnotations
from .errors import AggregationError

RULES = ("mr", "pr", "ar")


class UnscorableUtterance(AggregationError):
    """Every vote is typed-description-only; no class votes to aggregate.

    These utterances cannot be labeled without the relabel pipeline.
    """


@dataclass(frozen=True)
class VoteCounts:
    """Per-class label-instance counts for one utterance."""

    counts: dict[str, int]
    total: int          # sum of label instances
    n_raters: int       # raters that selected at least one emotion

    def __post_init__(self) -> None:
        assert self.total == sum(self.counts.values())


@dataclass(frozen=True)
class SmoothingConfig:
    """Mix-with-uniform label smoothing; epsilon defaults to 0.05."""

    epsilon: float = 0.05

    def __post_init__(self) -> None:
        if not 0.0 <= self.epsilon < 1.0:
            raise AggregationError(f"smoothing epsilon must be in [0, 1), got {self.epsilon}")


class LabelKind(str, Enum):
    SINGLE = "single"
    DISTRIBUTION = "distribution"
    DROPPED = "dropped"


@dataclass(frozen=True)
class LabelRecord:
    """Aggregated training target for one utterance."""

    utterance_id: str
    kind: LabelKind
    clazz: str | None = None
    distribution: tuple[float, ...] | None = None
    reason: str | None = None
    smoothed: bool = False

    def __post_init__(self) -> None:
        if self.kind is LabelKind.DISTRIBUTION:
            if self.distribution is None:
                raise AggregationError(f"'{self.utterance_id}': distribution kind "
                                       "needs a distribution")
            total = sum(self.distribution)
            if any(v < 0 for v in self.distribution) or abs(total - 1.0) > 1e-9:
                raise AggregationError(
                    f"'{self.utterance_id}': distribution must be non-negative and "
                    f"sum to 1 (got sum {total!r})")
        elif self.kind is LabelKind.SINGLE and not self.clazz:
            raise AggregationError(f"'{self.utterance_id}': single kind needs a class")

    def to_json(self) -> dict:
        return {
            "utterance_id": self.utterance_id,
            "kind": self.kind.value,
            "class": self.clazz,
            "distribution": list(self.distribution) if self.distribution is not None else None,
            "reason": self.reason,
            "smoothed": self.smoothed,
        }

    @staticmethod
    def from_json(obj: dict) -> "LabelRecord":
        dist = obj.get("distribution")
        return LabelRecord(
            utterance_id=obj["utterance_id"],
            kind=LabelKind(obj["kind"]),
            clazz=obj.get("class"),
            distribution=tuple(float(v) for v in dist) if dist is not None else None,
            reason=obj.get("reason"),
            smoothed=bool(obj.get("smoothed", False)),
        )


# ---------------------------------------------------------------------------
# Counting and rules
# ---------------------------------------------------------------------------


def count_votes(utt: UtteranceAnnotations, taxonomy: EmotionTaxonomy) -> VoteCounts:
    """Count label instances per class; rater order is irrelevant.

    Raises :class:`UnscorableUtterance` when no rater selected any class.
    """
    counts: dict[str, int] = {}
    n_raters = 0
    for vote in utt.votes:
        if not vote.emotions:
            continue
        n_raters += 1
        for emo in vote.emotions:
            if emo not in taxonomy:
                raise AggregationError(
                    f"utterance '{utt.utterance_id}': class '{emo}' not in taxonomy "
                    f"'{taxonomy.name}'")
            counts[emo] = counts.get(emo, 0) + 1
    if n_raters == 0:
        raise UnscorableUtterance(
            f"utterance '{utt.utterance_id}' is unscorable without relabel: "
            "all votes are typed-description-only", utterance_id=utt.utterance_id)
    return VoteCounts(counts=counts, total=sum(counts.values()), n_raters=n_raters)


def aggregate_mr(counts: VoteCounts, utterance_id: str = "") -> LabelRecord:
    """Majority rule: keep only a unique class backed by more than half the raters."""
    half = counts.n_raters / 2.0
    majority = [c for c, n in counts.counts.items() if n > half]
    if len(majority) == 1:
        return LabelRecord(utterance_id, LabelKind.SINGLE, clazz=majority[0])
    if len(majority) > 1:
        return LabelRecord(utterance_id, LabelKind.DROPPED, reason="ambiguous majority")
    return LabelRecord(utterance_id, LabelKind.DROPPED, reason="no majority")


def aggregate_pr(counts: VoteCounts, utterance_id: str = "") -> LabelRecord:
    """Plurality rule: keep the unique most-voted class, drop ties."""
    top = max(counts.counts.values())
    winners = [c for c, n in counts.counts.items() if n == top]
    if len(winners) == 1:
        return LabelRecord(utterance_id, LabelKind.SINGLE, clazz=winners[0])
    return LabelRecord(utterance_id, LabelKind.DROPPED, reason="plurality tie")


def aggregate_ar(counts: VoteCounts, taxonomy: EmotionTaxonomy,
                 utterance_id: str = "") -> LabelRecord:
    """All-inclusive rule: normalized vote distribution; never drops."""
    dist = tuple(counts.counts.get(c, 0) / counts.total for c in taxonomy.classes)
    return LabelRecord(utterance_id, LabelKind.DISTRIBUTION, distribution=dist)


def smooth(distribution: Sequence[float], cfg: SmoothingConfig) -> tuple[float, ...]:
    """q_c = (1 - eps) * p_c + eps / C; sum-preserving, argmax-preserving."""
    C = len(distribution)
    eps = cfg.epsilon
    return tuple((1.0 - eps) * p + eps / C for p in distribution)


def one_hot(clazz: str, taxonomy: EmotionTaxonomy) -> tuple[float, ...]:
    idx = taxonomy.index(clazz)
    return tuple(1.0 if i == idx else 0.0 for i in range(taxonomy.C))


# ---------------------------------------------------------------------------
# Dataset-level pipeline
# ---------------------------------------------------------------------------


@dataclass
class AggregationResult:
    """Labels for every scorable utterance plus loss accounting."""

    labels: list[LabelRecord]
    unscorable: list[str] = field(default_factory=list)  # typed-description-only ids

    @property
    def kept(self) -> list[LabelRecord]:
        return [r for r in self.labels if r.kind is not LabelKind.DROPPED]

    @property
    def dropped(self) -> list[LabelRecord]:
        return [r for r in self.labels if r.kind is LabelKind.DROPPED]


def aggregate_dataset(utterances: Iterable[UtteranceAnnotations],
                      rule: str,
                      taxonomy: EmotionTaxonomy,
                      smoothing: SmoothingConfig | None = SmoothingConfig(),
                      smooth_singles: bool = False) -> AggregationResult:
    """Apply one aggregation rule across a dataset.

    AR distributions are smoothed when ``smoothing`` is given.  MR/PR one-hot
    targets stay hard unless ``smooth_singles`` is set, in which case they are
    emitted as smoothed distributions.  Typed-description-only utterances are
    excluded and reported via ``unscorable`` (they belong to the relabel
    pipeline, not aggregation).
    """
    if rule not in RULES:
        raise AggregationError(f"unknown aggregation rule '{rule}'", known=list(RULES))
    result = AggregationResult(labels=[])
    for utt in utterances:
        try:
            counts = count_votes(utt, taxonomy)
        except UnscorableUtterance:
            result.unscorable.append(utt.utterance_id)
            continue
        if rule == "ar":
            rec = aggregate_ar(counts, taxonomy, utt.utterance_id)
        elif rule == "mr":
            rec = aggregate_mr(counts, utt.utterance_id)
        else:
            rec = aggregate_pr(counts, utt.utterance_id)

        if rec.kind is LabelKind.DISTRIBUTION and smoothing and smoothing.epsilon > 0:
            rec = LabelRecord(rec.utterance_id, LabelKind.DISTRIBUTION,
                              distribution=smooth(rec.distribution, smoothing),
                              smoothed=True)
        elif rec.kind is LabelKind.SINGLE and smooth_singles and smoothing \
                and smoothing.epsilon > 0:
            rec = LabelRecord(rec.utterance_id, LabelKind.DISTRIBUTION,
                              distribution=smooth(one_hot(rec.clazz, taxonomy), smoothing),
                              smoothed=True)
        result.labels.append(rec)
    return result


def data_loss_report(utterances: Sequence[UtteranceAnnotations],
                     taxonomy: EmotionTaxonomy) -> dict:
    """Per-rule drop ratios over the scorable part of a dataset.

    AR never drops, so its ratio is exactly 0; MR loss >= PR loss because a
    unique majority is always a unique plurality.
    """
    if not utterances:
        raise AggregationError("cannot report data loss for an empty dataset")
    per_rule = {}
    for rule in RULES:
        res = aggregate_dataset(utterances, rule, taxonomy, smoothing=None)
        total = len(res.labels)
        dropped = len(res.dropped)
        per_rule[rule] = {
            "total": total,
            "dropped": dropped,
            "ratio": (dropped / total) if total else 0.0,
        }
    unscorable = len(utterances) - per_rule["ar"]["total"]
    return {"rules": per_rule, "unscorable": unscorable}
