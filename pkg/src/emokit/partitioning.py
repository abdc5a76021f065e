"""Speaker-independent train/dev/test partitioning.

Schemes assign whole speaker groups (dyads or recording sessions) to splits
so that both sides of every dialogue land together; anything else leaks the
test speakers' voices into training via conversation-partner crosstalk.
Group membership ships as config so corrected tables can be dropped in.

Note on ``iemocap-5fold``: the published fold table places Dyad 4 in both
the train and test sets of fold 5.  The default scheme uses the strict
round-robin rotation (which matches the published folds 1-4 exactly);
``iemocap-5fold-printed`` preserves the published table for anyone who
wants to reproduce it, and fails leakage validation by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import UtteranceAnnotations
from .errors import PartitionError

SPLITS = ("train", "dev", "test")

BUILTIN_SCHEMES = (
    "iemocap-5fold",
    "improv-6fold",
    "cremad-5fold",
    "nnime-5fold",
    "iemocap-5fold-printed",
)


@dataclass(frozen=True)
class Fold:
    """Named groups per split for one cross-validation fold."""

    train: tuple[str, ...]
    dev: tuple[str, ...]
    test: tuple[str, ...]

    def splits_of(self, group: str) -> tuple[str, ...]:
        return tuple(s for s in SPLITS if group in getattr(self, s))


@dataclass(frozen=True)
class PartitionScheme:
    """Grouping of speakers plus a fold layout over the groups.

    ``key`` selects which annotation field maps an utterance to its group:
    ``dyad`` uses ``dyad_id``, ``speaker`` uses ``speaker_id``.

    ``allow_split_overlap`` exists only so the published IEMOCAP table can
    be loaded verbatim; :func:`assign` still refuses to place an utterance
    in two splits, so such a scheme is inspectable but not usable.
    """

    name: str
    key: str  # "dyad" | "speaker"
    groups: dict[str, frozenset[str]]
    folds: tuple[Fold, ...]
    allow_split_overlap: bool = False

    def __post_init__(self) -> None:
        if self.key not in ("dyad", "speaker"):
            raise PartitionError(f"scheme '{self.name}': key must be 'dyad' or 'speaker'")
        seen: dict[str, str] = {}
        for gname, members in self.groups.items():
            for m in members:
                if m in seen:
                    raise PartitionError(
                        f"scheme '{self.name}': member '{m}' in groups "
                        f"'{seen[m]}' and '{gname}'")
                seen[m] = gname
        for i, fold in enumerate(self.folds, start=1):
            named = list(fold.train) + list(fold.dev) + list(fold.test)
            unknown = [g for g in named if g not in self.groups]
            if unknown:
                raise PartitionError(f"scheme '{self.name}' fold {i}: unknown groups {unknown}")
            if len(set(named)) != len(named) and not self.allow_split_overlap:
                raise PartitionError(
                    f"scheme '{self.name}' fold {i}: a group appears in multiple splits")

    def group_of(self, member: str) -> str:
        for gname, members in self.groups.items():
            if member in members:
                return gname
        raise PartitionError(f"scheme '{self.name}': '{member}' is not in any group",
                             member=member)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "key": self.key,
            "groups": {g: sorted(m) for g, m in self.groups.items()},
            "folds": [{"train": list(f.train), "dev": list(f.dev), "test": list(f.test)}
                      for f in self.folds],
        }


@dataclass(frozen=True)
class PartitionPlan:
    """Per-fold utterance-id assignments produced by :func:`assign`."""

    scheme: str
    folds: tuple[dict[str, tuple[str, ...]], ...]  # split -> utterance ids

    def to_json(self) -> dict:
        return {
            "scheme": self.scheme,
            "folds": [{s: list(fold[s]) for s in SPLITS} for fold in self.folds],
        }

    @staticmethod
    def from_json(obj: dict) -> "PartitionPlan":
        folds = tuple(
            {s: tuple(fold.get(s, ())) for s in SPLITS} for fold in obj["folds"])
        return PartitionPlan(scheme=obj["scheme"], folds=folds)


# ---------------------------------------------------------------------------
# Scheme construction
# ---------------------------------------------------------------------------


def scheme_from_json(data: dict) -> PartitionScheme:
    try:
        folds = tuple(
            Fold(train=tuple(f["train"]), dev=tuple(f["dev"]), test=tuple(f["test"]))
            for f in data["folds"])
        return PartitionScheme(
            name=data["name"],
            key=data["key"],
            groups={g: frozenset(m) for g, m in data["groups"].items()},
            folds=folds,
            allow_split_overlap=bool(data.get("allow_split_overlap", False)),
        )
    except KeyError as exc:
        raise PartitionError(f"scheme config missing key {exc}") from exc


def load_scheme(path: str | Path) -> PartitionScheme:
    """Load a partition scheme config file."""
    with open(path, encoding="utf-8") as fh:
        return scheme_from_json(json.load(fh))


def builtin_scheme(name: str) -> PartitionScheme:
    """Return one of the shipped schemes (see ``BUILTIN_SCHEMES``)."""
    if name not in BUILTIN_SCHEMES:
        raise PartitionError(f"unknown scheme '{name}'", known=list(BUILTIN_SCHEMES))
    res = resources.files("emokit.resources").joinpath(
        f"scheme_{name.replace('-', '_')}.json")
    return scheme_from_json(json.loads(res.read_text(encoding="utf-8")))


def fixed_split_scheme(name: str,
                       split_members: dict[str, Iterable[str]],
                       key: str = "speaker") -> PartitionScheme:
    """Degenerate one-fold scheme for corpora with released train/dev/test splits."""
    missing = [s for s in SPLITS if s not in split_members]
    if missing:
        raise PartitionError(f"fixed split '{name}' missing splits {missing}")
    groups = {f"{name}-{s}": frozenset(split_members[s]) for s in SPLITS}
    fold = Fold(train=(f"{name}-train",), dev=(f"{name}-dev",), test=(f"{name}-test",))
    return PartitionScheme(name=name, key=key, groups=groups, folds=(fold,))


def load_fixed_split(path: str | Path, key: str = "speaker") -> PartitionScheme:
    """Load a released split file: {"name", "train": [...], "dev": [...], "test": [...]}."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return fixed_split_scheme(data["name"], {s: data[s] for s in SPLITS}, key=key)


# ---------------------------------------------------------------------------
# Assignment and leakage checks
# ---------------------------------------------------------------------------


def _utterance_key(utt: UtteranceAnnotations, scheme: PartitionScheme) -> str:
    if scheme.key == "dyad":
        if utt.dyad_id is None:
            raise PartitionError(
                f"utterance '{utt.utterance_id}' has no dyad_id but scheme "
                f"'{scheme.name}' partitions by dyad", utterance_id=utt.utterance_id)
        return utt.dyad_id
    return utt.speaker_id


def assign(scheme: PartitionScheme,
           corpus: Sequence[UtteranceAnnotations]) -> PartitionPlan:
    """Assign every utterance to splits per fold; unknown speakers are errors.

    Deterministic: input order is preserved within each split, so identical
    inputs serialize to byte-identical plan files.
    """
    member_to_group: dict[str, str] = {}
    for gname, members in scheme.groups.items():
        for m in members:
            member_to_group[m] = gname

    folds: list[dict[str, tuple[str, ...]]] = []
    for idx, fold in enumerate(scheme.folds, start=1):
        buckets: dict[str, list[str]] = {s: [] for s in SPLITS}
        for utt in corpus:
            member = _utterance_key(utt, scheme)
            group = member_to_group.get(member)
            if group is None:
                raise PartitionError(
                    f"utterance '{utt.utterance_id}': '{member}' is not in any group of "
                    f"scheme '{scheme.name}'",
                    utterance_id=utt.utterance_id, member=member)
            splits = fold.splits_of(group)
            if len(splits) > 1:
                raise PartitionError(
                    f"utterance '{utt.utterance_id}': group '{group}' sits in splits "
                    f"{list(splits)} of fold {idx} in scheme '{scheme.name}'",
                    utterance_id=utt.utterance_id, group=group, fold=idx)
            if splits:
                buckets[splits[0]].append(utt.utterance_id)
        folds.append({s: tuple(buckets[s]) for s in SPLITS})
    return PartitionPlan(scheme=scheme.name, folds=tuple(folds))


@dataclass(frozen=True)
class LeakageViolation:
    fold: int          # 1-based
    kind: str          # "speaker" | "dyad"
    subject: str       # offending speaker or dyad id
    splits: tuple[str, ...]

    def to_json(self) -> dict:
        return {"fold": self.fold, "kind": self.kind, "subject": self.subject,
                "splits": list(self.splits)}


@dataclass(frozen=True)
class LeakageReport:
    violations: tuple[LeakageViolation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {"ok": self.ok, "violations": [v.to_json() for v in self.violations]}


def check_leakage(plan: PartitionPlan,
                  corpus: Sequence[UtteranceAnnotations]) -> LeakageReport:
    """Report speakers or dyads spanning splits within any fold.

    An utterance id in the plan that is absent from the corpus breaks the
    coverage precondition and raises; violations themselves are report
    content, not errors.
    """
    by_id = {u.utterance_id: u for u in corpus}
    violations: list[LeakageViolation] = []
    for idx, fold in enumerate(plan.folds, start=1):
        speaker_splits: dict[str, set[str]] = {}
        dyad_splits: dict[str, set[str]] = {}
        for split in SPLITS:
            for utt_id in fold[split]:
                utt = by_id.get(utt_id)
                if utt is None:
                    raise PartitionError(
                        f"plan references unknown utterance '{utt_id}'",
                        utterance_id=utt_id, fold=idx)
                speaker_splits.setdefault(utt.speaker_id, set()).add(split)
                if utt.dyad_id is not None:
                    dyad_splits.setdefault(utt.dyad_id, set()).add(split)
        for speaker, splits in sorted(speaker_splits.items()):
            if len(splits) > 1:
                violations.append(LeakageViolation(
                    fold=idx, kind="speaker", subject=speaker,
                    splits=tuple(sorted(splits))))
        for dyad, splits in sorted(dyad_splits.items()):
            if len(splits) > 1:
                violations.append(LeakageViolation(
                    fold=idx, kind="dyad", subject=dyad,
                    splits=tuple(sorted(splits))))
    return LeakageReport(violations=tuple(violations))


def save_plan(plan: PartitionPlan, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(plan.to_json(), fh, indent=2)
        fh.write("\n")


def load_plan(path: str | Path) -> PartitionPlan:
    with open(path, encoding="utf-8") as fh:
        return PartitionPlan.from_json(json.load(fh))
