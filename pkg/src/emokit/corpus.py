"""Canonical data model and file ingestion.

All records live in JSON Lines files (one utterance per line) so that
partition and prediction files stay diffable and streamable.  Parsing is
strict: unknown emotion classes, duplicate utterance ids, and malformed
lines are hard errors with line numbers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, TextIO

from .errors import CorpusFormatError, TaxonomyError

# ---------------------------------------------------------------------------
# Taxonomy
# ---------------------------------------------------------------------------

#: Class order of the shipped 8-class primary taxonomy.  The order matters:
#: distribution vectors, relabel wire strings, and prediction files all use it.
POD_PRIMARY_CLASSES = (
    "angry", "sad", "disgust", "contempt", "fear", "neutral", "surprise", "happy",
)


@dataclass(frozen=True)
class EmotionTaxonomy:
    """Ordered, immutable list of emotion classes.

    ``C`` (the number of classes) and the class order define the dimension
    and layout of every distribution vector downstream.
    """

    name: str
    classes: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.classes) < 2:
            raise TaxonomyError(f"taxonomy '{self.name}' needs >= 2 classes",
                                classes=list(self.classes))
        if len(set(self.classes)) != len(self.classes):
            raise TaxonomyError(f"taxonomy '{self.name}' has duplicate class names",
                                classes=list(self.classes))

    @property
    def C(self) -> int:
        return len(self.classes)

    def index(self, name: str) -> int:
        """Index of a class; case-sensitive exact match."""
        try:
            return self.classes.index(name)
        except ValueError:
            raise TaxonomyError(f"unknown emotion class '{name}'",
                                taxonomy=self.name, known=list(self.classes)) from None

    def __contains__(self, name: object) -> bool:
        return name in self.classes

    def to_json(self) -> dict:
        return {"name": self.name, "classes": list(self.classes)}


def taxonomy_from_json(data: dict) -> EmotionTaxonomy:
    if not isinstance(data, dict) or "name" not in data or "classes" not in data:
        raise TaxonomyError("taxonomy config must be {'name': str, 'classes': [str,...]}")
    return EmotionTaxonomy(name=str(data["name"]), classes=tuple(data["classes"]))


def load_taxonomy(path: str | Path) -> EmotionTaxonomy:
    """Load a taxonomy config file ({"name", "classes"})."""
    with open(path, encoding="utf-8") as fh:
        return taxonomy_from_json(json.load(fh))


def builtin_taxonomy(name: str) -> EmotionTaxonomy:
    """Return a taxonomy shipped with the package (e.g. ``pod-primary``)."""
    res = resources.files("emokit.resources").joinpath(f"taxonomy_{name.replace('-', '_')}.json")
    if not res.is_file():
        raise TaxonomyError(f"no builtin taxonomy '{name}'")
    return taxonomy_from_json(json.loads(res.read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# Annotations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RaterVote:
    """One rater's annotation: a multi-select emotion set and/or free text.

    Typed descriptions are stored raw; no typo correction or normalization.
    """

    rater_id: str
    emotions: frozenset[str]
    typed_description: str | None = None

    def __post_init__(self) -> None:
        if not self.emotions and not self.typed_description:
            raise CorpusFormatError(
                f"vote by '{self.rater_id}' has neither emotions nor a typed description")

    def to_json(self) -> dict:
        return {
            "rater_id": self.rater_id,
            # sorted for stable serialization; vote semantics are set-like
            "emotions": sorted(self.emotions),
            "typed_description": self.typed_description,
        }


@dataclass(frozen=True)
class UtteranceAnnotations:
    """All per-rater votes for one utterance, plus speaker/dyad metadata."""

    utterance_id: str
    dataset: str
    speaker_id: str
    votes: tuple[RaterVote, ...]
    dyad_id: str | None = None

    def __post_init__(self) -> None:
        if not self.votes:
            raise CorpusFormatError(f"utterance '{self.utterance_id}' has no votes")

    def has_emotion_votes(self) -> bool:
        """True if at least one rater selected at least one emotion class."""
        return any(v.emotions for v in self.votes)

    def typed_descriptions(self) -> list[str]:
        return [v.typed_description for v in self.votes if v.typed_description]

    def to_json(self) -> dict:
        return {
            "utterance_id": self.utterance_id,
            "dataset": self.dataset,
            "speaker_id": self.speaker_id,
            "dyad_id": self.dyad_id,
            "votes": [v.to_json() for v in self.votes],
        }


@dataclass(frozen=True)
class PredictionRecord:
    """One model prediction: a C-dim vector of non-negative reals.

    The vector may be a distribution or a pre-binarized multi-hot row;
    either way entries follow taxonomy class order.
    """

    utterance_id: str
    distribution: tuple[float, ...]

    def to_json(self) -> dict:
        return {"utterance_id": self.utterance_id, "distribution": list(self.distribution)}


# ---------------------------------------------------------------------------
# Parsing helpers
# ---------------------------------------------------------------------------


def _iter_jsonl(fh: TextIO, path: str) -> Iterator[tuple[int, dict]]:
    for lineno, line in enumerate(fh, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"{path}:{lineno}: malformed JSON: {exc.msg}",
                                    path=path, line=lineno) from exc
        if not isinstance(obj, dict):
            raise CorpusFormatError(f"{path}:{lineno}: expected a JSON object",
                                    path=path, line=lineno)
        yield lineno, obj


def _parse_vote(raw: dict, taxonomy: EmotionTaxonomy, where: str) -> RaterVote:
    emotions = raw.get("emotions", [])
    if not isinstance(emotions, list):
        raise CorpusFormatError(f"{where}: 'emotions' must be a list")
    for name in emotions:
        if name not in taxonomy:
            raise CorpusFormatError(
                f"{where}: unknown emotion class '{name}' for taxonomy '{taxonomy.name}'")
    desc = raw.get("typed_description")
    if desc is not None and not isinstance(desc, str):
        raise CorpusFormatError(f"{where}: 'typed_description' must be a string or null")
    try:
        return RaterVote(
            rater_id=str(raw.get("rater_id", "")),
            emotions=frozenset(emotions),
            typed_description=desc,
        )
    except CorpusFormatError as exc:
        raise CorpusFormatError(f"{where}: {exc.message}") from None


def load_annotations(path: str | Path,
                     taxonomy: EmotionTaxonomy) -> list[UtteranceAnnotations]:
    """Load an annotation JSONL file, validating against ``taxonomy``.

    Typed descriptions are preserved verbatim.  Duplicate utterance ids and
    unknown class names are errors (reported with line numbers).
    """
    records: list[UtteranceAnnotations] = []
    seen: set[str] = set()
    spath = str(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, obj in _iter_jsonl(fh, spath):
            where = f"{spath}:{lineno}"
            utt_id = obj.get("utterance_id")
            if not isinstance(utt_id, str) or not utt_id:
                raise CorpusFormatError(f"{where}: missing 'utterance_id'", line=lineno)
            if utt_id in seen:
                raise CorpusFormatError(f"{where}: duplicate utterance_id '{utt_id}'",
                                        line=lineno, utterance_id=utt_id)
            seen.add(utt_id)
            raw_votes = obj.get("votes")
            if not isinstance(raw_votes, list) or not raw_votes:
                raise CorpusFormatError(f"{where}: 'votes' must be a non-empty list",
                                        line=lineno)
            votes = tuple(_parse_vote(v, taxonomy, where) for v in raw_votes)
            dyad = obj.get("dyad_id")
            records.append(UtteranceAnnotations(
                utterance_id=utt_id,
                dataset=str(obj.get("dataset", "")),
                speaker_id=str(obj.get("speaker_id", "")),
                dyad_id=str(dyad) if dyad is not None else None,
                votes=votes,
            ))
    return records


def load_predictions(path: str | Path,
                     taxonomy: EmotionTaxonomy) -> list[PredictionRecord]:
    """Load a prediction JSONL file; vectors must be C-dim, finite, >= 0."""
    records: list[PredictionRecord] = []
    seen: set[str] = set()
    spath = str(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, obj in _iter_jsonl(fh, spath):
            where = f"{spath}:{lineno}"
            utt_id = obj.get("utterance_id")
            if not isinstance(utt_id, str) or not utt_id:
                raise CorpusFormatError(f"{where}: missing 'utterance_id'", line=lineno)
            if utt_id in seen:
                raise CorpusFormatError(f"{where}: duplicate utterance_id '{utt_id}'",
                                        line=lineno, utterance_id=utt_id)
            seen.add(utt_id)
            dist = obj.get("distribution")
            if not isinstance(dist, list):
                raise CorpusFormatError(f"{where}: 'distribution' must be a list", line=lineno)
            if len(dist) != taxonomy.C:
                raise CorpusFormatError(
                    f"{where}: distribution has {len(dist)} entries, expected C={taxonomy.C}",
                    line=lineno, expected=taxonomy.C, got=len(dist))
            values: list[float] = []
            for v in dist:
                fv = float(v)
                if not math.isfinite(fv) or fv < 0:
                    raise CorpusFormatError(
                        f"{where}: distribution entries must be finite and >= 0, got {v!r}",
                        line=lineno)
                values.append(fv)
            records.append(PredictionRecord(utterance_id=utt_id,
                                            distribution=tuple(values)))
    return records


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def dump_jsonl(records: Iterable, path: str | Path) -> None:
    """Write records (anything with ``to_json``) as one JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")
