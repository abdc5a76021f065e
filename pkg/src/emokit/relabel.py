"""LLM relabeling of typed descriptions.

Each batch item goes over the wire as ``descriptions#d1,...,d8`` (pod-primary
class order), items joined by ``|``; ``#``, ``|`` and ``\\`` inside
descriptions are backslash-escaped since they are structural.  The model
must answer every batch-local index with all eight emotion keys and a
reason; near-miss sums (within 1e-2) are renormalized, anything worse is
retried, and items that keep failing fall back to their reference
distribution, which remains a valid label.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .aggregation import LabelKind, LabelRecord, SmoothingConfig, smooth
from .corpus import POD_PRIMARY_CLASSES, UtteranceAnnotations
from .errors import RelabelError

logger = logging.getLogger("emokit.relabel")

PROMPT_VERSION = "v1"
SUM_TOLERANCE = 1e-2
MODIFIED_TOLERANCE = 1e-6
MAX_BATCH = 30


def build_prompt(version: str = PROMPT_VERSION) -> str:
    """The system prompt, byte-stable, loaded from a versioned resource."""
    res = resources.files("emokit.resources").joinpath(f"relabel_prompt_{version}.txt")
    if not res.is_file():
        raise RelabelError(f"no prompt resource for version '{version}'")
    return res.read_text(encoding="utf-8")


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RelabelItem:
    """One utterance queued for relabeling."""

    index: int
    descriptions: str
    reference: tuple[float, ...]  # 8-dim, pod-primary order
    utterance_id: str = ""

    def __post_init__(self) -> None:
        if len(self.reference) != len(POD_PRIMARY_CLASSES):
            raise RelabelError(
                f"reference must have {len(POD_PRIMARY_CLASSES)} entries, "
                f"got {len(self.reference)}")
        total = sum(self.reference)
        if abs(total - 1.0) > 1e-6:
            raise RelabelError(f"reference must sum to 1, got {total!r}",
                               utterance_id=self.utterance_id)


@dataclass(frozen=True)
class RelabelResult:
    """One validated model answer."""

    index: int
    adjusted: tuple[float, ...]
    reason: str
    modified: bool


@dataclass(frozen=True)
class ClientConfig:
    model: str = "gpt-4-0125-preview"
    temperature: float = 0.0
    seed: int = 7
    batch_size: int = MAX_BATCH
    cost_per_sample_usd: float = 0.0045
    max_retries: int = 3
    api_url: str = "https://api.openai.com/v1/chat/completions"
    api_key_env: str = "EMOKIT_API_KEY"

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise RelabelError(f"batch size must be >= 1, got {self.batch_size}")
        if self.temperature < 0:
            raise RelabelError(f"temperature must be >= 0, got {self.temperature}")


# ---------------------------------------------------------------------------
# Wire format
# ---------------------------------------------------------------------------

_STRUCTURAL = ("#", "|")


def escape_description(text: str) -> str:
    out = text.replace("\\", "\\\\")
    for ch in _STRUCTURAL:
        out = out.replace(ch, "\\" + ch)
    return out


def unescape_description(text: str) -> str:
    chars: list[str] = []
    it = iter(text)
    for ch in it:
        if ch == "\\":
            chars.append(next(it, "\\"))
        else:
            chars.append(ch)
    return "".join(chars)


def _format_component(v: float) -> str:
    # one decimal place minimum: 1 -> "1.0", 0.25 -> "0.25"
    if abs(v - round(v, 1)) < 1e-12:
        return f"{round(v, 1):.1f}"
    return repr(float(v))


def encode_item(item: RelabelItem) -> str:
    ref = ",".join(_format_component(v) for v in item.reference)
    return f"{escape_description(item.descriptions)}#{ref}"


def encode_batch(items: Sequence[RelabelItem]) -> str:
    """Render up to 30 items as the model's user message."""
    if not 1 <= len(items) <= MAX_BATCH:
        raise RelabelError(f"batch must have 1..{MAX_BATCH} items, got {len(items)}")
    return "|".join(encode_item(item) for item in items)


def _split_structural(text: str, sep: str) -> list[str]:
    parts: list[str] = []
    current: list[str] = []
    escaped = False
    for ch in text:
        if escaped:
            current.append(ch)
            escaped = False
        elif ch == "\\":
            current.append(ch)
            escaped = True
        elif ch == sep:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
    parts.append("".join(current))
    return parts


def decode_batch(encoded: str) -> list[tuple[str, tuple[float, ...]]]:
    """Inverse of :func:`encode_batch`: (description, reference) pairs."""
    pairs: list[tuple[str, tuple[float, ...]]] = []
    for part in _split_structural(encoded, "|"):
        fields = _split_structural(part, "#")
        if len(fields) != 2:
            raise RelabelError(f"malformed wire item: {part!r}")
        desc, ref = fields
        pairs.append((unescape_description(desc),
                      tuple(float(v) for v in ref.split(","))))
    return pairs


# ---------------------------------------------------------------------------
# Response validation
# ---------------------------------------------------------------------------


@dataclass
class ParsedBatch:
    """Validated answers plus batch-local indices that need a retry."""

    results: list[RelabelResult]
    retry: list[int] = field(default_factory=list)


def parse_response(raw: str, batch: Sequence[RelabelItem]) -> ParsedBatch:
    """Validate a JSON-mode response against the batch that produced it.

    Structural problems (malformed JSON, missing or extra batch-local
    indices) raise; per-item problems (bad sum, missing emotion keys,
    negative mass) flag that item for retry instead of failing the batch.
    """
    try:
        payload = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise RelabelError(f"malformed JSON response: {exc.msg}") from exc
    if not isinstance(payload, dict):
        raise RelabelError("response must be a JSON object keyed by index")

    by_index: dict[int, dict] = {}
    for key, value in payload.items():
        try:
            idx = int(key)
        except (TypeError, ValueError):
            raise RelabelError(f"response key {key!r} is not an index") from None
        by_index[idx] = value

    expected = set(range(len(batch)))
    missing = sorted(expected - set(by_index))
    if missing:
        raise RelabelError(f"response is missing indices {missing}", missing=missing)
    extra = sorted(set(by_index) - expected)
    if extra:
        raise RelabelError(f"response has unexpected indices {extra}", extra=extra)

    parsed = ParsedBatch(results=[])
    for pos, item in enumerate(batch):
        entry = by_index[pos]
        if not isinstance(entry, dict):
            parsed.retry.append(pos)
            continue
        try:
            values = [float(entry[name]) for name in POD_PRIMARY_CLASSES]
        except (KeyError, TypeError, ValueError):
            parsed.retry.append(pos)
            continue
        total = sum(values)
        if any(v < 0 for v in values) or abs(total - 1.0) > SUM_TOLERANCE:
            parsed.retry.append(pos)
            continue
        adjusted = tuple(v / total for v in values)
        modified = any(abs(a - r) > MODIFIED_TOLERANCE
                       for a, r in zip(adjusted, item.reference))
        parsed.results.append(RelabelResult(
            index=item.index,
            adjusted=adjusted,
            reason=str(entry.get("reason", "")),
            modified=modified,
        ))
    return parsed


# ---------------------------------------------------------------------------
# Transports
# ---------------------------------------------------------------------------


class ChatTransport(Protocol):
    """Anything that can answer (system prompt, user content) with raw JSON text."""

    def complete(self, system_prompt: str, user_content: str) -> str: ...


class EchoTransport:
    """Deterministic offline transport: keeps every reference unchanged."""

    reason = "Reference distribution maintained; offline transport performs no adjustment."

    def complete(self, system_prompt: str, user_content: str) -> str:
        answer = {}
        for pos, (_, ref) in enumerate(decode_batch(user_content)):
            entry = {name: ref[i] for i, name in enumerate(POD_PRIMARY_CLASSES)}
            entry["reason"] = self.reason
            answer[str(pos)] = entry
        return json.dumps(answer)


class MockTransport:
    """Fixture-backed transport for tests and the CLI ``--mock`` mode.

    Responses are looked up by a digest of the user content
    (``<dir>/<sha256[:16]>.json``); unmatched batches fall back to echoing
    the reference distributions so offline runs always complete.
    """

    def __init__(self, fixtures_dir: str | Path) -> None:
        self.fixtures_dir = Path(fixtures_dir)
        self._echo = EchoTransport()

    @staticmethod
    def digest(user_content: str) -> str:
        return hashlib.sha256(user_content.encode("utf-8")).hexdigest()[:16]

    def complete(self, system_prompt: str, user_content: str) -> str:
        path = self.fixtures_dir / f"{self.digest(user_content)}.json"
        if path.is_file():
            return path.read_text(encoding="utf-8")
        return self._echo.complete(system_prompt, user_content)


class HttpChatTransport:
    """Live chat-completion client (JSON response mode, temperature 0, seed 7)."""

    def __init__(self, config: ClientConfig) -> None:
        self.config = config
        key = os.environ.get(config.api_key_env)
        if not key:
            raise RelabelError(f"set {config.api_key_env} to use the live transport")
        self._key = key

    def complete(self, system_prompt: str, user_content: str) -> str:
        import httpx

        response = httpx.post(
            self.config.api_url,
            headers={"Authorization": f"Bearer {self._key}"},
            json={
                "temperature": self.config.temperature,
                "seed": self.config.seed,
                "model": self.config.model,
                "response_format": {"type": "json_object"},
                "messages": [
                    {"role": "system", "content": system_prompt},
                    {"role": "user", "content": user_content},
                ],
            },
            timeout=120.0,
        )
        response.raise_for_status()
        return response.json()["choices"][0]["message"]["content"]


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RelabelRecord:
    """Relabel artifact row: reference vs adjusted distribution for one utterance."""

    utterance_id: str
    reference: tuple[float, ...]
    adjusted: tuple[float, ...]
    reason: str
    modified: bool

    def to_json(self) -> dict:
        return {
            "utterance_id": self.utterance_id,
            "reference": list(self.reference),
            "adjusted": list(self.adjusted),
            "reason": self.reason,
            "modified": self.modified,
        }

    @staticmethod
    def from_json(obj: dict) -> "RelabelRecord":
        return RelabelRecord(
            utterance_id=obj["utterance_id"],
            reference=tuple(float(v) for v in obj["reference"]),
            adjusted=tuple(float(v) for v in obj["adjusted"]),
            reason=obj.get("reason", ""),
            modified=bool(obj["modified"]),
        )


@dataclass(frozen=True)
class RelabelStats:
    total: int
    modified: int

    @property
    def modified_fraction(self) -> float:
        return self.modified / self.total if self.total else 0.0

    def to_json(self) -> dict:
        return {"total": self.total, "modified": self.modified,
                "modified_fraction": self.modified_fraction}


def select_items(utterances: Sequence[UtteranceAnnotations],
                 labels: Sequence[LabelRecord]) -> list[RelabelItem]:
    """Queue every utterance with a typed description and a distribution label."""
    by_id = {lab.utterance_id: lab for lab in labels}
    items: list[RelabelItem] = []
    for utt in utterances:
        descs = utt.typed_descriptions()
        if not descs:
            continue
        label = by_id.get(utt.utterance_id)
        if label is None or label.kind is not LabelKind.DISTRIBUTION:
            continue
        items.append(RelabelItem(
            index=len(items),
            descriptions=",".join(descs),
            reference=label.distribution,
            utterance_id=utt.utterance_id,
        ))
    return items


def run_batches(items: Sequence[RelabelItem],
                transport: ChatTransport,
                config: ClientConfig = ClientConfig(),
                prompt: str | None = None) -> list[RelabelRecord]:
    """Dispatch items in batches with retries; exhausted items keep their reference."""
    prompt = prompt if prompt is not None else build_prompt()
    by_index = {item.index: item for item in items}
    answered: dict[int, RelabelResult] = {}
    pending = [item.index for item in items]

    for attempt in range(1, config.max_retries + 1):
        if not pending:
            break
        still_pending: list[int] = []
        for start in range(0, len(pending), config.batch_size):
            batch = [by_index[i] for i in pending[start:start + config.batch_size]]
            try:
                raw = transport.complete(prompt, encode_batch(batch))
                parsed = parse_response(raw, batch)
            except RelabelError as exc:
                logger.warning("attempt %d: batch of %d failed: %s",
                               attempt, len(batch), exc.message)
                still_pending.extend(item.index for item in batch)
                continue
            for result in parsed.results:
                answered[result.index] = result
            still_pending.extend(batch[pos].index for pos in parsed.retry)
        pending = still_pending

    records: list[RelabelRecord] = []
    for item in items:
        result = answered.get(item.index)
        if result is None:
            logger.warning("utterance '%s' unanswered after %d attempts; "
                           "keeping reference distribution",
                           item.utterance_id, config.max_retries)
            records.append(RelabelRecord(
                utterance_id=item.utterance_id,
                reference=item.reference,
                adjusted=item.reference,
                reason=f"fallback: reference kept after {config.max_retries} failed attempts",
                modified=False,
            ))
        else:
            records.append(RelabelRecord(
                utterance_id=item.utterance_id,
                reference=item.reference,
                adjusted=result.adjusted,
                reason=result.reason,
                modified=result.modified,
            ))
    return records


def relabel_dataset(utterances: Sequence[UtteranceAnnotations],
                    labels: Sequence[LabelRecord],
                    transport: ChatTransport,
                    config: ClientConfig = ClientConfig(),
                    existing: Iterable[RelabelRecord] = ()) -> tuple[list[RelabelRecord],
                                                                     RelabelStats]:
    """Relabel all typed-description utterances, resuming past partial runs.

    ``existing`` records (from a previous run's artifact) are kept verbatim;
    only unanswered utterances are re-requested, so the merge stays idempotent.
    """
    done = {rec.utterance_id: rec for rec in existing}
    items = select_items(utterances, labels)
    todo = [replace(item, index=i)
            for i, item in enumerate(it for it in items if it.utterance_id not in done)]
    fresh = run_batches(todo, transport, config) if todo else []
    by_id = {**done, **{rec.utterance_id: rec for rec in fresh}}
    records = [by_id[item.utterance_id] for item in items]
    stats = RelabelStats(total=len(records),
                         modified=sum(1 for r in records if r.modified))
    return records, stats


def merge(records: Sequence[RelabelRecord],
          labels: Sequence[LabelRecord],
          resmooth: "SmoothingConfig | None" = None) -> tuple[list[LabelRecord],
                                                              RelabelStats]:
    """Replace reference distributions with adjusted ones.

    Unrelabeled rows pass through untouched.  Adjusted distributions are not
    smoothed again unless ``resmooth`` is given.
    """
    by_id = {lab.utterance_id: lab for lab in labels}
    for rec in records:
        label = by_id.get(rec.utterance_id)
        if label is None:
            raise RelabelError(f"relabel result for unknown utterance '{rec.utterance_id}'",
                               utterance_id=rec.utterance_id)
        if label.kind is not LabelKind.DISTRIBUTION:
            raise RelabelError(f"utterance '{rec.utterance_id}' has no distribution label "
                               "to adjust", utterance_id=rec.utterance_id)
        adjusted = rec.adjusted
        smoothed = label.smoothed
        if resmooth is not None and resmooth.epsilon > 0:
            adjusted = smooth(adjusted, resmooth)
            smoothed = True
        by_id[rec.utterance_id] = LabelRecord(
            utterance_id=rec.utterance_id,
            kind=LabelKind.DISTRIBUTION,
            distribution=adjusted,
            smoothed=smoothed,
        )
    stats = RelabelStats(total=len(records),
                         modified=sum(1 for r in records if r.modified))
    return [by_id[lab.utterance_id] for lab in labels], stats


def estimate_cost(n_samples: int, config: ClientConfig = ClientConfig()) -> float:
    """Projected spend in USD at the measured per-sample average."""
    if n_samples < 0:
        raise RelabelError(f"sample count must be >= 0, got {n_samples}")
    return n_samples * config.cost_per_sample_usd
