"""Community leaderboard: submission intake, scoring, persistence, comparison.

Submissions are validated against the declared condition's test utterances,
scored synchronously through the same evaluation code path as the offline
CLI, and appended to a JSONL log.  The log is the source of truth: the
in-memory index is rebuilt by replaying it at startup, and rankings are a
pure fold over it.  Gold labels live in the data directory but are never
served by any endpoint.
"""

# No postponed annotations here: FastAPI resolves endpoint signatures at
# definition time, inside create_app's scope.

import hashlib
import json
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

from .aggregation import LabelKind, LabelRecord
from .corpus import (EmotionTaxonomy, PredictionRecord, builtin_taxonomy,
                     load_taxonomy)
from .errors import EmokitError, EvaluationError
from .evaluation import ClassScore, EvalResult, evaluate_predictions


class LeaderboardError(EmokitError):
    """Submission validation or lookup failure."""

    def __init__(self, message: str, status: int = 400, **payload: object) -> None:
        super().__init__(message, **payload)
        self.status = status


# ---------------------------------------------------------------------------
# Store
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Condition:
    """One scoreable evaluation context: a dataset plus a fold/split id."""

    dataset: str
    condition: str
    taxonomy: EmotionTaxonomy
    golds: tuple[LabelRecord, ...]

    @property
    def test_ids(self) -> frozenset[str]:
        return frozenset(g.utterance_id for g in self.golds
                         if g.kind is not LabelKind.DROPPED)


@dataclass(frozen=True)
class Submission:
    id: str
    model_name: str
    dataset: str
    condition: str
    created_at: str
    idempotency_key: str | None
    payload_hash: str
    predictions: tuple[PredictionRecord, ...]
    score: EvalResult

    def to_json(self, include_predictions: bool = False,
                taxonomy: EmotionTaxonomy | None = None) -> dict:
        out = {
            "id": self.id,
            "model_name": self.model_name,
            "dataset": self.dataset,
            "condition": self.condition,
            "created_at": self.created_at,
            "idempotency_key": self.idempotency_key,
            "payload_hash": self.payload_hash,
            "n_predictions": len(self.predictions),
            "score": self.score.to_json(taxonomy, dataset=self.dataset),
        }
        if include_predictions:
            out["predictions"] = [p.to_json() for p in self.predictions]
        return out


@dataclass(frozen=True)
class LeaderboardRow:
    model_name: str
    scores: dict[str, float]  # condition -> macro-F1
    created_at: str           # earliest submission backing the row's sort key

    @property
    def average(self) -> float:
        return sum(self.scores.values()) / len(self.scores)

    def to_json(self) -> dict:
        return {"model_name": self.model_name, "scores": dict(self.scores),
                "average": self.average}


def _payload_hash(model: str, dataset: str, condition: str,
                  predictions: Sequence[PredictionRecord]) -> str:
    blob = json.dumps({
        "model": model, "dataset": dataset, "condition": condition,
        "predictions": [p.to_json() for p in predictions],
    }, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


class SubmissionStore:
    """Append-only submission log plus the condition registry.

    Layout under ``data_dir``: ``conditions.json`` (registry),
    ``golds/*.jsonl`` (label records), ``submissions.log`` (the log).
    """

    def __init__(self, data_dir: str | Path,
                 clock: Callable[[], str] | None = None) -> None:
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.data_dir / "submissions.log"
        self._clock = clock or (lambda: datetime.now(timezone.utc).isoformat())
        self._lock = threading.Lock()
        self._conditions: dict[tuple[str, str], Condition] = {}
        self._submissions: dict[str, Submission] = {}
        self._order: list[str] = []
        self._by_key: dict[str, Submission] = {}
        self._counter = 0
        self._load_conditions()
        self._replay_log()

    # -- conditions ---------------------------------------------------------

    def _load_conditions(self) -> None:
        registry = self.data_dir / "conditions.json"
        if not registry.is_file():
            return
        for entry in json.loads(registry.read_text(encoding="utf-8")):
            tax_ref = entry["taxonomy"]
            if str(tax_ref).endswith(".json"):
                taxonomy = load_taxonomy(self.data_dir / tax_ref)
            else:
                taxonomy = builtin_taxonomy(tax_ref)
            golds = []
            with open(self.data_dir / entry["gold_labels"], encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        golds.append(LabelRecord.from_json(json.loads(line)))
            cond = Condition(dataset=entry["dataset"], condition=entry["condition"],
                             taxonomy=taxonomy, golds=tuple(golds))
            self._conditions[(cond.dataset, cond.condition)] = cond

    def register_condition(self, dataset: str, condition: str,
                           taxonomy_ref: str,
                           golds: Sequence[LabelRecord]) -> None:
        """Add a condition to the registry and persist its gold labels."""
        golds_dir = self.data_dir / "golds"
        golds_dir.mkdir(exist_ok=True)
        gold_rel = f"golds/{dataset}__{condition}.jsonl"
        with open(self.data_dir / gold_rel, "w", encoding="utf-8") as fh:
            for rec in golds:
                fh.write(json.dumps(rec.to_json()) + "\n")
        registry = self.data_dir / "conditions.json"
        entries = json.loads(registry.read_text(encoding="utf-8")) \
            if registry.is_file() else []
        entries = [e for e in entries
                   if not (e["dataset"] == dataset and e["condition"] == condition)]
        entries.append({"dataset": dataset, "condition": condition,
                        "taxonomy": taxonomy_ref, "gold_labels": gold_rel})
        registry.write_text(json.dumps(entries, indent=2) + "\n", encoding="utf-8")
        self._conditions.clear()
        self._load_conditions()

    def condition(self, dataset: str, condition: str) -> Condition:
        cond = self._conditions.get((dataset, condition))
        if cond is None:
            raise LeaderboardError(
                f"unknown condition '{dataset}/{condition}'", status=404,
                known=sorted(f"{d}/{c}" for d, c in self._conditions))
        return cond

    @property
    def datasets(self) -> list[str]:
        return sorted({d for d, _ in self._conditions})

    # -- log ----------------------------------------------------------------

    def _replay_log(self) -> None:
        if not self.log_path.is_file():
            return
        with open(self.log_path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                self._index(self._submission_from_json(json.loads(line)))

    @staticmethod
    def _submission_from_json(obj: dict) -> Submission:
        score = obj["score"]
        result = EvalResult(
            macro_f1=score["macro_f1"],
            per_class=tuple(ClassScore(c["precision"], c["recall"], c["f1"])
                            for c in score["per_class"]),
            n_samples=score["n_samples"],
        )
        preds = tuple(PredictionRecord(p["utterance_id"], tuple(p["distribution"]))
                      for p in obj["predictions"])
        return Submission(
            id=obj["id"], model_name=obj["model_name"], dataset=obj["dataset"],
            condition=obj["condition"], created_at=obj["created_at"],
            idempotency_key=obj.get("idempotency_key"),
            payload_hash=obj["payload_hash"], predictions=preds, score=result)

    def _index(self, sub: Submission) -> None:
        self._submissions[sub.id] = sub
        self._order.append(sub.id)
        self._counter += 1
        if sub.idempotency_key:
            self._by_key[sub.idempotency_key] = sub

    def _append(self, sub: Submission) -> None:
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(self.submission_json(sub, include_predictions=True))
                     + "\n")

    def submission_json(self, sub: Submission, include_predictions: bool = False) -> dict:
        cond = self._conditions.get((sub.dataset, sub.condition))
        return sub.to_json(include_predictions=include_predictions,
                           taxonomy=cond.taxonomy if cond else None)

    # -- submission ---------------------------------------------------------

    def submit(self, model_name: str, dataset: str, condition: str,
               predictions: Sequence[PredictionRecord],
               idempotency_key: str | None = None) -> Submission:
        """Validate, score, persist; returns the (possibly pre-existing) submission."""
        if not model_name:
            raise LeaderboardError("model_name must be non-empty", status=422)
        cond = self.condition(dataset, condition)
        payload_hash = _payload_hash(model_name, dataset, condition, predictions)

        with self._lock:
            if idempotency_key is not None and idempotency_key in self._by_key:
                existing = self._by_key[idempotency_key]
                if existing.payload_hash != payload_hash:
                    raise LeaderboardError(
                        f"idempotency key '{idempotency_key}' was already used "
                        "with a different payload", status=409,
                        idempotency_key=idempotency_key)
                return existing

            try:
                score = evaluate_predictions(
                    predictions, cond.golds, cond.taxonomy,
                    restrict_ids=sorted(cond.test_ids))
            except EvaluationError as exc:
                raise LeaderboardError(exc.message, status=422, **exc.payload) from exc

            seed = f"{payload_hash}:{idempotency_key or self._counter}"
            sub = Submission(
                id="sub-" + hashlib.sha256(seed.encode()).hexdigest()[:16],
                model_name=model_name, dataset=dataset, condition=condition,
                created_at=self._clock(), idempotency_key=idempotency_key,
                payload_hash=payload_hash, predictions=tuple(predictions),
                score=score)
            self._append(sub)
            self._index(sub)
            return sub

    def get(self, submission_id: str) -> Submission:
        sub = self._submissions.get(submission_id)
        if sub is None:
            raise LeaderboardError(f"unknown submission '{submission_id}'", status=404,
                                   submission_id=submission_id)
        return sub

    # -- views --------------------------------------------------------------

    def rankings(self, dataset: str, condition: str | None = None) -> list[LeaderboardRow]:
        """Rows sorted by macro-F1 descending; ties go to the earlier submission."""
        if dataset not in self.datasets:
            raise LeaderboardError(f"unknown dataset '{dataset}'", status=404,
                                   known=self.datasets)
        # best score per (model, condition); earlier submission wins exact ties
        best: dict[str, dict[str, Submission]] = {}
        for sub_id in self._order:
            sub = self._submissions[sub_id]
            if sub.dataset != dataset:
                continue
            per_model = best.setdefault(sub.model_name, {})
            cur = per_model.get(sub.condition)
            if cur is None or sub.score.macro_f1 > cur.score.macro_f1:
                per_model[sub.condition] = sub
        rows = []
        for model, per_cond in best.items():
            if condition is not None and condition not in per_cond:
                continue
            anchor = per_cond[condition] if condition is not None \
                else min(per_cond.values(), key=lambda s: s.created_at)
            rows.append((LeaderboardRow(
                model_name=model,
                scores={c: s.score.macro_f1 for c, s in sorted(per_cond.items())},
                created_at=anchor.created_at,
            ), anchor))
        sort_key = (lambda pair: (-pair[0].scores[condition], pair[1].created_at)) \
            if condition is not None else \
            (lambda pair: (-pair[0].average, pair[1].created_at))
        return [row for row, _ in sorted(rows, key=sort_key)]

    def compare(self, ids: Sequence[str]) -> dict:
        """Model x condition macro-F1 matrix for radar plotting (no rendering)."""
        subs = [self.get(i) for i in ids]
        models: list[str] = []
        conditions: list[str] = []
        for sub in subs:
            if sub.model_name not in models:
                models.append(sub.model_name)
            label = f"{sub.dataset}/{sub.condition}"
            if label not in conditions:
                conditions.append(label)
        matrix: list[list[float | None]] = [
            [None] * len(conditions) for _ in models]
        for sub in subs:
            r = models.index(sub.model_name)
            c = conditions.index(f"{sub.dataset}/{sub.condition}")
            matrix[r][c] = sub.score.macro_f1
        return {"models": models, "conditions": conditions, "matrix": matrix}


# ---------------------------------------------------------------------------
# HTTP service
# ---------------------------------------------------------------------------


def create_app(store: SubmissionStore, token: str | None = None):
    """FastAPI app over a store; ``token`` (if set) is required in X-API-Token."""
    from fastapi import FastAPI, File, Header, Request, UploadFile
    from fastapi.responses import JSONResponse

    app = FastAPI(title="emokit leaderboard", version="0.1.0")

    def check_token(provided: str | None) -> None:
        if token is not None and provided != token:
            raise LeaderboardError("invalid or missing API token", status=401)

    @app.exception_handler(LeaderboardError)
    async def _leaderboard_error(request: Request, exc: LeaderboardError):
        return JSONResponse(status_code=exc.status, content=exc.to_json())

    @app.exception_handler(EmokitError)
    async def _emokit_error(request: Request, exc: EmokitError):
        return JSONResponse(status_code=422, content=exc.to_json())

    @app.post("/v1/submissions", status_code=201)
    async def post_submission(
        metadata: UploadFile = File(...),
        predictions: UploadFile = File(...),
        idempotency_key: str | None = Header(default=None, alias="Idempotency-Key"),
        x_api_token: str | None = Header(default=None, alias="X-API-Token"),
    ):
        check_token(x_api_token)
        try:
            meta = json.loads((await metadata.read()).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise LeaderboardError(f"metadata is not valid JSON: {exc}", status=422)
        for field_name in ("model_name", "dataset", "condition"):
            if field_name not in meta:
                raise LeaderboardError(f"metadata missing '{field_name}'", status=422)
        cond = store.condition(meta["dataset"], meta["condition"])
        raw = (await predictions.read()).decode("utf-8")
        preds = _parse_predictions_jsonl(raw, cond.taxonomy)
        sub = store.submit(meta["model_name"], meta["dataset"], meta["condition"],
                           preds, idempotency_key=idempotency_key)
        return store.submission_json(sub)

    @app.get("/v1/submissions/{submission_id}")
    async def get_submission(
        submission_id: str,
        x_api_token: str | None = Header(default=None, alias="X-API-Token"),
    ):
        check_token(x_api_token)
        return store.submission_json(store.get(submission_id))

    @app.get("/v1/leaderboard/{dataset}")
    async def get_leaderboard(
        dataset: str,
        condition: str | None = None,
        x_api_token: str | None = Header(default=None, alias="X-API-Token"),
    ):
        check_token(x_api_token)
        rows = store.rankings(dataset, condition)
        return {"dataset": dataset, "condition": condition,
                "rows": [r.to_json() for r in rows]}

    @app.get("/v1/compare")
    async def get_compare(
        ids: str,
        x_api_token: str | None = Header(default=None, alias="X-API-Token"),
    ):
        check_token(x_api_token)
        id_list = [i for i in ids.split(",") if i]
        if not id_list:
            raise LeaderboardError("no submission ids given", status=422)
        return store.compare(id_list)

    return app


def _parse_predictions_jsonl(raw: str, taxonomy: EmotionTaxonomy) -> list[PredictionRecord]:
    """Parse an uploaded prediction JSONL body (same schema as the files on disk)."""
    import math

    records = []
    seen = set()
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LeaderboardError(f"line {lineno}: malformed JSON: {exc.msg}",
                                   status=422, line=lineno)
        utt_id = obj.get("utterance_id")
        dist = obj.get("distribution")
        if not isinstance(utt_id, str) or not isinstance(dist, list):
            raise LeaderboardError(f"line {lineno}: need utterance_id and distribution",
                                   status=422, line=lineno)
        if utt_id in seen:
            raise LeaderboardError(f"line {lineno}: duplicate utterance_id '{utt_id}'",
                                   status=422, line=lineno)
        seen.add(utt_id)
        if len(dist) != taxonomy.C:
            raise LeaderboardError(
                f"line {lineno}: distribution has {len(dist)} entries, expected "
                f"C={taxonomy.C}", status=422, line=lineno)
        values = []
        for v in dist:
            fv = float(v)
            if not math.isfinite(fv) or fv < 0:
                raise LeaderboardError(
                    f"line {lineno}: entries must be finite and >= 0", status=422,
                    line=lineno)
            values.append(fv)
        records.append(PredictionRecord(utterance_id=utt_id, distribution=tuple(values)))
    return records
