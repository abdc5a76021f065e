"""Exception types shared across the toolkit.

Every error carries a machine-readable ``payload`` so the CLI and the
leaderboard service can emit structured JSON instead of bare tracebacks.
"""

from __future__ import annotations


class EmokitError(Exception):
    """Base class for all toolkit errors."""

    def __init__(self, message: str, **payload: object) -> None:
        super().__init__(message)
        self.message = message
        self.payload = payload

    def to_json(self) -> dict:
        return {"error": type(self).__name__, "message": self.message, **self.payload}


class TaxonomyError(EmokitError):
    """Invalid taxonomy definition or unknown class name."""


class CorpusFormatError(EmokitError):
    """Malformed annotation or prediction file (carries line numbers)."""


class AggregationError(EmokitError):
    """Vote aggregation precondition failed."""


class PartitionError(EmokitError):
    """Unknown scheme, unmapped speaker, or inconsistent fold layout."""


class EvaluationError(EmokitError):
    """Prediction/gold misalignment or degenerate statistic."""


class RelabelError(EmokitError):
    """Relabel batch encoding or response validation failed."""


class TrainerError(EmokitError):
    """Invalid training configuration or feature shapes."""
