"""emokit: benchmark toolkit for multi-label speech emotion recognition.

Turns raw per-rater annotations into training labels (majority, plurality,
all-inclusive rules), builds leakage-free speaker-independent partitions,
scores prediction files with 1/C-threshold macro-F1, relabels typed
descriptions through an LLM client, and runs a leaderboard service.
"""

__version__ = "0.1.0"

from .aggregation import (AggregationResult, LabelKind, LabelRecord,
                          SmoothingConfig, VoteCounts, aggregate_ar,
                          aggregate_dataset, aggregate_mr, aggregate_pr,
                          count_votes, data_loss_report, smooth)
from .corpus import (EmotionTaxonomy, PredictionRecord, RaterVote,
                     UtteranceAnnotations, builtin_taxonomy, load_annotations,
                     load_predictions, load_taxonomy)
from .evaluation import (EvalResult, binarize, ccc, combine_folds,
                         evaluate_predictions, macro_f1, relative_gain)
from .errors import (AggregationError, CorpusFormatError, EmokitError,
                     EvaluationError, PartitionError, RelabelError,
                     TaxonomyError, TrainerError)
from .partitioning import (PartitionPlan, PartitionScheme, assign,
                           builtin_scheme, check_leakage, load_plan,
                           load_scheme, save_plan)

__all__ = [name for name in dir() if not name.startswith("_")]
