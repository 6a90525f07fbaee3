"""ctrbench: a reproducible benchmarking framework for CTR prediction.

End to end: raw CSV logs -> seeded 8:1:1 splits in a checksummed binary
store -> thirteen feature-interaction models over a minimal autodiff
engine -> plateau-scheduled training with early stopping -> grid-search
tuning -> leaderboard reports with full provenance.
"""

from ctrbench import metrics, ndgrad
from ctrbench.dataset import (
    Batch,
    EncodedDataset,
    SplitTriple,
    iterate_batches,
    load_split,
    split_dataset,
)
from ctrbench.estimator import CTRClassifier
from ctrbench.metrics import EvalResult, auc, logloss
from ctrbench.models import MODEL_NAMES, Model, ModelConfig, build_model
from ctrbench.preprocess import (
    DatasetRecipe,
    FeatureMap,
    FieldSpec,
    build_feature_map,
    discretize_numeric,
    expand_timestamp,
)
from ctrbench.report import emit_leaderboard
from ctrbench.search import SearchSpace, expand_grid, run_search, run_trials
from ctrbench.synth import SynthSpec, generate
from ctrbench.training import (
    EarlyStopper,
    PlateauScheduler,
    RunLog,
    TrainConfig,
    TrialResult,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Batch", "CTRClassifier", "DatasetRecipe", "EarlyStopper",
    "EncodedDataset", "EvalResult", "FeatureMap", "FieldSpec",
    "MODEL_NAMES", "Model", "ModelConfig", "PlateauScheduler", "RunLog",
    "SearchSpace", "SplitTriple", "SynthSpec", "TrainConfig", "TrialResult",
    "auc", "build_feature_map", "build_model", "discretize_numeric",
    "emit_leaderboard", "expand_grid", "expand_timestamp", "generate",
    "iterate_batches", "load_split", "logloss", "metrics", "ndgrad",
    "run_search", "run_trials", "split_dataset", "train",
]
