"""Identify VR users from motion telemetry and network traffic fingerprints."""

__version__ = "0.1.0"

from .classifiers import (
    MODEL_KINDS,
    ExtraTrees,
    GradientBoosting,
    LogisticOneVsRest,
    QuadraticDiscriminant,
    RandomForest,
    SoftVotingEnsemble,
    load_model,
    make_model,
    save_model,
)
from .core import (
    DEFAULT_WINDOW_S,
    SAMPLE_RATE_HZ,
    Dataset,
    Trace,
    TraceFormatError,
    TraceRecord,
)
from .evaluation import (
    EvaluationReport,
    ExperimentSpec,
    SubsetResult,
    accuracy,
    cell_matrices,
    confusion_matrix,
    cross_game_eval,
    experiment_cells,
    game_recognition_eval,
    macro_f1,
    majority_vote_eval,
    run_identification,
    run_matrix,
    user_subset_experiment,
)
from .features import (
    COMBINED_FEATURE_NAMES,
    MOVEMENT_FEATURE_NAMES,
    TRAFFIC_FEATURE_NAMES,
    FeatureVector,
    MinMaxScaler,
    build_features,
    feature_names,
    summary_stats,
)
from .importance import (
    AttributionResult,
    shapley_attribution,
    top_k_features,
)
from .ingest import (
    GameProfile,
    UserProfile,
    default_profiles,
    generate_synthetic_cohort,
    load_dataset,
    load_manifest,
    write_cohort,
)

__all__ = [
    "__version__",
    "MODEL_KINDS",
    "ExtraTrees",
    "GradientBoosting",
    "LogisticOneVsRest",
    "QuadraticDiscriminant",
    "RandomForest",
    "SoftVotingEnsemble",
    "load_model",
    "make_model",
    "save_model",
    "DEFAULT_WINDOW_S",
    "SAMPLE_RATE_HZ",
    "Dataset",
    "Trace",
    "TraceFormatError",
    "TraceRecord",
    "EvaluationReport",
    "ExperimentSpec",
    "SubsetResult",
    "accuracy",
    "cell_matrices",
    "confusion_matrix",
    "cross_game_eval",
    "experiment_cells",
    "game_recognition_eval",
    "macro_f1",
    "majority_vote_eval",
    "run_identification",
    "run_matrix",
    "user_subset_experiment",
    "COMBINED_FEATURE_NAMES",
    "MOVEMENT_FEATURE_NAMES",
    "TRAFFIC_FEATURE_NAMES",
    "FeatureVector",
    "MinMaxScaler",
    "build_features",
    "feature_names",
    "summary_stats",
    "AttributionResult",
    "shapley_attribution",
    "top_k_features",
    "GameProfile",
    "UserProfile",
    "default_profiles",
    "generate_synthetic_cohort",
    "load_dataset",
    "load_manifest",
    "write_cohort",
]
