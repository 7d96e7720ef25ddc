"""childrec - collaborative filtering experiments on adult and child rating data."""

from childrec.dataset import (
    Dataset,
    ItemMatching,
    ItemMeta,
    MergeStats,
    Rating,
    RestrictMode,
    Source,
    activity_histogram,
    children_rater_ratio,
    filter_min_ratings,
    k_fold,
    merge,
    merge_details,
    rating_distribution,
    restrict_to_children,
    select_kplus_users,
    split,
)
from childrec.evaluation import EvalReport, coverage, paired_t_test, rmse
from childrec.exceptions import (
    ChildrecError,
    ConfigError,
    DivergenceError,
    EmptyDatasetError,
    InfeasibleParametersError,
    IngestionError,
    MismatchedTestSetError,
    UnknownEntityError,
    UnknownItemError,
    UnknownUserError,
)
from childrec.experiment import (
    ExperimentResult,
    ExperimentSpec,
    compare,
    load_preset,
    load_suite,
    run,
    run_suite,
)
from childrec.ingest import load_ml1m, read_interchange, write_interchange
from childrec.knn import ItemKNN, UserKNN, ii_predict, uu_predict
from childrec.mf import MFModel, mf_predict, mf_train
from childrec.predict import AlgorithmKind, Prediction, PredictorConfig, fallback
from childrec.report import dataset_table, report_table
from childrec.similarity import SimilarityMatrixView, cosine_item, pearson_user, top_k_neighbors
from childrec.synthetic import SynthParams, generate_synthetic

__all__ = [
    "Dataset",
    "Rating",
    "ItemMeta",
    "Source",
    "ItemMatching",
    "RestrictMode",
    "filter_min_ratings",
    "split",
    "k_fold",
    "merge",
    "merge_details",
    "MergeStats",
    "select_kplus_users",
    "restrict_to_children",
    "activity_histogram",
    "rating_distribution",
    "children_rater_ratio",
    "load_ml1m",
    "read_interchange",
    "write_interchange",
    "SynthParams",
    "generate_synthetic",
    "SimilarityMatrixView",
    "cosine_item",
    "pearson_user",
    "top_k_neighbors",
    "AlgorithmKind",
    "PredictorConfig",
    "Prediction",
    "fallback",
    "UserKNN",
    "ItemKNN",
    "uu_predict",
    "ii_predict",
    "MFModel",
    "mf_train",
    "mf_predict",
    "EvalReport",
    "rmse",
    "coverage",
    "paired_t_test",
    "ExperimentSpec",
    "ExperimentResult",
    "load_suite",
    "load_preset",
    "run",
    "run_suite",
    "compare",
    "report_table",
    "dataset_table",
    "ChildrecError",
    "IngestionError",
    "InfeasibleParametersError",
    "UnknownEntityError",
    "UnknownUserError",
    "UnknownItemError",
    "EmptyDatasetError",
    "DivergenceError",
    "ConfigError",
    "MismatchedTestSetError",
]
