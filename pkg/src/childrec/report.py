"""Rendering experiment results and dataset profiles as tables."""

from __future__ import annotations

import enum
from typing import Mapping, Sequence

import pandas as pd

from childrec.dataset import (
    Dataset,
    DatasetStats,
    MergeStats,
    children_rater_ratio,
    rating_distribution,
)
from childrec.experiment import Comparison, ExperimentResult
from childrec.predict import AlgorithmKind

SUMMARY_COLUMNS = ["Dataset", "Users", "Items", "Ratings", "Min # of ratings", "UU", "II", "MF"]
SAMPLE_COLUMN = "KNN test sample"
DATASET_COLUMNS = [
    "Dataset", "Users", "Items", "Ratings", "Min # of ratings",
    "Share 4-5", "Other:children raters", "Unified items", "Collisions",
]
MISSING = "-"


class ReportFormat(enum.Enum):
    CSV = "csv"
    TABLE = "table"


def format_cell(rmse: float, parameter: int) -> str:
    """A best-of-sweep cell, e.g. ``0.905 [80]``."""
    return f"{rmse:.3f} [{parameter}]"


def _stat(train: DatasetStats, test: DatasetStats | None, column: int) -> str:
    if test is None:
        return str(train[column])
    return f"{train[column]}::{test[column]}"


def _render(frame: pd.DataFrame, fmt: ReportFormat) -> str:
    if fmt is ReportFormat.CSV:
        return frame.to_csv(index=False, lineterminator="\n")
    if frame.empty:
        return " | ".join(frame.columns) + "\n"
    return frame.to_string(index=False) + "\n"


def summary_frame(results: Sequence[ExperimentResult]) -> pd.DataFrame:
    """One row per result, ordered by experiment name."""
    rows = []
    for r in sorted(results, key=lambda r: r.name):
        row = {
            "Dataset": r.name,
            "Users": _stat(r.train_stats, r.test_stats, 0),
            "Items": _stat(r.train_stats, r.test_stats, 1),
            "Ratings": _stat(r.train_stats, r.test_stats, 2),
            "Min # of ratings": r.min_ratings,
        }
        for kind in AlgorithmKind:
            if kind in r.algorithms:
                best = r.best(kind)
                row[kind.name] = format_cell(best.rmse, best.parameter)
            else:
                row[kind.name] = MISSING
        row[SAMPLE_COLUMN] = MISSING if r.test_sample is None else str(r.test_sample)
        rows.append(row)
    columns = list(SUMMARY_COLUMNS)
    if any(r.test_sample is not None for r in results):
        columns.append(SAMPLE_COLUMN)
    return pd.DataFrame(rows, columns=columns)


def report_table(results: Sequence[ExperimentResult], fmt: ReportFormat | str = ReportFormat.TABLE) -> str:
    """Best RMSE per algorithm with its sweep value, one row per experiment.

    Users/Items/Ratings are ``train::test`` for holdout experiments. When any
    experiment sampled its UU/II test pairs, the sample size gets a column.
    """
    return _render(summary_frame(results), ReportFormat(fmt))


def sweep_table(results: Sequence[ExperimentResult], fmt: ReportFormat | str = ReportFormat.TABLE) -> str:
    """Every sweep point of every result."""
    rows = [
        {
            "experiment": r.name,
            "algorithm": p.algorithm.value,
            "parameter": p.parameter,
            "rmse": f"{p.rmse:.4f}",
            "pairs": p.n,
            "served_users": f"{p.served_user_fraction:.4f}",
            "served_pairs": f"{p.served_pair_fraction:.4f}",
            "served_rmse": MISSING if p.served_rmse is None else f"{p.served_rmse:.4f}",
        }
        for r in sorted(results, key=lambda r: r.name)
        for p in r.points
    ]
    columns = ["experiment", "algorithm", "parameter", "rmse", "pairs", "served_users", "served_pairs", "served_rmse"]
    return _render(pd.DataFrame(rows, columns=columns), ReportFormat(fmt))


def comparison_table(comparison: Comparison, fmt: ReportFormat | str = ReportFormat.TABLE) -> str:
    """Paired t-test per algorithm: best RMSE of a and b, t, p and the 0.05 verdict."""
    col_a, col_b = f"a: {comparison.name_a}", f"b: {comparison.name_b}"
    rows = []
    for kind, test in comparison.tests.items():
        rows.append({
            "algorithm": kind.value,
            col_a: f"{comparison.rmse_a[kind]:.4f}",
            col_b: f"{comparison.rmse_b[kind]:.4f}",
            "t": f"{test.t:.4f}" if test.defined else "undefined",
            "p": f"{test.p:.4g}" if test.defined else "undefined",
            "significant": "yes" if test.significant_at_05 else "no",
        })
    columns = ["algorithm", col_a, col_b, "t", "p", "significant"]
    return _render(pd.DataFrame(rows, columns=columns), ReportFormat(fmt))


def dataset_frame(
    datasets: Mapping[str, Dataset], merge_stats: Mapping[str, MergeStats] | None = None,
) -> pd.DataFrame:
    """Profile of each dataset next to its Users/Items/Ratings.

    Share 4-5 is the fraction of ratings valued 4 or more. The rater column
    divides users who rated a non-children's item by users who rated a
    children's item. Merge columns are filled for datasets built by a merge.
    """
    merge_stats = merge_stats or {}
    rows = []
    for name, ds in datasets.items():
        distribution = rating_distribution(ds)
        high = sum(count for value, count in distribution.items() if value >= 4.0)
        ratio = children_rater_ratio(ds)
        merged = merge_stats.get(name)
        rows.append({
            "Dataset": name,
            "Users": ds.stats.user_count,
            "Items": ds.stats.item_count,
            "Ratings": ds.stats.rating_count,
            "Min # of ratings": ds.min_user_ratings,
            "Share 4-5": f"{high / len(ds):.3f}" if len(ds) else MISSING,
            "Other:children raters": MISSING if ratio is None else f"{ratio:.2f}",
            "Unified items": MISSING if merged is None else merged.unified_items,
            "Collisions": MISSING if merged is None else merged.collisions,
        })
    return pd.DataFrame(rows, columns=DATASET_COLUMNS)


def dataset_table(
    datasets: Mapping[str, Dataset],
    merge_stats: Mapping[str, MergeStats] | None = None,
    fmt: ReportFormat | str = ReportFormat.TABLE,
) -> str:
    """Render :func:`dataset_frame`."""
    return _render(dataset_frame(datasets, merge_stats), ReportFormat(fmt))
