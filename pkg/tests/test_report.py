"""Tests for report module."""

import numpy as np

from childrec.dataset import CHILDREN_GENRE, Dataset, DatasetStats, ItemMeta, MergeStats
from childrec.evaluation import TTestResult
from childrec.experiment import Comparison, ExperimentResult, Protocol, SweepPoint
from childrec.predict import AlgorithmKind
from childrec.report import (
    DATASET_COLUMNS,
    MISSING,
    SAMPLE_COLUMN,
    SUMMARY_COLUMNS,
    comparison_table,
    dataset_frame,
    dataset_table,
    format_cell,
    report_table,
    summary_frame,
    sweep_table,
)

from conftest import make_dataset


def _point(kind, parameter, rmse):
    return SweepPoint(kind, parameter, rmse, rmse, 10, 0.5, 0.8, None, (rmse,))


def _result(name, points, test_stats=None, test_sample=None):
    return ExperimentResult(
        name,
        Protocol.HOLDOUT if test_stats else Protocol.CROSS_VALIDATION,
        0,
        name,
        DatasetStats(6040, 3706, 1000209),
        test_stats,
        "20" if test_stats is None else "2::2",
        test_sample,
        tuple(points),
        {},
        {p.algorithm: np.zeros(10) for p in points},
    )


class TestFormatCell:
    def test_format(self):
        assert format_cell(0.90512, 80) == "0.905 [80]"

    def test_rounding(self):
        assert format_cell(0.8764, 120) == "0.876 [120]"
        assert format_cell(1.0, 40) == "1.000 [40]"


class TestSummary:
    def test_columns_and_best_cells(self):
        result = _result("ML1M", [
            _point(AlgorithmKind.UU, 50, 0.91), _point(AlgorithmKind.UU, 80, 0.905),
            _point(AlgorithmKind.MF, 120, 0.852),
        ])
        frame = summary_frame([result])
        assert list(frame.columns) == SUMMARY_COLUMNS
        row = frame.iloc[0]
        assert row["UU"] == "0.905 [80]"
        assert row["II"] == MISSING
        assert row["MF"] == "0.852 [120]"
        assert row["Users"] == "6040"
        assert row["Min # of ratings"] == "20"

    def test_tie_prefers_smaller_parameter(self):
        result = _result("T", [_point(AlgorithmKind.II, 100, 0.9), _point(AlgorithmKind.II, 50, 0.9)])
        assert summary_frame([result]).iloc[0]["II"] == "0.900 [50]"

    def test_rows_sorted_by_name(self):
        frame = summary_frame([
            _result("b", [_point(AlgorithmKind.UU, 5, 1.0)]),
            _result("a", [_point(AlgorithmKind.UU, 5, 1.0)]),
        ])
        assert frame["Dataset"].tolist() == ["a", "b"]

    def test_holdout_stats(self):
        result = _result("H", [_point(AlgorithmKind.MF, 40, 1.0)], test_stats=DatasetStats(10, 20, 30))
        row = summary_frame([result]).iloc[0]
        assert row["Users"] == "6040::10"
        assert row["Ratings"] == "1000209::30"

    def test_sample_column_only_when_sampled(self):
        plain = _result("a", [_point(AlgorithmKind.UU, 5, 1.0)])
        assert SAMPLE_COLUMN not in summary_frame([plain]).columns
        sampled = _result("b", [_point(AlgorithmKind.UU, 5, 1.0)], test_sample=100000)
        frame = summary_frame([plain, sampled])
        assert frame[SAMPLE_COLUMN].tolist() == [MISSING, "100000"]


class TestRender:
    def test_csv(self):
        text = report_table([_result("ML1M", [_point(AlgorithmKind.UU, 80, 0.905)])], "csv")
        lines = text.splitlines()
        assert lines[0] == "Dataset,Users,Items,Ratings,Min # of ratings,UU,II,MF"
        assert lines[1] == "ML1M,6040,3706,1000209,20,0.905 [80],-,-"
        assert text.endswith("\n")

    def test_table(self):
        text = report_table([_result("ML1M", [_point(AlgorithmKind.UU, 80, 0.905)])])
        assert "0.905 [80]" in text
        assert text.splitlines()[0].split()[0] == "Dataset"

    def test_empty(self):
        assert report_table([], "csv").splitlines() == [",".join(SUMMARY_COLUMNS)]

    def test_sweep_table(self):
        result = _result("E", [_point(AlgorithmKind.UU, 5, 1.0), _point(AlgorithmKind.MF, 2, 0.9)])
        lines = sweep_table([result], "csv").splitlines()
        assert lines[0].startswith("experiment,algorithm,parameter,rmse")
        assert lines[1].startswith("E,uu,5,1.0000")
        assert len(lines) == 3

    def test_comparison_table(self):
        comparison = Comparison(
            "A", "B",
            {AlgorithmKind.UU: 0.9, AlgorithmKind.MF: 0.8},
            {AlgorithmKind.UU: 0.95, AlgorithmKind.MF: 0.8},
            {
                AlgorithmKind.UU: TTestResult(-2.5, 0.02, True, 100, -0.1),
                AlgorithmKind.MF: TTestResult(float("inf"), 1.0, False, 100, 0.1, defined=False),
            },
        )
        lines = comparison_table(comparison, "csv").splitlines()
        assert lines[0] == "algorithm,a: A,b: B,t,p,significant"
        assert lines[1] == "uu,0.9000,0.9500,-2.5000,0.02,yes"
        assert lines[2] == "mf,0.8000,0.8000,undefined,undefined,no"


class TestDatasetProfile:
    def _child(self):
        meta = [
            ItemMeta("c1", "Kid One", 1990, frozenset({CHILDREN_GENRE})),
            ItemMeta("a1", "Adult One", 1980, frozenset({"Drama"})),
        ]
        return make_dataset(
            [("u1", "c1", 5), ("u1", "a1", 1), ("u2", "a1", 4), ("u3", "a1", 4.5)], meta=meta
        )

    def test_columns(self):
        frame = dataset_frame({"child": self._child()})
        assert list(frame.columns) == DATASET_COLUMNS
        row = frame.iloc[0]
        assert row["Users"] == 3
        assert row["Ratings"] == 4
        assert row["Min # of ratings"] == 1
        assert row["Share 4-5"] == "0.750"
        assert row["Other:children raters"] == "3.00"
        assert row["Unified items"] == MISSING

    def test_merge_counts(self):
        frame = dataset_frame({"child": self._child(), "merged": self._child()}, {"merged": MergeStats(4, 2)})
        assert frame["Unified items"].tolist() == [MISSING, 4]
        assert frame["Collisions"].tolist() == [MISSING, 2]

    def test_empty_dataset(self):
        row = dataset_frame({"none": Dataset.empty()}).iloc[0]
        assert row["Share 4-5"] == MISSING
        assert row["Other:children raters"] == MISSING

    def test_csv(self):
        lines = dataset_table({"child": self._child()}, fmt="csv").splitlines()
        assert lines[0] == ",".join(DATASET_COLUMNS)
        assert lines[1] == "child,3,2,4,1,0.750,3.00,-,-"
