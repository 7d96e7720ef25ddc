"""Tests for experiment module."""

import copy
import sys
from importlib.resources import files

import pytest

from childrec.exceptions import ConfigError, EmptyDatasetError, MismatchedTestSetError
from childrec.experiment import (
    DATA_DIR_ENV,
    Materializer,
    Protocol,
    SweepSpec,
    available_presets,
    compare,
    derive_seed,
    load_preset,
    load_result,
    load_suite,
    parse_suite,
    result_from_dict,
    result_to_dict,
    run,
    run_suite,
    save_result,
)
from childrec.predict import AlgorithmKind
from childrec.report import report_table

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SUITE = {
    "seed": 3,
    "datasets": {
        "adult": {
            "op": "generate", "namespace": "adult", "source": "adult",
            "user_count": 40, "item_count": 25, "target_rating_count": 500,
            "min_activity": 5, "children_fraction": 0.5,
        },
        "child": {
            "op": "generate", "catalog": "adult",
            "user_count": 60, "item_count": 20, "target_rating_count": 300, "children_fraction": 0.5,
        },
        "child_2": {"op": "filter", "input": "child", "k": 2},
        "child_split": {"op": "split", "input": "child_2", "fraction": 0.6},
        "merged": {"op": "merge", "inputs": ["child_split.train", "adult"]},
    },
    "sweep": {"neighborhood_sizes": [2, 5], "latent_factors": [2, 3]},
    "predictor": {"iterations": 5},
    "experiments": [
        {"name": "Child_2", "protocol": "cross_validation", "data": "child_2", "folds": 3},
        {
            "name": "Child_2_Tr::Child_2_Te", "protocol": "holdout",
            "train": "child_split.train", "test": "child_split.test",
        },
        {
            "name": "Adult & Child_2_Tr::Child_2_Te", "protocol": "holdout",
            "train": "merged", "test": "child_split.test",
        },
    ],
}


def _raw(**changes):
    raw = copy.deepcopy(SUITE)
    raw.update(changes)
    return raw


def _parse(tmp_path, raw=None):
    return parse_suite(raw or _raw(), tmp_path)


class TestDeriveSeed:
    def test_deterministic(self):
        assert derive_seed(0, "dataset:child") == derive_seed(0, "dataset:child")

    def test_label_and_seed_matter(self):
        assert derive_seed(0, "dataset:child") != derive_seed(0, "dataset:adult")
        assert derive_seed(0, "dataset:child") != derive_seed(1, "dataset:child")


class TestParseSuite:
    def test_parses(self, tmp_path):
        suite = _parse(tmp_path)
        assert [e.name for e in suite.experiments][0] == "Child_2"
        assert "child_split.train" in suite.recipe.names
        assert suite.experiment("Child_2").protocol is Protocol.CROSS_VALIDATION
        assert suite.experiment("Child_2").folds == 3
        assert suite.experiment("Child_2").sweep.neighborhood_sizes == (2, 5)

    def test_predictor_overrides_and_derived_seed(self, tmp_path):
        spec = _parse(tmp_path).experiment("Child_2")
        cfg = spec.config(AlgorithmKind.MF)
        assert cfg.iterations == 5
        assert cfg.seed == derive_seed(3, "predictor:mf")

    def test_seed_override(self, tmp_path):
        assert parse_suite(_raw(), tmp_path, seed=9).recipe.seed == 9

    @pytest.mark.parametrize("datasets", [
        {"a": {"op": "filter", "input": "missing", "k": 2}},
        {"f": {"op": "filter", "input": "g", "k": 2}, "g": {"op": "generate"}},
        {"a": {"op": "shuffle"}},
        {"a.b": {"op": "generate"}},
        {"a": {"op": "generate", "user_count": 2, "item_count": 2, "target_rating_count": 5}},
        {"a": {"op": "generate"}, "b": {"op": "split", "input": "a", "fraction": 1.5}},
        {"a": {"op": "generate"}, "b": {"op": "filter", "input": "a", "k": 0}},
        {"a": {"op": "generate"}, "b": {"op": "merge", "inputs": ["a"]}},
        {"a": {"op": "generate"}, "b": {"op": "merge", "inputs": ["a", "a"], "matching": "fuzzy"}},
        {"a": {"op": "generate"}, "b": {"op": "kplus", "input": "a", "mode": "some"}},
        {"a": {"op": "generate", "colour": "red"}},
        {"a": {"op": "load_csv"}},
    ])
    def test_bad_datasets(self, tmp_path, datasets):
        with pytest.raises(ConfigError):
            _parse(tmp_path, _raw(datasets=datasets, experiments=[]))

    def test_split_publishes_both_sides(self, tmp_path):
        raw = _raw(datasets={
            "adult": SUITE["datasets"]["adult"],
            "s": {"op": "split", "input": "adult", "fraction": 0.5},
            "s2": {"op": "split", "input": "s.train", "fraction": 0.5},
        }, experiments=[])
        suite = _parse(tmp_path, raw)
        assert suite.recipe.names == ("adult", "s.train", "s.test", "s2.train", "s2.test")

    @pytest.mark.parametrize("experiment", [
        {"name": "X", "protocol": "cross_validation", "data": "nope"},
        {"name": "X", "protocol": "holdout", "train": "child_2"},
        {"name": "X", "protocol": "bootstrap", "data": "child_2"},
        {"name": "X", "protocol": "cross_validation", "data": "child_2", "folds": 1},
        {"name": "X", "protocol": "cross_validation", "data": "child_2", "test_sample": 0},
        {"name": "X", "protocol": "cross_validation", "data": "child_2", "predictor": {"kind": "uu"}},
        {"name": "X", "protocol": "cross_validation", "data": "child_2", "predictor": {"learning_rate": -1}},
        {"name": "X", "protocol": "cross_validation", "data": "child_2", "predictor": {"speed": 3}},
        {"name": "X", "protocol": "cross_validation", "data": "child_2", "sweep": {"algorithms": ["svd"]}},
        {"name": "X", "protocol": "cross_validation", "data": "child_2", "sweep": {"neighborhood_sizes": []}},
        {"protocol": "cross_validation", "data": "child_2"},
    ])
    def test_bad_experiments(self, tmp_path, experiment):
        with pytest.raises(ConfigError):
            _parse(tmp_path, _raw(experiments=[experiment]))

    def test_duplicate_experiment_names(self, tmp_path):
        entry = {"name": "X", "protocol": "cross_validation", "data": "child_2"}
        with pytest.raises(ConfigError, match="duplicate"):
            _parse(tmp_path, _raw(experiments=[entry, dict(entry)]))

    def test_negative_seed(self, tmp_path):
        with pytest.raises(ConfigError):
            _parse(tmp_path, _raw(seed=-1))

    def test_unknown_top_level_key(self, tmp_path):
        with pytest.raises(ConfigError):
            _parse(tmp_path, _raw(metrics=["ndcg"]))

    def test_sweep_spec_validation(self):
        with pytest.raises(ConfigError):
            SweepSpec(neighborhood_sizes=(5, 5))
        assert SweepSpec().parameters(AlgorithmKind.MF) == SweepSpec().latent_factors


class TestLoadSuite:
    def test_relative_paths_resolve_against_file(self, tmp_path, monkeypatch):
        monkeypatch.delenv(DATA_DIR_ENV, raising=False)
        (tmp_path / "one.csv").write_text("user,item,value,source\nu1,i1,4.0,child\n", encoding="utf-8")
        spec_path = tmp_path / "suite.toml"
        spec_path.write_text('[datasets.one]\nop = "load_csv"\npath = "one.csv"\n', encoding="utf-8")
        suite = load_suite(spec_path)
        assert suite.recipe.data_root == tmp_path
        assert len(Materializer(suite.recipe).get("one")) == 1

    def test_env_data_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv(DATA_DIR_ENV, str(tmp_path / "data"))
        spec_path = tmp_path / "suite.toml"
        spec_path.write_text("seed = 1\n", encoding="utf-8")
        assert load_suite(spec_path).recipe.data_root == tmp_path / "data"
        assert load_suite(spec_path, data_dir=tmp_path).recipe.data_root == tmp_path

    def test_invalid_toml(self, tmp_path):
        spec_path = tmp_path / "suite.toml"
        spec_path.write_text("seed = [\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_suite(spec_path)

    def test_missing_data_file(self, tmp_path):
        spec_path = tmp_path / "suite.toml"
        spec_path.write_text('[datasets.ml1m]\nop = "load_ml1m"\n', encoding="utf-8")
        suite = load_suite(spec_path, data_dir=tmp_path)
        with pytest.raises(ConfigError, match="not found"):
            Materializer(suite.recipe).get("ml1m")


class TestPresets:
    def test_bundled(self):
        assert set(available_presets()) >= {
            "baselines", "full-merge", "kplus-merge", "ml1m-baseline",
            "synthetic-baselines", "synthetic-transfer",
        }

    @pytest.mark.parametrize("name", available_presets())
    def test_parses(self, name, tmp_path):
        suite = load_preset(name, data_dir=tmp_path)
        assert suite.experiments
        assert suite.recipe.data_root == tmp_path

    def test_unknown(self):
        with pytest.raises(ConfigError, match="Unknown preset"):
            load_preset("nope")

    @pytest.mark.parametrize("name", ["synthetic-baselines", "synthetic-transfer"])
    def test_rerun_byte_identical(self, name, tmp_path):
        raw = tomllib.loads(files("childrec.presets").joinpath(f"{name}.toml").read_text(encoding="utf-8"))
        raw["sweep"] = {"neighborhood_sizes": [10], "latent_factors": [2]}
        raw["predictor"] = {"iterations": 2}
        for entry in raw["experiments"]:
            entry["test_sample"] = 200
        first = report_table(run_suite(parse_suite(raw, tmp_path)), "csv")
        second = report_table(run_suite(parse_suite(copy.deepcopy(raw), tmp_path)), "csv")
        assert first.encode("utf-8") == second.encode("utf-8")
        assert first.count("\n") == len(raw["experiments"]) + 1


class TestMaterializer:
    def test_labels(self, tmp_path):
        m = Materializer(_parse(tmp_path).recipe)
        assert m.min_ratings_label("child_2") == "2"
        assert m.min_ratings_label("child_split.test") == "2"
        assert m.min_ratings_label("merged").startswith("2 & ")

    def test_merge_adds_users(self, tmp_path):
        m = Materializer(_parse(tmp_path).recipe)
        merged, train, adult = m.get("merged"), m.get("child_split.train"), m.get("adult")
        assert merged.stats.user_count == train.stats.user_count + adult.stats.user_count
        assert len(merged) == len(train) + len(adult)

    def test_merge_stats_recorded(self, tmp_path):
        m = Materializer(_parse(tmp_path).recipe)
        assert m.merge_stats == {}
        m.get("merged")
        stats = m.merge_stats["merged"]
        assert stats.collisions == 0
        assert stats.unified_items > 0
        assert set(m.merge_stats) == {"merged"}

    def test_split_partitions(self, tmp_path):
        m = Materializer(_parse(tmp_path).recipe)
        assert len(m.get("child_split.train")) + len(m.get("child_split.test")) == len(m.get("child_2"))

    def test_same_seed_same_data(self, tmp_path):
        a = Materializer(_parse(tmp_path).recipe).get("child")
        b = Materializer(_parse(tmp_path).recipe).get("child")
        assert list(a.ratings()) == list(b.ratings())

    def test_unknown_dataset(self, tmp_path):
        with pytest.raises(ConfigError):
            Materializer(_parse(tmp_path).recipe).get("nope")


class TestRun:
    @pytest.fixture
    def results(self, tmp_path):
        return run_suite(_parse(tmp_path))

    def test_points(self, results):
        cv = results[0]
        assert cv.protocol is Protocol.CROSS_VALIDATION
        assert cv.algorithms == (AlgorithmKind.UU, AlgorithmKind.II, AlgorithmKind.MF)
        assert [(p.algorithm, p.parameter) for p in cv.points] == [
            (AlgorithmKind.UU, 2), (AlgorithmKind.UU, 5),
            (AlgorithmKind.II, 2), (AlgorithmKind.II, 5),
            (AlgorithmKind.MF, 2), (AlgorithmKind.MF, 3),
        ]
        for p in cv.points:
            assert len(p.fold_rmses) == 3
            assert p.rmse == pytest.approx(sum(p.fold_rmses) / 3)
            assert p.n == cv.train_stats.rating_count
            assert 0.0 <= p.served_pair_fraction <= 1.0

    def test_labels_and_stats(self, results):
        cv, holdout, merged = results
        assert cv.min_ratings == "2"
        assert cv.test_stats is None
        assert holdout.datasets == "child_split.train::child_split.test"
        assert holdout.min_ratings == "2::2"
        assert merged.min_ratings.startswith("2 & ")
        assert merged.min_ratings.endswith("::2")
        assert holdout.test_stats == merged.test_stats

    def test_best_point(self, results):
        for result in results:
            for kind in result.algorithms:
                best = result.best(kind)
                assert best.rmse == min(p.rmse for p in result.points if p.algorithm is kind)
                assert len(result.sq_errors[kind]) == best.n

    def test_best_missing_algorithm(self, tmp_path):
        raw = _raw(experiments=[{
            "name": "UU only", "protocol": "cross_validation", "data": "child_2",
            "sweep": {"algorithms": ["uu"]},
        }])
        result = run(_parse(tmp_path, raw).experiments[0])
        assert result.algorithms == (AlgorithmKind.UU,)
        with pytest.raises(KeyError):
            result.best(AlgorithmKind.MF)

    def test_deterministic(self, tmp_path):
        first = run_suite(_parse(tmp_path))
        second = run_suite(_parse(tmp_path))
        for a, b in zip(first, second):
            save_result(a, tmp_path / "a.json")
            save_result(b, tmp_path / "b.json")
            assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        assert report_table(first, "csv") == report_table(second, "csv")

    def test_workers_agree(self, tmp_path):
        spec = _parse(tmp_path).experiment("Child_2")
        assert result_to_dict(run(spec, workers=3)) == result_to_dict(run(spec))

    def test_one_rating_smoke(self, tmp_path):
        (tmp_path / "one.csv").write_text("user,item,value,source\nu1,i1,4.0,child\n", encoding="utf-8")
        raw = {
            "datasets": {"one": {"op": "load_csv", "path": "one.csv"}},
            "experiments": [{
                "name": "one", "protocol": "holdout", "train": "one", "test": "one",
                "sweep": {"algorithms": ["uu"], "neighborhood_sizes": [1]},
            }],
        }
        result = run(parse_suite(raw, tmp_path).experiments[0])
        best = result.best(AlgorithmKind.UU)
        assert best.rmse == 0.0
        assert best.n == 1
        assert best.served_pair_fraction == 0.0
        assert best.served_user_fraction == 0.0
        assert best.served_rmse is None

    def test_empty_dataset_names_step(self, tmp_path):
        raw = _raw(
            datasets={
                "plain": {
                    "op": "generate", "user_count": 5, "item_count": 5,
                    "target_rating_count": 10, "children_fraction": 0.0,
                },
                "kids": {"op": "kplus", "input": "plain"},
            },
            experiments=[{"name": "E", "protocol": "holdout", "train": "kids", "test": "plain"}],
        )
        with pytest.raises(EmptyDatasetError, match="kids"):
            run(_parse(tmp_path, raw).experiments[0])

    def test_too_many_folds(self, tmp_path):
        raw = _raw(
            datasets={"g": {"op": "generate", "user_count": 1, "item_count": 3, "target_rating_count": 3}},
            experiments=[{"name": "E", "protocol": "cross_validation", "data": "g", "folds": 5}],
        )
        with pytest.raises(ConfigError, match="folds"):
            run(_parse(tmp_path, raw).experiments[0])

    def test_test_sample_applies_to_neighborhood_models(self, tmp_path):
        raw = _raw(experiments=[{
            "name": "S", "protocol": "holdout", "train": "child_split.train",
            "test": "child_split.test", "test_sample": 5,
        }])
        result = run(_parse(tmp_path, raw).experiments[0])
        assert result.test_sample == 5
        assert result.best(AlgorithmKind.UU).n == 5
        assert result.best(AlgorithmKind.II).n == 5
        assert result.best(AlgorithmKind.MF).n == result.test_stats.rating_count


class TestCompare:
    @pytest.fixture
    def results(self, tmp_path):
        return run_suite(_parse(tmp_path))

    def test_self(self, results):
        comparison = compare(results[1], results[1])
        for test in comparison.tests.values():
            assert test.t == 0.0
            assert test.p == 1.0
            assert not test.significant_at_05

    def test_shared_test_set(self, results):
        _, holdout, merged = results
        assert holdout.fingerprints == merged.fingerprints
        comparison = compare(holdout, merged)
        assert set(comparison.tests) == {AlgorithmKind.UU, AlgorithmKind.II, AlgorithmKind.MF}
        assert comparison.rmse_a[AlgorithmKind.MF] == holdout.best(AlgorithmKind.MF).rmse
        for test in comparison.tests.values():
            assert 0.0 <= test.p <= 1.0

    def test_mismatched(self, results):
        with pytest.raises(MismatchedTestSetError):
            compare(results[0], results[1])


class TestPersistence:
    def test_round_trip(self, tmp_path):
        result = run_suite(_parse(tmp_path), names=["Child_2_Tr::Child_2_Te"])[0]
        path = tmp_path / "result.json"
        save_result(result, path)
        loaded = load_result(path)
        assert result_to_dict(loaded) == result_to_dict(result)
        assert loaded.best(AlgorithmKind.II) == result.best(AlgorithmKind.II)

    def test_version_checked(self, tmp_path):
        result = run_suite(_parse(tmp_path), names=["Child_2"])[0]
        raw = result_to_dict(result)
        raw["format_version"] = 99
        with pytest.raises(ConfigError):
            result_from_dict(raw)

    def test_not_json(self, tmp_path):
        path = tmp_path / "result.json"
        path.write_text("{", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_result(path)
