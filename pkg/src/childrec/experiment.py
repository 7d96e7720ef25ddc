"""Declarative experiment suites: dataset recipes, sweeps and results.

A suite is a TOML document. ``[datasets.<name>]`` tables form a recipe of
dataset operations in document order, ``[[experiments]]`` entries evaluate
the recommenders on named datasets, and ``[sweep]`` / ``[predictor]`` carry
suite-wide defaults. See ``docs/experiments.md`` for the schema.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence, Union

import numpy as np

from childrec.dataset import (
    Dataset,
    DatasetStats,
    ItemMatching,
    MergeStats,
    RestrictMode,
    Source,
    filter_min_ratings,
    k_fold,
    merge_details,
    restrict_to_children,
    select_kplus_users,
    split,
)
from childrec.evaluation import EvalReport, TTestResult, evaluate, paired_t_test, pool_reports
from childrec.exceptions import (
    ChildrecError,
    ConfigError,
    EmptyDatasetError,
    MismatchedTestSetError,
)
from childrec.ingest import load_ml1m, read_interchange
from childrec.knn import ItemKNN, UserKNN
from childrec.mf import mf_train
from childrec.predict import AlgorithmKind, PredictorConfig
from childrec.synthetic import SynthParams, generate_synthetic

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

PathLike = Union[str, "os.PathLike[str]"]

DATA_DIR_ENV = "CHILDREC_DATA"

DEFAULT_NEIGHBORHOOD_SIZES: tuple[int, ...] = (50, 80, 100, 120, 150, 200, 250)
DEFAULT_LATENT_FACTORS: tuple[int, ...] = (40, 60, 80, 120)
DEFAULT_FOLDS = 5
DEFAULT_MIN_CHILDREN = 2

RESULT_FORMAT_VERSION = 1

# Required and optional keys per dataset operation, besides ``op``.
_STEP_SCHEMA: dict[str, tuple[frozenset[str], frozenset[str]]] = {
    "load_ml1m": (frozenset(), frozenset({"ratings", "movies", "namespace"})),
    "load_csv": (frozenset({"path"}), frozenset({"items"})),
    "generate": (
        frozenset(),
        frozenset(f.name for f in fields(SynthParams)) | {"catalog"},
    ),
    "filter": (frozenset({"input", "k"}), frozenset()),
    "split": (frozenset({"input", "fraction"}), frozenset({"seed"})),
    "merge": (frozenset({"inputs"}), frozenset({"matching"})),
    "kplus": (frozenset({"input"}), frozenset({"min_children", "mode"})),
}

_ML1M_RATINGS = "ml-1m/ratings.dat"
_ML1M_MOVIES = "ml-1m/movies.dat"


class Protocol(enum.Enum):
    CROSS_VALIDATION = "cross_validation"
    HOLDOUT = "holdout"


def derive_seed(seed: int, label: str) -> int:
    """Seed for one named consumer of a suite seed.

    Consumers with different labels get independent streams, so editing one
    recipe step does not reseed the others.
    """
    return int(np.random.SeedSequence([seed, zlib.crc32(label.encode("utf-8"))]).generate_state(1)[0])


@dataclass(frozen=True, eq=False)
class DatasetStep:
    """One ``[datasets.<name>]`` table."""

    name: str
    op: str
    params: Mapping[str, Any]

    @property
    def outputs(self) -> tuple[str, ...]:
        """Dataset names this step publishes."""
        if self.op == "split":
            return (f"{self.name}.train", f"{self.name}.test")
        return (self.name,)

    @property
    def inputs(self) -> tuple[str, ...]:
        """Dataset names this step reads."""
        if self.op == "merge":
            return tuple(self.params["inputs"])
        if self.op == "generate":
            return (self.params["catalog"],) if "catalog" in self.params else ()
        if "input" in self.params:
            return (self.params["input"],)
        return ()


@dataclass(frozen=True, eq=False)
class Recipe:
    """Ordered dataset steps with the seed and data root they run under."""

    seed: int
    steps: tuple[DatasetStep, ...]
    data_root: Path

    def step_for(self, dataset: str) -> DatasetStep:
        """The step publishing a dataset name.

        Raises:
            ConfigError: If no step publishes it.
        """
        for step in self.steps:
            if dataset in step.outputs:
                return step
        raise ConfigError(f"Unknown dataset {dataset!r}")

    @property
    def names(self) -> tuple[str, ...]:
        """Every published dataset name, in declaration order."""
        return tuple(n for step in self.steps for n in step.outputs)


@dataclass(frozen=True)
class SweepSpec:
    """Algorithms and the parameter grid each is evaluated over."""

    algorithms: tuple[AlgorithmKind, ...] = (AlgorithmKind.UU, AlgorithmKind.II, AlgorithmKind.MF)
    neighborhood_sizes: tuple[int, ...] = DEFAULT_NEIGHBORHOOD_SIZES
    latent_factors: tuple[int, ...] = DEFAULT_LATENT_FACTORS

    def __post_init__(self) -> None:
        for name in ("algorithms", "neighborhood_sizes", "latent_factors"):
            values = tuple(getattr(self, name))
            object.__setattr__(self, name, values)
            if not values:
                raise ConfigError(f"sweep.{name} must not be empty")
            if len(set(values)) != len(values):
                raise ConfigError(f"sweep.{name} has a repeated entry")
        for name in ("neighborhood_sizes", "latent_factors"):
            if any(not isinstance(v, int) or v < 1 for v in getattr(self, name)):
                raise ConfigError(f"sweep.{name} entries must be integers >= 1")

    def parameters(self, kind: AlgorithmKind) -> tuple[int, ...]:
        """The grid swept for one algorithm."""
        return self.latent_factors if kind is AlgorithmKind.MF else self.neighborhood_sizes


@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    """One ``[[experiments]]`` entry bound to its suite's recipe.

    Attributes:
        name: Row label in reports.
        recipe: Dataset recipe the named datasets come from.
        protocol: CROSS_VALIDATION over ``data`` or HOLDOUT ``train``/``test``.
        data: Dataset cross-validated over.
        folds: Number of folds.
        train: Holdout training dataset.
        test: Holdout test dataset.
        test_sample: Test pairs sampled for UU and II; None evaluates all.
        sweep: Algorithms and parameter grids.
        predictor: Overrides for PredictorConfig fields.
    """

    name: str
    recipe: Recipe
    protocol: Protocol
    data: str | None = None
    folds: int = DEFAULT_FOLDS
    train: str | None = None
    test: str | None = None
    test_sample: int | None = None
    sweep: SweepSpec = field(default_factory=SweepSpec)
    predictor: Mapping[str, Any] = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.recipe.seed

    @property
    def datasets(self) -> tuple[str, ...]:
        """Dataset names the experiment reads."""
        if self.protocol is Protocol.CROSS_VALIDATION:
            return (self.data,)  # type: ignore[return-value]
        return (self.train, self.test)  # type: ignore[return-value]

    def config(self, kind: AlgorithmKind) -> PredictorConfig:
        """Predictor configuration for one algorithm.

        Raises:
            ConfigError: If an override is invalid.
        """
        raw = dict(self.predictor)
        raw.setdefault("seed", derive_seed(self.seed, f"predictor:{kind.value}"))
        raw["kind"] = kind.value
        try:
            return PredictorConfig.from_dict(raw)
        except TypeError as e:
            raise ConfigError(f"experiments.{self.name}.predictor: {e}") from e


@dataclass(frozen=True, eq=False)
class Suite:
    """A parsed suite file."""

    recipe: Recipe
    experiments: tuple[ExperimentSpec, ...]
    description: str = ""

    def experiment(self, name: str) -> ExperimentSpec:
        for spec in self.experiments:
            if spec.name == name:
                return spec
        raise ConfigError(f"Unknown experiment {name!r}")


# Parsing


def _check_keys(where: str, raw: Mapping[str, Any], required: Iterable[str], optional: Iterable[str]) -> None:
    required = set(required)
    missing = required - set(raw)
    if missing:
        raise ConfigError(f"{where}: missing {', '.join(sorted(missing))}")
    unknown = set(raw) - required - set(optional)
    if unknown:
        raise ConfigError(f"{where}: unknown key {', '.join(sorted(unknown))}")


def _expect(where: str, value: Any, kind: type | tuple[type, ...], what: str) -> Any:
    if isinstance(value, bool) or not isinstance(value, kind):
        raise ConfigError(f"{where}: {what}")
    return value


def _synth_params(where: str, raw: Mapping[str, Any], seed: int) -> SynthParams:
    values = {k: v for k, v in raw.items() if k != "catalog"}
    values.setdefault("seed", seed)
    try:
        if "source" in values:
            values["source"] = Source(values["source"])
        if "value_distribution" in values:
            values["value_distribution"] = tuple(values["value_distribution"])
        return SynthParams(**values)
    except (ValueError, TypeError, ChildrecError) as e:
        raise ConfigError(f"{where}: {e}") from e


def _parse_step(name: str, raw: Mapping[str, Any], declared: set[str], seed: int) -> DatasetStep:
    where = f"datasets.{name}"
    if "." in name:
        raise ConfigError(f"{where}: dataset names may not contain '.'")
    if not isinstance(raw, Mapping) or "op" not in raw:
        raise ConfigError(f"{where}: missing op")
    op = raw["op"]
    if op not in _STEP_SCHEMA:
        raise ConfigError(f"{where}: unknown op {op!r} (expected one of {', '.join(sorted(_STEP_SCHEMA))})")
    params = {k: v for k, v in raw.items() if k != "op"}
    required, optional = _STEP_SCHEMA[op]
    _check_keys(where, params, required, optional)
    for key in ("path", "items", "ratings", "movies", "namespace", "input", "catalog"):
        if key in params:
            _expect(where, params[key], str, f"{key} must be a string")

    if op == "filter":
        if _expect(where, params["k"], int, "k must be an integer") < 1:
            raise ConfigError(f"{where}: k must be >= 1")
    elif op == "split":
        fraction = _expect(where, params["fraction"], (int, float), "fraction must be a number")
        if not 0.0 < fraction < 1.0:
            raise ConfigError(f"{where}: fraction must be in (0, 1)")
        if "seed" in params and _expect(where, params["seed"], int, "seed must be an integer") < 0:
            raise ConfigError(f"{where}: seed must be >= 0")
    elif op == "merge":
        inputs = params["inputs"]
        if not isinstance(inputs, list) or len(inputs) < 2 or not all(isinstance(i, str) for i in inputs):
            raise ConfigError(f"{where}: inputs must list at least two dataset names")
        try:
            ItemMatching(params.get("matching", ItemMatching.BY_TITLE_YEAR.value))
        except ValueError as e:
            raise ConfigError(f"{where}: {e}") from e
    elif op == "kplus":
        if _expect(where, params.get("min_children", DEFAULT_MIN_CHILDREN), int, "min_children must be an integer") < 1:
            raise ConfigError(f"{where}: min_children must be >= 1")
        try:
            RestrictMode(params.get("mode", RestrictMode.CHILDREN_ONLY.value))
        except ValueError as e:
            raise ConfigError(f"{where}: {e}") from e
    elif op == "generate":
        _synth_params(where, params, seed)

    step = DatasetStep(name, op, params)
    for source in step.inputs:
        if not isinstance(source, str) or source not in declared:
            raise ConfigError(f"{where}: {source!r} is not declared above this step")
    return step


def _parse_sweep(where: str, raw: Mapping[str, Any], base: SweepSpec) -> SweepSpec:
    _check_keys(where, raw, (), ("algorithms", "neighborhood_sizes", "latent_factors"))
    values: dict[str, Any] = {}
    if "algorithms" in raw:
        try:
            values["algorithms"] = tuple(AlgorithmKind(a) for a in raw["algorithms"])
        except (ValueError, TypeError) as e:
            raise ConfigError(f"{where}: {e}") from e
    for name in ("neighborhood_sizes", "latent_factors"):
        if name in raw:
            values[name] = tuple(raw[name])
    return replace(base, **values)


def _parse_experiment(
    raw: Mapping[str, Any],
    recipe: Recipe,
    sweep: SweepSpec,
    predictor: Mapping[str, Any],
    declared: set[str],
) -> ExperimentSpec:
    name = raw.get("name")
    if not isinstance(name, str) or not name:
        raise ConfigError("experiments: every entry needs a name")
    where = f"experiments.{name}"
    try:
        protocol = Protocol(raw.get("protocol"))
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from e
    common = {"name", "protocol", "test_sample", "sweep", "predictor"}
    if protocol is Protocol.CROSS_VALIDATION:
        _check_keys(where, raw, {"name", "protocol", "data"}, common | {"folds"})
        folds = _expect(where, raw.get("folds", DEFAULT_FOLDS), int, "folds must be an integer")
        if folds < 2:
            raise ConfigError(f"{where}: folds must be >= 2")
        names = {"data": raw["data"]}
    else:
        _check_keys(where, raw, {"name", "protocol", "train", "test"}, common)
        folds = DEFAULT_FOLDS
        names = {"train": raw["train"], "test": raw["test"]}
    for key, dataset in names.items():
        if dataset not in declared:
            raise ConfigError(f"{where}: {key} {dataset!r} is not a declared dataset")

    test_sample = raw.get("test_sample")
    if test_sample is not None and _expect(where, test_sample, int, "test_sample must be an integer") < 1:
        raise ConfigError(f"{where}: test_sample must be >= 1")

    spec = ExperimentSpec(
        name=name,
        recipe=recipe,
        protocol=protocol,
        folds=folds,
        test_sample=test_sample,
        sweep=_parse_sweep(f"{where}.sweep", raw.get("sweep", {}), sweep),
        predictor={**predictor, **raw.get("predictor", {})},
        **names,
    )
    if "kind" in spec.predictor:
        raise ConfigError(f"{where}: predictor.kind is set by the sweep")
    for kind in spec.sweep.algorithms:
        spec.config(kind)
    return spec


def parse_suite(raw: Mapping[str, Any], data_root: Path, seed: int | None = None) -> Suite:
    """Build a Suite from a decoded TOML document.

    Args:
        raw: Decoded document.
        data_root: Directory relative data paths resolve against.
        seed: Replaces the document's seed when given.

    Raises:
        ConfigError: On any schema violation, including references to
            datasets that are not declared earlier in the document.
    """
    _check_keys("suite", raw, (), ("seed", "description", "datasets", "sweep", "predictor", "experiments"))
    suite_seed = raw.get("seed", 0) if seed is None else seed
    if _expect("suite", suite_seed, int, "seed must be an integer") < 0:
        raise ConfigError("suite: seed must be >= 0")

    declared: set[str] = set()
    steps: list[DatasetStep] = []
    for name, table in raw.get("datasets", {}).items():
        step = _parse_step(name, table, declared, derive_seed(suite_seed, f"dataset:{name}"))
        if declared & set(step.outputs):
            raise ConfigError(f"datasets.{name}: name already declared")
        declared.update(step.outputs)
        steps.append(step)
    recipe = Recipe(suite_seed, tuple(steps), data_root)

    sweep = _parse_sweep("sweep", raw.get("sweep", {}), SweepSpec())
    predictor = dict(raw.get("predictor", {}))
    experiments: list[ExperimentSpec] = []
    for entry in raw.get("experiments", []):
        spec = _parse_experiment(entry, recipe, sweep, predictor, declared)
        if any(spec.name == other.name for other in experiments):
            raise ConfigError(f"experiments: duplicate name {spec.name!r}")
        experiments.append(spec)
    return Suite(recipe, tuple(experiments), str(raw.get("description", "")))


def resolve_data_root(data_dir: PathLike | None, spec_dir: PathLike) -> Path:
    """Data root: data_dir, else $CHILDREC_DATA, else the suite file's directory."""
    if data_dir is not None:
        return Path(data_dir)
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        return Path(env)
    return Path(spec_dir)


def load_suite(path: PathLike, data_dir: PathLike | None = None, seed: int | None = None) -> Suite:
    """Read a suite file.

    Raises:
        ConfigError: If the file is not valid TOML or violates the schema.
    """
    path = Path(path)
    try:
        with path.open("rb") as f:
            raw = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path.name}: {e}") from e
    return parse_suite(raw, resolve_data_root(data_dir, path.parent), seed)


def available_presets() -> list[str]:
    """Names of the bundled preset suites."""
    from importlib.resources import files

    return sorted(
        p.name[: -len(".toml")] for p in files("childrec.presets").iterdir() if p.name.endswith(".toml")
    )


def load_preset(name: str, data_dir: PathLike | None = None, seed: int | None = None) -> Suite:
    """Read a bundled preset suite.

    Relative paths in presets resolve against data_dir, else $CHILDREC_DATA,
    else the current directory.

    Raises:
        ConfigError: If no preset has that name.
    """
    from importlib.resources import files

    resource = files("childrec.presets").joinpath(f"{name}.toml")
    if not resource.is_file():
        raise ConfigError(f"Unknown preset {name!r} (available: {', '.join(available_presets())})")
    raw = tomllib.loads(resource.read_text(encoding="utf-8"))
    return parse_suite(raw, resolve_data_root(data_dir, Path.cwd()), seed)


# Materialization


class Materializer:
    """Builds the datasets of a recipe on demand and caches them.

    Alongside each dataset it tracks the "min # of ratings" label of its
    lineage: the threshold of a filter step, the observed minimum for loaded
    or generated data, joined with " & " across merges. Merge steps also
    record their item unification and collision counts in ``merge_stats``.
    """

    def __init__(self, recipe: Recipe) -> None:
        self.recipe = recipe
        self.merge_stats: dict[str, MergeStats] = {}
        self._datasets: dict[str, Dataset] = {}
        self._labels: dict[str, str] = {}

    def get(self, name: str) -> Dataset:
        """The dataset published under name.

        Raises:
            ConfigError: If name is not declared or a data file is missing.
        """
        if name not in self._datasets:
            self._run(self.recipe.step_for(name))
        return self._datasets[name]

    def min_ratings_label(self, name: str) -> str:
        self.get(name)
        return self._labels[name]

    def materialize_all(self) -> dict[str, Dataset]:
        """Every published dataset, in declaration order."""
        return {name: self.get(name) for name in self.recipe.names}

    def _path(self, step: DatasetStep, relative: str) -> Path:
        path = self.recipe.data_root / relative
        if not path.is_file():
            raise ConfigError(f"datasets.{step.name}: data file not found: {path}")
        return path

    def _publish(self, name: str, ds: Dataset, label: str) -> None:
        self._datasets[name] = ds
        self._labels[name] = label
        logger.info("Materialized %s: %s", name, ds)

    def _run(self, step: DatasetStep) -> None:
        p = step.params
        seed = derive_seed(self.recipe.seed, f"dataset:{step.name}")
        if step.op == "load_ml1m":
            ds = load_ml1m(
                self._path(step, p.get("ratings", _ML1M_RATINGS)),
                self._path(step, p.get("movies", _ML1M_MOVIES)),
                namespace=p.get("namespace", "ml1m"),
            )
            self._publish(step.name, ds, str(ds.min_user_ratings))
        elif step.op == "load_csv":
            items = self._path(step, p["items"]) if "items" in p else None
            ds = read_interchange(self._path(step, p["path"]), items)
            self._publish(step.name, ds, str(ds.min_user_ratings))
        elif step.op == "generate":
            catalog = self.get(p["catalog"]) if "catalog" in p else None
            ds = generate_synthetic(_synth_params(f"datasets.{step.name}", p, seed), catalog)
            self._publish(step.name, ds, str(ds.min_user_ratings))
        elif step.op == "filter":
            ds = filter_min_ratings(self.get(p["input"]), p["k"])
            self._publish(step.name, ds, str(p["k"]))
        elif step.op == "split":
            source = p["input"]
            train, test = split(self.get(source), float(p["fraction"]), p.get("seed", seed))
            label = self.min_ratings_label(source)
            self._publish(f"{step.name}.train", train, label)
            self._publish(f"{step.name}.test", test, label)
        elif step.op == "merge":
            matching = ItemMatching(p.get("matching", ItemMatching.BY_TITLE_YEAR.value))
            first, *rest = p["inputs"]
            ds = self.get(first)
            unified = collisions = 0
            for other in rest:
                ds, stats = merge_details(ds, self.get(other), matching)
                unified += stats.unified_items
                collisions += stats.collisions
            self.merge_stats[step.name] = MergeStats(unified, collisions)
            self._publish(step.name, ds, " & ".join(self.min_ratings_label(n) for n in p["inputs"]))
        elif step.op == "kplus":
            source = self.get(p["input"])
            users = select_kplus_users(source, p.get("min_children", DEFAULT_MIN_CHILDREN))
            mode = RestrictMode(p.get("mode", RestrictMode.CHILDREN_ONLY.value))
            ds = restrict_to_children(source, users, mode)
            self._publish(step.name, ds, self.min_ratings_label(p["input"]))


# Results


@dataclass(frozen=True)
class SweepPoint:
    """Evaluation of one algorithm at one sweep parameter.

    Attributes:
        algorithm: UU, II or MF.
        parameter: Neighborhood size (UU/II) or latent factors (MF).
        rmse: Table cell: mean fold RMSE under cross-validation, the test
            RMSE under holdout.
        pooled_rmse: RMSE over every evaluated pair of every fold.
        n: Evaluated test pairs.
        served_user_fraction: Share of test users with a served pair.
        served_pair_fraction: Share of test pairs served.
        served_rmse: RMSE over served pairs, None when none was served.
        fold_rmses: RMSE per fold (one entry under holdout).
    """

    algorithm: AlgorithmKind
    parameter: int
    rmse: float
    pooled_rmse: float
    n: int
    served_user_fraction: float
    served_pair_fraction: float
    served_rmse: float | None
    fold_rmses: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    """Outcome of :func:`run`.

    Attributes:
        name: Experiment name.
        protocol: Evaluation protocol.
        seed: Suite seed.
        datasets: Dataset names, ``train::test`` under holdout.
        train_stats: Users/Items/Ratings of the training (or cross-validated) data.
        test_stats: Users/Items/Ratings of the holdout test set, None under
            cross-validation.
        min_ratings: "Min # of ratings" label, ``train::test`` under holdout.
        test_sample: Test pairs sampled for UU and II, None when all were used.
        points: Every sweep point, ordered by algorithm then parameter.
        fingerprints: Digest of the evaluated test pair sequence per algorithm.
        sq_errors: Per-pair squared errors of the best point per algorithm.
    """

    name: str
    protocol: Protocol
    seed: int
    datasets: str
    train_stats: DatasetStats
    test_stats: DatasetStats | None
    min_ratings: str
    test_sample: int | None
    points: tuple[SweepPoint, ...]
    fingerprints: Mapping[AlgorithmKind, str]
    sq_errors: Mapping[AlgorithmKind, np.ndarray]

    @property
    def algorithms(self) -> tuple[AlgorithmKind, ...]:
        return tuple(k for k in AlgorithmKind if any(p.algorithm is k for p in self.points))

    def best(self, kind: AlgorithmKind) -> SweepPoint:
        """Lowest-RMSE point of an algorithm; ties go to the smaller parameter.

        Raises:
            KeyError: If the algorithm was not run.
        """
        candidates = [p for p in self.points if p.algorithm is kind]
        if not candidates:
            raise KeyError(kind.value)
        return min(candidates, key=lambda p: (p.rmse, p.parameter))


@dataclass(frozen=True)
class Comparison:
    """Paired t-tests between two results at their best sweep points."""

    name_a: str
    name_b: str
    rmse_a: Mapping[AlgorithmKind, float]
    rmse_b: Mapping[AlgorithmKind, float]
    tests: Mapping[AlgorithmKind, TTestResult]


def _fingerprint(users: np.ndarray, items: np.ndarray, values: np.ndarray) -> str:
    digest = hashlib.sha256()
    for u, i, v in zip(users.tolist(), items.tolist(), values.tolist()):
        digest.update(f"{u}\t{i}\t{v!r}\n".encode("utf-8"))
    return digest.hexdigest()


@dataclass(frozen=True)
class _Fold:
    train: Dataset
    users: np.ndarray
    items: np.ndarray
    values: np.ndarray

    def rows(self, rows: np.ndarray) -> _Fold:
        return _Fold(self.train, self.users[rows], self.items[rows], self.values[rows])


def _fold(train: Dataset, test: Dataset) -> _Fold:
    users = np.asarray(test.users, dtype=object)[test.user_codes]
    items = np.asarray(test.items, dtype=object)[test.item_codes]
    return _Fold(train, users, items, np.asarray(test.values))


def _sample_folds(folds: list[_Fold], size: int, seed: int) -> list[_Fold]:
    """A seeded sample of size pairs drawn from the concatenated test folds."""
    lengths = [len(f.values) for f in folds]
    total = sum(lengths)
    if size >= total:
        return folds
    chosen = np.sort(np.random.default_rng(seed).choice(total, size=size, replace=False))
    sampled: list[_Fold] = []
    offset = 0
    for f, n in zip(folds, lengths):
        local = chosen[(chosen >= offset) & (chosen < offset + n)] - offset
        sampled.append(f.rows(local))
        offset += n
    return sampled


_Task = Callable[[], "list[tuple[AlgorithmKind, int, int, EvalReport]]"]


def _knn_task(kind: AlgorithmKind, index: int, fold: _Fold, cfg: PredictorConfig, sizes: Sequence[int]) -> _Task:
    def task() -> list[tuple[AlgorithmKind, int, int, EvalReport]]:
        if len(fold.values) == 0:
            return []
        model = (UserKNN if kind is AlgorithmKind.UU else ItemKNN)(fold.train, cfg)
        batches = model.predict_batch(fold.users, fold.items, sizes)
        return [(kind, k, index, evaluate(batches[k], fold.values, fold.users)) for k in sizes]

    return task


def _mf_task(index: int, fold: _Fold, cfg: PredictorConfig) -> _Task:
    def task() -> list[tuple[AlgorithmKind, int, int, EvalReport]]:
        if len(fold.values) == 0:
            return []
        model = mf_train(fold.train, cfg)
        report = evaluate(model.predict_batch(fold.users, fold.items), fold.values, fold.users)
        return [(AlgorithmKind.MF, cfg.latent_factors, index, report)]

    return task


def _nonempty(spec: ExperimentSpec, name: str, ds: Dataset) -> Dataset:
    if len(ds) == 0:
        step = spec.recipe.step_for(name)
        raise EmptyDatasetError(
            f"Experiment {spec.name!r}: dataset {name!r} from step {step.name!r} ({step.op}) is empty"
        )
    return ds


def run(spec: ExperimentSpec, workers: int = 1, materializer: Materializer | None = None) -> ExperimentResult:
    """Materialize an experiment's datasets and evaluate every sweep point.

    Args:
        spec: The experiment.
        workers: Threads for sweep points and folds; 1 runs inline.
        materializer: Shared dataset cache for the spec's recipe.

    Raises:
        EmptyDatasetError: If a dataset the experiment reads is empty.
        ConfigError: If cross-validation asks for more folds than ratings.
    """
    m = materializer or Materializer(spec.recipe)
    logger.info("Running experiment %s (%s)", spec.name, spec.protocol.value)

    if spec.protocol is Protocol.CROSS_VALIDATION:
        data_name = spec.data or ""
        data = _nonempty(spec, data_name, m.get(data_name))
        if spec.folds > len(data):
            raise ConfigError(f"Experiment {spec.name!r}: {spec.folds} folds exceed {len(data)} ratings")
        folds = [_fold(tr, te) for tr, te in k_fold(data, spec.folds, derive_seed(spec.seed, f"folds:{data_name}"))]
        train_stats, test_stats = data.stats, None
        min_ratings = m.min_ratings_label(data_name)
        datasets = data_name
        sample_label = f"sample:{data_name}:{spec.folds}"
    else:
        train_name, test_name = spec.train or "", spec.test or ""
        train = _nonempty(spec, train_name, m.get(train_name))
        test = _nonempty(spec, test_name, m.get(test_name))
        folds = [_fold(train, test)]
        train_stats, test_stats = train.stats, test.stats
        min_ratings = f"{m.min_ratings_label(train_name)}::{m.min_ratings_label(test_name)}"
        datasets = f"{train_name}::{test_name}"
        sample_label = f"sample:{test_name}"

    knn_folds = folds
    if spec.test_sample is not None:
        knn_folds = _sample_folds(folds, spec.test_sample, derive_seed(spec.seed, sample_label))

    tasks: list[_Task] = []
    fold_sets: dict[AlgorithmKind, list[_Fold]] = {}
    for kind in spec.sweep.algorithms:
        cfg = spec.config(kind)
        if kind is AlgorithmKind.MF:
            fold_sets[kind] = folds
            for f in spec.sweep.latent_factors:
                tasks.extend(_mf_task(index, fold, replace(cfg, latent_factors=f)) for index, fold in enumerate(folds))
        else:
            fold_sets[kind] = knn_folds
            tasks.extend(
                _knn_task(kind, index, fold, cfg, spec.sweep.neighborhood_sizes)
                for index, fold in enumerate(knn_folds)
            )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda task: task(), tasks))
    else:
        outcomes = [task() for task in tasks]

    reports: dict[tuple[AlgorithmKind, int], dict[int, EvalReport]] = {}
    for outcome in outcomes:
        for kind, parameter, index, report in outcome:
            reports.setdefault((kind, parameter), {})[index] = report

    points: list[SweepPoint] = []
    pooled: dict[tuple[AlgorithmKind, int], EvalReport] = {}
    for kind in spec.sweep.algorithms:
        kind_folds = fold_sets[kind]
        evaluated = [i for i, f in enumerate(kind_folds) if len(f.values)]
        for parameter in sorted(spec.sweep.parameters(kind)):
            by_fold = reports.get((kind, parameter), {})
            fold_reports = [by_fold[i] for i in evaluated]
            if not fold_reports:
                raise EmptyDatasetError(f"Experiment {spec.name!r}: no test pairs to evaluate")
            report = pool_reports(fold_reports, [kind_folds[i].users for i in evaluated])
            pooled[kind, parameter] = report
            fold_rmses = tuple(r.rmse for r in fold_reports)
            point = SweepPoint(
                kind,
                parameter,
                float(np.mean(fold_rmses)),
                report.rmse,
                report.n,
                report.served_user_fraction,
                report.served_pair_fraction,
                report.served_rmse,
                fold_rmses,
            )
            logger.debug("%s %s[%d]: RMSE %.4f", spec.name, kind.value, parameter, point.rmse)
            points.append(point)

    result_points = tuple(sorted(points, key=lambda p: (list(AlgorithmKind).index(p.algorithm), p.parameter)))
    fingerprints: dict[AlgorithmKind, str] = {}
    sq_errors: dict[AlgorithmKind, np.ndarray] = {}
    result = ExperimentResult(
        spec.name, spec.protocol, spec.seed, datasets, train_stats, test_stats, min_ratings,
        spec.test_sample, result_points, fingerprints, sq_errors,
    )
    for kind in result.algorithms:
        best = result.best(kind)
        kind_folds = fold_sets[kind]
        fingerprints[kind] = _fingerprint(
            np.concatenate([f.users for f in kind_folds]),
            np.concatenate([f.items for f in kind_folds]),
            np.concatenate([f.values for f in kind_folds]),
        )
        sq_errors[kind] = pooled[kind, best.parameter].per_pair_sq_errors
        logger.info("%s best %s: %.4f [%d]", spec.name, kind.value, best.rmse, best.parameter)
    return result


def run_suite(
    suite: Suite, workers: int = 1, names: Sequence[str] | None = None,
) -> list[ExperimentResult]:
    """Run the experiments of a suite (all of them when names is None)."""
    specs = list(suite.experiments) if names is None else [suite.experiment(n) for n in names]
    materializer = Materializer(suite.recipe)
    return [run(spec, workers, materializer) for spec in specs]


def compare(result_a: ExperimentResult, result_b: ExperimentResult) -> Comparison:
    """Paired t-test per shared algorithm at each result's best sweep point.

    Raises:
        MismatchedTestSetError: If the results evaluated an algorithm on
            different test pair sequences.
        ConfigError: If the results share no algorithm.
    """
    shared = [k for k in result_a.algorithms if k in result_b.algorithms]
    if not shared:
        raise ConfigError(f"{result_a.name!r} and {result_b.name!r} share no algorithm")
    tests: dict[AlgorithmKind, TTestResult] = {}
    for kind in shared:
        if result_a.fingerprints[kind] != result_b.fingerprints[kind]:
            raise MismatchedTestSetError(
                f"{result_a.name!r} and {result_b.name!r} evaluated {kind.value} on different test pairs"
            )
        tests[kind] = paired_t_test(result_a.sq_errors[kind], result_b.sq_errors[kind])
    return Comparison(
        result_a.name,
        result_b.name,
        {k: result_a.best(k).rmse for k in shared},
        {k: result_b.best(k).rmse for k in shared},
        tests,
    )


# Persistence


def result_to_dict(result: ExperimentResult) -> dict[str, Any]:
    """JSON-friendly representation of a result."""
    return {
        "format_version": RESULT_FORMAT_VERSION,
        "name": result.name,
        "protocol": result.protocol.value,
        "seed": result.seed,
        "datasets": result.datasets,
        "train_stats": list(result.train_stats),
        "test_stats": None if result.test_stats is None else list(result.test_stats),
        "min_ratings": result.min_ratings,
        "test_sample": result.test_sample,
        "points": [
            {
                "algorithm": p.algorithm.value,
                "parameter": p.parameter,
                "rmse": p.rmse,
                "pooled_rmse": p.pooled_rmse,
                "n": p.n,
                "served_user_fraction": p.served_user_fraction,
                "served_pair_fraction": p.served_pair_fraction,
                "served_rmse": p.served_rmse,
                "fold_rmses": list(p.fold_rmses),
            }
            for p in result.points
        ],
        "fingerprints": {k.value: v for k, v in result.fingerprints.items()},
        "sq_errors": {k.value: v.tolist() for k, v in result.sq_errors.items()},
    }


def result_from_dict(raw: Mapping[str, Any]) -> ExperimentResult:
    """Inverse of :func:`result_to_dict`.

    Raises:
        ConfigError: If the payload is malformed or of another format version.
    """
    if raw.get("format_version") != RESULT_FORMAT_VERSION:
        raise ConfigError(f"Unsupported result format version {raw.get('format_version')!r}")
    try:
        points = tuple(
            SweepPoint(
                AlgorithmKind(p["algorithm"]),
                int(p["parameter"]),
                float(p["rmse"]),
                float(p["pooled_rmse"]),
                int(p["n"]),
                float(p["served_user_fraction"]),
                float(p["served_pair_fraction"]),
                None if p["served_rmse"] is None else float(p["served_rmse"]),
                tuple(float(x) for x in p["fold_rmses"]),
            )
            for p in raw["points"]
        )
        return ExperimentResult(
            raw["name"],
            Protocol(raw["protocol"]),
            int(raw["seed"]),
            raw["datasets"],
            DatasetStats(*raw["train_stats"]),
            None if raw["test_stats"] is None else DatasetStats(*raw["test_stats"]),
            raw["min_ratings"],
            raw["test_sample"],
            points,
            {AlgorithmKind(k): v for k, v in raw["fingerprints"].items()},
            {AlgorithmKind(k): np.asarray(v, dtype=np.float64) for k, v in raw["sq_errors"].items()},
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"Malformed result: {e}") from e


def save_result(result: ExperimentResult, path: PathLike) -> None:
    """Write a result as JSON (stable key order, so reruns are byte-identical)."""
    Path(path).write_text(json.dumps(result_to_dict(result), sort_keys=True) + "\n", encoding="utf-8")


def load_result(path: PathLike) -> ExperimentResult:
    """Read a result written by :func:`save_result`."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path.name}: {e}") from e
    return result_from_dict(raw)
