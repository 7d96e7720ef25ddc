"""CLI for childrec experiments."""

from __future__ import annotations

import logging
import re
import sys
from pathlib import Path

_LOG_LEVELS = (logging.WARNING, logging.INFO, logging.DEBUG)


def main() -> None:
    """Entry point for the childrec CLI."""
    try:
        import click
    except ImportError:
        print("CLI requires click: pip install childrec[cli]", file=sys.stderr)
        sys.exit(1)

    _build_cli(click)()


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.+-]+", "_", name).strip("_") or "experiment"


def _build_cli(click: object) -> object:
    """Build the Click CLI group (deferred to avoid import-time dependency)."""
    import click as _click

    from childrec.exceptions import ChildrecError
    from childrec.experiment import Suite, available_presets

    class _Group(_click.Group):
        def invoke(self, ctx: _click.Context) -> object:
            try:
                return super().invoke(ctx)
            except ChildrecError as e:
                raise _click.ClickException(str(e)) from e

    def suite_options(f: object) -> object:
        f = _click.option("--spec", "spec_path", type=_click.Path(exists=True, dir_okay=False),
                          help="Experiment suite TOML file.")(f)
        f = _click.option("--preset", type=_click.Choice(available_presets()),
                          help="Bundled experiment suite.")(f)
        f = _click.option("--data-dir", type=_click.Path(file_okay=False),
                          help="Root for relative data paths (default: $CHILDREC_DATA, else the spec's directory).")(f)
        f = _click.option("--seed", type=int, default=None, help="Replace the suite seed.")(f)
        return f

    def load(spec_path: str | None, preset: str | None, data_dir: str | None, seed: int | None) -> Suite:
        from childrec.experiment import load_preset, load_suite

        if (spec_path is None) == (preset is None):
            raise _click.UsageError("Give exactly one of --spec and --preset.")
        if spec_path is not None:
            return load_suite(spec_path, data_dir, seed)
        return load_preset(preset, data_dir, seed)  # type: ignore[arg-type]

    format_option = _click.option(
        "--format", "fmt",
        type=_click.Choice(["csv", "table"], case_sensitive=False),
        default="table",
        help="Output format (default: table).",
    )

    @_click.group(cls=_Group)
    @_click.option("-v", "--verbose", count=True, help="-v for progress, -vv for debug output.")
    def cli(verbose: int) -> None:
        """Collaborative filtering experiments on adult and child rating data."""
        logging.basicConfig(
            level=_LOG_LEVELS[min(verbose, len(_LOG_LEVELS) - 1)],
            format="%(levelname)s %(name)s: %(message)s",
        )

    @cli.command()
    @suite_options
    @_click.option("--out", type=_click.Path(file_okay=False), required=True, help="Output directory.")
    @_click.option("--dataset", "names", multiple=True, help="Dataset to write (repeatable; default: all).")
    def prepare(spec_path: str | None, preset: str | None, data_dir: str | None, seed: int | None,
                out: str, names: tuple[str, ...]) -> None:
        """Materialize a suite's datasets as interchange CSV files."""
        from childrec.experiment import Materializer
        from childrec.ingest import write_interchange

        suite = load(spec_path, preset, data_dir, seed)
        materializer = Materializer(suite.recipe)
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name in names or suite.recipe.names:
            ds = materializer.get(name)
            write_interchange(ds, out_dir / f"{name}.csv", out_dir / f"{name}.items.csv")
            users, items, ratings = ds.stats
            _click.echo(f"{name}: {users} users, {items} items, {ratings} ratings")

    @cli.command()
    @suite_options
    @_click.option("--dataset", "names", multiple=True, help="Dataset to profile (repeatable; default: all).")
    @format_option
    def describe(spec_path: str | None, preset: str | None, data_dir: str | None, seed: int | None,
                 names: tuple[str, ...], fmt: str) -> None:
        """Print a profile table of a suite's datasets."""
        from childrec.experiment import Materializer
        from childrec.report import dataset_table

        suite = load(spec_path, preset, data_dir, seed)
        materializer = Materializer(suite.recipe)
        datasets = {name: materializer.get(name) for name in names or suite.recipe.names}
        _click.echo(dataset_table(datasets, materializer.merge_stats, fmt), nl=False)

    @cli.command()
    @suite_options
    @_click.option("--out", type=_click.Path(file_okay=False), default=None,
                   help="Directory for result JSON files and the report.")
    @format_option
    @_click.option("--experiment", "names", multiple=True, help="Experiment to run (repeatable; default: all).")
    @_click.option("--workers", type=_click.IntRange(min=1), default=1, help="Threads for sweep points.")
    @_click.option("--detail", is_flag=True, default=False, help="Also print every sweep point.")
    def run(spec_path: str | None, preset: str | None, data_dir: str | None, seed: int | None,
            out: str | None, fmt: str, names: tuple[str, ...], workers: int, detail: bool) -> None:
        """Run a suite's experiments and print the results table."""
        from childrec.experiment import run_suite, save_result
        from childrec.report import report_table, sweep_table

        suite = load(spec_path, preset, data_dir, seed)
        results = run_suite(suite, workers=workers, names=list(names) or None)
        table = report_table(results, fmt)
        if out is not None:
            out_dir = Path(out)
            out_dir.mkdir(parents=True, exist_ok=True)
            used: set[str] = set()
            for result in results:
                stem = _slug(result.name)
                while stem in used:
                    stem += "_"
                used.add(stem)
                save_result(result, out_dir / f"{stem}.json")
            (out_dir / f"report.{'csv' if fmt == 'csv' else 'txt'}").write_text(table, encoding="utf-8")
        _click.echo(table, nl=False)
        if detail:
            _click.echo()
            _click.echo(sweep_table(results, fmt), nl=False)

    @cli.command()
    @_click.argument("results", nargs=-1, required=True, type=_click.Path(exists=True, dir_okay=False))
    @format_option
    @_click.option("--detail", is_flag=True, default=False, help="Print every sweep point instead.")
    def report(results: tuple[str, ...], fmt: str, detail: bool) -> None:
        """Render a results table from stored result files."""
        from childrec.experiment import load_result
        from childrec.report import report_table, sweep_table

        loaded = [load_result(p) for p in results]
        render = sweep_table if detail else report_table
        _click.echo(render(loaded, fmt), nl=False)

    @cli.command()
    @suite_options
    @_click.option("--dataset", "name", required=True, help="Dataset whose activity is counted.")
    @_click.option("--out", type=_click.Path(dir_okay=False), default=None, help="CSV file (default: stdout).")
    def histogram(spec_path: str | None, preset: str | None, data_dir: str | None, seed: int | None,
                  name: str, out: str | None) -> None:
        """Emit the ratings-per-user histogram of a dataset as CSV."""
        from childrec.dataset import activity_histogram
        from childrec.experiment import Materializer
        from childrec.ingest import write_histogram

        suite = load(spec_path, preset, data_dir, seed)
        counts = activity_histogram(Materializer(suite.recipe).get(name))
        if out is not None:
            write_histogram(counts, out)
        else:
            _click.echo("ratings_per_user,user_count")
            for ratings, users in sorted(counts.items()):
                _click.echo(f"{ratings},{users}")

    @cli.command()
    @_click.argument("result_a", type=_click.Path(exists=True, dir_okay=False))
    @_click.argument("result_b", type=_click.Path(exists=True, dir_okay=False))
    @format_option
    def compare(result_a: str, result_b: str, fmt: str) -> None:
        """Paired t-test of two stored results on their shared test pairs."""
        from childrec.experiment import compare as compare_results
        from childrec.experiment import load_result
        from childrec.report import comparison_table

        comparison = compare_results(load_result(result_a), load_result(result_b))
        _click.echo(comparison_table(comparison, fmt), nl=False)

    return cli
