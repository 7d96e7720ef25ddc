"""Reading and writing rating files.

Formats:
    ML1M native: ``::``-delimited ISO-8859-1 text as distributed by GroupLens.
        ratings.dat lines are ``UserID::MovieID::Rating::Timestamp``,
        movies.dat lines are ``MovieID::Title (Year)::Genre1|Genre2|...``.
    Interchange: UTF-8 CSV with header ``user,item,value,source``, plus an
        optional companion items file with header ``item,title,year,genres``.
    Histogram: CSV with header ``ratings_per_user,user_count``.
"""

from __future__ import annotations

import logging
import os
import re
from pathlib import Path
from typing import Mapping, Union

import numpy as np
import pandas as pd

from childrec.dataset import (
    MAX_RATING,
    MIN_RATING,
    Dataset,
    ItemMeta,
    Source,
)
from childrec.exceptions import IngestionError

logger = logging.getLogger(__name__)

PathLike = Union[str, "os.PathLike[str]"]

ML1M_ENCODING = "iso-8859-1"
INTERCHANGE_COLUMNS = ["user", "item", "value", "source"]
ITEM_COLUMNS = ["item", "title", "year", "genres"]
HISTOGRAM_COLUMNS = ["ratings_per_user", "user_count"]

_TITLE_YEAR = re.compile(r"^(?P<title>.*?)\s*\((?P<year>\d{4})\)\s*$")


def split_title_year(raw: str) -> tuple[str, int | None]:
    """Split an ML1M title such as ``Toy Story (1995)`` into title and year."""
    match = _TITLE_YEAR.match(raw)
    if match is None:
        return raw.strip(), None
    return match.group("title"), int(match.group("year"))


def _check_rows(frame: pd.DataFrame, where: str) -> None:
    """Reject out-of-range values and duplicate (user, item) pairs.

    The frame must carry a ``line`` column with the source line number.
    """
    bad = ~frame["value"].between(MIN_RATING, MAX_RATING)
    if bad.any():
        row = frame[bad].iloc[0]
        raise IngestionError(
            int(row["line"]),
            f"{where}: rating {row['value']} outside [{MIN_RATING:g}, {MAX_RATING:g}]",
        )
    duplicated = frame.duplicated(subset=["user", "item"], keep="first")
    if duplicated.any():
        row = frame[duplicated].iloc[0]
        raise IngestionError(
            int(row["line"]),
            f"{where}: duplicate rating for user {row['user']}, item {row['item']}",
        )


def load_ml1m_movies(movies_path: PathLike, namespace: str = "ml1m") -> dict[str, ItemMeta]:
    """Parse an ML1M movies.dat file into item metadata keyed by item ref.

    Raises:
        IngestionError: On a malformed line.
    """
    path = Path(movies_path)
    meta: dict[str, ItemMeta] = {}
    with path.open(encoding=ML1M_ENCODING) as f:
        for line_no, line in enumerate(f, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("::")
            if len(fields) != 3 or not fields[0].isdigit():
                raise IngestionError(line_no, f"{path.name}: expected MovieID::Title::Genres")
            item = f"{namespace}:{int(fields[0])}"
            if item in meta:
                raise IngestionError(line_no, f"{path.name}: duplicate movie {fields[0]}")
            title, year = split_title_year(fields[1])
            genres = frozenset(g for g in fields[2].split("|") if g)
            meta[item] = ItemMeta(item, title, year, genres)
    return meta


def load_ml1m(
    ratings_path: PathLike,
    movies_path: PathLike,
    namespace: str = "ml1m",
    source: Source = Source.ADULT,
) -> Dataset:
    """Load the MovieLens 1M ratings and movie metadata.

    Timestamps are validated as integers and then discarded.

    Args:
        ratings_path: Path to ratings.dat.
        movies_path: Path to movies.dat.
        namespace: Prefix for user and item references.
        source: Provenance tag attached to every rating.

    Returns:
        Dataset with genres attached. The canonical release yields
        (6040, 3706, 1000209).

    Raises:
        IngestionError: On a malformed line, a rating outside [1, 5] or a
            duplicate (user, item) pair. The message names the line number.
    """
    meta = load_ml1m_movies(movies_path, namespace)
    path = Path(ratings_path)

    users: list[str] = []
    items: list[str] = []
    values: list[float] = []
    lines: list[int] = []
    with path.open(encoding=ML1M_ENCODING) as f:
        for line_no, line in enumerate(f, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("::")
            if len(fields) != 4:
                raise IngestionError(
                    line_no, f"{path.name}: expected UserID::MovieID::Rating::Timestamp"
                )
            try:
                user_id, movie_id, rating, _timestamp = (int(x) for x in fields)
            except ValueError as e:
                raise IngestionError(line_no, f"{path.name}: non-integer field") from e
            users.append(f"{namespace}:{user_id}")
            items.append(f"{namespace}:{movie_id}")
            values.append(float(rating))
            lines.append(line_no)

    frame = pd.DataFrame({"user": users, "item": items, "value": values, "line": lines})
    _check_rows(frame, path.name)

    missing = set(items) - meta.keys()
    if missing:
        logger.warning("%d rated movies have no metadata in %s", len(missing), Path(movies_path).name)

    ds = Dataset.from_columns(users, items, np.asarray(values), source, meta)
    logger.info("Loaded %s: %s", path.name, ds)
    return ds


def write_interchange(ds: Dataset, path: PathLike, items_path: PathLike | None = None) -> None:
    """Write ratings (and optionally item metadata) in the interchange format."""
    ds.to_frame().to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    if items_path is not None:
        rows = [
            (
                m.item,
                m.title,
                "" if m.year is None else str(m.year),
                "|".join(sorted(m.genres)),
            )
            for m in (ds.item_meta(i) for i in ds.items)
        ]
        pd.DataFrame(rows, columns=ITEM_COLUMNS).to_csv(
            items_path, index=False, encoding="utf-8", lineterminator="\n"
        )


def _read_csv_lines(path: PathLike, **kwargs) -> pd.DataFrame:
    """Read a CSV file with a ``line`` column holding each row's line number.

    Blank lines count towards line numbers but yield no rows.
    """
    frame = pd.read_csv(path, keep_default_na=False, encoding="utf-8", skip_blank_lines=False, **kwargs)
    frame["line"] = np.arange(len(frame)) + 2
    blank = frame.drop(columns="line").isna().all(axis=1)
    return frame[~blank].reset_index(drop=True)


def _read_items(items_path: PathLike) -> dict[str, ItemMeta]:
    frame = _read_csv_lines(items_path, dtype=str)
    if list(frame.columns[:-1]) != ITEM_COLUMNS:
        raise IngestionError(1, f"{Path(items_path).name}: header must be {','.join(ITEM_COLUMNS)}")
    meta: dict[str, ItemMeta] = {}
    for item, title, year, genres, line in frame.itertuples(index=False):
        if year and not year.isdigit():
            raise IngestionError(int(line), f"{Path(items_path).name}: bad year {year!r}")
        meta[item] = ItemMeta(
            item,
            title,
            int(year) if year else None,
            frozenset(g for g in genres.split("|") if g),
        )
    return meta


def read_interchange(path: PathLike, items_path: PathLike | None = None) -> Dataset:
    """Read a dataset written by :func:`write_interchange`.

    Raises:
        IngestionError: On a bad header, unknown source tag, non-numeric
            value, out-of-range value or duplicate (user, item) pair.
    """
    name = Path(path).name
    frame = _read_csv_lines(path, dtype={"user": str, "item": str, "source": str})
    if list(frame.columns[:-1]) != INTERCHANGE_COLUMNS:
        raise IngestionError(1, f"{name}: header must be {','.join(INTERCHANGE_COLUMNS)}")

    values = pd.to_numeric(frame["value"], errors="coerce")
    if values.isna().any():
        raise IngestionError(int(frame["line"][values.isna()].iloc[0]), f"{name}: non-numeric value")
    frame["value"] = values.astype(np.float64)

    by_tag: Mapping[str, Source] = {s.value: s for s in Source}
    unknown = ~frame["source"].isin(list(by_tag))
    if unknown.any():
        row = frame[unknown].iloc[0]
        raise IngestionError(int(row["line"]), f"{name}: unknown source {row['source']!r}")
    _check_rows(frame, name)

    meta = _read_items(items_path) if items_path is not None else None
    sources = [by_tag[s] for s in frame["source"]]
    return Dataset.from_columns(
        frame["user"].to_numpy(dtype=object),
        frame["item"].to_numpy(dtype=object),
        frame["value"].to_numpy(),
        sources,
        meta,
    )


def write_histogram(histogram: Mapping[int, int], path: PathLike) -> None:
    """Write an activity histogram as ``ratings_per_user,user_count`` rows."""
    frame = pd.DataFrame(sorted(histogram.items()), columns=HISTOGRAM_COLUMNS)
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")

