"""Rating datasets: indexing, filtering, splitting and merging.

A Dataset is an immutable, column-oriented collection of (user, item, value,
source) observations. User and item references are namespaced strings
(e.g. ``ml1m:1193``) and both indexes are kept in ascending string order,
so an integer code order is also identifier order.

All transformations return new Dataset objects; none mutate their input.
"""

from __future__ import annotations

import enum
import logging
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType
from typing import TYPE_CHECKING, Iterable, Iterator, Mapping, NamedTuple, Sequence, Union

import numpy as np
from scipy import sparse

if TYPE_CHECKING:
    import pandas as pd

logger = logging.getLogger(__name__)

UserRef = str
ItemRef = str

MIN_RATING: float = 1.0
MAX_RATING: float = 5.0

# Genre label marking an item as a children's item (ML1M convention).
CHILDREN_GENRE: str = "Children's"


class Source(enum.Enum):
    """Provenance of a rating."""

    ADULT = "adult"
    CHILD = "child"
    SYNTH = "synth"


# Stable int8 codes for Source, in declaration order.
_SOURCES: tuple[Source, ...] = tuple(Source)
_SOURCE_CODE: dict[Source, int] = {s: i for i, s in enumerate(_SOURCES)}


class ItemMatching(enum.Enum):
    """How item spaces are joined when merging datasets."""

    BY_TITLE_YEAR = "by_title_year"
    NONE = "none"


class RestrictMode(enum.Enum):
    """Which ratings of the selected users survive restrict_to_children."""

    CHILDREN_ONLY = "children_only"
    ALL_RATINGS = "all_ratings"


@dataclass(frozen=True)
class Rating:
    """One (user, item, value) observation with provenance.

    Raises:
        ValueError: If value lies outside [1.0, 5.0].
    """

    user: UserRef
    item: ItemRef
    value: float
    source: Source = Source.SYNTH

    def __post_init__(self) -> None:
        if not MIN_RATING <= self.value <= MAX_RATING:
            raise ValueError(
                f"Rating value {self.value} outside [{MIN_RATING}, {MAX_RATING}]"
            )


@dataclass(frozen=True)
class ItemMeta:
    """Item metadata.

    Attributes:
        item: Item reference.
        title: Display title without the year suffix.
        year: Release year, or None when unknown.
        genres: Genre labels.
    """

    item: ItemRef
    title: str = ""
    year: int | None = None
    genres: frozenset[str] = field(default_factory=frozenset)

    @property
    def is_children(self) -> bool:
        """True iff the genre set contains the children's genre label."""
        return CHILDREN_GENRE in self.genres


class DatasetStats(NamedTuple):
    """The Users / Items / Ratings columns of a results table."""

    user_count: int
    item_count: int
    rating_count: int


@dataclass(frozen=True)
class MergeStats:
    """Bookkeeping from a merge.

    Attributes:
        unified_items: Items of the second dataset mapped onto items of the first.
        collisions: Ratings dropped because unification made a (user, item)
            pair appear twice.
    """

    unified_items: int
    collisions: int


# A single Source, one Source per row, or an int8 array of source codes.
SourceLike = Union[Source, Sequence[Source], np.ndarray]


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


class Dataset:
    """Immutable indexed rating collection.

    Build instances with :meth:`from_ratings` or :meth:`from_columns`. The
    per-user and per-item views, the sparse matrix and the mean statistics
    are computed on first access and cached.
    """

    def __init__(
        self,
        users: tuple[UserRef, ...],
        items: tuple[ItemRef, ...],
        user_codes: np.ndarray,
        item_codes: np.ndarray,
        values: np.ndarray,
        source_codes: np.ndarray,
        meta: Mapping[ItemRef, ItemMeta],
    ) -> None:
        self._users = users
        self._items = items
        self._user_codes = _readonly(user_codes)
        self._item_codes = _readonly(item_codes)
        self._values = _readonly(values)
        self._source_codes = _readonly(source_codes)
        self._meta = MappingProxyType(dict(meta))

    # Construction

    @classmethod
    def empty(cls) -> Dataset:
        """Return a dataset with no ratings."""
        return cls.from_columns([], [], [], Source.SYNTH)

    @classmethod
    def from_ratings(
        cls,
        ratings: Iterable[Rating],
        meta: Mapping[ItemRef, ItemMeta] | Iterable[ItemMeta] | None = None,
    ) -> Dataset:
        """Build a dataset from Rating objects.

        Raises:
            ValueError: If a (user, item) pair occurs twice.
        """
        rows = list(ratings)
        return cls.from_columns(
            [r.user for r in rows],
            [r.item for r in rows],
            [r.value for r in rows],
            [r.source for r in rows],
            meta,
        )

    @classmethod
    def from_columns(
        cls,
        users: Sequence[UserRef] | np.ndarray,
        items: Sequence[ItemRef] | np.ndarray,
        values: Sequence[float] | np.ndarray,
        sources: SourceLike,
        meta: Mapping[ItemRef, ItemMeta] | Iterable[ItemMeta] | None = None,
    ) -> Dataset:
        """Build a dataset from parallel columns.

        Args:
            users: User reference per rating.
            items: Item reference per rating.
            values: Rating value per rating.
            sources: One Source for all rows, or one per row.
            meta: Item metadata, keyed by item or as an iterable of ItemMeta.
                Entries for items without ratings are dropped.

        Raises:
            ValueError: On column length mismatch, a value outside [1, 5],
                or a duplicate (user, item) pair.
        """
        dataset, _ = _build(users, items, values, sources, meta, keep_first=False)
        return dataset

    # Index views

    @property
    def users(self) -> tuple[UserRef, ...]:
        """User references in ascending order."""
        return self._users

    @property
    def items(self) -> tuple[ItemRef, ...]:
        """Item references in ascending order."""
        return self._items

    @property
    def user_codes(self) -> np.ndarray:
        """Per-rating index into :attr:`users`."""
        return self._user_codes

    @property
    def item_codes(self) -> np.ndarray:
        """Per-rating index into :attr:`items`."""
        return self._item_codes

    @property
    def values(self) -> np.ndarray:
        """Per-rating values."""
        return self._values

    @property
    def source_codes(self) -> np.ndarray:
        """Per-rating int8 source codes (indexes into the Source members in declaration order)."""
        return self._source_codes

    @property
    def meta(self) -> Mapping[ItemRef, ItemMeta]:
        """Item metadata for every indexed item."""
        return self._meta

    @property
    def stats(self) -> DatasetStats:
        """(user_count, item_count, rating_count)."""
        return DatasetStats(len(self._users), len(self._items), len(self._values))

    def __len__(self) -> int:
        return len(self._values)

    def __repr__(self) -> str:
        u, i, r = self.stats
        return f"Dataset(users={u}, items={i}, ratings={r})"

    @cached_property
    def user_index(self) -> Mapping[UserRef, int]:
        """Map from user reference to its code."""
        return MappingProxyType({u: k for k, u in enumerate(self._users)})

    @cached_property
    def item_index(self) -> Mapping[ItemRef, int]:
        """Map from item reference to its code."""
        return MappingProxyType({i: k for k, i in enumerate(self._items)})

    def has_user(self, user: UserRef) -> bool:
        return user in self.user_index

    def has_item(self, item: ItemRef) -> bool:
        return item in self.item_index

    def ratings(self) -> Iterator[Rating]:
        """Iterate over ratings in storage order."""
        for u, i, v, s in zip(
            self._user_codes.tolist(),
            self._item_codes.tolist(),
            self._values.tolist(),
            self._source_codes.tolist(),
        ):
            yield Rating(self._users[u], self._items[i], v, _SOURCES[s])

    def item_meta(self, item: ItemRef) -> ItemMeta:
        """Metadata for an item; bare metadata if none was attached."""
        return self._meta.get(item, ItemMeta(item))

    @cached_property
    def user_counts(self) -> np.ndarray:
        """Ratings per user, indexed by user code."""
        return _readonly(np.bincount(self._user_codes, minlength=len(self._users)))

    @cached_property
    def item_counts(self) -> np.ndarray:
        """Ratings per item, indexed by item code."""
        return _readonly(np.bincount(self._item_codes, minlength=len(self._items)))

    @cached_property
    def children_items(self) -> np.ndarray:
        """Boolean children's flag per item code."""
        return _readonly(
            np.array([self.item_meta(i).is_children for i in self._items], dtype=bool)
        )

    @cached_property
    def _by_user(self) -> tuple[np.ndarray, np.ndarray]:
        order = np.argsort(self._user_codes, kind="stable")
        ptr = np.concatenate(([0], np.cumsum(self.user_counts)))
        return order, ptr

    @cached_property
    def _by_item(self) -> tuple[np.ndarray, np.ndarray]:
        order = np.argsort(self._item_codes, kind="stable")
        ptr = np.concatenate(([0], np.cumsum(self.item_counts)))
        return order, ptr

    def user_rows(self, code: int) -> np.ndarray:
        """Rating row indices of the user with the given code."""
        order, ptr = self._by_user
        return order[ptr[code]:ptr[code + 1]]

    def item_rows(self, code: int) -> np.ndarray:
        """Rating row indices of the item with the given code."""
        order, ptr = self._by_item
        return order[ptr[code]:ptr[code + 1]]

    def user_ratings(self, user: UserRef) -> tuple[np.ndarray, np.ndarray]:
        """(item codes, values) rated by a user, in ascending item order.

        Raises:
            KeyError: If the user is not in the dataset.
        """
        rows = self.user_rows(self.user_index[user])
        rows = rows[np.argsort(self._item_codes[rows], kind="stable")]
        return self._item_codes[rows], self._values[rows]

    def item_ratings(self, item: ItemRef) -> tuple[np.ndarray, np.ndarray]:
        """(user codes, values) for an item, in ascending user order.

        Raises:
            KeyError: If the item is not in the dataset.
        """
        rows = self.item_rows(self.item_index[item])
        rows = rows[np.argsort(self._user_codes[rows], kind="stable")]
        return self._user_codes[rows], self._values[rows]

    @cached_property
    def matrix(self) -> sparse.csr_matrix:
        """Users x items CSR matrix of rating values."""
        return sparse.csr_matrix(
            (self._values, (self._user_codes, self._item_codes)),
            shape=(len(self._users), len(self._items)),
        )

    # Summary statistics

    @cached_property
    def global_mean(self) -> float:
        """Mean rating value (nan for an empty dataset)."""
        if len(self._values) == 0:
            return math.nan
        return float(self._values.mean())

    @cached_property
    def user_means(self) -> np.ndarray:
        """Mean rating per user code."""
        sums = np.bincount(self._user_codes, weights=self._values, minlength=len(self._users))
        return _readonly(sums / np.maximum(self.user_counts, 1))

    @cached_property
    def item_means(self) -> np.ndarray:
        """Mean rating per item code."""
        sums = np.bincount(self._item_codes, weights=self._values, minlength=len(self._items))
        return _readonly(sums / np.maximum(self.item_counts, 1))

    @property
    def min_user_ratings(self) -> int:
        """Smallest ratings-per-user count (0 for an empty dataset)."""
        return int(self.user_counts.min()) if len(self._users) else 0

    # Derivation

    def subset(self, mask: np.ndarray) -> Dataset:
        """Keep the ratings selected by a boolean row mask.

        Users and items left without ratings are dropped from the indexes.
        """
        mask = np.asarray(mask, dtype=bool)
        user_codes = self._user_codes[mask]
        item_codes = self._item_codes[mask]
        used_users = np.unique(user_codes)
        used_items = np.unique(item_codes)
        items = tuple(self._items[k] for k in used_items.tolist())
        return Dataset(
            tuple(self._users[k] for k in used_users.tolist()),
            items,
            np.searchsorted(used_users, user_codes).astype(np.int64),
            np.searchsorted(used_items, item_codes).astype(np.int64),
            self._values[mask].copy(),
            self._source_codes[mask].copy(),
            {i: self._meta[i] for i in items if i in self._meta},
        )

    def to_frame(self) -> pd.DataFrame:
        """Ratings as a DataFrame with columns user, item, value, source."""
        import pandas as pd

        users = np.asarray(self._users, dtype=object)
        items = np.asarray(self._items, dtype=object)
        sources = np.asarray([s.value for s in _SOURCES], dtype=object)
        return pd.DataFrame({
            "user": users[self._user_codes] if len(self) else np.array([], dtype=object),
            "item": items[self._item_codes] if len(self) else np.array([], dtype=object),
            "value": self._values,
            "source": sources[self._source_codes] if len(self) else np.array([], dtype=object),
        })


def _source_column(sources: SourceLike, n: int) -> np.ndarray:
    if isinstance(sources, Source):
        return np.full(n, _SOURCE_CODE[sources], dtype=np.int8)
    if isinstance(sources, np.ndarray) and sources.dtype == np.int8:
        if len(sources) != n:
            raise ValueError(f"Expected {n} sources, got {len(sources)}")
        return sources.copy()
    codes = np.fromiter(
        (_SOURCE_CODE[s] for s in sources), dtype=np.int8, count=len(sources)
    )
    if len(codes) != n:
        raise ValueError(f"Expected {n} sources, got {len(codes)}")
    return codes


def _meta_dict(
    meta: Mapping[ItemRef, ItemMeta] | Iterable[ItemMeta] | None,
) -> dict[ItemRef, ItemMeta]:
    if meta is None:
        return {}
    if isinstance(meta, Mapping):
        return dict(meta)
    return {m.item: m for m in meta}


def _build(
    users: Sequence[UserRef] | np.ndarray,
    items: Sequence[ItemRef] | np.ndarray,
    values: Sequence[float] | np.ndarray,
    sources: SourceLike,
    meta: Mapping[ItemRef, ItemMeta] | Iterable[ItemMeta] | None,
    keep_first: bool,
) -> tuple[Dataset, int]:
    """Index parallel columns into a Dataset.

    With keep_first, later duplicates of a (user, item) pair are dropped and
    counted; otherwise the first duplicate raises ValueError.
    """
    user_col = np.asarray(users, dtype=object)
    item_col = np.asarray(items, dtype=object)
    value_col = np.asarray(values, dtype=np.float64)
    n = len(value_col)
    if len(user_col) != n or len(item_col) != n:
        raise ValueError(
            f"Column lengths differ: users={len(user_col)}, "
            f"items={len(item_col)}, values={n}"
        )
    source_col = _source_column(sources, n)

    bad = np.flatnonzero((value_col < MIN_RATING) | (value_col > MAX_RATING) | np.isnan(value_col))
    if len(bad):
        row = int(bad[0])
        raise ValueError(
            f"Row {row}: rating value {value_col[row]} outside [{MIN_RATING}, {MAX_RATING}]"
        )

    if n == 0:
        user_refs: np.ndarray = np.array([], dtype=object)
        item_refs: np.ndarray = np.array([], dtype=object)
        user_codes = np.array([], dtype=np.int64)
        item_codes = np.array([], dtype=np.int64)
    else:
        user_refs, user_codes = np.unique(user_col, return_inverse=True)
        item_refs, item_codes = np.unique(item_col, return_inverse=True)
        user_codes = user_codes.reshape(-1).astype(np.int64)
        item_codes = item_codes.reshape(-1).astype(np.int64)

    dropped = 0
    if n:
        keys = user_codes * len(item_refs) + item_codes
        _, first = np.unique(keys, return_index=True)
        if len(first) < n:
            duplicate = np.ones(n, dtype=bool)
            duplicate[first] = False
            if not keep_first:
                row = int(np.flatnonzero(duplicate)[0])
                raise ValueError(
                    f"Row {row}: duplicate rating for user {user_col[row]!r}, "
                    f"item {item_col[row]!r}"
                )
            dropped = int(duplicate.sum())
            keep = ~duplicate
            sub_users, user_codes = np.unique(user_codes[keep], return_inverse=True)
            sub_items, item_codes = np.unique(item_codes[keep], return_inverse=True)
            user_refs = user_refs[sub_users]
            item_refs = item_refs[sub_items]
            user_codes = user_codes.reshape(-1).astype(np.int64)
            item_codes = item_codes.reshape(-1).astype(np.int64)
            value_col = value_col[keep]
            source_col = source_col[keep]

    item_tuple = tuple(str(i) for i in item_refs)
    all_meta = _meta_dict(meta)
    dataset = Dataset(
        tuple(str(u) for u in user_refs),
        item_tuple,
        np.ascontiguousarray(user_codes),
        np.ascontiguousarray(item_codes),
        np.ascontiguousarray(value_col),
        np.ascontiguousarray(source_col),
        {i: all_meta[i] for i in item_tuple if i in all_meta},
    )
    return dataset, dropped


# Operations


def filter_min_ratings(ds: Dataset, k: int) -> Dataset:
    """Keep the users with at least k ratings, with all their ratings.

    Applied once: items left without ratings are dropped, but users are not
    re-checked afterwards.

    Raises:
        ValueError: If k < 1.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    keep_user = ds.user_counts >= k
    if keep_user.all():
        return ds
    return ds.subset(keep_user[ds.user_codes])


def _train_size(n: int, train_fraction: float) -> int:
    return int(math.floor(train_fraction * n + 0.5))


def split(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Partition ratings uniformly at random into train and test.

    The train side receives floor(train_fraction * n + 0.5) ratings. A user
    or item may appear on both sides.

    Raises:
        ValueError: If train_fraction is not strictly between 0 and 1.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(ds)
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(n)[:_train_size(n, train_fraction)]
    train_mask = np.zeros(n, dtype=bool)
    train_mask[chosen] = True
    return ds.subset(train_mask), ds.subset(~train_mask)


def k_fold(ds: Dataset, folds: int, seed: int) -> list[tuple[Dataset, Dataset]]:
    """Seeded k-fold partition of ratings.

    Returns:
        One (train, test) pair per fold; test parts are disjoint and cover ds.

    Raises:
        ValueError: If folds < 2 or exceeds the rating count.
    """
    n = len(ds)
    if folds < 2 or folds > n:
        raise ValueError(f"folds must be in [2, {n}], got {folds}")
    rng = np.random.default_rng(seed)
    assignment = np.empty(n, dtype=np.int64)
    assignment[rng.permutation(n)] = np.arange(n) % folds
    return [
        (ds.subset(assignment != f), ds.subset(assignment == f))
        for f in range(folds)
    ]


_ARTICLES = ("the", "a", "an")
_NON_WORD = re.compile(r"[^\w\s]")


def normalize_title(title: str) -> str:
    """Normalize a title for cross-dataset matching.

    Lowercases, moves a leading article to the end (ML1M writes
    "Lion King, The"), strips punctuation and collapses whitespace.
    """
    text = title.strip().lower()
    first, _, rest = text.partition(" ")
    if first in _ARTICLES and rest:
        text = f"{rest}, {first}"
    text = _NON_WORD.sub(" ", text)
    return " ".join(text.split())


def _match_items(a: Dataset, b: Dataset) -> dict[ItemRef, ItemRef]:
    """Map items of b onto items of a by normalized title and year."""
    by_title: dict[str, list[ItemMeta]] = {}
    for item in a.items:
        m = a.item_meta(item)
        if m.title:
            by_title.setdefault(normalize_title(m.title), []).append(m)

    mapping: dict[ItemRef, ItemRef] = {}
    for item in b.items:
        if a.has_item(item):
            continue
        m = b.item_meta(item)
        if not m.title:
            continue
        for candidate in by_title.get(normalize_title(m.title), ()):
            if m.year is None or candidate.year is None or m.year == candidate.year:
                mapping[item] = candidate.item
                break
    return mapping


def merge_details(
    a: Dataset,
    b: Dataset,
    item_matching: ItemMatching = ItemMatching.BY_TITLE_YEAR,
) -> tuple[Dataset, MergeStats]:
    """Merge two datasets and report unification bookkeeping.

    Under BY_TITLE_YEAR, items of b whose normalized (title, year) key
    matches an item of a take a's reference; genres are unioned. When
    unification makes a (user, item) pair appear twice, the first rating
    (a before b, then storage order) is kept.
    """
    if len(b) == 0:
        return a, MergeStats(0, 0)

    mapping = _match_items(a, b) if item_matching is ItemMatching.BY_TITLE_YEAR else {}

    meta = dict(a.meta)
    for item in b.items:
        target = mapping.get(item, item)
        theirs = b.item_meta(item)
        if target in meta:
            ours = meta[target]
            meta[target] = ItemMeta(ours.item, ours.title, ours.year, ours.genres | theirs.genres)
        elif item in b.meta:
            meta[target] = theirs

    b_items = np.asarray([mapping.get(i, i) for i in b.items], dtype=object)
    a_users = np.asarray(a.users, dtype=object)
    a_items = np.asarray(a.items, dtype=object)
    b_users = np.asarray(b.users, dtype=object)
    users = np.concatenate((a_users[a.user_codes], b_users[b.user_codes]))
    items = np.concatenate((a_items[a.item_codes], b_items[b.item_codes]))
    values = np.concatenate((a.values, b.values))
    sources = np.concatenate((a.source_codes, b.source_codes))

    merged, collisions = _build(users, items, values, sources, meta, keep_first=True)
    if collisions:
        logger.warning("Merge dropped %d colliding (user, item) ratings", collisions)
    logger.debug("Merge unified %d items", len(mapping))
    return merged, MergeStats(len(mapping), collisions)


def merge(
    a: Dataset,
    b: Dataset,
    item_matching: ItemMatching = ItemMatching.BY_TITLE_YEAR,
) -> Dataset:
    """Union of two datasets; see :func:`merge_details`."""
    merged, _ = merge_details(a, b, item_matching)
    return merged


def select_kplus_users(ds: Dataset, min_children: int) -> frozenset[UserRef]:
    """Users with at least min_children ratings on children's items."""
    on_children = ds.children_items[ds.item_codes]
    counts = np.bincount(ds.user_codes[on_children], minlength=len(ds.users))
    return frozenset(ds.users[k] for k in np.flatnonzero(counts >= min_children).tolist())


def restrict_to_children(
    ds: Dataset,
    users: Iterable[UserRef],
    mode: RestrictMode = RestrictMode.CHILDREN_ONLY,
) -> Dataset:
    """Keep the ratings of the given users.

    CHILDREN_ONLY additionally requires the item to be a children's item;
    ALL_RATINGS keeps every rating of the selected users. References not in
    ds select nothing.
    """
    selected = np.zeros(len(ds.users), dtype=bool)
    index = ds.user_index
    for user in users:
        code = index.get(user)
        if code is not None:
            selected[code] = True
    mask = selected[ds.user_codes]
    if mode is RestrictMode.CHILDREN_ONLY:
        mask &= ds.children_items[ds.item_codes]
    return ds.subset(mask)


def activity_histogram(ds: Dataset) -> dict[int, int]:
    """Map from ratings-per-user to the number of users with that count."""
    counts, freq = np.unique(ds.user_counts, return_counts=True)
    return dict(zip(counts.tolist(), freq.tolist()))


def rating_distribution(ds: Dataset) -> dict[float, int]:
    """Map from rating value to the number of ratings with that value."""
    values, freq = np.unique(ds.values, return_counts=True)
    return dict(zip(values.tolist(), freq.tolist()))


def children_rater_ratio(ds: Dataset) -> float | None:
    """Users who rated a non-children's item per user who rated a children's item.

    Returns None when no user rated a children's item.
    """
    on_children = ds.children_items[ds.item_codes]
    children_raters = len(np.unique(ds.user_codes[on_children]))
    if children_raters == 0:
        return None
    other_raters = len(np.unique(ds.user_codes[~on_children]))
    return other_raters / children_raters
