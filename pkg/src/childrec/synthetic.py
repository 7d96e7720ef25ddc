"""Synthetic rating datasets.

Stand-in for child rating data that cannot be redistributed. Ratings per
user follow a truncated discrete power law, item choice follows a power law
over item popularity, and rating values are drawn i.i.d. from a categorical
distribution over 1..5.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from childrec.dataset import CHILDREN_GENRE, Dataset, ItemMeta, Source
from childrec.exceptions import InfeasibleParametersError

logger = logging.getLogger(__name__)

# Child ratings sit mostly at 4 and 5.
CHILD_VALUE_DISTRIBUTION: tuple[float, ...] = (0.02, 0.03, 0.10, 0.35, 0.50)

# Close to the ML1M value histogram, which spans the full scale.
ADULT_VALUE_DISTRIBUTION: tuple[float, ...] = (0.06, 0.11, 0.26, 0.35, 0.22)

RATING_SCALE: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 5.0)


@dataclass(frozen=True)
class SynthParams:
    """Parameters for :func:`generate_synthetic`.

    The defaults give a child-like corpus in which about 97% of the users
    with at least 2 ratings have fewer than 20.

    Attributes:
        user_count: Number of users.
        item_count: Number of items.
        target_rating_count: Exact number of ratings to generate.
        activity_exponent: Power-law exponent for ratings per user.
        value_distribution: Probabilities of the values 1..5.
        seed: Seed for the random generator.
        namespace: Prefix for user and item references.
        source: Provenance tag for every rating.
        children_fraction: Share of items carrying the children's genre.
        min_activity: Lower truncation of ratings per user.
        popularity_exponent: Power-law exponent over item popularity ranks.

    Raises:
        InfeasibleParametersError: If a count is not positive, the value
            distribution is malformed, or the target cannot be met.
    """

    user_count: int = 15000
    item_count: int = 2500
    target_rating_count: int = 29000
    activity_exponent: float = 2.5
    value_distribution: tuple[float, ...] = CHILD_VALUE_DISTRIBUTION
    seed: int = 0
    namespace: str = "child"
    source: Source = Source.CHILD
    children_fraction: float = 1.0
    min_activity: int = 1
    popularity_exponent: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "value_distribution", tuple(float(p) for p in self.value_distribution))
        for name in ("user_count", "item_count", "target_rating_count", "min_activity"):
            if getattr(self, name) < 1:
                raise InfeasibleParametersError(f"{name} must be positive, got {getattr(self, name)}")
        if len(self.value_distribution) != len(RATING_SCALE):
            raise InfeasibleParametersError(
                f"value_distribution needs {len(RATING_SCALE)} entries, "
                f"got {len(self.value_distribution)}"
            )
        if any(p < 0 for p in self.value_distribution):
            raise InfeasibleParametersError("value_distribution has a negative entry")
        if abs(math.fsum(self.value_distribution) - 1.0) > 1e-9:
            raise InfeasibleParametersError(
                f"value_distribution sums to {math.fsum(self.value_distribution)}, not 1"
            )
        if self.activity_exponent <= 0 or self.popularity_exponent < 0:
            raise InfeasibleParametersError("exponents must be positive")
        if not 0.0 <= self.children_fraction <= 1.0:
            raise InfeasibleParametersError(
                f"children_fraction must be in [0, 1], got {self.children_fraction}"
            )
        if self.min_activity > self.item_count:
            raise InfeasibleParametersError("min_activity exceeds item_count")
        if self.target_rating_count > self.user_count * self.item_count:
            raise InfeasibleParametersError(
                f"target_rating_count {self.target_rating_count} exceeds "
                f"user_count x item_count = {self.user_count * self.item_count}"
            )
        if self.target_rating_count < self.user_count * self.min_activity:
            raise InfeasibleParametersError(
                f"target_rating_count {self.target_rating_count} is below "
                f"user_count x min_activity = {self.user_count * self.min_activity}"
            )


def _activity_counts(params: SynthParams, rng: np.random.Generator) -> np.ndarray:
    """Ratings per user: power-law draw, then nudged to hit the target total.

    Nudges are spread proportionally to current activity, which keeps the
    shape of the distribution while fixing the total.
    """
    lo, hi = params.min_activity, params.item_count
    support = np.arange(lo, hi + 1)
    pmf = support.astype(np.float64) ** -params.activity_exponent
    counts = rng.choice(support, size=params.user_count, p=pmf / pmf.sum())

    diff = params.target_rating_count - int(counts.sum())
    while diff != 0:
        room = counts < hi if diff > 0 else counts > lo
        weights = counts * room
        size = min(abs(diff), int(room.sum()))
        picks = rng.choice(params.user_count, size=size, replace=False, p=weights / weights.sum())
        counts[picks] += 1 if diff > 0 else -1
        diff = params.target_rating_count - int(counts.sum())
    return counts


def _item_metadata(
    params: SynthParams,
    refs: list[str],
    rng: np.random.Generator,
    catalog: Dataset | None,
) -> dict[str, ItemMeta]:
    n_children = int(round(params.children_fraction * params.item_count))
    pools: dict[bool, list[ItemMeta]] = {True: [], False: []}
    if catalog is not None:
        for item in catalog.items:
            m = catalog.item_meta(item)
            if m.title:
                pools[m.is_children].append(m)
        for flag in pools:
            order = rng.permutation(len(pools[flag]))
            pools[flag] = [pools[flag][k] for k in order.tolist()]

    meta: dict[str, ItemMeta] = {}
    taken = {True: 0, False: 0}
    for j, ref in enumerate(refs):
        children = j < n_children
        genres = {CHILDREN_GENRE} if children else set()
        pool = pools[children]
        if taken[children] < len(pool):
            borrowed = pool[taken[children]]
            taken[children] += 1
            meta[ref] = ItemMeta(ref, borrowed.title, borrowed.year, frozenset(genres | borrowed.genres))
        else:
            meta[ref] = ItemMeta(ref, f"{params.namespace.title()} Movie {j + 1}", None, frozenset(genres))
    return meta


def generate_synthetic(params: SynthParams, catalog: Dataset | None = None) -> Dataset:
    """Generate a seeded synthetic rating dataset.

    Args:
        params: Generation parameters.
        catalog: Optional dataset whose item titles and years are borrowed,
            children's items for children's slots and the rest for the others,
            so that the result can be joined to it by title and year.

    Returns:
        Dataset with exactly params.target_rating_count ratings and no
        duplicate (user, item) pair. Identical for identical params.
    """
    rng = np.random.default_rng(params.seed)
    counts = _activity_counts(params, rng)

    ranks = rng.permutation(params.item_count)
    popularity = (ranks + 1.0) ** -params.popularity_exponent
    popularity /= popularity.sum()

    item_codes = np.concatenate([
        rng.choice(params.item_count, size=int(n), replace=False, p=popularity)
        for n in counts.tolist()
    ])
    user_codes = np.repeat(np.arange(params.user_count), counts)
    values = np.asarray(RATING_SCALE)[
        rng.choice(len(RATING_SCALE), size=len(item_codes), p=np.asarray(params.value_distribution))
    ]

    user_refs = np.asarray([f"{params.namespace}:{k + 1}" for k in range(params.user_count)], dtype=object)
    item_list = [f"{params.namespace}:{k + 1}" for k in range(params.item_count)]
    item_refs = np.asarray(item_list, dtype=object)
    meta = _item_metadata(params, item_list, rng, catalog)

    ds = Dataset.from_columns(
        user_refs[user_codes], item_refs[item_codes], values, params.source, meta
    )
    logger.info("Generated %s synthetic dataset (seed %d): %s", params.namespace, params.seed, ds)
    return ds
