"""Shared fixtures for childrec tests."""

import numpy as np
import pytest

from childrec.dataset import CHILDREN_GENRE, Dataset, ItemMeta, Rating, Source


def make_dataset(triples, source=Source.SYNTH, meta=None):
    """Dataset from (user, item, value) triples."""
    return Dataset.from_ratings((Rating(u, i, float(v), source) for u, i, v in triples), meta)


def random_dataset(seed, users=8, items=6, density=0.6):
    """Random dataset on half-star-free integer ratings, every user non-empty."""
    rng = np.random.default_rng(seed)
    triples = []
    for u in range(users):
        rated = rng.random(items) < density
        rated[rng.integers(items)] = True
        for i in np.flatnonzero(rated).tolist():
            triples.append((f"u{u:02d}", f"i{i:02d}", int(rng.integers(1, 6))))
    return make_dataset(triples)


@pytest.fixture
def tiny():
    """Three users, four items, hand-checkable means."""
    return make_dataset([
        ("uA", "i1", 3), ("uA", "i2", 4), ("uA", "i3", 5),
        ("uB", "i1", 5),
        ("uC", "i2", 2), ("uC", "i4", 4),
    ])


@pytest.fixture
def kplus_fixture():
    """uA rated 2 children's items and 3 others, uB one children's item."""
    meta = [
        ItemMeta("c1", "Kid One", 1990, frozenset({CHILDREN_GENRE, "Animation"})),
        ItemMeta("c2", "Kid Two", 1995, frozenset({CHILDREN_GENRE})),
        ItemMeta("a1", "Adult One", 1980, frozenset({"Drama"})),
        ItemMeta("a2", "Adult Two", 1981, frozenset({"Thriller"})),
        ItemMeta("a3", "Adult Three", 1982, frozenset({"Comedy"})),
    ]
    return make_dataset(
        [
            ("uA", "c1", 5), ("uA", "c2", 4), ("uA", "a1", 3), ("uA", "a2", 2), ("uA", "a3", 1),
            ("uB", "c1", 4),
        ],
        meta=meta,
    )


@pytest.fixture
def knn_fixture():
    """Five users, four items with overlapping ratings."""
    return make_dataset([
        ("u1", "i1", 5), ("u1", "i2", 3), ("u1", "i3", 4),
        ("u2", "i1", 3), ("u2", "i2", 1), ("u2", "i3", 2), ("u2", "i4", 3),
        ("u3", "i1", 4), ("u3", "i2", 3), ("u3", "i4", 5),
        ("u4", "i2", 4), ("u4", "i3", 5), ("u4", "i4", 2),
        ("u5", "i1", 1), ("u5", "i3", 2), ("u5", "i4", 4),
    ])
