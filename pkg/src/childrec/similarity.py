"""Item-item cosine and user-user Pearson similarity.

Both kernels work on co-rated support: cosine over the users who rated both
items, Pearson over the items both users rated, each user centered by the
mean of that co-rated subset. Pearson is evaluated from running sums,

    cov = n*Sxy - Sx*Sy,   var_x = n*Sxx - Sx^2,

which is exact for half-star ratings, so zero variance is detected exactly.

An undefined similarity is returned as None by the pair kernels and stored
as NaN in similarity rows.
"""

from __future__ import annotations

import enum
import logging
import math
import threading
from typing import Iterable

import numpy as np
from scipy import sparse

from childrec.dataset import Dataset
from childrec.exceptions import UnknownItemError, UnknownUserError

logger = logging.getLogger(__name__)


class SimilarityKind(enum.Enum):
    ITEM_COSINE = "item_cosine"
    USER_PEARSON = "user_pearson"


class CosineSupport(enum.Enum):
    """Which ratings enter the cosine norms."""

    CO_RATED = "co_rated"
    FULL = "full"


DEFAULT_MIN_OVERLAP: dict[SimilarityKind, int] = {
    SimilarityKind.ITEM_COSINE: 1,
    SimilarityKind.USER_PEARSON: 2,
}

_MISSING = object()

# Largest reference count for which a dense similarity matrix is built by default.
PRECOMPUTE_LIMIT = 8000


def _check_overlap(min_overlap: int) -> None:
    if min_overlap < 1:
        raise ValueError(f"min_overlap must be >= 1, got {min_overlap}")


def _co_rated(
    codes_a: np.ndarray, values_a: np.ndarray, codes_b: np.ndarray, values_b: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    _, ia, ib = np.intersect1d(codes_a, codes_b, assume_unique=True, return_indices=True)
    return values_a[ia], values_b[ib]


def _cosine(num: float, norm_a: float, norm_b: float) -> float | None:
    if norm_a == 0.0 or norm_b == 0.0:
        return None
    return num / (math.sqrt(norm_a) * math.sqrt(norm_b))


def _pearson(n: int, sx: float, sy: float, sxx: float, syy: float, sxy: float) -> float | None:
    var_x = n * sxx - sx * sx
    var_y = n * syy - sy * sy
    if var_x <= 0.0 or var_y <= 0.0:
        return None
    return (n * sxy - sx * sy) / math.sqrt(var_x * var_y)


def cosine_item(
    ds: Dataset,
    i: str,
    j: str,
    min_overlap: int = DEFAULT_MIN_OVERLAP[SimilarityKind.ITEM_COSINE],
    support: CosineSupport = CosineSupport.CO_RATED,
) -> float | None:
    """Cosine similarity of two items over their co-rating users.

    Returns:
        The similarity, or None when fewer than min_overlap users rated both
        items or a norm is zero.

    Raises:
        UnknownItemError: If either item is not in ds.
    """
    _check_overlap(min_overlap)
    for item in (i, j):
        if not ds.has_item(item):
            raise UnknownItemError(item)
    if i == j:
        return 1.0
    users_i, values_i = ds.item_ratings(i)
    users_j, values_j = ds.item_ratings(j)
    x, y = _co_rated(users_i, values_i, users_j, values_j)
    if len(x) < min_overlap:
        return None
    if support is CosineSupport.FULL:
        return _cosine(float(x @ y), float(values_i @ values_i), float(values_j @ values_j))
    return _cosine(float(x @ y), float(x @ x), float(y @ y))


def pearson_user(
    ds: Dataset,
    u: str,
    v: str,
    min_overlap: int = DEFAULT_MIN_OVERLAP[SimilarityKind.USER_PEARSON],
) -> float | None:
    """Pearson correlation of two users over their co-rated items.

    Returns:
        The correlation, or None when fewer than min_overlap items are
        co-rated or either side has zero variance on them.

    Raises:
        UnknownUserError: If either user is not in ds.
    """
    _check_overlap(min_overlap)
    for user in (u, v):
        if not ds.has_user(user):
            raise UnknownUserError(user)
    if u == v:
        return 1.0
    items_u, values_u = ds.user_ratings(u)
    items_v, values_v = ds.user_ratings(v)
    x, y = _co_rated(items_u, values_u, items_v, values_v)
    if len(x) < min_overlap:
        return None
    return _pearson(
        len(x), float(x.sum()), float(y.sum()), float(x @ x), float(y @ y), float(x @ y)
    )


def _cosine_block(
    r: sparse.csc_matrix, b: sparse.csc_matrix, r2: sparse.csc_matrix,
    rows: slice, min_overlap: int, support: CosineSupport,
) -> np.ndarray:
    """Dense cosine rows for the items in ``rows`` (columns of R)."""
    r_blk, b_blk, r2_blk = r[:, rows], b[:, rows], r2[:, rows]
    num = (r_blk.T @ r).toarray()
    overlap = (b_blk.T @ b).toarray()
    if support is CosineSupport.FULL:
        norms = np.asarray(r2.sum(axis=0)).ravel()
        norm_a = np.broadcast_to(norms[rows][:, None], num.shape)
        norm_b = np.broadcast_to(norms[None, :], num.shape)
    else:
        norm_a = (r2_blk.T @ b).toarray()
        norm_b = (b_blk.T @ r2).toarray()
    with np.errstate(divide="ignore", invalid="ignore"):
        sims = num / (np.sqrt(norm_a) * np.sqrt(norm_b))
    sims[(overlap < min_overlap) | (overlap == 0) | (norm_a == 0) | (norm_b == 0)] = np.nan
    return sims


def _pearson_block(
    r: sparse.csr_matrix, b: sparse.csr_matrix, r2: sparse.csr_matrix,
    rows: slice, min_overlap: int,
) -> np.ndarray:
    """Dense Pearson rows for the users in ``rows``."""
    r_blk, b_blk, r2_blk = r[rows], b[rows], r2[rows]
    n = (b_blk @ b.T).toarray()
    sx = (r_blk @ b.T).toarray()
    sy = (b_blk @ r.T).toarray()
    sxx = (r2_blk @ b.T).toarray()
    syy = (b_blk @ r2.T).toarray()
    sxy = (r_blk @ r.T).toarray()
    var_x = n * sxx - sx * sx
    var_y = n * syy - sy * sy
    with np.errstate(divide="ignore", invalid="ignore"):
        sims = (n * sxy - sx * sy) / np.sqrt(var_x * var_y)
    sims[(n < min_overlap) | (var_x <= 0) | (var_y <= 0)] = np.nan
    return sims


class SimilarityMatrixView:
    """Similarity between the users or the items of one dataset.

    With ``precompute`` the full matrix is built up front from sparse
    products; otherwise pairs are evaluated on demand by the pair kernels and
    memoized. Both modes return the same values.

    Args:
        ds: Dataset the similarities are computed over.
        kind: ITEM_COSINE or USER_PEARSON.
        min_overlap: Minimum co-rating count; defaults per kind.
        support: Cosine norm support (ignored for Pearson).
        precompute: Build the dense matrix eagerly; None decides by size
            (see PRECOMPUTE_LIMIT).
        block_size: Rows per sparse-product block when precomputing.
    """

    def __init__(
        self,
        ds: Dataset,
        kind: SimilarityKind,
        min_overlap: int | None = None,
        support: CosineSupport = CosineSupport.CO_RATED,
        precompute: bool | None = None,
        block_size: int = 512,
    ) -> None:
        self.dataset = ds
        self.kind = kind
        self.min_overlap = DEFAULT_MIN_OVERLAP[kind] if min_overlap is None else min_overlap
        _check_overlap(self.min_overlap)
        self.support = support
        self._cache: dict[tuple[int, int], float | None] = {}
        self._lock = threading.Lock()
        self._dense: np.ndarray | None = None
        if precompute is None:
            precompute = len(self.refs) <= PRECOMPUTE_LIMIT
        if precompute:
            self._dense = self._precompute(block_size)

    @property
    def refs(self) -> tuple[str, ...]:
        """References the view is indexed by, in code order."""
        if self.kind is SimilarityKind.ITEM_COSINE:
            return self.dataset.items
        return self.dataset.users

    def code(self, ref: str) -> int:
        """Code of a reference.

        Raises:
            UnknownItemError: For an unknown item (ITEM_COSINE).
            UnknownUserError: For an unknown user (USER_PEARSON).
        """
        if self.kind is SimilarityKind.ITEM_COSINE:
            index = self.dataset.item_index
            error: type[Exception] = UnknownItemError
        else:
            index = self.dataset.user_index
            error = UnknownUserError
        try:
            return index[ref]
        except KeyError:
            raise error(ref) from None

    def _precompute(self, block_size: int) -> np.ndarray:
        ds = self.dataset
        count = len(self.refs)
        dense = np.empty((count, count), dtype=np.float64)
        r = ds.matrix
        b = (r != 0).astype(np.float64)
        r2 = r.multiply(r).tocsr()
        if self.kind is SimilarityKind.ITEM_COSINE:
            r, b, r2 = r.tocsc(), b.tocsc(), r2.tocsc()
        for start in range(0, count, block_size):
            rows = slice(start, min(start + block_size, count))
            if self.kind is SimilarityKind.ITEM_COSINE:
                dense[rows] = _cosine_block(r, b, r2, rows, self.min_overlap, self.support)
            else:
                dense[rows] = _pearson_block(r, b, r2, rows, self.min_overlap)
        np.fill_diagonal(dense, 1.0)
        logger.debug("Precomputed %s similarity matrix %s", self.kind.value, dense.shape)
        return dense

    def _pair(self, a: int, b: int) -> float | None:
        if self._dense is not None:
            value = self._dense[a, b]
            return None if np.isnan(value) else float(value)
        key = (a, b) if a <= b else (b, a)
        cached = self._cache.get(key, _MISSING)
        if cached is not _MISSING:
            return cached  # type: ignore[return-value]
        refs = self.refs
        if self.kind is SimilarityKind.ITEM_COSINE:
            value = cosine_item(self.dataset, refs[key[0]], refs[key[1]], self.min_overlap, self.support)
        else:
            value = pearson_user(self.dataset, refs[key[0]], refs[key[1]], self.min_overlap)
        with self._lock:
            self._cache.setdefault(key, value)
        return value

    def sim(self, a: str, b: str) -> float | None:
        """Similarity of two references, or None when undefined."""
        return self._pair(self.code(a), self.code(b))

    def sims(self, anchor: int, candidates: np.ndarray) -> np.ndarray:
        """Similarities of anchor to candidate codes; NaN where undefined."""
        candidates = np.asarray(candidates, dtype=np.int64)
        if self._dense is not None:
            return self._dense[anchor, candidates]
        out = np.empty(len(candidates), dtype=np.float64)
        for k, c in enumerate(candidates.tolist()):
            value = self._pair(anchor, c)
            out[k] = np.nan if value is None else value
        return out


def rank_neighbors(
    codes: np.ndarray, sims: np.ndarray, k: int | None = None, positive_only: bool = False,
) -> np.ndarray:
    """Positions of the best neighbors, most similar first.

    Undefined (NaN) similarities are skipped, as are non-positive ones with
    positive_only. Ties go to the lower code, which is the lower identifier.

    Returns:
        Indices into codes/sims, at most k of them (all when k is None).
    """
    keep = ~np.isnan(sims)
    if positive_only:
        keep &= sims > 0
    positions = np.flatnonzero(keep)
    order = np.lexsort((codes[positions], -sims[positions]))
    ranked = positions[order]
    return ranked if k is None else ranked[:k]


def top_k_neighbors(
    view: SimilarityMatrixView,
    anchor: str,
    k: int,
    candidates: Iterable[str],
    positive_only: bool = False,
) -> list[tuple[str, float]]:
    """The k candidates most similar to anchor.

    The anchor itself and undefined similarities are excluded; fewer than k
    pairs are returned when the pool is smaller.

    Raises:
        ValueError: If k < 1.
        UnknownEntityError: If anchor or a candidate is unknown to the view.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    anchor_code = view.code(anchor)
    codes = np.asarray(
        sorted({view.code(c) for c in candidates} - {anchor_code}), dtype=np.int64
    )
    sims = view.sims(anchor_code, codes)
    refs = view.refs
    return [
        (refs[codes[p]], float(sims[p]))
        for p in rank_neighbors(codes, sims, k, positive_only).tolist()
    ]
