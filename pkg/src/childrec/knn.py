"""Neighborhood recommenders.

User-user (UU) scores a pair by the mean-centered ratings of the most
Pearson-similar users who rated the item:

    r(u, i) = mean(u) + sum_v sim(u, v) * (r(v, i) - mean(v)) / sum_v |sim(u, v)|

Item-item (II) scores it by the user's own ratings on the most cosine-similar
items the user rated:

    r(u, i) = sum_j sim(i, j) * r(u, j) / sum_j |sim(i, j)|

Neighbors are ranked once per pair; predictions for several neighborhood
sizes are read off prefix sums of that ranking.
"""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from childrec.dataset import Dataset
from childrec.exceptions import ConfigError
from childrec.predict import (
    AlgorithmKind,
    FallbackTable,
    Prediction,
    PredictionBatch,
    PredictorConfig,
    clamp_rating,
    encode_pairs,
)
from childrec.similarity import SimilarityKind, SimilarityMatrixView, rank_neighbors

logger = logging.getLogger(__name__)


class _NeighborhoodModel:
    """Shared prediction loop for UU and II."""

    kind: AlgorithmKind
    similarity: SimilarityKind

    def __init__(
        self,
        train: Dataset,
        config: PredictorConfig,
        view: SimilarityMatrixView | None = None,
        precompute: bool | None = None,
    ) -> None:
        if config.kind is not self.kind:
            raise ConfigError(f"{type(self).__name__} needs kind {self.kind.value}, got {config.kind.value}")
        self.train = train
        self.config = config
        self.fallback = FallbackTable(train, config.fallback_chain)
        if view is None:
            view = SimilarityMatrixView(
                train,
                self.similarity,
                config.min_overlap,
                support=config.cosine_support,
                precompute=precompute,
            )
        self.view = view

    def _terms(self, user: int, item: int) -> tuple[np.ndarray, np.ndarray]:
        """Ranked (weights, weighted terms) for one pair of known codes."""
        raise NotImplementedError

    def _base(self, user: int) -> float:
        return 0.0

    def _score_sizes(self, user: int, item: int, sizes: Sequence[int]) -> list[float | None]:
        if user < 0 or item < 0:
            return [None] * len(sizes)
        weights, terms = self._terms(user, item)
        if len(weights) == 0:
            return [None] * len(sizes)
        denominators = np.cumsum(np.abs(weights))
        numerators = np.cumsum(terms)
        scores: list[float | None] = []
        for k in sizes:
            last = min(k, len(weights)) - 1
            if denominators[last] == 0.0:
                scores.append(None)
            else:
                scores.append(self._base(user) + float(numerators[last] / denominators[last]))
        return scores

    def _finish(self, score: float | None, user: int, item: int) -> Prediction:
        if score is None:
            value, stage = self.fallback.lookup_codes(user, item)
            served = False
        else:
            value, stage, served = score, None, True
        if self.config.clamp:
            value = clamp_rating(value)
        return Prediction(value, served, stage)

    def predict(self, user: str, item: str, k: int | None = None) -> Prediction:
        """Predict one pair with neighborhood size k (config default when None)."""
        size = self.config.neighborhood_size if k is None else k
        (user_code,), (item_code,) = encode_pairs(self.train, [user], [item])
        (score,) = self._score_sizes(int(user_code), int(item_code), [size])
        return self._finish(score, int(user_code), int(item_code))

    def predict_batch(
        self, users: Sequence[str], items: Sequence[str], sizes: Sequence[int] | None = None,
    ) -> dict[int, PredictionBatch]:
        """Predict many pairs for every neighborhood size in sizes.

        Returns:
            Map from neighborhood size to the batch of predictions.
        """
        sizes = list(sizes) if sizes is not None else [self.config.neighborhood_size]
        if any(k < 1 for k in sizes):
            raise ConfigError(f"neighborhood sizes must be >= 1, got {sizes}")
        user_codes, item_codes = encode_pairs(self.train, users, items)
        n = len(user_codes)
        values = {k: np.empty(n) for k in sizes}
        served = {k: np.zeros(n, dtype=bool) for k in sizes}
        for row, (u, i) in enumerate(zip(user_codes.tolist(), item_codes.tolist())):
            for k, score in zip(sizes, self._score_sizes(u, i, sizes)):
                p = self._finish(score, u, i)
                values[k][row] = p.value
                served[k][row] = p.served
        return {k: PredictionBatch(values[k], served[k]) for k in sizes}


class UserKNN(_NeighborhoodModel):
    """User-user collaborative filter with Pearson similarity."""

    kind = AlgorithmKind.UU
    similarity = SimilarityKind.USER_PEARSON

    def _base(self, user: int) -> float:
        return float(self.train.user_means[user])

    def _terms(self, user: int, item: int) -> tuple[np.ndarray, np.ndarray]:
        train = self.train
        rows = train.item_rows(item)
        raters = train.user_codes[rows]
        others = raters != user
        raters, ratings = raters[others], train.values[rows][others]
        sims = self.view.sims(user, raters)
        ranked = rank_neighbors(raters, sims, positive_only=self.config.positive_only)
        weights = sims[ranked]
        deviations = ratings[ranked] - train.user_means[raters[ranked]]
        return weights, weights * deviations


class ItemKNN(_NeighborhoodModel):
    """Item-item collaborative filter with cosine similarity."""

    kind = AlgorithmKind.II
    similarity = SimilarityKind.ITEM_COSINE

    def _terms(self, user: int, item: int) -> tuple[np.ndarray, np.ndarray]:
        train = self.train
        rows = train.user_rows(user)
        rated = train.item_codes[rows]
        others = rated != item
        rated, ratings = rated[others], train.values[rows][others]
        sims = self.view.sims(item, rated)
        ranked = rank_neighbors(rated, sims, positive_only=self.config.positive_only)
        weights = sims[ranked]
        return weights, weights * ratings[ranked]


def uu_predict(train: Dataset, u: str, i: str, cfg: PredictorConfig) -> Prediction:
    """One user-user prediction, evaluating similarities on demand."""
    return UserKNN(train, cfg, precompute=False).predict(u, i)


def ii_predict(train: Dataset, u: str, i: str, cfg: PredictorConfig) -> Prediction:
    """One item-item prediction, evaluating similarities on demand."""
    return ItemKNN(train, cfg, precompute=False).predict(u, i)
