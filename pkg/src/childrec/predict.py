"""Predictor configuration, prediction records and the fallback chain.

Every recommender answers with a :class:`Prediction`. When the model proper
cannot score a pair, the value comes from the first defined statistic in the
fallback chain and ``served`` is False, so coverage can be reported next to
RMSE computed over every pair.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, fields
from typing import Any, Mapping, Sequence

import numpy as np

from childrec.dataset import MAX_RATING, MIN_RATING, Dataset
from childrec.exceptions import ConfigError, EmptyDatasetError
from childrec.similarity import CosineSupport


class AlgorithmKind(enum.Enum):
    UU = "uu"
    II = "ii"
    MF = "mf"


class FallbackStage(enum.Enum):
    ITEM_MEAN = "item_mean"
    USER_MEAN = "user_mean"
    GLOBAL_MEAN = "global_mean"


DEFAULT_FALLBACK_CHAIN: tuple[FallbackStage, ...] = (
    FallbackStage.ITEM_MEAN,
    FallbackStage.USER_MEAN,
    FallbackStage.GLOBAL_MEAN,
)


@dataclass(frozen=True)
class PredictorConfig:
    """Configuration shared by the three recommenders.

    Attributes:
        kind: UU, II or MF.
        neighborhood_size: k for UU/II.
        latent_factors: f for MF.
        learning_rate: SGD step size.
        regularization: L2 penalty on biases and factors.
        iterations: Full SGD passes over the training ratings.
        init_scale: Factor components start uniform in (-init_scale, init_scale).
        seed: Seed for factor initialization and visit order.
        fallback_chain: Statistics tried, in order, when a pair is not served.
        clamp: Clamp predictions to [1, 5].
        min_overlap: Similarity overlap threshold; None for the kernel default.
        cosine_support: Norm support for item cosine.
        positive_only: Drop neighbors with non-positive similarity.

    Raises:
        ConfigError: If a value is out of range.
    """

    kind: AlgorithmKind
    neighborhood_size: int = 50
    latent_factors: int = 40
    learning_rate: float = 0.07
    regularization: float = 0.06
    iterations: int = 100
    init_scale: float = 0.1
    seed: int = 0
    fallback_chain: tuple[FallbackStage, ...] = DEFAULT_FALLBACK_CHAIN
    clamp: bool = True
    min_overlap: int | None = None
    cosine_support: CosineSupport = CosineSupport.CO_RATED
    positive_only: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "fallback_chain", tuple(self.fallback_chain))
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.regularization < 0:
            raise ConfigError(f"regularization must be >= 0, got {self.regularization}")
        for name in ("iterations", "latent_factors", "neighborhood_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.init_scale < 0:
            raise ConfigError(f"init_scale must be >= 0, got {self.init_scale}")
        if self.min_overlap is not None and self.min_overlap < 1:
            raise ConfigError(f"min_overlap must be >= 1, got {self.min_overlap}")
        chain = self.fallback_chain
        if not chain or chain[-1] is not FallbackStage.GLOBAL_MEAN:
            raise ConfigError("fallback_chain must end with GLOBAL_MEAN")
        if len(set(chain)) != len(chain):
            raise ConfigError("fallback_chain has a repeated stage")

    def to_dict(self) -> dict[str, Any]:
        """JSON-friendly representation (enums as their values)."""
        raw = asdict(self)
        raw["kind"] = self.kind.value
        raw["fallback_chain"] = [s.value for s in self.fallback_chain]
        raw["cosine_support"] = self.cosine_support.value
        return raw

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> PredictorConfig:
        """Inverse of :meth:`to_dict`; unknown keys raise ConfigError."""
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"Unknown predictor settings: {', '.join(sorted(unknown))}")
        values = dict(raw)
        try:
            values["kind"] = AlgorithmKind(values["kind"])
            if "fallback_chain" in values:
                values["fallback_chain"] = tuple(FallbackStage(s) for s in values["fallback_chain"])
            if "cosine_support" in values:
                values["cosine_support"] = CosineSupport(values["cosine_support"])
        except (KeyError, ValueError) as e:
            raise ConfigError(f"Invalid predictor settings: {e}") from e
        return cls(**values)


@dataclass(frozen=True)
class Prediction:
    """One predicted rating.

    Attributes:
        value: Predicted rating.
        served: True iff produced by the model proper.
        fallback_level: Chain stage that supplied the value when not served.
    """

    value: float
    served: bool
    fallback_level: FallbackStage | None = None


@dataclass(frozen=True)
class PredictionBatch:
    """Predictions for a sequence of test pairs."""

    values: np.ndarray
    served: np.ndarray


def clamp_rating(value: float) -> float:
    return min(max(value, MIN_RATING), MAX_RATING)


def encode_pairs(
    train: Dataset, users: Sequence[str], items: Sequence[str],
) -> tuple[np.ndarray, np.ndarray]:
    """Train codes for test pairs; -1 marks a user or item unseen in train."""
    user_index, item_index = train.user_index, train.item_index
    return (
        np.fromiter((user_index.get(u, -1) for u in users), dtype=np.int64, count=len(users)),
        np.fromiter((item_index.get(i, -1) for i in items), dtype=np.int64, count=len(items)),
    )


class FallbackTable:
    """Mean statistics of a training set, consulted in chain order.

    Raises:
        EmptyDatasetError: If train has no ratings.
    """

    def __init__(
        self, train: Dataset, chain: Sequence[FallbackStage] = DEFAULT_FALLBACK_CHAIN,
    ) -> None:
        if len(train) == 0:
            raise EmptyDatasetError("Fallback needs a non-empty training set")
        self.chain = tuple(chain)
        self._train = train

    def lookup_codes(self, user_code: int, item_code: int) -> tuple[float, FallbackStage]:
        """Value and stage for a pair given as train codes (-1 = unseen)."""
        for stage in self.chain:
            if stage is FallbackStage.ITEM_MEAN and item_code >= 0:
                return float(self._train.item_means[item_code]), stage
            if stage is FallbackStage.USER_MEAN and user_code >= 0:
                return float(self._train.user_means[user_code]), stage
            if stage is FallbackStage.GLOBAL_MEAN:
                return self._train.global_mean, stage
        return self._train.global_mean, FallbackStage.GLOBAL_MEAN

    def lookup(self, user: str, item: str) -> tuple[float, FallbackStage]:
        """Value and stage for a pair given as references."""
        return self.lookup_codes(
            self._train.user_index.get(user, -1), self._train.item_index.get(item, -1)
        )


def fallback(
    train: Dataset,
    u: str,
    i: str,
    chain: Sequence[FallbackStage] = DEFAULT_FALLBACK_CHAIN,
) -> float:
    """Value of the first defined statistic in chain for the pair (u, i).

    Raises:
        EmptyDatasetError: If train has no ratings.
    """
    value, _ = FallbackTable(train, chain).lookup(u, i)
    return value
