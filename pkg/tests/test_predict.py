"""Tests for predict module."""

import pytest

from childrec.dataset import Dataset
from childrec.exceptions import ConfigError, EmptyDatasetError
from childrec.predict import (
    DEFAULT_FALLBACK_CHAIN,
    AlgorithmKind,
    FallbackStage,
    FallbackTable,
    PredictorConfig,
    clamp_rating,
    encode_pairs,
    fallback,
)
from childrec.similarity import CosineSupport

from conftest import make_dataset


@pytest.fixture
def train():
    return make_dataset([("u1", "i1", 3), ("u2", "i1", 5), ("u3", "i2", 2), ("u3", "i3", 4)])


class TestFallback:
    def test_item_mean(self, train):
        assert fallback(train, "u3", "i1") == pytest.approx(4.0)

    def test_user_mean(self, train):
        assert fallback(train, "u3", "unseen") == pytest.approx(3.0)

    def test_global_mean(self, train):
        assert fallback(train, "nobody", "unseen") == pytest.approx(3.5)

    def test_custom_chain(self, train):
        chain = (FallbackStage.USER_MEAN, FallbackStage.GLOBAL_MEAN)
        assert fallback(train, "u3", "i1", chain) == pytest.approx(3.0)

    def test_stage_reported(self, train):
        table = FallbackTable(train)
        assert table.lookup("u3", "i1")[1] is FallbackStage.ITEM_MEAN
        assert table.lookup("u3", "x")[1] is FallbackStage.USER_MEAN
        assert table.lookup("x", "x")[1] is FallbackStage.GLOBAL_MEAN

    def test_empty_train(self):
        with pytest.raises(EmptyDatasetError):
            fallback(Dataset.empty(), "u", "i")


class TestPredictorConfig:
    def test_defaults(self):
        cfg = PredictorConfig(AlgorithmKind.MF)
        assert cfg.iterations == 100
        assert cfg.regularization == 0.06
        assert cfg.learning_rate == 0.07
        assert cfg.fallback_chain == DEFAULT_FALLBACK_CHAIN

    @pytest.mark.parametrize("overrides", [
        {"learning_rate": 0.0},
        {"regularization": -1.0},
        {"iterations": 0},
        {"neighborhood_size": 0},
        {"latent_factors": 0},
        {"min_overlap": 0},
        {"fallback_chain": (FallbackStage.ITEM_MEAN,)},
        {"fallback_chain": (FallbackStage.GLOBAL_MEAN, FallbackStage.GLOBAL_MEAN)},
    ])
    def test_invalid(self, overrides):
        with pytest.raises(ConfigError):
            PredictorConfig(AlgorithmKind.UU, **overrides)

    def test_dict_round_trip(self):
        cfg = PredictorConfig(
            AlgorithmKind.II,
            neighborhood_size=80,
            cosine_support=CosineSupport.FULL,
            fallback_chain=(FallbackStage.USER_MEAN, FallbackStage.GLOBAL_MEAN),
        )
        assert PredictorConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="Unknown"):
            PredictorConfig.from_dict({"kind": "uu", "neighbourhood": 5})

    def test_bad_kind(self):
        with pytest.raises(ConfigError):
            PredictorConfig.from_dict({"kind": "svd"})


class TestHelpers:
    def test_clamp(self):
        assert clamp_rating(6.2) == 5.0
        assert clamp_rating(0.3) == 1.0
        assert clamp_rating(3.3) == 3.3

    def test_encode_pairs(self, train):
        users, items = encode_pairs(train, ["u1", "zz"], ["i3", "i1"])
        assert users.tolist() == [0, -1]
        assert items.tolist() == [2, 0]
