"""Biased matrix factorization trained by stochastic gradient descent.

Model:

    r(u, i) = mu + b_u + b_i + p_u . q_i

Objective, summed over training ratings:

    (r - r_hat)^2 + reg * (b_u^2 + b_i^2 + |p_u|^2 + |q_i|^2)

Each SGD step moves the touched parameters along half the negative
per-rating gradient scaled by the learning rate; q_i is updated with the
pre-step p_u. mu is fixed at the training mean.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np
from numba import njit

from childrec.dataset import Dataset
from childrec.exceptions import ConfigError, DivergenceError, EmptyDatasetError
from childrec.predict import (
    AlgorithmKind,
    FallbackStage,
    Prediction,
    PredictionBatch,
    PredictorConfig,
    clamp_rating,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, "os.PathLike[str]"]

MODEL_FORMAT_VERSION = 1


@njit(nogil=True)
def _sgd_pass(order, user_codes, item_codes, values, mu, bu, bi, p, q, lr, reg):  # pragma: no cover
    n_factors = p.shape[1]
    for k in order:
        u = user_codes[k]
        i = item_codes[k]
        estimate = mu + bu[u] + bi[i]
        for f in range(n_factors):
            estimate += p[u, f] * q[i, f]
        e = values[k] - estimate
        bu[u] += lr * (e - reg * bu[u])
        bi[i] += lr * (e - reg * bi[i])
        for f in range(n_factors):
            puf = p[u, f]
            p[u, f] += lr * (e * q[i, f] - reg * puf)
            q[i, f] += lr * (e * puf - reg * q[i, f])


@njit(nogil=True)
def _loss(user_codes, item_codes, values, mu, bu, bi, p, q, reg):  # pragma: no cover
    n_factors = p.shape[1]
    total = 0.0
    for k in range(len(values)):
        u = user_codes[k]
        i = item_codes[k]
        estimate = mu + bu[u] + bi[i]
        penalty = bu[u] * bu[u] + bi[i] * bi[i]
        for f in range(n_factors):
            estimate += p[u, f] * q[i, f]
            penalty += p[u, f] * p[u, f] + q[i, f] * q[i, f]
        e = values[k] - estimate
        total += e * e + reg * penalty
    return total


@dataclass(frozen=True, eq=False)
class MFModel:
    """Trained biased MF parameters.

    Attributes:
        global_mean: mu, the training mean.
        users: User references, row order of user_bias / user_factors.
        items: Item references, row order of item_bias / item_factors.
        user_bias: b_u per user.
        item_bias: b_i per item.
        user_factors: p_u rows, shape (len(users), f).
        item_factors: q_i rows, shape (len(items), f).
        config: Configuration the model was trained with.
        loss_history: Objective value after each training pass.
    """

    global_mean: float
    users: tuple[str, ...]
    items: tuple[str, ...]
    user_bias: np.ndarray
    item_bias: np.ndarray
    user_factors: np.ndarray
    item_factors: np.ndarray
    config: PredictorConfig
    loss_history: tuple[float, ...] = field(default=())

    @cached_property
    def user_index(self) -> Mapping[str, int]:
        return {u: k for k, u in enumerate(self.users)}

    @cached_property
    def item_index(self) -> Mapping[str, int]:
        return {i: k for k, i in enumerate(self.items)}

    def score_codes(self, user: int, item: int) -> float:
        """Raw score for codes (-1 drops the unknown side's terms)."""
        value = self.global_mean
        if user >= 0:
            value += float(self.user_bias[user])
        if item >= 0:
            value += float(self.item_bias[item])
        if user >= 0 and item >= 0:
            value += float(self.user_factors[user] @ self.item_factors[item])
        return value

    def predict(self, user: str, item: str, clamp: bool | None = None) -> Prediction:
        """Predict one pair; see :func:`mf_predict`."""
        u = self.user_index.get(user, -1)
        i = self.item_index.get(item, -1)
        value = self.score_codes(u, i)
        if self.config.clamp if clamp is None else clamp:
            value = clamp_rating(value)
        if u < 0 and i < 0:
            return Prediction(value, False, FallbackStage.GLOBAL_MEAN)
        return Prediction(value, True)

    def predict_batch(self, users: Sequence[str], items: Sequence[str]) -> PredictionBatch:
        """Vectorized :meth:`predict` over parallel sequences of refs."""
        u = np.fromiter((self.user_index.get(x, -1) for x in users), dtype=np.int64, count=len(users))
        i = np.fromiter((self.item_index.get(x, -1) for x in items), dtype=np.int64, count=len(items))
        known_u, known_i = u >= 0, i >= 0
        values = np.full(len(u), self.global_mean)
        values[known_u] += self.user_bias[u[known_u]]
        values[known_i] += self.item_bias[i[known_i]]
        both = known_u & known_i
        values[both] += np.einsum(
            "ij,ij->i", self.user_factors[u[both]], self.item_factors[i[both]]
        )
        if self.config.clamp:
            np.clip(values, 1.0, 5.0, out=values)
        return PredictionBatch(values, known_u | known_i)


@dataclass(frozen=True)
class MFGradient:
    """Gradient of the regularized objective with respect to each parameter block."""

    user_bias: np.ndarray
    item_bias: np.ndarray
    user_factors: np.ndarray
    item_factors: np.ndarray


def _train_codes(model: MFModel, train: Dataset) -> tuple[np.ndarray, np.ndarray]:
    users = np.asarray([model.user_index[u] for u in train.users], dtype=np.int64)
    items = np.asarray([model.item_index[i] for i in train.items], dtype=np.int64)
    return users[train.user_codes], items[train.item_codes]


def regularized_loss(model: MFModel, train: Dataset, regularization: float | None = None) -> float:
    """Objective value of model on train (regularization defaults to the model's)."""
    reg = model.config.regularization if regularization is None else regularization
    u, i = _train_codes(model, train)
    return float(_loss(
        u, i, train.values, model.global_mean, model.user_bias, model.item_bias,
        model.user_factors, model.item_factors, reg,
    ))


def loss_gradient(model: MFModel, train: Dataset, regularization: float | None = None) -> MFGradient:
    """Analytic gradient of :func:`regularized_loss`."""
    reg = model.config.regularization if regularization is None else regularization
    u, i = _train_codes(model, train)
    p, q = model.user_factors[u], model.item_factors[i]
    e = train.values - (
        model.global_mean + model.user_bias[u] + model.item_bias[i] + np.einsum("ij,ij->i", p, q)
    )
    g_bu = np.zeros_like(model.user_bias)
    g_bi = np.zeros_like(model.item_bias)
    g_p = np.zeros_like(model.user_factors)
    g_q = np.zeros_like(model.item_factors)
    np.add.at(g_bu, u, -2.0 * e + 2.0 * reg * model.user_bias[u])
    np.add.at(g_bi, i, -2.0 * e + 2.0 * reg * model.item_bias[i])
    np.add.at(g_p, u, -2.0 * e[:, None] * q + 2.0 * reg * p)
    np.add.at(g_q, i, -2.0 * e[:, None] * p + 2.0 * reg * q)
    return MFGradient(g_bu, g_bi, g_p, g_q)


def _visit_order(seed: int, pass_no: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, pass_no]).permutation(n)


def mf_train(train: Dataset, cfg: PredictorConfig) -> MFModel:
    """Train biased MF with cfg.iterations passes of per-rating SGD.

    Ratings are visited in a fresh permutation every pass, drawn from a
    generator seeded by (cfg.seed, pass number).

    Raises:
        ConfigError: If cfg.kind is not MF.
        EmptyDatasetError: If train has no ratings.
        DivergenceError: If a parameter becomes non-finite.
    """
    if cfg.kind is not AlgorithmKind.MF:
        raise ConfigError(f"mf_train needs kind mf, got {cfg.kind.value}")
    if len(train) == 0:
        raise EmptyDatasetError("Cannot train matrix factorization on an empty dataset")

    n_users, n_items, n = train.stats
    rng = np.random.default_rng(cfg.seed)
    p = rng.uniform(-cfg.init_scale, cfg.init_scale, size=(n_users, cfg.latent_factors))
    q = rng.uniform(-cfg.init_scale, cfg.init_scale, size=(n_items, cfg.latent_factors))
    bu = np.zeros(n_users)
    bi = np.zeros(n_items)
    mu = train.global_mean
    user_codes = np.ascontiguousarray(train.user_codes)
    item_codes = np.ascontiguousarray(train.item_codes)
    values = np.ascontiguousarray(train.values)

    history: list[float] = []
    for pass_no in range(1, cfg.iterations + 1):
        _sgd_pass(
            _visit_order(cfg.seed, pass_no, n), user_codes, item_codes, values,
            mu, bu, bi, p, q, cfg.learning_rate, cfg.regularization,
        )
        if not (np.isfinite(bu).all() and np.isfinite(bi).all()
                and np.isfinite(p).all() and np.isfinite(q).all()):
            raise DivergenceError(pass_no)
        loss = float(_loss(user_codes, item_codes, values, mu, bu, bi, p, q, cfg.regularization))
        history.append(loss)
        logger.debug("MF pass %d/%d: loss %.6f", pass_no, cfg.iterations, loss)

    return MFModel(mu, train.users, train.items, bu, bi, p, q, cfg, tuple(history))


def mf_predict(model: MFModel, u: str, i: str, cfg: PredictorConfig | None = None) -> Prediction:
    """Score one pair.

    An unknown user drops b_u and p_u, an unknown item drops b_i and q_i,
    and a pair with both unknown gets mu with served False. Clamping follows
    cfg (the model's own config when None).
    """
    return model.predict(u, i, clamp=(cfg or model.config).clamp)


def save_model(model: MFModel, path: PathLike) -> None:
    """Write a model as an ``.npz`` archive with its config embedded.

    The archive is written to path exactly; no suffix is added.
    """
    with open(path, "wb") as f:
        np.savez(
            f,
            format_version=np.array(MODEL_FORMAT_VERSION),
            global_mean=np.array(model.global_mean),
            users=np.array(model.users, dtype=str),
            items=np.array(model.items, dtype=str),
            user_bias=model.user_bias,
            item_bias=model.item_bias,
            user_factors=model.user_factors,
            item_factors=model.item_factors,
            loss_history=np.array(model.loss_history, dtype=np.float64),
            config=np.array(json.dumps(model.config.to_dict(), sort_keys=True)),
        )


def load_model(path: PathLike) -> MFModel:
    """Read a model written by :func:`save_model`.

    Raises:
        ConfigError: If the archive has an unsupported format version.
    """
    with np.load(Path(path), allow_pickle=False) as archive:
        version = int(archive["format_version"])
        if version != MODEL_FORMAT_VERSION:
            raise ConfigError(f"Unsupported model format version {version}")
        factors = archive["user_factors"].shape[1]
        return MFModel(
            float(archive["global_mean"]),
            tuple(str(u) for u in archive["users"]),
            tuple(str(i) for i in archive["items"]),
            archive["user_bias"],
            archive["item_bias"],
            archive["user_factors"].reshape(-1, factors),
            archive["item_factors"].reshape(-1, factors),
            PredictorConfig.from_dict(json.loads(str(archive["config"]))),
            tuple(float(x) for x in archive["loss_history"]),
        )
