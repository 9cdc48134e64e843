"""Plain and biased matrix factorization trained by SGD."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .ratings import RATING_MAX, RatingMatrix

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1


class MFDivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class MFHyper:
    factors: int = 10
    lr: float = 0.005
    reg: float = 0.02
    epochs: int = 50
    seed: int = 0
    init_scale: float = 0.05

    def __post_init__(self):
        if self.factors < 1 or self.epochs < 1:
            raise ValueError("factors and epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be > 0")
        if self.reg < 0:
            raise ValueError("regularization must be >= 0")


@dataclass
class MFModel:
    user_factors: np.ndarray
    item_factors: np.ndarray
    global_mean: float
    user_bias: np.ndarray
    item_bias: np.ndarray
    biased: bool
    hyper: MFHyper
    known_users: np.ndarray
    known_items: np.ndarray
    train_rmse: list[float] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def raw(self, u, i):
        """Unclamped model output for index arrays."""
        dot = np.einsum("ij,ij->i", self.user_factors[u], self.item_factors[i])
        if self.biased:
            return self.global_mean + self.user_bias[u] + self.item_bias[i] + dot
        return dot

    def predict_many(self, users, songs) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        songs = np.asarray(songs, dtype=np.int64)
        n, m = self.user_factors.shape[0], self.item_factors.shape[0]
        inside = (users >= 0) & (users < n) & (songs >= 0) & (songs < m)
        uc, sc = np.where(inside, users, 0), np.where(inside, songs, 0)
        known = inside & self.known_users[uc] & self.known_items[sc]
        out = np.where(known, self.raw(uc, sc), self.global_mean)
        return np.clip(out, 0.0, RATING_MAX)


def single_loss(p_u, q_i, b_u, b_i, mu, r, reg, biased) -> float:
    """Regularized squared error of one rating, halved: 0.5*e^2 + 0.5*reg*|params|^2."""
    pred = float(np.dot(p_u, q_i)) + ((mu + b_u + b_i) if biased else 0.0)
    e = r - pred
    penalty = float(np.dot(p_u, p_u) + np.dot(q_i, q_i))
    if biased:
        penalty += b_u * b_u + b_i * b_i
    return 0.5 * e * e + 0.5 * reg * penalty


def single_gradients(p_u, q_i, b_u, b_i, mu, r, reg, biased):
    """Analytic gradient of :func:`single_loss` with respect to (p_u, q_i, b_u, b_i)."""
    pred = float(np.dot(p_u, q_i)) + ((mu + b_u + b_i) if biased else 0.0)
    e = r - pred
    g_p = -e * q_i + reg * p_u
    g_q = -e * p_u + reg * q_i
    if biased:
        return g_p, g_q, -e + reg * b_u, -e + reg * b_i
    return g_p, g_q, 0.0, 0.0


@numba.njit(cache=True)
def _sgd_epoch(users, items, vals, order, P, Q, bu, bi, mu, lr, reg, biased):
    f = P.shape[1]
    for t in range(order.shape[0]):
        k = order[t]
        u = users[k]
        i = items[k]
        pred = 0.0
        for d in range(f):
            pred += P[u, d] * Q[i, d]
        if biased:
            pred += mu + bu[u] + bi[i]
        e = vals[k] - pred
        if biased:
            gu = -e + reg * bu[u]
            gi = -e + reg * bi[i]
            bu[u] -= lr * gu
            bi[i] -= lr * gi
        for d in range(f):
            pu = P[u, d]
            qi = Q[i, d]
            P[u, d] = pu - lr * (-e * qi + reg * pu)
            Q[i, d] = qi - lr * (-e * pu + reg * qi)


def mf_train(ratings: RatingMatrix, hyper: MFHyper | None = None, biased: bool = False) -> MFModel:
    hyper = hyper or MFHyper()
    users, items, vals = ratings.triples()
    if vals.size == 0:
        raise ValueError("cannot train on an empty rating matrix")
    n, m = ratings.shape
    rng = np.random.default_rng(hyper.seed)
    s = hyper.init_scale
    P = rng.uniform(-s, s, size=(n, hyper.factors))
    Q = rng.uniform(-s, s, size=(m, hyper.factors))
    bu = np.zeros(n)
    bi = np.zeros(m)
    mu = float(vals.mean())
    known_u = np.zeros(n, dtype=bool)
    known_u[users] = True
    known_i = np.zeros(m, dtype=bool)
    known_i[items] = True
    model = MFModel(P, Q, mu, bu, bi, biased, hyper, known_u, known_i)

    for epoch in range(hyper.epochs):
        order = rng.permutation(vals.size)
        _sgd_epoch(users, items, vals, order, P, Q, bu, bi, mu, hyper.lr, hyper.reg, biased)
        rmse = float(np.sqrt(np.mean((vals - model.raw(users, items)) ** 2)))
        if not math.isfinite(rmse) or not (np.isfinite(P).all() and np.isfinite(Q).all()):
            raise MFDivergenceError(
                f"SGD diverged at epoch {epoch} (lr={hyper.lr}, reg={hyper.reg}, factors={hyper.factors})"
            )
        model.train_rmse.append(rmse)
    _check_monotone(model)
    return model


def _check_monotone(model: MFModel, burn_in: int = 5, tol: float = 1e-6) -> None:
    curve = model.train_rmse
    for e in range(burn_in + 1, len(curve)):
        if curve[e] > curve[e - 1] + tol:
            msg = f"training RMSE rose at epoch {e}: {curve[e - 1]:.6g} -> {curve[e]:.6g}"
            model.warnings.append(msg)
            log.warning(msg)
            return


def mf_predict(model: MFModel, user: int, song: int) -> float:
    return float(model.predict_many([user], [song])[0])


def save_model(model: MFModel, path) -> None:
    with open(path, "wb") as fh:
        np.savez(
            fh,
            version=np.int64(MODEL_FORMAT_VERSION),
            user_factors=model.user_factors,
            item_factors=model.item_factors,
            global_mean=np.float64(model.global_mean),
            user_bias=model.user_bias,
            item_bias=model.item_bias,
            biased=np.bool_(model.biased),
            known_users=model.known_users,
            known_items=model.known_items,
            train_rmse=np.asarray(model.train_rmse, dtype=float),
            hyper=np.array([asdict(model.hyper)[k] for k in
                            ("factors", "lr", "reg", "epochs", "seed", "init_scale")], dtype=float),
        )


def load_model(path) -> MFModel:
    with np.load(path, allow_pickle=False) as d:
        if int(d["version"]) != MODEL_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported model format version {int(d['version'])}")
        h = d["hyper"]
        hyper = MFHyper(int(h[0]), float(h[1]), float(h[2]), int(h[3]), int(h[4]), float(h[5]))
        return MFModel(
            d["user_factors"], d["item_factors"], float(d["global_mean"]), d["user_bias"],
            d["item_bias"], bool(d["biased"]), hyper, d["known_users"], d["known_items"],
            d["train_rmse"].tolist(),
        )
