"""User-based K-NN rating prediction.

Three similarity modes are supported: Pearson over co-rated songs, cosine over
the full sparse rating vectors, and a UPC-attribute-weighted cosine that
blends rating similarity with closeness of the users' discretized UPC bins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .ratings import RATING_MAX, RatingMatrix

METRICS = ("pearson", "cosine", "weighted_cosine_upc")
# variances at or below this are treated as zero (constant co-ratings)
VAR_EPS = 1e-20


class PredictionError(ValueError):
    pass


@dataclass(frozen=True)
class SimilarityConfig:
    metric: str = "cosine"
    K: int = 5
    lam: float = 0.5  # rating vs attribute weight, weighted mode only
    min_overlap: int = 2
    cosine_scope: str = "full"  # or "corated"

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown similarity metric {self.metric!r}")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.cosine_scope not in ("full", "corated"):
            raise ValueError("cosine_scope must be 'full' or 'corated'")


@dataclass(frozen=True)
class Prediction:
    value: float
    fallback_used: bool = False


def _dense(ratings: RatingMatrix) -> np.ndarray:
    return ratings.ratings.toarray()


def _csr(ratings: RatingMatrix):
    r = ratings.ratings
    if not r.has_sorted_indices:
        r = r.sorted_indices()
    return r.indptr.astype(np.int64), r.indices.astype(np.int64), r.data.astype(np.float64)


_KIND = {"pearson": 0, "cosine": 1, "corated": 2}


@numba.njit(cache=True)
def _pair_similarity(ia, va, ib, vb, kind, min_overlap, norm_a, norm_b):
    # co-rated positions by merging the two sorted column lists
    na, nb = ia.shape[0], ib.shape[0]
    pa = np.empty(min(na, nb), dtype=np.int64)
    pb = np.empty(min(na, nb), dtype=np.int64)
    c = 0
    x = 0
    y = 0
    while x < na and y < nb:
        if ia[x] == ib[y]:
            pa[c] = x
            pb[c] = y
            c += 1
            x += 1
            y += 1
        elif ia[x] < ib[y]:
            x += 1
        else:
            y += 1
    if kind == 1:
        if c == 0 or norm_a == 0.0 or norm_b == 0.0:
            return 0.0
        dot = 0.0
        for t in range(c):
            dot += va[pa[t]] * vb[pb[t]]
        return min(max(dot / (norm_a * norm_b), 0.0), 1.0)
    if kind == 2:
        dot = 0.0
        sa = 0.0
        sb = 0.0
        for t in range(c):
            xa = va[pa[t]]
            xb = vb[pb[t]]
            dot += xa * xb
            sa += xa * xa
            sb += xb * xb
        den = np.sqrt(sa) * np.sqrt(sb)
        if den == 0.0:
            return 0.0
        return min(max(dot / den, 0.0), 1.0)
    if c < min_overlap or c == 0:
        return 0.0
    ma = 0.0
    mb = 0.0
    for t in range(c):
        ma += va[pa[t]]
        mb += vb[pb[t]]
    ma /= c
    mb /= c
    num = 0.0
    sa = 0.0
    sb = 0.0
    for t in range(c):
        da = va[pa[t]] - ma
        db = vb[pb[t]] - mb
        num += da * db
        sa += da * da
        sb += db * db
    if sa <= VAR_EPS or sb <= VAR_EPS:
        return 0.0
    return min(max(num / np.sqrt(sa * sb), -1.0), 1.0)


@numba.njit(cache=True)
def _norms(indptr, data):
    n = indptr.shape[0] - 1
    out = np.zeros(n)
    for i in range(n):
        s = 0.0
        for t in range(indptr[i], indptr[i + 1]):
            s += data[t] * data[t]
        out[i] = np.sqrt(s)
    return out


@numba.njit(cache=True)
def _similarity_matrix(indptr, indices, data, kind, min_overlap):
    n = indptr.shape[0] - 1
    norms = _norms(indptr, data)
    out = np.zeros((n, n))
    for a in range(n):
        ia = indices[indptr[a]:indptr[a + 1]]
        va = data[indptr[a]:indptr[a + 1]]
        for b in range(a + 1, n):
            ib = indices[indptr[b]:indptr[b + 1]]
            vb = data[indptr[b]:indptr[b + 1]]
            s = _pair_similarity(ia, va, ib, vb, kind, min_overlap, norms[a], norms[b])
            out[a, b] = s
            out[b, a] = s
    return out


def _pair(ratings: RatingMatrix, a: int, i: int, kind: int, min_overlap: int = 2) -> float:
    if a == i:
        raise ValueError("similarity of a user with itself is not defined here")
    indptr, indices, data = _csr(ratings)
    norms = _norms(indptr, data)
    lo, hi = (a, i) if a < i else (i, a)
    return float(_pair_similarity(
        indices[indptr[lo]:indptr[lo + 1]], data[indptr[lo]:indptr[lo + 1]],
        indices[indptr[hi]:indptr[hi + 1]], data[indptr[hi]:indptr[hi + 1]],
        kind, min_overlap, norms[lo], norms[hi],
    ))


def _bins(profiles, n):
    bins = np.zeros(n)
    have = np.zeros(n, dtype=bool)
    B = None
    for i, p in enumerate(profiles):
        if p is not None:
            bins[i] = p.bin
            have[i] = True
            if B is None:
                B = p.B
            elif B != p.B:
                raise ValueError("profiles use different bin counts")
    return bins, have, (B or 1)


def attribute_similarity_matrix(profiles, n: int | None = None) -> np.ndarray:
    """1 - |bin_a - bin_i| / (B - 1); 0 wherever a profile is missing."""
    n = len(profiles) if n is None else n
    bins, have, B = _bins(profiles, n)
    if B == 1:
        sim = np.ones((n, n))
    else:
        sim = 1.0 - np.abs(bins[:, None] - bins[None, :]) / (B - 1)
    return np.where(have[:, None] & have[None, :], sim, 0.0)


def similarity_matrix(ratings: RatingMatrix, config: SimilarityConfig, profiles=None) -> np.ndarray:
    """Symmetric user x user similarity under ``config`` (diagonal left at 0)."""
    indptr, indices, data = _csr(ratings)
    if config.metric == "pearson":
        return _similarity_matrix(indptr, indices, data, _KIND["pearson"], config.min_overlap)
    kind = _KIND["cosine" if config.cosine_scope == "full" else "corated"]
    cos = _similarity_matrix(indptr, indices, data, kind, 0)
    if config.metric == "cosine":
        return cos
    if profiles is None:
        raise ValueError("weighted_cosine_upc needs user profiles")
    n = ratings.shape[0]
    out = config.lam * cos + (1.0 - config.lam) * attribute_similarity_matrix(profiles, n)
    np.fill_diagonal(out, 0.0)
    return out


# -- pairwise API ------------------------------------------------------------

def pearson_similarity(ratings: RatingMatrix, a: int, i: int, min_overlap: int = 2) -> float:
    """Pearson correlation over co-rated songs; 0 when undefined."""
    return _pair(ratings, a, i, _KIND["pearson"], min_overlap)


def cosine_similarity(ratings: RatingMatrix, a: int, i: int, scope: str = "full") -> float:
    return _pair(ratings, a, i, _KIND["cosine" if scope == "full" else "corated"])


def attribute_similarity(pa, pb) -> float:
    if pa is None or pb is None:
        return 0.0
    if pa.B != pb.B:
        raise ValueError("profiles use different bin counts")
    if pa.B == 1:
        return 1.0
    return 1.0 - abs(float(pa.bin) - float(pb.bin)) / (pa.B - 1)


def weighted_similarity_upc(ratings: RatingMatrix, profiles, a: int, i: int, lam: float = 0.5,
                            scope: str = "full") -> float:
    cos = cosine_similarity(ratings, a, i, scope)
    return lam * cos + (1.0 - lam) * attribute_similarity(profiles[a], profiles[i])


def _top_k(sim: np.ndarray, a: int, K: int, eligible: np.ndarray) -> list[tuple[int, float]]:
    idx = np.flatnonzero(eligible & (sim > 0))
    idx = idx[idx != a]
    order = np.lexsort((idx, -sim[idx]))[:K]
    return [(int(idx[o]), float(sim[idx[o]])) for o in order]


def find_neighbors(active: int, config: SimilarityConfig, ratings: RatingMatrix,
                   profiles=None) -> list[tuple[int, float]]:
    """Top-K positively similar users, ties broken by lower user index."""
    has = np.diff(ratings.ratings.indptr) > 0
    if not has[active]:
        raise PredictionError(f"user {active} has no ratings")
    sim = similarity_matrix(ratings, config, profiles)[active]
    return _top_k(sim, active, config.K, has)


def user_means(ratings: RatingMatrix) -> np.ndarray:
    r = ratings.ratings
    counts = np.diff(r.indptr)
    sums = np.asarray(r.sum(axis=1)).ravel()
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def predict_rating(active: int, song: int, neighbors, ratings: RatingMatrix) -> Prediction:
    """Mean-centred weighted average of the neighbours' deviations on ``song``."""
    means = user_means(ratings)
    if np.isnan(means[active]):
        raise PredictionError(f"user {active} has no ratings")
    num = den = 0.0
    for i, s in neighbors:
        r = ratings.get(i, song)
        if r > 0:
            num += s * (r - means[i])
            den += abs(s)
    if den == 0:
        return Prediction(float(np.clip(means[active], 0.0, RATING_MAX)), True)
    return Prediction(float(np.clip(means[active] + num / den, 0.0, RATING_MAX)), False)


class UserKNN:
    """Batch form of the K-NN predictor: neighbours are computed once per user."""

    def __init__(self, config: SimilarityConfig | None = None):
        self.config = config or SimilarityConfig()

    def fit(self, ratings: RatingMatrix, profiles=None) -> "UserKNN":
        if self.config.metric == "weighted_cosine_upc" and profiles is None:
            raise ValueError("weighted_cosine_upc needs user profiles")
        R = _dense(ratings)
        n = R.shape[0]
        K = self.config.K
        has = (R > 0).any(axis=1)
        self.R = R
        self.means = user_means(ratings)
        self.global_mean = float(ratings.ratings.data.mean()) if ratings.nnz else 0.0
        self.nb_idx = np.full((n, K), -1, dtype=np.int64)
        self.nb_sim = np.zeros((n, K))
        self.sim = similarity_matrix(ratings, self.config, profiles)
        for a in np.flatnonzero(has):
            nb = _top_k(self.sim[a], a, K, has)
            for k, (i, s) in enumerate(nb):
                self.nb_idx[a, k] = i
                self.nb_sim[a, k] = s
        return self

    def neighbors(self, a: int) -> list[tuple[int, float]]:
        keep = self.nb_idx[a] >= 0
        return list(zip(self.nb_idx[a][keep].tolist(), self.nb_sim[a][keep].tolist()))

    def predict(self, a: int, j: int) -> Prediction:
        if np.isnan(self.means[a]):
            raise PredictionError(f"user {a} has no ratings")
        v, fb = self.predict_many(np.array([a]), np.array([j]))
        return Prediction(float(v[0]), bool(fb[0]))

    def predict_many(self, users, songs, cold_value: float | None = None):
        """Vectorized predictions; users without ratings get ``cold_value`` (default: global mean)."""
        users = np.asarray(users, dtype=np.int64)
        songs = np.asarray(songs, dtype=np.int64)
        nb = self.nb_idx[users]
        sims = self.nb_sim[users]
        valid = nb >= 0
        nbc = np.where(valid, nb, 0)
        r = self.R[nbc, songs[:, None]]
        rated = valid & (r > 0)
        dev = np.where(rated, r - self.means[nbc], 0.0)
        num = np.where(rated, sims * dev, 0.0).sum(axis=1)
        den = np.where(rated, np.abs(sims), 0.0).sum(axis=1)
        base = self.means[users]
        cold = np.isnan(base)
        base = np.where(cold, self.global_mean if cold_value is None else cold_value, base)
        fallback = den == 0
        with np.errstate(divide="ignore", invalid="ignore"):
            pred = np.where(fallback, base, base + num / np.where(fallback, 1.0, den))
        return np.clip(pred, 0.0, RATING_MAX), fallback | cold

    def recommend(self, a: int, top_n: int = 10) -> list[tuple[int, float]]:
        """Unrated songs with the highest predicted rating, ties by song index."""
        cand = np.flatnonzero(self.R[a] == 0)
        if cand.size == 0:
            return []
        pred, _ = self.predict_many(np.full(cand.size, a), cand)
        order = np.lexsort((cand, -pred))[:top_n]
        return [(int(cand[o]), float(pred[o])) for o in order]
