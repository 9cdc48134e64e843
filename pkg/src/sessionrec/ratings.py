"""Implicit ratings from session-position counts or raw play counts.

A user's songs get a blended frequency (session-start share and non-start
share, mixed by ``alpha``), and the frequencies are turned into ratings on
(0, 4] by the percentile transform: a song whose frequency has rank k among
the user's *distinct* frequency values is rated 4 * (1 - sum of the k-1
larger distinct values).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .sessions import SessionCounts

RATING_MAX = 4.0
DEFAULT_ALPHAS = (0.5, 0.7, 0.9)
# "distinct": each distinct larger frequency value counts once (tied songs share a rank).
# "mass": every song with a strictly larger frequency counts, i.e. 4 x the frequency
# mass at or below the song's own level.
TIE_RULES = ("distinct", "mass")


@dataclass(frozen=True)
class FrequencyTable:
    freq: sp.csr_matrix
    alpha: float | None  # None for play-count frequencies


@dataclass(frozen=True)
class RatingMatrix:
    """Sparse user x song ratings; stored entries are the rated pairs, all in (0, 4]."""

    ratings: sp.csr_matrix

    @property
    def shape(self) -> tuple[int, int]:
        return self.ratings.shape

    @property
    def nnz(self) -> int:
        return self.ratings.nnz

    def user_row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        r = self.ratings
        lo, hi = r.indptr[i], r.indptr[i + 1]
        return r.indices[lo:hi], r.data[lo:hi]

    def triples(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        coo = self.ratings.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order].astype(np.int64), coo.col[order].astype(np.int64), coo.data[order]

    def get(self, i: int, j: int) -> float:
        cols, vals = self.user_row(i)
        hit = np.flatnonzero(cols == j)
        return float(vals[hit[0]]) if hit.size else 0.0

    @classmethod
    def from_triples(cls, rows, cols, vals, shape) -> "RatingMatrix":
        mat = sp.csr_matrix((np.asarray(vals, dtype=float), (np.asarray(rows), np.asarray(cols))), shape=shape)
        mat.sort_indices()
        return cls(mat)


def _row_normalize(mat: sp.csr_matrix) -> tuple[sp.csr_matrix, np.ndarray]:
    mat = sp.csr_matrix(mat, dtype=float)
    totals = np.asarray(mat.sum(axis=1)).ravel()
    scale = np.repeat(totals, np.diff(mat.indptr))
    out = mat.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        out.data = mat.data / scale
    return out, totals


def compute_frequency(counts: SessionCounts, alpha: float) -> FrequencyTable:
    """Blend start and non-start shares per user.

    When a user has no non-start plays (every session is one song long) the
    whole weight goes to the start share, and symmetrically; users with no
    plays at all get no entries.
    """
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    S = sp.csr_matrix(counts.S, dtype=float)
    NS = sp.csr_matrix(counts.NS, dtype=float)
    if S.shape != NS.shape:
        raise ValueError("S and NS shapes differ")
    s_tot = np.asarray(S.sum(axis=1)).ravel()
    ns_tot = np.asarray(NS.sum(axis=1)).ravel()

    pattern = ((S != 0) + (NS != 0)).tocsr()
    pattern.sort_indices()
    rows = np.repeat(np.arange(S.shape[0]), np.diff(pattern.indptr))
    cols = pattern.indices
    s = np.asarray(S[rows, cols]).ravel()
    ns = np.asarray(NS[rows, cols]).ravel()
    st, nt = s_tot[rows], ns_tot[rows]

    with np.errstate(divide="ignore", invalid="ignore"):
        blended = alpha * (s / st) + (1.0 - alpha) * (ns / nt)
        only_start = s / st
        only_rest = ns / nt
    f = np.where(nt == 0, only_start, np.where(st == 0, only_rest, blended))
    # alpha in {0, 1} can zero out played songs; a zero frequency is not a rating
    keep = f > 0
    freq = sp.csr_matrix((f[keep], (rows[keep], cols[keep])), shape=S.shape)
    freq.sort_indices()
    return FrequencyTable(freq, alpha)


def playcount_frequency(plays) -> FrequencyTable:
    P = plays.P if hasattr(plays, "P") else plays
    if sp.issparse(P):
        P = sp.csr_matrix(P)
        if P.nnz and P.data.min() < 0:
            raise ValueError("play counts must be non-negative")
        P.eliminate_zeros()
    else:
        P = np.asarray(P)
        if (P < 0).any():
            raise ValueError("play counts must be non-negative")
        P = sp.csr_matrix(P)
    freq, _ = _row_normalize(P)
    freq.sort_indices()
    return FrequencyTable(freq, None)


def percentile_ratings(freq_row: np.ndarray, tie_rule: str = "distinct") -> np.ndarray:
    """Ratings for one user's positive frequencies (any order)."""
    distinct, counts = np.unique(freq_row, return_counts=True)
    distinct, counts = distinct[::-1], counts[::-1]  # strictly decreasing
    level = distinct if tie_rule == "distinct" else distinct * counts
    # 1 - (sum of levels above) rewritten as a sum of nonnegative terms so a
    # tiny frequency cannot cancel to 0; rows are assumed to sum to 1
    surplus = float(np.sum(distinct * counts - level))
    tail = np.cumsum(level[::-1])[::-1]
    rank = np.searchsorted(-distinct, -freq_row)  # exact match position
    share = np.where(rank == 0, 1.0, surplus + tail[rank])
    return RATING_MAX * share


def compute_ratings(freq: FrequencyTable, tie_rule: str = "distinct") -> RatingMatrix:
    if tie_rule not in TIE_RULES:
        raise ValueError(f"unknown tie rule {tie_rule!r}")
    F = freq.freq
    data = np.empty_like(F.data)
    for i in range(F.shape[0]):
        lo, hi = F.indptr[i], F.indptr[i + 1]
        if hi > lo:
            data[lo:hi] = percentile_ratings(F.data[lo:hi], tie_rule)
    out = sp.csr_matrix((data, F.indices.copy(), F.indptr.copy()), shape=F.shape)
    return RatingMatrix(out)


def compute_playcount_ratings(plays, tie_rule: str = "distinct") -> RatingMatrix:
    return compute_ratings(playcount_frequency(plays), tie_rule)


def session_ratings(counts: SessionCounts, alpha: float, tie_rule: str = "distinct") -> RatingMatrix:
    return compute_ratings(compute_frequency(counts, alpha), tie_rule)
