"""Song listening coefficients and per-user gray-sheep coefficients (UPC)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .playlog import Corpus

DEFAULT_BINS = 300


@dataclass(frozen=True)
class PlayMatrix:
    P: sp.csr_matrix

    @property
    def shape(self) -> tuple[int, int]:
        return self.P.shape

    @property
    def totals(self) -> np.ndarray:
        return np.asarray(self.P.sum(axis=1)).ravel()

    @property
    def songs_played(self) -> np.ndarray:
        """TG: number of distinct songs each user played."""
        return np.diff(self.P.indptr)

    @property
    def mean_plays(self) -> np.ndarray:
        """Mean plays per played song for each user (0 for users with no plays)."""
        tg = self.songs_played
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(tg > 0, self.totals / np.maximum(tg, 1), 0.0)

    @property
    def song_totals(self) -> np.ndarray:
        """Total plays per song; a diagnostic only, not used by any coefficient."""
        return np.asarray(self.P.sum(axis=0)).ravel()


@dataclass(frozen=True)
class SongCoefficients:
    l: np.ndarray
    L: np.ndarray
    TU: np.ndarray
    TU_mean: float
    active: np.ndarray  # songs with at least one play; the rest carry l = L = 0


@dataclass(frozen=True)
class UserProfile:
    upc: float
    bin: int = 0
    B: int = DEFAULT_BINS

    @property
    def attribute(self) -> float:
        """Bin index rescaled to [0, 1]."""
        return self.bin / (self.B - 1) if self.B > 1 else 0.0


def build_play_matrix(corpus: Corpus) -> PlayMatrix:
    n, m = corpus.n_users, corpus.n_songs
    P = sp.coo_matrix(
        (np.ones(corpus.n_events, dtype=np.int64), (corpus.users, corpus.songs)), shape=(n, m)
    ).tocsr()
    P.sum_duplicates()
    P.sort_indices()
    return PlayMatrix(P)


def compute_listening_coefficients(plays: PlayMatrix) -> SongCoefficients:
    """Raw and min-max normalized listening coefficients per song.

    Averages over songs (mean listeners per song and the grand mean of
    intensity-normalized plays) run over songs with at least one play. If all
    raw coefficients are equal, every normalized coefficient is 0.
    """
    P = sp.csr_matrix(plays.P, dtype=float)
    P.eliminate_zeros()
    if P.nnz == 0:
        raise ValueError("play matrix has no plays")
    n, m = P.shape
    pbar = plays.mean_plays
    rows = np.repeat(np.arange(n), np.diff(P.indptr))
    rel = sp.csr_matrix((P.data / pbar[rows], P.indices, P.indptr), shape=P.shape)

    TU = np.bincount(P.indices, minlength=m).astype(float)
    active = TU > 0
    m_active = int(active.sum())
    TU_mean = TU.sum() / m_active
    song_rel = np.asarray(rel.sum(axis=0)).ravel()
    rel_mean = song_rel.sum() / m_active

    l = (TU / TU_mean) * (song_rel / rel_mean)
    l[~active] = 0.0
    L = np.zeros(m)
    lo, hi = l[active].min(), l[active].max()
    if hi > lo:
        L[active] = (l[active] - lo) / (hi - lo)
    return SongCoefficients(l, L, TU, float(TU_mean), active)


def compute_upc(coeffs: SongCoefficients, plays: PlayMatrix) -> list[UserProfile | None]:
    """Mean normalized coefficient over each user's played songs.

    Low values mark users whose songs sit in the long tail (gray sheep).
    Users with no plays map to ``None``.
    """
    P = sp.csr_matrix(plays.P)
    P.eliminate_zeros()
    if P.shape[1] != coeffs.L.size:
        raise ValueError("coefficients and play matrix cover different song sets")
    out = []
    for i in range(P.shape[0]):
        cols = P.indices[P.indptr[i]:P.indptr[i + 1]]
        out.append(UserProfile(float(coeffs.L[cols].sum() / cols.size)) if cols.size else None)
    return out


def upc_bin(upc: float, B: int) -> int:
    return min(int(np.floor(upc * B)), B - 1)


def discretize_upc(profiles, B: int = DEFAULT_BINS) -> list[UserProfile | None]:
    """Equal-width binning of UPC over [0, 1]."""
    if B < 1:
        raise ValueError("bin count must be >= 1")
    return [None if p is None else UserProfile(p.upc, upc_bin(p.upc, B), B) for p in profiles]


def characterize(corpus: Corpus, B: int = DEFAULT_BINS) -> list[UserProfile | None]:
    plays = build_play_matrix(corpus)
    return discretize_upc(compute_upc(compute_listening_coefficients(plays), plays), B)
