"""Session segmentation of per-user play streams and session-position counts."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .playlog import Corpus

DEFAULT_GAP_SECONDS = 15 * 60


@dataclass(frozen=True)
class Session:
    user_index: int
    plays: tuple[int, ...]
    start_time: int
    end_time: int

    def __len__(self) -> int:
        return len(self.plays)


@dataclass(frozen=True)
class SessionCounts:
    """Per (user, song) counts of session-opening plays (``S``) and other plays (``NS``)."""

    S: sp.csr_matrix
    NS: sp.csr_matrix

    @property
    def shape(self) -> tuple[int, int]:
        return self.S.shape


def _check_gap(gap) -> float:
    gap = float(gap)
    if math.isnan(gap) or gap < 0:
        raise ValueError(f"session gap must be >= 0, got {gap}")
    return gap


def session_start_mask(corpus: Corpus, gap: float = DEFAULT_GAP_SECONDS) -> np.ndarray:
    """Boolean mask over corpus events marking the first play of each session.

    A new session opens on a user's first play and wherever the gap to the
    previous play strictly exceeds ``gap`` seconds.
    """
    gap = _check_gap(gap)
    users, ts = corpus.users, corpus.timestamps
    start = np.ones(users.size, dtype=bool)
    if users.size > 1:
        same_user = users[1:] == users[:-1]
        dt = np.diff(ts)
        if np.any(same_user & (dt < 0)):
            raise ValueError("corpus events are not sorted by timestamp within each user")
        start[1:] = ~same_user | (dt > gap)
    return start


def sessionize(corpus: Corpus, gap: float = DEFAULT_GAP_SECONDS) -> list[Session]:
    """Split every user's plays into sessions (``gap`` in seconds, default 15 minutes)."""
    start = session_start_mask(corpus, gap)
    bounds = np.flatnonzero(start).tolist() + [corpus.n_events]
    users, songs, ts = corpus.users, corpus.songs, corpus.timestamps
    return [
        Session(int(users[a]), tuple(songs[a:b].tolist()), int(ts[a]), int(ts[b - 1]))
        for a, b in zip(bounds[:-1], bounds[1:])
    ]


def count_session_positions(sessions, n: int, m: int) -> SessionCounts:
    rows_s, cols_s, rows_ns, cols_ns = [], [], [], []
    for sess in sessions:
        if not sess.plays:
            raise ValueError("empty session")
        rows_s.append(sess.user_index)
        cols_s.append(sess.plays[0])
        rest = sess.plays[1:]
        rows_ns.extend([sess.user_index] * len(rest))
        cols_ns.extend(rest)
    return SessionCounts(_count_matrix(rows_s, cols_s, n, m), _count_matrix(rows_ns, cols_ns, n, m))


def session_counts(corpus: Corpus, gap: float = DEFAULT_GAP_SECONDS) -> SessionCounts:
    """Vectorized equivalent of ``count_session_positions(sessionize(corpus, gap), ...)``."""
    start = session_start_mask(corpus, gap)
    n, m = corpus.n_users, corpus.n_songs
    S = _count_matrix(corpus.users[start], corpus.songs[start], n, m)
    NS = _count_matrix(corpus.users[~start], corpus.songs[~start], n, m)
    return SessionCounts(S, NS)


def _count_matrix(rows, cols, n, m) -> sp.csr_matrix:
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= m):
        raise IndexError("session index out of bounds")
    mat = sp.coo_matrix((np.ones(rows.size, dtype=np.int64), (rows, cols)), shape=(n, m)).tocsr()
    mat.sum_duplicates()
    return mat


def session_summary(corpus: Corpus, gap: float = DEFAULT_GAP_SECONDS) -> list[tuple[str, int, float]]:
    """Rows of (user_id, n_sessions, mean session length) for diagnostics."""
    start = session_start_mask(corpus, gap)
    n = corpus.n_users
    n_sessions = np.bincount(corpus.users[start], minlength=n)
    n_plays = np.bincount(corpus.users, minlength=n)
    out = []
    for i, uid in enumerate(corpus.user_ids):
        mean_len = n_plays[i] / n_sessions[i] if n_sessions[i] else 0.0
        out.append((uid, int(n_sessions[i]), float(mean_len)))
    return out
