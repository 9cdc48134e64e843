"""Play-log ingestion, canonical corpus container and synthetic log generator."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

FORMATS = ("lastfm360k_tsv", "simple_tsv")
CORPUS_FORMAT_VERSION = 1

# sane epoch window for play timestamps: 1990-01-01 .. 2100-01-01 (UTC)
MIN_TIMESTAMP = 631152000
MAX_TIMESTAMP = 4102444800


class PlaylogError(ValueError):
    """Raised when a play log cannot be read or is too damaged to use."""


@dataclass(frozen=True)
class PlayEvent:
    user_id: str
    song_id: str
    timestamp: int  # unix seconds, UTC


@dataclass(frozen=True, eq=False)
class Corpus:
    """Immutable columnar store of play events.

    Events are sorted by (user index, timestamp); plays sharing a timestamp keep
    their input order. ``users``/``songs`` hold dense indices into ``user_ids``
    and ``song_ids``, which are the sorted distinct identifiers.
    """

    user_ids: tuple[str, ...]
    song_ids: tuple[str, ...]
    users: np.ndarray
    songs: np.ndarray
    timestamps: np.ndarray
    n_malformed: int = 0
    _user_index: dict = field(default=None, repr=False, compare=False)
    _song_index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for name in ("users", "songs", "timestamps"):
            arr = getattr(self, name)
            arr.setflags(write=False)
        object.__setattr__(self, "_user_index", {u: i for i, u in enumerate(self.user_ids)})
        object.__setattr__(self, "_song_index", {s: j for j, s in enumerate(self.song_ids)})

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_songs(self) -> int:
        return len(self.song_ids)

    @property
    def n_events(self) -> int:
        return int(self.users.size)

    def __len__(self) -> int:
        return self.n_events

    @property
    def user_index(self) -> dict[str, int]:
        return self._user_index

    @property
    def song_index(self) -> dict[str, int]:
        return self._song_index

    @property
    def events(self) -> list[PlayEvent]:
        uids, sids = self.user_ids, self.song_ids
        return [
            PlayEvent(uids[u], sids[s], int(t))
            for u, s, t in zip(self.users.tolist(), self.songs.tolist(), self.timestamps.tolist())
        ]

    def restrict(self, keep: np.ndarray) -> "Corpus":
        """Subset of events selected by a boolean mask; the id universe is kept."""
        keep = np.asarray(keep, dtype=bool)
        return Corpus(
            self.user_ids,
            self.song_ids,
            self.users[keep].copy(),
            self.songs[keep].copy(),
            self.timestamps[keep].copy(),
        )

    def equals(self, other: "Corpus") -> bool:
        return (
            self.user_ids == other.user_ids
            and self.song_ids == other.song_ids
            and np.array_equal(self.users, other.users)
            and np.array_equal(self.songs, other.songs)
            and np.array_equal(self.timestamps, other.timestamps)
        )


def corpus_from_events(events, n_malformed: int = 0) -> Corpus:
    """Build a Corpus from an iterable of (user_id, song_id, unix_seconds) or PlayEvent."""
    rows = [(e.user_id, e.song_id, e.timestamp) if isinstance(e, PlayEvent) else tuple(e) for e in events]
    return _build_corpus(
        [r[0] for r in rows], [r[1] for r in rows], [int(r[2]) for r in rows], n_malformed
    )


def _build_corpus(user_col, song_col, ts_col, n_malformed=0) -> Corpus:
    user_ids = tuple(sorted(set(user_col)))
    song_ids = tuple(sorted(set(song_col)))
    uidx = {u: i for i, u in enumerate(user_ids)}
    sidx = {s: j for j, s in enumerate(song_ids)}
    users = np.fromiter((uidx[u] for u in user_col), dtype=np.int32, count=len(user_col))
    songs = np.fromiter((sidx[s] for s in song_col), dtype=np.int32, count=len(song_col))
    ts = np.asarray(ts_col, dtype=np.int64).reshape(-1)
    # lexsort is stable: equal (user, ts) keys keep file order
    order = np.lexsort((ts, users))
    return Corpus(user_ids, song_ids, users[order], songs[order], ts[order], n_malformed)


def _parse_iso(text: str) -> int:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _parse_row(parts: list[str], fmt: str):
    if fmt == "simple_tsv":
        if len(parts) != 3:
            return None
        user, song, ts = parts[0], parts[1], int(parts[2])
    else:
        if len(parts) != 6:
            return None
        user, stamp, _artist_mbid, artist, track_mbid, track = parts
        ts = _parse_iso(stamp)
        song = track_mbid.strip() or (f"{artist}\t{track}" if (artist or track) else "")
    if not user or not song:
        return None
    if not MIN_TIMESTAMP <= ts < MAX_TIMESTAMP:
        return None
    return user, song, ts


def parse_playlog(path, format: str = "simple_tsv", max_malformed_fraction: float = 0.10) -> Corpus:
    """Parse a play log into a Corpus.

    Malformed rows (wrong column count, empty ids, bad or out-of-range
    timestamps) are skipped and counted. If more than ``max_malformed_fraction``
    of the non-blank rows are malformed the whole file is rejected.
    """
    if format not in FORMATS:
        raise PlaylogError(f"unknown play-log format {format!r}; expected one of {FORMATS}")
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise PlaylogError(f"cannot read play log {path}: {exc}") from exc
    return parse_playlog_text(text, format, max_malformed_fraction, source=str(path))


def parse_playlog_text(text: str, format: str = "simple_tsv",
                       max_malformed_fraction: float = 0.10, source: str = "<text>") -> Corpus:
    users, songs, stamps = [], [], []
    n_rows = n_bad = 0
    for line in io.StringIO(text):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        n_rows += 1
        try:
            row = _parse_row(line.split("\t"), format)
        except (ValueError, OverflowError):
            row = None
        if row is None:
            n_bad += 1
            continue
        users.append(row[0])
        songs.append(row[1])
        stamps.append(row[2])
    if n_rows and n_bad / n_rows > max_malformed_fraction:
        raise PlaylogError(
            f"{source}: {n_bad} of {n_rows} rows malformed "
            f"(limit {max_malformed_fraction:.0%})"
        )
    if n_bad:
        log.warning("%s: skipped %d malformed rows of %d", source, n_bad, n_rows)
    log.info("%s: %d valid events", source, len(users))
    return _build_corpus(users, songs, stamps, n_bad)


def format_simple_tsv(corpus: Corpus) -> str:
    uids, sids = corpus.user_ids, corpus.song_ids
    for ident in uids + sids:
        if "\t" in ident or "\n" in ident or "\r" in ident:
            raise PlaylogError(f"id {ident!r} cannot be written as simple_tsv")
    lines = [
        f"{uids[u]}\t{sids[s]}\t{t}\n"
        for u, s, t in zip(corpus.users.tolist(), corpus.songs.tolist(), corpus.timestamps.tolist())
    ]
    return "".join(lines)


def write_simple_tsv(corpus: Corpus, path) -> None:
    Path(path).write_text(format_simple_tsv(corpus), encoding="utf-8")


def save_corpus(corpus: Corpus, path) -> None:
    """Write the versioned binary (npz) form of a corpus."""
    with open(path, "wb") as fh:
        np.savez(
            fh,
            version=np.int64(CORPUS_FORMAT_VERSION),
            user_ids=np.array(corpus.user_ids, dtype=object).astype(str),
            song_ids=np.array(corpus.song_ids, dtype=object).astype(str),
            users=corpus.users,
            songs=corpus.songs,
            timestamps=corpus.timestamps,
        )


def load_corpus(path) -> Corpus:
    path = Path(path)
    if path.suffix in (".tsv", ".txt"):
        return parse_playlog(path, "simple_tsv")
    with np.load(path, allow_pickle=False) as data:
        version = int(data["version"])
        if version != CORPUS_FORMAT_VERSION:
            raise PlaylogError(f"{path}: corpus format version {version} is not supported")
        return Corpus(
            tuple(str(u) for u in data["user_ids"]) if data["user_ids"].size else (),
            tuple(str(s) for s in data["song_ids"]) if data["song_ids"].size else (),
            data["users"].astype(np.int32),
            data["songs"].astype(np.int32),
            data["timestamps"].astype(np.int64),
        )


# --------------------------------------------------------------------------
# synthetic power-law logs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SessionProfile:
    """Shape of the synthetic listening behaviour.

    Within-session spacing must stay at or below the sessionization threshold
    and between-session breaks above it, so sessions are recoverable.
    """

    mean_sessions: float = 30.0
    mean_length: float = 8.0
    play_seconds: tuple[int, int] = (150, 330)
    break_seconds: tuple[int, int] = (3600, 3 * 86400)
    n_favorites: int = 25
    start_from_favorites: float = 0.9
    continue_from_favorites: float = 0.35
    n_genres: int = 8
    gray_tail_bias: float = 0.85
    start_time: int = 1199145600  # 2008-01-01T00:00:00Z


def _zipf_weights(n: int, exponent: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=float) ** -exponent
    return w / w.sum()


def _draw_gray(rng, n_users: int, fraction: float) -> np.ndarray:
    gray = np.zeros(n_users, dtype=bool)
    gray[rng.permutation(n_users)[: int(round(fraction * n_users))]] = True
    return gray


def gray_sheep_users(n_users: int, gray_sheep_fraction: float = 0.2, seed: int = 0) -> list[str]:
    """Ids of the users :func:`synthesize_playlog` marks as gray sheep for the same arguments."""
    gray = _draw_gray(np.random.default_rng(seed), n_users, gray_sheep_fraction)
    return [f"u{i:0{len(str(n_users))}d}" for i in np.flatnonzero(gray)]


def synthesize_playlog(
    n_users: int,
    n_songs: int,
    zipf_exponent: float = 1.0,
    session_profile: SessionProfile | None = None,
    gray_sheep_fraction: float = 0.2,
    seed: int = 0,
) -> Corpus:
    """Generate a deterministic play log with long-tail song popularity.

    Song ``s<k>`` has popularity rank k (0 is the most played). Songs are dealt
    to genres round-robin by rank, so every genre has its own Zipf head. Each
    user listens within one genre and keeps a set of favourites; sessions
    usually open on a favourite and continue with a mix of favourites and
    popularity-driven discovery. Gray-sheep users draw both favourites and
    discovery mostly from the tail half of the ranking.
    """
    prof = session_profile or SessionProfile()
    if n_users < 1 or n_songs < 1:
        raise ValueError("n_users and n_songs must be >= 1")
    if not zipf_exponent > 0:
        raise ValueError("zipf_exponent must be > 0")
    if not 0.0 <= gray_sheep_fraction <= 1.0:
        raise ValueError("gray_sheep_fraction must lie in [0, 1]")
    if prof.mean_sessions < 1 or prof.mean_length < 1 or prof.n_favorites < 1 or prof.n_genres < 1:
        raise ValueError("session profile counts must be >= 1")
    if not 0 < prof.play_seconds[0] <= prof.play_seconds[1]:
        raise ValueError("play_seconds must be a positive increasing pair")
    if not prof.play_seconds[1] < prof.break_seconds[0] <= prof.break_seconds[1]:
        raise ValueError("break_seconds must exceed play_seconds")

    rng = np.random.default_rng(seed)
    pop = _zipf_weights(n_songs, zipf_exponent)
    ranks = np.arange(n_songs)
    genre_of = ranks % prof.n_genres
    tail = ranks >= n_songs // 2 if n_songs > 1 else np.ones(1, dtype=bool)

    gray = _draw_gray(rng, n_users, gray_sheep_fraction)

    user_ids = [f"u{i:0{len(str(n_users))}d}" for i in range(n_users)]
    width = len(str(n_songs))
    users, songs, stamps = [], [], []
    for u in range(n_users):
        genre = rng.integers(prof.n_genres)
        in_genre = genre_of == genre
        if not in_genre.any():
            in_genre = np.ones(n_songs, dtype=bool)
        w = np.where(in_genre, pop, 0.0)
        if gray[u] and tail.any():
            tail_w = np.where(tail, w, 0.0)
            if tail_w.sum() == 0:
                tail_w = np.where(tail, pop, 0.0)
            head_w = w - np.where(tail, w, 0.0)
            parts = [tail_w / tail_w.sum() * prof.gray_tail_bias]
            parts.append(head_w / head_w.sum() * (1 - prof.gray_tail_bias) if head_w.sum() > 0
                         else tail_w / tail_w.sum() * (1 - prof.gray_tail_bias))
            discover = parts[0] + parts[1]
        else:
            discover = w / w.sum()
        n_fav = min(prof.n_favorites, int(np.count_nonzero(discover)))
        favorites = rng.choice(n_songs, size=n_fav, replace=False, p=discover)
        fav_p = _zipf_weights(n_fav, 1.0)

        n_sessions = 1 + rng.poisson(prof.mean_sessions - 1)
        t = prof.start_time + int(rng.integers(0, 30 * 86400))
        for _ in range(n_sessions):
            length = 1 + rng.poisson(prof.mean_length - 1)
            from_fav = rng.random(length) < np.concatenate(
                ([prof.start_from_favorites], np.full(length - 1, prof.continue_from_favorites))
            )
            fav_draws = favorites[rng.choice(n_fav, size=length, p=fav_p)]
            disc_draws = rng.choice(n_songs, size=length, p=discover)
            picks = np.where(from_fav, fav_draws, disc_draws)
            gaps = rng.integers(prof.play_seconds[0], prof.play_seconds[1] + 1, size=length)
            gaps[0] = 0
            times = t + np.cumsum(gaps)
            users.extend([user_ids[u]] * length)
            songs.extend(f"s{k:0{width}d}" for k in picks.tolist())
            stamps.extend(times.tolist())
            t = int(times[-1]) + int(rng.integers(prof.break_seconds[0], prof.break_seconds[1] + 1))
    return _build_corpus(users, songs, stamps)


def rank_frequency_slope(corpus: Corpus) -> float:
    """Least-squares slope of log(play count) against log(rank) over played songs."""
    counts = np.bincount(corpus.songs, minlength=corpus.n_songs)
    counts = np.sort(counts[counts > 0])[::-1]
    if counts.size < 2:
        raise ValueError("need at least two played songs to fit a slope")
    x = np.log(np.arange(1, counts.size + 1))
    y = np.log(counts)
    return float(np.polyfit(x, y, 1)[0])
