"""Glue between package objects and the dict-based oracles."""

from sessionrec import playlog

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, passed: bool, detail: str) -> bool:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def rating_dicts(ratings, corpus):
    """{user_id: {song_id: rating}} for every user in the corpus."""
    out = {u: {} for u in corpus.user_ids}
    rows, cols, vals = ratings.triples()
    for i, j, v in zip(rows.tolist(), cols.tolist(), vals.tolist()):
        out[corpus.user_ids[i]][corpus.song_ids[j]] = v
    return out


def max_abs_diff(a: dict, b: dict) -> float:
    """Largest |a - b| over nested dicts; inf when the key sets differ."""
    worst = 0.0
    if set(a) != set(b):
        return float("inf")
    for k in a:
        if isinstance(a[k], dict):
            worst = max(worst, max_abs_diff(a[k], b[k]))
        else:
            worst = max(worst, abs(a[k] - b[k]))
    return worst


def corpus(events):
    return playlog.corpus_from_events(events)
