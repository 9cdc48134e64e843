import random

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import assume, given, strategies as st

from sessionrec.playlog import corpus_from_events
from sessionrec.ratings import (
    RatingMatrix, compute_frequency, compute_playcount_ratings, compute_ratings,
    percentile_ratings, playcount_frequency, session_ratings,
)
from sessionrec.sessions import SessionCounts, session_counts

import oracles
from helpers import max_abs_diff, rating_dicts


def counts(S, NS):
    return SessionCounts(sp.csr_matrix(np.atleast_2d(S)), sp.csr_matrix(np.atleast_2d(NS)))


# sessions [A,B], [A,C], [B]
FIXTURE = counts([2, 1, 0], [0, 1, 1])


def test_frequency_fixture():
    f = compute_frequency(FIXTURE, 0.7).freq.toarray()[0]
    np.testing.assert_allclose(f, [0.7 * 2 / 3, 0.7 / 3 + 0.3 / 2, 0.3 / 2], atol=1e-15)
    assert f.round(5).tolist() == [0.46667, 0.38333, 0.15]
    assert abs(f.sum() - 1) < 1e-12


def test_ratings_fixture():
    r = session_ratings(FIXTURE, 0.7).ratings.toarray()[0]
    assert r.round(5).tolist() == [4.0, 2.13333, 0.6]


def test_alpha_one_uses_start_shares_only():
    f = compute_frequency(FIXTURE, 1.0).freq.toarray()[0]
    np.testing.assert_allclose(f, [2 / 3, 1 / 3, 0.0])
    # a zero frequency carries no rating
    assert session_ratings(FIXTURE, 1.0).nnz == 2


def test_no_non_start_plays_renormalizes():
    f = compute_frequency(counts([3, 1], [0, 0]), 0.7).freq.toarray()[0]
    np.testing.assert_allclose(f, [0.75, 0.25])


def test_no_start_plays_handled():
    f = compute_frequency(counts([0, 0], [1, 3]), 0.7).freq.toarray()[0]
    np.testing.assert_allclose(f, [0.25, 0.75])


def test_user_without_plays_has_no_entries():
    c = counts([[1, 0], [0, 0]], [[1, 1], [0, 0]])
    r = session_ratings(c, 0.5)
    assert r.user_row(1)[0].size == 0


def test_alpha_out_of_range():
    with pytest.raises(ValueError):
        compute_frequency(FIXTURE, 1.5)


def test_single_song_rated_four():
    assert percentile_ratings(np.array([1.0])).tolist() == [4.0]


def test_equal_frequencies_share_top_rating():
    assert percentile_ratings(np.array([0.5, 0.5])).tolist() == [4.0, 4.0]


def test_tie_rule_mass_counts_each_song():
    r = percentile_ratings(np.array([0.4, 0.4, 0.2]), "mass")
    np.testing.assert_allclose(r, [4.0, 4.0, 4 * (1 - 0.8)])
    r = percentile_ratings(np.array([0.4, 0.4, 0.2]), "distinct")
    np.testing.assert_allclose(r, [4.0, 4.0, 4 * (1 - 0.4)])


def test_playcount_nine_one():
    r = compute_playcount_ratings(sp.csr_matrix([[9, 1]])).ratings.toarray()[0]
    np.testing.assert_allclose(r, [4.0, 0.4], atol=1e-12)


@pytest.mark.parametrize("q", [1, 2, 7])
def test_uniform_plays_all_four(q):
    r = compute_playcount_ratings(sp.csr_matrix(np.full((1, q), 3))).ratings.data
    assert (r == 4.0).all()


def test_playcount_rejects_negative():
    with pytest.raises(ValueError):
        playcount_frequency(np.array([[1, -1]]))


def test_rating_matrix_triples_and_get():
    rm = RatingMatrix.from_triples([1, 0], [0, 1], [2.0, 3.0], (2, 2))
    rows, cols, vals = rm.triples()
    assert rows.tolist() == [0, 1] and cols.tolist() == [1, 0] and vals.tolist() == [3.0, 2.0]
    assert rm.get(1, 0) == 2.0 and rm.get(0, 0) == 0.0


count_rows = st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=12)


@given(count_rows, st.floats(0.0, 1.0))
def test_invariants(row, alpha):
    s = np.array([a for a, _ in row])
    ns = np.array([b for _, b in row])
    assume(s.sum() + ns.sum() > 0)
    freq = compute_frequency(counts(s, ns), alpha)
    f = freq.freq.data
    assert abs(f.sum() - 1) < 1e-12
    r = compute_ratings(freq).ratings.data
    assert (r > 0).all() and (r <= 4).all()
    assert abs(r.max() - 4) < 1e-12
    # monotone in frequency, equal frequency gives equal rating
    order = np.argsort(-f, kind="stable")
    fs, rs = f[order], r[order]
    for k in range(len(fs) - 1):
        assert rs[k] >= rs[k + 1]
        if fs[k] == fs[k + 1]:
            assert rs[k] == rs[k + 1]


@given(count_rows, st.integers(2, 9), st.sampled_from([0.5, 0.7, 0.9]))
def test_scale_invariance(row, factor, alpha):
    s = np.array([a for a, _ in row])
    ns = np.array([b for _, b in row])
    assume(s.sum() + ns.sum() > 0)
    base = session_ratings(counts(s, ns), alpha).ratings.toarray()
    scaled = session_ratings(counts(s * factor, ns * factor), alpha).ratings.toarray()
    np.testing.assert_allclose(base, scaled, rtol=0, atol=1e-12)


def test_against_oracle_on_random_corpora():
    rng = random.Random(2024)
    for _ in range(30):
        ev = oracles.random_events(rng)
        c = corpus_from_events(ev)
        alpha = rng.choice([0.0, 0.3, 0.5, 0.7, 0.9, 1.0])
        got = rating_dicts(session_ratings(session_counts(c, 900), alpha), c)
        want = oracles.ratings(oracles.frequencies(*oracles.position_counts(oracles.sessions(ev, 900)), alpha))
        assert max_abs_diff(got, want) <= 1e-12


def test_playcount_against_oracle():
    from sessionrec.characterize import build_play_matrix
    rng = random.Random(7)
    for _ in range(30):
        ev = oracles.random_events(rng)
        c = corpus_from_events(ev)
        got = rating_dicts(compute_playcount_ratings(build_play_matrix(c)), c)
        want = oracles.ratings(oracles.play_frequencies(ev))
        assert max_abs_diff(got, want) <= 1e-12


def test_tiny_frequency_keeps_positive_rating():
    # alpha just below 1 leaves a song with a ~1e-16 share; 1 - prefix sum would cancel to 0
    freq = compute_frequency(counts(np.array([0, 0, 1]), np.array([1, 2, 0])), 0.9999999999999999)
    r = compute_ratings(freq).ratings.data
    assert (r > 0).all() and r.max() == 4.0
