"""Sweep the attribute blend weight and bin count of UPC-weighted K-NN.

For each (lambda, bins) pair reports NMAE of the weighted model next to
plain cosine K-NN on the same folds, plus the share of test predictions
that fell back to the user mean because no neighbour rated the song.

    python scripts/upc_sweep.py --lams 0.3 0.5 0.7 0.9 --bins 10 100 300
"""

import argparse

import numpy as np

from sessionrec.characterize import build_play_matrix, characterize
from sessionrec.evaluation import RatingVariant, error_metrics, kfold_split, stage_seed
from sessionrec.knn import SimilarityConfig, UserKNN
from sessionrec.playlog import synthesize_playlog
from sessionrec.ratings import compute_playcount_ratings


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--users", type=int, default=200)
    ap.add_argument("--songs", type=int, default=2000)
    ap.add_argument("--corpus-seed", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--folds", type=int, default=10)
    ap.add_argument("--variant", default="session_0.7")
    ap.add_argument("--lams", type=float, nargs="+", default=[0.3, 0.5, 0.7, 0.9])
    ap.add_argument("--bins", type=int, nargs="+", default=[10, 100, 300])
    args = ap.parse_args()

    corpus = synthesize_playlog(args.users, args.songs, 1.0, None, 0.2, args.corpus_seed)
    variant = RatingVariant.parse(args.variant)
    truth_all = variant.rate(corpus).ratings.toarray()
    plan = kfold_split(compute_playcount_ratings(build_play_matrix(corpus)), args.folds,
                       stage_seed(args.seed, "folds"))
    lookup = np.full((corpus.n_users, corpus.n_songs), -1)
    lookup[plan.users, plan.songs] = plan.fold
    event_fold = lookup[corpus.users, corpus.songs]

    rows = {}
    for f in range(args.folds):
        test = plan.test_mask(f)
        tu, ts = plan.users[test], plan.songs[test]
        truth = truth_all[tu, ts]
        train_corpus = corpus.restrict(event_fold != f)
        train = variant.rate(train_corpus)
        pred, fb = UserKNN(SimilarityConfig("cosine")).fit(train).predict_many(tu, ts)
        rows.setdefault(("cosine", "-", "-"), []).append((error_metrics(pred, truth).nmae, fb.mean()))
        for B in args.bins:
            prof = characterize(train_corpus, B)
            for lam in args.lams:
                knn = UserKNN(SimilarityConfig("weighted_cosine_upc", lam=lam)).fit(train, prof)
                pred, fb = knn.predict_many(tu, ts)
                rows.setdefault(("upc", lam, B), []).append((error_metrics(pred, truth).nmae, fb.mean()))

    print(f"{'model':<8}{'lambda':>8}{'bins':>6}{'NMAE':>10}{'fallback':>10}")
    for (model, lam, B), vals in rows.items():
        v = np.array(vals)
        print(f"{model:<8}{lam!s:>8}{B!s:>6}{v[:, 0].mean():>10.4f}{v[:, 1].mean():>10.3f}")


if __name__ == "__main__":
    main()
