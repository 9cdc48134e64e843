"""Command line entry point: ``sessionrec <verb> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .characterize import characterize
from .evaluation import METHODS, MethodConfig, RatingVariant, run_experiment
from .knn import METRICS, PredictionError, SimilarityConfig, UserKNN
from .mf import MFDivergenceError, MFHyper, mf_predict, mf_train, save_model
from .playlog import (
    FORMATS, PlaylogError, SessionProfile, load_corpus, parse_playlog, save_corpus,
    synthesize_playlog, write_simple_tsv,
)
from .sessions import session_counts, session_summary

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _write_corpus(corpus, out: str) -> None:
    if out.endswith((".tsv", ".txt")):
        write_simple_tsv(corpus, out)
    else:
        save_corpus(corpus, out)


def _variant(args) -> RatingVariant:
    if args.mode == "playcount":
        return RatingVariant("playcount")
    return RatingVariant("session", args.alpha)


def _add_rating_args(p):
    p.add_argument("--mode", choices=("session", "playcount"), default="session")
    p.add_argument("--alpha", type=float, default=0.7)
    p.add_argument("--gap-minutes", type=float, default=15.0)
    p.add_argument("--tie-rule", choices=("distinct", "mass"), default="distinct")


def _add_knn_args(p):
    p.add_argument("--metric", choices=METRICS, default="weighted_cosine_upc")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--bins", type=int, default=300)
    p.add_argument("--min-overlap", type=int, default=2)


def _user(corpus, uid):
    return pl._resolve_user(corpus, uid)


def _fit_knn(args, corpus):
    ratings = _variant(args).rate(corpus, args.gap_minutes * 60, args.tie_rule)
    profiles = characterize(corpus, args.bins) if args.metric == "weighted_cosine_upc" else None
    cfg = SimilarityConfig(args.metric, args.k, args.lam, args.min_overlap)
    return UserKNN(cfg).fit(ratings, profiles)


# -- verbs ------------------------------------------------------------------

def cmd_synth(args):
    prof = SessionProfile(mean_sessions=args.sessions, mean_length=args.length)
    corpus = synthesize_playlog(args.users, args.songs, args.zipf, prof, args.gray, args.seed)
    _write_corpus(corpus, args.out)
    print(f"wrote {corpus.n_events} events ({corpus.n_users} users, {corpus.n_songs} songs) to {args.out}")


def cmd_ingest(args):
    corpus = parse_playlog(args.input, pl.FORMAT_ALIASES.get(args.format, args.format),
                           args.max_malformed)
    _write_corpus(corpus, args.out)
    print(f"{corpus.n_events} events, {corpus.n_users} users, {corpus.n_songs} songs "
          f"({corpus.n_malformed} malformed rows skipped)")


def cmd_sessionize(args):
    corpus = load_corpus(args.corpus)
    gap = args.gap_minutes * 60
    rows = session_summary(corpus, gap)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        out.write("user_id,n_sessions,mean_length\n")
        for uid, ns, ml in rows:
            out.write(f"{uid},{ns},{ml:.6f}\n")
    finally:
        if args.out:
            out.close()
    if args.counts_out:
        c = session_counts(corpus, gap)
        np.savez(args.counts_out, S=c.S.toarray(), NS=c.NS.toarray())


def cmd_rate(args):
    corpus = load_corpus(args.corpus)
    rm = _variant(args).rate(corpus, args.gap_minutes * 60, args.tie_rule)
    out = Path(args.out) if args.out else None
    if out:
        pl._write_ratings_tsv(out, rm, corpus)
        print(f"wrote {rm.nnz} ratings to {out}")
    else:
        rows, cols, vals = rm.triples()
        print("user_id\tsong_id\trating")
        for i, j, v in zip(rows.tolist(), cols.tolist(), vals.tolist()):
            print(f"{corpus.user_ids[i]}\t{corpus.song_ids[j]}\t{v!r}")


def cmd_characterize(args):
    corpus = load_corpus(args.corpus)
    profiles = characterize(corpus, args.bins)
    if args.out:
        pl.write_upc_tsv(args.out, profiles, corpus)
    else:
        print("user_id\tupc\tbin")
        for uid, p in zip(corpus.user_ids, profiles):
            if p is not None:
                print(f"{uid}\t{p.upc!r}\t{p.bin}")


def cmd_predict(args):
    corpus = load_corpus(args.corpus)
    a = _user(corpus, args.user)
    knn = _fit_knn(args, corpus)
    for sid in args.song:
        if sid not in corpus.song_index:
            raise KeyError(f"unknown song id {sid!r}")
        p = knn.predict(a, corpus.song_index[sid])
        flag = " (fallback: user mean)" if p.fallback_used else ""
        print(f"{args.user}\t{sid}\t{p.value:.6f}{flag}")


def cmd_recommend(args):
    corpus = load_corpus(args.corpus)
    a = _user(corpus, args.user)
    knn = _fit_knn(args, corpus)
    for j, score in knn.recommend(a, args.top_n):
        print(f"{corpus.song_ids[j]}\t{score:.6f}")


def cmd_mf_train(args):
    corpus = load_corpus(args.corpus)
    rm = _variant(args).rate(corpus, args.gap_minutes * 60, args.tie_rule)
    hyper = MFHyper(args.factors, args.lr, args.reg, args.epochs, args.seed)
    model = mf_train(rm, hyper, biased=args.biased)
    save_model(model, args.out)
    print(f"final training RMSE {model.train_rmse[-1]:.6f}; model written to {args.out}")
    for w in model.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.user and args.song:
        a = _user(corpus, args.user)
        print(f"{args.user}\t{args.song}\t{mf_predict(model, a, corpus.song_index[args.song]):.6f}")


def cmd_evaluate(args):
    corpus = load_corpus(args.corpus)
    variants = [RatingVariant.parse(v) for v in args.variants.split(",")]
    methods = [m.strip() for m in args.methods.split(",")]
    cfg = MethodConfig(args.k, args.lam, 2, "full", args.bins,
                       MFHyper(args.factors, args.lr, args.reg, args.epochs))
    report = run_experiment(corpus, methods, variants, args.folds, args.seed,
                            args.gap_minutes * 60, cfg, tie_rule=args.tie_rule)
    out = Path(args.out_dir or pl.default_output_dir())
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "report_long.tsv").write_text(report.to_long_tsv(), encoding="utf-8")
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    print(report.to_text(), end="")


def _config_from_args(args) -> pl.PipelineConfig:
    overrides = {}
    for key in ("input", "format", "output_dir", "seed", "folds", "gap_minutes", "bins"):
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = str(v)
    if args.config:
        return pl.PipelineConfig.load(args.config, **overrides)
    return pl.PipelineConfig.from_mapping(overrides)


def cmd_run(args):
    cfg = _config_from_args(args)
    res = pl.run_pipeline(cfg)
    hits = ", ".join(f"{k}={'hit' if v else 'miss'}" for k, v in res.cache_hits.items())
    print(res.report.to_text(), end="")
    print(f"cache: {hits}; artifacts in {res.output_dir}")


def cmd_explain_user(args):
    cfg = _config_from_args(args)
    print(pl.explain_user(cfg, args.user, args.top), end="")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sessionrec", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic power-law play log")
    s.add_argument("--users", type=int, default=200)
    s.add_argument("--songs", type=int, default=2000)
    s.add_argument("--zipf", type=float, default=1.0)
    s.add_argument("--gray", type=float, default=0.2)
    s.add_argument("--sessions", type=float, default=SessionProfile.mean_sessions)
    s.add_argument("--length", type=float, default=SessionProfile.mean_length)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="parse a raw play log")
    s.add_argument("--input", required=True)
    s.add_argument("--format", choices=tuple(pl.FORMAT_ALIASES) + FORMATS, default="simple")
    s.add_argument("--max-malformed", type=float, default=0.10)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("sessionize", help="per-user session summary")
    s.add_argument("--corpus", required=True)
    s.add_argument("--gap-minutes", type=float, default=15.0)
    s.add_argument("--out")
    s.add_argument("--counts-out")
    s.set_defaults(func=cmd_sessionize)

    s = sub.add_parser("rate", help="export implicit ratings as TSV")
    s.add_argument("--corpus", required=True)
    _add_rating_args(s)
    s.add_argument("--out")
    s.set_defaults(func=cmd_rate)

    s = sub.add_parser("characterize", help="export UPC per user as TSV")
    s.add_argument("--corpus", required=True)
    s.add_argument("--bins", type=int, default=300)
    s.add_argument("--out")
    s.set_defaults(func=cmd_characterize)

    for name, fn, helptext in (("predict", cmd_predict, "predict ratings with user K-NN"),
                               ("recommend", cmd_recommend, "top-N unrated songs for a user")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--corpus", required=True)
        s.add_argument("--user", required=True)
        if name == "predict":
            s.add_argument("--song", required=True, action="append")
        else:
            s.add_argument("--top-n", type=int, default=10)
        _add_rating_args(s)
        _add_knn_args(s)
        s.set_defaults(func=fn)

    s = sub.add_parser("mf-train", help="train a (biased) matrix factorization model")
    s.add_argument("--corpus", required=True)
    _add_rating_args(s)
    s.add_argument("--factors", type=int, default=10)
    s.add_argument("--lr", type=float, default=0.005)
    s.add_argument("--reg", type=float, default=0.02)
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--biased", action="store_true")
    s.add_argument("--user")
    s.add_argument("--song")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mf_train)

    s = sub.add_parser("evaluate", help="k-fold cross-validation report")
    s.add_argument("--corpus", required=True)
    s.add_argument("--methods", default=",".join(METHODS))
    s.add_argument("--variants", default="playcount,session_0.5,session_0.7,session_0.9")
    s.add_argument("--folds", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--gap-minutes", type=float, default=15.0)
    s.add_argument("--tie-rule", choices=("distinct", "mass"), default="distinct")
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--lambda", dest="lam", type=float, default=0.5)
    s.add_argument("--bins", type=int, default=300)
    s.add_argument("--factors", type=int, default=10)
    s.add_argument("--lr", type=float, default=0.005)
    s.add_argument("--reg", type=float, default=0.02)
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_evaluate)

    for name, fn in (("run", cmd_run), ("explain-user", cmd_explain_user)):
        s = sub.add_parser(name, help="full pipeline" if name == "run" else "trace one user")
        s.add_argument("--config")
        s.add_argument("--input")
        s.add_argument("--format")
        s.add_argument("--output-dir")
        s.add_argument("--seed", type=int)
        s.add_argument("--folds", type=int)
        s.add_argument("--gap-minutes", type=float)
        s.add_argument("--bins", type=int)
        if name == "explain-user":
            s.add_argument("--user", required=True)
            s.add_argument("--top", type=int, default=10)
        s.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"sessionrec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (PlaylogError, pl.UnknownUserError, PredictionError, FileNotFoundError, pl.StageError,
            MFDivergenceError) as exc:
        print(f"sessionrec: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except KeyError as exc:
        print(f"sessionrec: data error: {exc.args[0]}", file=sys.stderr)
        return EXIT_DATA
    except (UsageError, ValueError) as exc:
        print(f"sessionrec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"sessionrec: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
