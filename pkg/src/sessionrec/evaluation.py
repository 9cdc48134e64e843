"""K-fold cross-validation of rating predictors and Table-1 style reports.

Folds hold out (user, song) rating entries. For every fold the whole rating
pipeline (sessions, frequencies, ratings and UPC profiles) is recomputed from
the play events of the training pairs only, so a held-out pair never
influences the model that predicts it. Ground truth for a held-out pair is its
rating computed on the full corpus.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .characterize import DEFAULT_BINS, build_play_matrix, characterize
from .knn import SimilarityConfig, UserKNN
from .mf import MFHyper, mf_train
from .playlog import Corpus
from .ratings import RATING_MAX, RatingMatrix, compute_playcount_ratings, session_ratings
from .sessions import DEFAULT_GAP_SECONDS, session_counts

log = logging.getLogger(__name__)

METHODS = ("knn_upc", "knn_cosine", "knn_pearson", "mf", "bmf")
NMAE_RANGE = RATING_MAX
REPORT_COLUMNS = ("method", "variant", "alpha", "rmse", "rmse_sd", "mae", "mae_sd", "nmae", "nmae_sd")

# Published error rates, (rmse, mae, nmae) means, keyed by (method, variant).
TABLE1 = {
    ("knn_upc", "playcount"): (0.701, 0.539, 0.135),
    ("knn_upc", "session_0.5"): (0.693, 0.497, 0.124),
    ("knn_upc", "session_0.7"): (0.691, 0.457, 0.114),
    ("knn_upc", "session_0.9"): (0.707, 0.533, 0.133),
    ("knn_cosine", "playcount"): (0.771, 0.583, 0.146),
    ("knn_cosine", "session_0.5"): (0.760, 0.535, 0.134),
    ("knn_cosine", "session_0.7"): (0.743, 0.484, 0.121),
    ("knn_cosine", "session_0.9"): (0.778, 0.576, 0.144),
    ("knn_pearson", "playcount"): (0.756, 0.572, 0.143),
    ("knn_pearson", "session_0.5"): (0.753, 0.528, 0.132),
    ("knn_pearson", "session_0.7"): (0.737, 0.479, 0.120),
    ("knn_pearson", "session_0.9"): (0.768, 0.567, 0.142),
    ("mf", "playcount"): (0.955, 0.787, 0.197),
    ("mf", "session_0.5"): (0.784, 0.583, 0.146),
    ("mf", "session_0.7"): (0.723, 0.492, 0.123),
    ("mf", "session_0.9"): (0.854, 0.671, 0.168),
    ("bmf", "playcount"): (0.859, 0.704, 0.176),
    ("bmf", "session_0.5"): (0.742, 0.564, 0.141),
    ("bmf", "session_0.7"): (0.724, 0.533, 0.133),
    ("bmf", "session_0.9"): (0.787, 0.619, 0.155),
}


@dataclass(frozen=True)
class RatingVariant:
    mode: str  # "playcount" or "session"
    alpha: float | None = None

    def __post_init__(self):
        if self.mode == "session":
            if self.alpha is None or not 0.0 <= self.alpha <= 1.0:
                raise ValueError("session variants need alpha in [0, 1]")
        elif self.mode == "playcount":
            if self.alpha is not None:
                raise ValueError("playcount variants take no alpha")
        else:
            raise ValueError(f"unknown rating mode {self.mode!r}")

    @property
    def name(self) -> str:
        return "playcount" if self.mode == "playcount" else f"session_{self.alpha:g}"

    @classmethod
    def parse(cls, text: str) -> "RatingVariant":
        if text == "playcount":
            return cls("playcount")
        if text.startswith("session_"):
            return cls("session", float(text.split("_", 1)[1]))
        raise ValueError(f"cannot parse rating variant {text!r}")

    def rate(self, corpus: Corpus, gap: float = DEFAULT_GAP_SECONDS, tie_rule: str = "distinct") -> RatingMatrix:
        if self.mode == "playcount":
            return compute_playcount_ratings(build_play_matrix(corpus), tie_rule)
        return session_ratings(session_counts(corpus, gap), self.alpha, tie_rule)


DEFAULT_VARIANTS = (
    RatingVariant("playcount"),
    RatingVariant("session", 0.5),
    RatingVariant("session", 0.7),
    RatingVariant("session", 0.9),
)


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    users: np.ndarray
    songs: np.ndarray
    fold: np.ndarray  # fold index per (users[t], songs[t]) pair

    def test_mask(self, f: int) -> np.ndarray:
        return self.fold == f

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold, minlength=self.k)


@dataclass(frozen=True)
class MetricSet:
    rmse: float
    mae: float
    nmae: float
    rmse_sd: float = 0.0
    mae_sd: float = 0.0
    nmae_sd: float = 0.0


def stage_seed(seed: int, stage: str) -> int:
    """Derive a per-stage seed: first 8 bytes of sha256("<seed>:<stage>")."""
    digest = hashlib.sha256(f"{seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF


def kfold_split(ratings: RatingMatrix, k: int = 10, seed: int = 0) -> FoldPlan:
    """Deal rated pairs to folds round-robin, user by user, from a seeded shuffle.

    The dealer position carries over between users, which keeps fold sizes
    within one of each other while spreading every user's pairs across folds.
    """
    if k < 2:
        raise ValueError("need at least 2 folds")
    users, songs, _ = ratings.triples()
    if users.size == 0:
        raise ValueError("no rated pairs to split")
    rng = np.random.default_rng(seed)
    fold = np.empty(users.size, dtype=np.int64)
    bounds = np.searchsorted(users, np.arange(ratings.shape[0] + 1))
    pos = 0
    for i in range(ratings.shape[0]):
        lo, hi = bounds[i], bounds[i + 1]
        if hi == lo:
            continue
        perm = rng.permutation(hi - lo)
        fold[lo + perm] = (pos + np.arange(hi - lo)) % k
        pos = (pos + hi - lo) % k
    return FoldPlan(k, seed, users, songs, fold)


def error_metrics(pred, truth) -> MetricSet:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.size == 0:
        raise ValueError("empty test fold")
    err = pred - truth
    mae = float(np.mean(np.abs(err)))
    return MetricSet(float(np.sqrt(np.mean(err * err))), mae, mae / NMAE_RANGE)


def aggregate(metrics: list[MetricSet]) -> MetricSet:
    """Unweighted mean and sample standard deviation over folds."""
    arr = np.array([[m.rmse, m.mae] for m in metrics])
    mean = arr.mean(axis=0)
    sd = arr.std(axis=0, ddof=1) if len(metrics) > 1 else np.zeros(2)
    return MetricSet(mean[0], mean[1], mean[1] / NMAE_RANGE, sd[0], sd[1], sd[1] / NMAE_RANGE)


@dataclass(frozen=True)
class MethodConfig:
    K: int = 5
    lam: float = 0.5
    min_overlap: int = 2
    cosine_scope: str = "full"
    bins: int = DEFAULT_BINS
    mf: MFHyper = field(default_factory=MFHyper)


class Predictor:
    """Fitted predictor for one method on one training fold."""

    def __init__(self, method: str, cfg: MethodConfig, seed: int = 0):
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")
        self.method = method
        self.cfg = cfg
        self.seed = seed

    def fit(self, train: RatingMatrix, train_corpus: Corpus | None = None, profiles=None) -> "Predictor":
        c = self.cfg
        if self.method in ("mf", "bmf"):
            hyper = MFHyper(c.mf.factors, c.mf.lr, c.mf.reg, c.mf.epochs, self.seed, c.mf.init_scale)
            self._mf = mf_train(train, hyper, biased=self.method == "bmf")
            return self
        metric = {"knn_upc": "weighted_cosine_upc", "knn_cosine": "cosine", "knn_pearson": "pearson"}[self.method]
        if metric == "weighted_cosine_upc" and profiles is None:
            if train_corpus is None:
                raise ValueError("knn_upc needs profiles or the training corpus")
            profiles = characterize(train_corpus, c.bins)
        sim = SimilarityConfig(metric, c.K, c.lam, c.min_overlap, c.cosine_scope)
        self._knn = UserKNN(sim).fit(train, profiles)
        return self

    def predict(self, users, songs) -> np.ndarray:
        if self.method in ("mf", "bmf"):
            return self._mf.predict_many(users, songs)
        return self._knn.predict_many(users, songs)[0]


def evaluate_fold(predictor: Predictor, test) -> MetricSet:
    """Error metrics of a fitted predictor over (users, songs, truth) test arrays."""
    users, songs, truth = (np.asarray(x) for x in test)
    if truth.size == 0:
        raise ValueError("empty test fold")
    return error_metrics(predictor.predict(users, songs), truth)


@dataclass
class ExperimentReport:
    rows: dict = field(default_factory=dict)  # (method, variant name) -> MetricSet
    fold_metrics: dict = field(default_factory=dict)  # (method, variant name) -> list[MetricSet]
    variants: dict = field(default_factory=dict)  # variant name -> RatingVariant
    predictions: dict = field(default_factory=dict)  # (method, variant, fold) -> array, if kept
    plan: FoldPlan | None = None

    def cell(self, method: str, variant: str) -> MetricSet:
        return self.rows[(method, variant)]

    def iter_rows(self):
        for (method, vname), ms in self.rows.items():
            yield method, self.variants[vname], ms

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for method, var, ms in self.iter_rows():
            w.writerow([
                method, var.name, "" if var.alpha is None else f"{var.alpha:g}",
                f"{ms.rmse:.6f}", f"{ms.rmse_sd:.6f}", f"{ms.mae:.6f}", f"{ms.mae_sd:.6f}",
                f"{ms.nmae:.6f}", f"{ms.nmae_sd:.6f}",
            ])
        return buf.getvalue()

    def to_long_tsv(self) -> str:
        """One line per (method, variant, metric): input for static plots."""
        lines = ["method\tvariant\tmetric\tmean\tsd"]
        for method, var, ms in self.iter_rows():
            for metric in ("rmse", "mae", "nmae"):
                lines.append(f"{method}\t{var.name}\t{metric}\t{getattr(ms, metric):.6f}"
                             f"\t{getattr(ms, metric + '_sd'):.6f}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        """Aligned table grouped by method, one line per rating variant."""
        out = []
        methods = list(dict.fromkeys(m for m, _ in self.rows))
        for method in methods:
            out.append(method)
            out.append(f"  {'rating':<14}{'RMSE':>18}{'MAE':>18}{'NMAE':>18}")
            for (m, vname), ms in self.rows.items():
                if m != method:
                    continue
                out.append(
                    f"  {vname:<14}{ms.rmse:>10.3f}±{ms.rmse_sd:<7.3f}{ms.mae:>10.3f}±{ms.mae_sd:<7.3f}"
                    f"{ms.nmae:>10.3f}±{ms.nmae_sd:<7.3f}"
                )
        out.append("(± is the sample standard deviation across folds)")
        return "\n".join(out) + "\n"


def _pair_fold_lookup(plan: FoldPlan, shape) -> np.ndarray:
    lookup = np.full(shape, -1, dtype=np.int64)
    lookup[plan.users, plan.songs] = plan.fold
    return lookup


def run_experiment(
    corpus: Corpus,
    methods=METHODS,
    variants=DEFAULT_VARIANTS,
    k: int = 10,
    seed: int = 0,
    gap: float = DEFAULT_GAP_SECONDS,
    cfg: MethodConfig | None = None,
    folds=None,
    tie_rule: str = "distinct",
    keep_predictions: bool = False,
) -> ExperimentReport:
    """Cross-validate every (method, variant) cell on the same fold plan.

    ``folds`` optionally restricts evaluation to a subset of fold indices.
    With ``keep_predictions`` the test-fold predictions are stored on the
    report, aligned with ``report.plan.test_mask(fold)``.
    """
    cfg = cfg or MethodConfig()
    methods = tuple(methods)
    variants = tuple(variants)
    if not methods or not variants:
        raise ValueError("need at least one method and one rating variant")
    if corpus.n_events == 0:
        raise ValueError("cannot evaluate an empty corpus")
    full = {v.name: v.rate(corpus, gap, tie_rule) for v in variants}
    # every variant rates exactly the played pairs, so one plan serves all
    plan = kfold_split(compute_playcount_ratings(build_play_matrix(corpus)), k, stage_seed(seed, "folds"))
    lookup = _pair_fold_lookup(plan, (corpus.n_users, corpus.n_songs))
    event_fold = lookup[corpus.users, corpus.songs]
    dense_truth = {name: rm.ratings.toarray() for name, rm in full.items()}

    report = ExperimentReport(variants={v.name: v for v in variants}, plan=plan)
    per_cell = {(m, v.name): [] for m in methods for v in variants}
    for f in (range(k) if folds is None else folds):
        test = plan.test_mask(f)
        if not test.any():
            continue
        tu, ts = plan.users[test], plan.songs[test]
        train_corpus = corpus.restrict(event_fold != f)
        profiles = characterize(train_corpus, cfg.bins) if "knn_upc" in methods else None
        for v in variants:
            train = v.rate(train_corpus, gap, tie_rule)
            truth = dense_truth[v.name][tu, ts]
            for method in methods:
                pred = Predictor(method, cfg, stage_seed(seed, f"{method}:{v.name}:{f}"))
                pred.fit(train, train_corpus, profiles)
                values = pred.predict(tu, ts)
                if keep_predictions:
                    report.predictions[(method, v.name, f)] = values
                per_cell[(method, v.name)].append(error_metrics(values, truth))
        log.info("fold %d/%d done", f + 1, k)
    for key, ms in per_cell.items():
        report.rows[key] = aggregate(ms)
        report.fold_metrics[key] = ms
    return report


def nmae_consistent(ms: MetricSet, tol: float = 1e-9) -> bool:
    return abs(ms.nmae - ms.mae / NMAE_RANGE) < tol and math.isfinite(ms.rmse)
