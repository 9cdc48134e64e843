"""End-to-end pipeline: ingest, sessionize, rate, characterize, evaluate.

Intermediate artifacts are cached in the output directory. Each stage records
a key (a sha256 over the input file content and every setting the stage
depends on) in ``manifest.json``; a stage is recomputed whenever its key or
one of its files is missing or different.

Randomness: the top-level ``seed`` is the only source. Stages derive their own
seeds with :func:`sessionrec.evaluation.stage_seed` (sha256 of "seed:stage").
"""

from __future__ import annotations

import dataclasses
import difflib
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .characterize import UserProfile, characterize
from .evaluation import METHODS, ExperimentReport, MethodConfig, RatingVariant, run_experiment
from .knn import SimilarityConfig, UserKNN
from .mf import MFHyper
from .playlog import FORMATS, Corpus, load_corpus, parse_playlog, save_corpus
from .ratings import TIE_RULES, RatingMatrix
from .sessions import session_counts, session_summary

log = logging.getLogger(__name__)

OUTPUT_ENV = "SESSIONREC_OUT"
FORMAT_ALIASES = {"lastfm360k": "lastfm360k_tsv", "simple": "simple_tsv"}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class UnknownUserError(KeyError):
    def __init__(self, user_id: str, suggestions: list[str]):
        super().__init__(user_id)
        self.user_id = user_id
        self.suggestions = suggestions

    def __str__(self) -> str:
        hint = f"; nearest ids: {', '.join(self.suggestions)}" if self.suggestions else ""
        return f"unknown user id {self.user_id!r}{hint}"


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_ENV, "sessionrec_out")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _strs(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


@dataclass(frozen=True)
class PipelineConfig:
    input: str = ""
    format: str = "simple_tsv"
    gap_minutes: float = 15.0
    alphas: tuple[float, ...] = (0.5, 0.7, 0.9)
    rating_modes: tuple[str, ...] = ("playcount", "session")
    tie_rule: str = "distinct"
    bins: int = 300
    k_neighbors: int = 5
    lam: float = 0.5
    min_overlap: int = 2
    cosine_scope: str = "full"
    methods: tuple[str, ...] = METHODS
    mf_factors: int = 10
    mf_lr: float = 0.005
    mf_reg: float = 0.02
    mf_epochs: int = 50
    folds: int = 10
    seed: int = 0
    output_dir: str = field(default_factory=default_output_dir)

    def __post_init__(self):
        fmt = FORMAT_ALIASES.get(self.format, self.format)
        object.__setattr__(self, "format", fmt)
        if fmt not in FORMATS:
            raise ValueError(f"unknown input format {self.format!r}")
        for mode in self.rating_modes:
            if mode not in ("playcount", "session"):
                raise ValueError(f"unknown rating mode {mode!r}")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")
        if self.tie_rule not in TIE_RULES:
            raise ValueError(f"unknown tie rule {self.tie_rule!r}")
        if self.gap_minutes < 0 or self.bins < 1 or self.k_neighbors < 1 or self.folds < 2:
            raise ValueError("invalid gap_minutes/bins/k_neighbors/folds")

    @property
    def gap_seconds(self) -> float:
        return self.gap_minutes * 60.0

    @property
    def variants(self) -> tuple[RatingVariant, ...]:
        out = []
        if "playcount" in self.rating_modes:
            out.append(RatingVariant("playcount"))
        if "session" in self.rating_modes:
            out.extend(RatingVariant("session", a) for a in self.alphas)
        return tuple(out)

    @property
    def method_config(self) -> MethodConfig:
        return MethodConfig(
            self.k_neighbors, self.lam, self.min_overlap, self.cosine_scope, self.bins,
            MFHyper(self.mf_factors, self.mf_lr, self.mf_reg, self.mf_epochs),
        )

    # -- flat key = value text form -------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, **overrides) -> "PipelineConfig":
        raw = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {n}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            raw[key] = val
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(raw)

    @classmethod
    def from_mapping(cls, raw: dict) -> "PipelineConfig":
        kinds = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, val in raw.items():
            if key not in kinds:
                raise ValueError(f"unknown config key {key!r}")
            if not isinstance(val, str):
                kwargs[key] = tuple(val) if isinstance(val, list) else val
                continue
            default = kinds[key].default
            if key == "alphas":
                kwargs[key] = _floats(val)
            elif key in ("rating_modes", "methods"):
                kwargs[key] = _strs(val)
            elif isinstance(default, bool):
                kwargs[key] = val.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                kwargs[key] = int(val)
            elif isinstance(default, float):
                kwargs[key] = float(val)
            else:
                kwargs[key] = val
        return cls(**kwargs)

    @classmethod
    def load(cls, path, **overrides) -> "PipelineConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), **overrides)


def _sha(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(str(p).encode())
        h.update(b"\0")
    return h.hexdigest()


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class ArtifactStore:
    """Output directory plus a manifest of stage keys."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.root / "manifest.json"
        self.manifest = json.loads(self.manifest_path.read_text()) if self.manifest_path.exists() else {}

    def path(self, name: str) -> Path:
        return self.root / name

    def fresh(self, stage: str, key: str, files) -> bool:
        entry = self.manifest.get(stage)
        return bool(entry and entry.get("key") == key and all(self.path(f).exists() for f in files))

    def record(self, stage: str, key: str, files) -> None:
        self.manifest[stage] = {"key": key, "files": list(files)}
        tmp = self.manifest_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.manifest, indent=2, sort_keys=True))
        tmp.replace(self.manifest_path)


@dataclass
class PipelineResult:
    report: ExperimentReport | None
    corpus: Corpus
    ratings: dict
    profiles: list
    cache_hits: dict
    output_dir: Path


def _write_ratings_tsv(path, ratings: RatingMatrix, corpus: Corpus) -> None:
    rows, cols, vals = ratings.triples()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("user_id\tsong_id\trating\n")
        for i, j, v in zip(rows.tolist(), cols.tolist(), vals.tolist()):
            fh.write(f"{corpus.user_ids[i]}\t{corpus.song_ids[j]}\t{v!r}\n")


def write_upc_tsv(path, profiles, corpus: Corpus) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("user_id\tupc\tbin\n")
        for uid, p in zip(corpus.user_ids, profiles):
            if p is not None:
                fh.write(f"{uid}\t{p.upc!r}\t{p.bin}\n")


def _read_upc_tsv(path, corpus: Corpus, B: int) -> list:
    profiles: list = [None] * corpus.n_users
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            uid, upc, b = line.rstrip("\n").split("\t")
            profiles[corpus.user_index[uid]] = UserProfile(float(upc), int(b), B)
    return profiles


def _stage(name):
    def wrap(fn):
        def run(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, exc) from exc
        return run
    return wrap


def prepare(config: PipelineConfig) -> PipelineResult:
    """Run (or load from cache) every stage before evaluation."""
    store = ArtifactStore(config.output_dir)
    hits = {}

    @_stage("ingest")
    def ingest():
        if not config.input:
            raise ValueError("no input path configured")
        key = _sha("ingest", _file_digest(config.input), config.format)
        files = ["corpus.npz"]
        if store.fresh("ingest", key, files):
            hits["ingest"] = True
            return load_corpus(store.path("corpus.npz")), key
        hits["ingest"] = False
        corpus = parse_playlog(config.input, config.format)
        save_corpus(corpus, store.path("corpus.npz"))
        store.record("ingest", key, files)
        return corpus, key

    corpus, corpus_key = ingest()

    @_stage("sessionize")
    def sessionize_stage():
        key = _sha("sessionize", corpus_key, repr(config.gap_seconds))
        files = ["session_counts.npz", "sessions.csv"]
        if store.fresh("sessionize", key, files):
            hits["sessionize"] = True
            with np.load(store.path("session_counts.npz")) as d:
                S = sp.csr_matrix((d["S_data"], d["S_indices"], d["S_indptr"]), shape=tuple(d["shape"]))
                NS = sp.csr_matrix((d["NS_data"], d["NS_indices"], d["NS_indptr"]), shape=tuple(d["shape"]))
            return key, (S, NS)
        hits["sessionize"] = False
        counts = session_counts(corpus, config.gap_seconds)
        np.savez(
            store.path("session_counts.npz"),
            shape=np.array(counts.shape),
            S_data=counts.S.data, S_indices=counts.S.indices, S_indptr=counts.S.indptr,
            NS_data=counts.NS.data, NS_indices=counts.NS.indices, NS_indptr=counts.NS.indptr,
        )
        with open(store.path("sessions.csv"), "w", encoding="utf-8") as fh:
            fh.write("user_id,n_sessions,mean_length\n")
            for uid, ns, ml in session_summary(corpus, config.gap_seconds):
                fh.write(f"{uid},{ns},{ml:.6f}\n")
        store.record("sessionize", key, files)
        return key, (counts.S, counts.NS)

    session_key, _ = sessionize_stage()

    @_stage("rate")
    def rate_stage():
        out = {}
        all_hit = True
        for v in config.variants:
            key = _sha("rate", session_key, v.name, config.tie_rule)
            files = [f"ratings_{v.name}.npz", f"ratings_{v.name}.tsv"]
            stage = f"rate:{v.name}"
            if store.fresh(stage, key, files):
                out[v.name] = RatingMatrix(sp.load_npz(store.path(files[0])).tocsr())
                continue
            all_hit = False
            rm = v.rate(corpus, config.gap_seconds, config.tie_rule)
            sp.save_npz(store.path(files[0]), rm.ratings)
            _write_ratings_tsv(store.path(files[1]), rm, corpus)
            store.record(stage, key, files)
            out[v.name] = rm
        hits["rate"] = all_hit
        return out

    ratings = rate_stage()

    @_stage("characterize")
    def characterize_stage():
        key = _sha("characterize", corpus_key, config.bins)
        files = ["upc.tsv"]
        if store.fresh("characterize", key, files):
            hits["characterize"] = True
            return _read_upc_tsv(store.path("upc.tsv"), corpus, config.bins)
        hits["characterize"] = False
        profiles = characterize(corpus, config.bins)
        write_upc_tsv(store.path("upc.tsv"), profiles, corpus)
        store.record("characterize", key, files)
        return profiles

    profiles = characterize_stage()
    store.path("config.txt").write_text(config.to_text(), encoding="utf-8")
    return PipelineResult(None, corpus, ratings, profiles, hits, store.root)


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    result = prepare(config)

    @_stage("evaluate")
    def evaluate():
        return run_experiment(
            result.corpus, config.methods, config.variants, config.folds, config.seed,
            config.gap_seconds, config.method_config, tie_rule=config.tie_rule,
        )

    report = evaluate()
    root = result.output_dir
    (root / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (root / "report.txt").write_text(report.to_text(), encoding="utf-8")
    (root / "report_long.tsv").write_text(report.to_long_tsv(), encoding="utf-8")
    result.report = report
    return result


def _resolve_user(corpus: Corpus, user_id: str) -> int:
    if user_id not in corpus.user_index:
        raise UnknownUserError(user_id, difflib.get_close_matches(user_id, corpus.user_ids, n=5, cutoff=0.0))
    return corpus.user_index[user_id]


def explain_user(config: PipelineConfig, user_id: str, top: int = 10, variant: str | None = None) -> str:
    """Human-readable trace of one user through every stage."""
    res = prepare(config)
    corpus = res.corpus
    i = _resolve_user(corpus, user_id)
    names = list(res.ratings)
    if variant is None:
        variant = "session_0.7" if "session_0.7" in names else next(
            (n for n in names if n.startswith("session")), names[0])
    rm = res.ratings[variant]

    summary = {uid: (ns, ml) for uid, ns, ml in session_summary(corpus, config.gap_seconds)}
    n_sessions, mean_len = summary[user_id]
    lines = [f"user {user_id} (index {i})"]
    lines.append(f"  plays: {int((corpus.users == i).sum())}  sessions: {n_sessions}  mean session length: {mean_len:.2f}")
    cols, vals = rm.user_row(i)
    order = np.lexsort((cols, -vals))[:top]
    lines.append(f"  top rated songs ({variant}):")
    for o in order:
        lines.append(f"    {corpus.song_ids[cols[o]]}\t{vals[o]:.6f}")
    p = res.profiles[i]
    ups = np.array([q.upc for q in res.profiles if q is not None])
    if p is not None:
        lines.append(f"  UPC: {p.upc:.6f}  bin: {p.bin}/{p.B}  corpus median UPC: {np.median(ups):.6f}")
    sim = SimilarityConfig("weighted_cosine_upc", config.k_neighbors, config.lam,
                           config.min_overlap, config.cosine_scope)
    knn = UserKNN(sim).fit(rm, res.profiles)
    lines.append(f"  top-{config.k_neighbors} neighbours (weighted cosine, lambda={config.lam:g}):")
    for j, s in knn.neighbors(i):
        lines.append(f"    {corpus.user_ids[j]}\t{s:.6f}")
    return "\n".join(lines) + "\n"
