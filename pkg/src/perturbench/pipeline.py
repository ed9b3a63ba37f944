"""Evaluation sweep: embeddings x post-processing x tasks x seeds."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .data import Dataset, load_bundle, load_link_db
from .embedders import fit_pca, random_embed, transform_pca
from .postprocess import METHODS, postprocess
from .preprocess import SplitSpec, make_probe_split, make_recon_split, normalize_log1p

log = logging.getLogger(__name__)

TASKS = ("mixing", "probe", "consistency", "knn", "recall", "recon")
DEFAULT_SEEDS = (0, 1, 2, 3, 4)


@dataclass
class RunConfig:
    bundle: str
    embeddings: list
    tasks: list = field(default_factory=lambda: list(TASKS))
    post_processing: list = field(default_factory=lambda: list(METHODS))
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    probe_split: str | None = None
    recon_split: str | None = None
    dbs: list = field(default_factory=list)
    output_dir: str | None = None
    center_mode: str = "per_batch_control"
    # generated embeddings
    pca_dim: int = 256
    random_dim: int = 256
    # task parameters
    perplexity: float = 30.0
    knn_k: int | None = None
    probe_epochs: int = 250
    probe_batch_size: int = 2048
    null_threshold: float = 0.01
    min_null: int = 100
    null_perturbations: list | None = None
    tail: str = "right"
    recon_epochs: int = 30
    recon_lr: float = 1e-4
    recon_batch_size: int = 512
    activation: str = "identity"
    split_seed: int = 0

    def __post_init__(self):
        if not self.tasks:
            raise ValueError("tasks must be non-empty")
        bad = set(self.tasks) - set(TASKS)
        if bad:
            raise ValueError(f"unknown tasks {sorted(bad)}")
        bad = set(self.post_processing) - set(METHODS)
        if bad:
            raise ValueError(f"unknown post-processing {sorted(bad)}")
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise ValueError("seeds must be a non-empty list of distinct integers")
        if not self.embeddings:
            raise ValueError("embeddings must be non-empty")

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        path = Path(path)
        cfg = json.loads(path.read_text())
        # relative paths are resolved against the config file
        base = path.parent
        for key in ("bundle", "probe_split", "recon_split", "output_dir"):
            if cfg.get(key) and not os.path.isabs(cfg[key]):
                cfg[key] = str(base / cfg[key])
        cfg["dbs"] = [p if os.path.isabs(p) else str(base / p) for p in cfg.get("dbs", [])]
        return cls(**cfg)


@dataclass
class ReportRow:
    embedding: str
    post_processing: str
    task: str
    metric: str
    mean: float
    std: float
    per_seed: list
    note: str = ""


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)

    @property
    def errors(self):
        return [r for r in self.rows if r.metric == "error"]

    def get(self, embedding, post_processing, task, metric) -> ReportRow:
        for r in self.rows:
            if (r.embedding, r.post_processing, r.task, r.metric) == (
                    embedding, post_processing, task, metric):
                return r
        raise KeyError((embedding, post_processing, task, metric))

    def to_dict(self):
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            return v

        return {"rows": [{k: ([clean(x) for x in v] if isinstance(v, list) else clean(v))
                          for k, v in asdict(r).items()} for r in self.rows]}

    @classmethod
    def from_dict(cls, d) -> "MetricReport":
        def unclean(v):
            return float("nan") if v is None else v

        rows = []
        for r in d["rows"]:
            r = dict(r)
            r["mean"], r["std"] = unclean(r["mean"]), unclean(r["std"])
            r["per_seed"] = [unclean(v) for v in r["per_seed"]]
            rows.append(ReportRow(**r))
        return cls(rows)


# ---------------------------------------------------------------------------
# task cells
# ---------------------------------------------------------------------------

class _Context:
    """Inputs shared by every cell of one run (read-only once built)."""

    def __init__(self, cfg: RunConfig, dataset: Dataset):
        self.cfg = cfg
        self.ds = dataset
        self.meta = dataset.metadata
        self._lognorm = None
        self._null = None
        self._dbs = None
        self._probe = None
        self._recon = None

    @property
    def lognorm(self):
        if self._lognorm is None:
            expr = self._require_expression()
            self._lognorm = (expr.values.astype(np.float64) if expr.layout_tag == "lognorm"
                             else normalize_log1p(expr).values)
        return self._lognorm

    def _require_expression(self):
        if self.ds.expression is None:
            raise ValueError("task needs an expression matrix in the bundle")
        return self.ds.expression

    @property
    def null_set(self):
        if self._null is None:
            if self.cfg.null_perturbations is not None:
                self._null = list(self.cfg.null_perturbations)
            else:
                self._null = metrics.select_null_perturbations(
                    self._require_expression(), self.meta, self.cfg.null_threshold,
                    self.cfg.min_null)
        return self._null

    @property
    def dbs(self):
        if self._dbs is None:
            if not self.cfg.dbs:
                raise ValueError("recall needs at least one link database")
            self._dbs = [load_link_db(p) for p in self.cfg.dbs]
        return self._dbs

    @property
    def probe_split(self) -> SplitSpec:
        if self._probe is None:
            self._probe = (SplitSpec.from_json(self.cfg.probe_split) if self.cfg.probe_split
                           else make_probe_split(self.meta, seed=self.cfg.split_seed))
        return self._probe

    @property
    def recon_split(self) -> SplitSpec:
        if self._recon is None:
            self._recon = (SplitSpec.from_json(self.cfg.recon_split) if self.cfg.recon_split
                           else make_recon_split(self.meta, seed=self.cfg.split_seed))
        return self._recon

    def prepare(self, tasks):
        # resolve lazy inputs up front so worker threads only read
        for t in tasks:
            if t in ("probe", "knn"):
                self.probe_split
            if t == "recon":
                self.recon_split
                self.lognorm
            if t == "recall":
                self.dbs
            if t == "consistency":
                self.null_set


def _task_mixing(ctx, x, seed):
    r = metrics.ilisi(x, ctx.meta.batch, perplexity=ctx.cfg.perplexity)
    return {"ilisi": r.normalized, "ilisi_raw": r.raw,
            "ilisi_theoretical": r.normalized_theoretical}


def _probe_rows(ctx):
    train, test = ctx.probe_split.masks(ctx.meta)
    labels = ctx.meta.perturbation
    seen = set(labels[train].tolist())
    unseen = test & ~np.isin(labels, list(seen))
    if unseen.any():
        warnings.warn(f"dropping {int(unseen.sum())} test rows with labels unseen in "
                      "training", stacklevel=2)
    return train, test & ~unseen


def _task_probe(ctx, x, seed):
    train, test = _probe_rows(ctx)
    labels = ctx.meta.perturbation
    hyper = metrics.ProbeHyper(batch_size=ctx.cfg.probe_batch_size,
                               total_epochs=ctx.cfg.probe_epochs,
                               warmup_epochs=min(10, ctx.cfg.probe_epochs - 1), seed=seed)
    model = metrics.train_linear_probe(x[train], labels[train], hyper)
    acc = metrics.topk_accuracy(model, x[test], labels[test], (1, 5))
    return {"top1": acc[1], "top5": acc[5]}


def _task_knn(ctx, x, seed):
    train, test = _probe_rows(ctx)
    labels = ctx.meta.perturbation
    acc = metrics.knn_accuracy(x[train], labels[train], x[test], labels[test],
                               k=ctx.cfg.knn_k)
    return {"top1": acc[1], "top5": acc[5]}


def _task_consistency(ctx, x, seed):
    r = metrics.consistency_test(x, ctx.meta, ctx.null_set, tail=ctx.cfg.tail)
    return {"fraction_significant": r.fraction_significant}


def _task_recall(ctx, x, seed):
    rec = metrics.known_relationship_recall(x, ctx.meta, ctx.dbs)
    return {f"recall_{name}": v for name, v in rec.items()}


def _task_recon(ctx, x, seed):
    train, test = ctx.recon_split.masks(ctx.meta)
    y = ctx.lognorm
    hyper = metrics.DecoderHyper(batch_size=ctx.cfg.recon_batch_size, lr=ctx.cfg.recon_lr,
                                 total_epochs=ctx.cfg.recon_epochs,
                                 warmup_epochs=min(10, ctx.cfg.recon_epochs - 1),
                                 activation=ctx.cfg.activation, seed=seed)
    model = metrics.train_decoder(x[train], y[train], hyper)
    pred = model.predict(x[test])
    si = metrics.structural_integrity(pred, y[test], ctx.meta.subset(np.flatnonzero(test)))
    return {"spearman": metrics.spearman_score(pred, y[test]),
            "spearman_gene": metrics.spearman_score(pred, y[test], axis="gene"),
            "structural_integrity": si.integrity}


_TASK_FNS = {"mixing": _task_mixing, "probe": _task_probe, "knn": _task_knn,
             "consistency": _task_consistency, "recall": _task_recall,
             "recon": _task_recon}


def _base_embedding(ctx, name, seed):
    ds = ctx.ds
    if name in ds.embeddings:
        return np.asarray(ds.embeddings[name].values, dtype=np.float64)
    if name == "random":
        return random_embed(ds.n_samples, ctx.cfg.random_dim, seed).values
    if name == "pca":
        expr = ctx._require_expression()
        d = min(ctx.cfg.pca_dim, *expr.values.shape)
        model = fit_pca(expr, d_out=d, seed=seed)
        return transform_pca(model, expr).values
    raise KeyError(f"embedding {name!r} not in bundle and not a built-in (pca, random)")


def _run_cell(ctx, emb, post, task, seed, cache):
    x = cache[(emb, post, seed)]
    if isinstance(x, Exception):
        raise x
    return _TASK_FNS[task](ctx, x, seed)


def run_pipeline(config: RunConfig, dataset: Dataset | None = None) -> MetricReport:
    """Run every requested cell and aggregate over seeds.

    Cell failures are recorded as ``metric == "error"`` rows and do not stop
    the sweep. For each (embedding, task, metric) a ``best`` row picks the
    post-processing with the highest mean.
    """
    cfg = config
    ds = dataset if dataset is not None else load_bundle(cfg.bundle)
    ctx = _Context(cfg, ds)
    tasks = [t for t in TASKS if t in cfg.tasks]
    posts = [p for p in METHODS if p in cfg.post_processing]

    prep_errors = {}
    for t in tasks:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                ctx.prepare([t])
        except Exception as exc:  # noqa: BLE001 - isolate per task
            prep_errors[t] = exc

    cache = {}
    for emb in cfg.embeddings:
        for seed in cfg.seeds:
            try:
                base = _base_embedding(ctx, emb, seed)
            except Exception as exc:  # noqa: BLE001
                base = exc
            for post in posts:
                if isinstance(base, Exception):
                    cache[(emb, post, seed)] = base
                    continue
                try:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")
                        cache[(emb, post, seed)] = postprocess(base, ctx.meta, post,
                                                               cfg.center_mode)
                except Exception as exc:  # noqa: BLE001
                    cache[(emb, post, seed)] = exc

    cells = [(e, p, t, s) for e in cfg.embeddings for p in posts for t in tasks
             for s in cfg.seeds]

    def run(cell):
        e, p, t, s = cell
        if t in prep_errors:
            return prep_errors[t]
        try:
            return _run_cell(ctx, e, p, t, s, cache)
        except Exception as exc:  # noqa: BLE001
            return exc

    threads = max(1, int(os.environ.get("PERTURBENCH_THREADS", "1") or 1))
    # degenerate-input warnings are expected inside a sweep; silence them once
    # here because catch_warnings is not thread-safe
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(run, cells))
        else:
            results = [run(c) for c in cells]

    report = MetricReport()
    n_seeds = len(cfg.seeds)
    for i in range(0, len(cells), n_seeds):
        e, p, t, _ = cells[i]
        outs = results[i:i + n_seeds]
        errs = [o for o in outs if isinstance(o, Exception)]
        if errs:
            msg = f"{type(errs[0]).__name__}: {errs[0]}"
            log.warning("cell %s/%s/%s failed: %s", e, p, t, msg)
            report.rows.append(ReportRow(e, p, t, "error", float("nan"), float("nan"),
                                         [], msg))
            continue
        for m in outs[0]:
            vals = [float(o[m]) for o in outs]
            report.rows.append(ReportRow(e, p, t, m, float(np.mean(vals)),
                                         float(np.std(vals)), vals))
    report.rows.extend(_best_rows(report, cfg.embeddings, tasks))
    return report


def _best_rows(report, embeddings, tasks):
    out = []
    for e in embeddings:
        for t in tasks:
            metrics_seen = []
            for r in report.rows:
                if r.embedding == e and r.task == t and r.metric != "error" \
                        and r.metric not in metrics_seen:
                    metrics_seen.append(r.metric)
            for m in metrics_seen:
                cands = [r for r in report.rows if r.embedding == e and r.task == t
                         and r.metric == m and math.isfinite(r.mean)]
                if not cands:
                    continue
                best = max(cands, key=lambda r: r.mean)  # first max wins ties
                out.append(ReportRow(e, "best", t, m, best.mean, best.std,
                                     list(best.per_seed), best.post_processing))
    return out


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return "nan" if not math.isfinite(v) else f"{v:.6g}"


def emit_report(report: MetricReport, out_dir, formats=("tsv", "json")) -> list:
    """Write the report; returns the paths written.

    ``report.tsv`` holds mean/std per row, ``report_per_seed.tsv`` the per-seed
    values and ``report.json`` the full structure.
    """
    if not report.rows:
        raise ValueError("empty report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "tsv" in formats:
        p = out / "report.tsv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["embedding", "post_processing", "task", "metric", "mean", "std",
                        "n_seeds", "note"])
            for r in report.rows:
                w.writerow([r.embedding, r.post_processing, r.task, r.metric,
                            _fmt(r.mean), _fmt(r.std), len(r.per_seed), r.note])
        written.append(p)
        p = out / "report_per_seed.tsv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["embedding", "post_processing", "task", "metric", "seed_index",
                        "value"])
            for r in report.rows:
                for i, v in enumerate(r.per_seed):
                    w.writerow([r.embedding, r.post_processing, r.task, r.metric, i,
                                _fmt(v)])
        written.append(p)
    if "json" in formats:
        p = out / "report.json"
        p.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        written.append(p)
    return written


def load_report(path) -> MetricReport:
    return MetricReport.from_dict(json.loads(Path(path).read_text()))
