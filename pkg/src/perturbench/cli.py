"""Command-line entry point.

Exit codes: 0 success, 1 fatal config/data error, 2 finished with cell errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

import numpy as np

from .data import BundleError, EmbeddingMatrix, ExpressionMatrix, load_bundle, write_bundle
from .embedders import fit_pca, random_embed, transform_pca
from .pipeline import TASKS, RunConfig, emit_report, load_report, run_pipeline
from .postprocess import postprocess
from .preprocess import filter_min_counts, make_probe_split, make_recon_split, normalize_log1p

log = logging.getLogger("perturbench")


def _cmd_validate(args):
    ds = load_bundle(args.bundle)
    meta = ds.metadata
    print(f"samples\t{ds.n_samples}")
    print(f"batches\t{len(meta.batches)}")
    print(f"perturbations\t{len(meta.perturbations)}")
    print(f"controls\t{int(meta.is_control.sum())}")
    if ds.expression is not None:
        print(f"expression\t{ds.expression.n_genes} genes ({ds.expression.layout_tag})")
    for name, emb in sorted(ds.embeddings.items()):
        print(f"embedding\t{name}\t{emb.dim}\t{emb.provenance}")
    return 0


def _cmd_preprocess(args):
    ds = load_bundle(args.bundle)
    if ds.expression is None:
        raise BundleError("bundle has no expression matrix")
    keep = filter_min_counts(ds.expression, args.min_counts)
    log.info("keeping %d of %d samples", keep.sum(), len(keep))
    ds = ds.subset(np.flatnonzero(keep))
    if args.lognorm:
        expr = normalize_log1p(ds.expression, args.target_sum)
        ds = dataclasses.replace(ds, expression=ExpressionMatrix(
            expr.values.astype(np.float32), expr.gene_ids, "lognorm"))
    write_bundle(ds, args.out)
    return 0


def _cmd_split(args):
    meta = load_bundle(args.bundle).metadata
    if args.kind == "probe":
        spec = make_probe_split(meta, args.train_frac, args.seed)
    else:
        spec = make_recon_split(meta, args.train_frac, args.holdout_frac, args.seed)
    text = spec.to_json(args.out)
    if args.out is None:
        sys.stdout.write(text)
    return 0


def _cmd_embed(args):
    ds = load_bundle(args.bundle)
    if args.method == "random":
        emb = random_embed(ds.n_samples, args.dim, args.seed)
    else:
        if ds.expression is None:
            raise BundleError("PCA needs an expression matrix")
        model = fit_pca(ds.expression, args.dim, seed=args.seed)
        emb = transform_pca(model, ds.expression)
    emb = EmbeddingMatrix(emb.values.astype(np.float32), emb.provenance)
    write_bundle(ds.with_embedding(args.name or args.method, emb), args.out or args.bundle)
    return 0


def _cmd_postprocess(args):
    ds = load_bundle(args.bundle)
    src = ds.embeddings[args.embedding]
    out = postprocess(src.values, ds.metadata, args.method, args.mode)
    name = args.name or f"{args.embedding}.{args.method}"
    emb = EmbeddingMatrix(out.astype(np.float32), f"{src.provenance}|{args.method}")
    write_bundle(ds.with_embedding(name, emb), args.out or args.bundle)
    return 0


def _run_config_from_args(args) -> RunConfig:
    if args.config:
        cfg = RunConfig.from_json(args.config)
    else:
        if not args.bundle or not args.embedding:
            raise ValueError("either --config or both --bundle and --embedding are required")
        cfg = RunConfig(bundle=args.bundle, embeddings=list(args.embedding))
    overrides = {
        "post_processing": args.post, "seeds": args.seeds, "dbs": args.db,
        "perplexity": args.perplexity, "knn_k": args.k, "probe_epochs": args.epochs,
        "null_threshold": args.null_threshold, "min_null": args.min_null,
        "tail": args.tail, "activation": args.activation, "output_dir": args.out,
    }
    if args.split:
        overrides["recon_split" if args.task == "recon" else "probe_split"] = args.split
    changes = {k: v for k, v in overrides.items() if v is not None}
    if args.task != "all":
        changes["tasks"] = [args.task]
    return dataclasses.replace(cfg, **changes)


def _cmd_eval(args):
    cfg = _run_config_from_args(args)
    report = run_pipeline(cfg)
    if cfg.output_dir:
        emit_report(report, cfg.output_dir)
    _print_report(report)
    return 2 if report.errors else 0


def _print_report(report):
    print("embedding\tpost_processing\ttask\tmetric\tmean\tstd\tnote")
    for r in report.rows:
        print(f"{r.embedding}\t{r.post_processing}\t{r.task}\t{r.metric}\t"
              f"{r.mean:.6g}\t{r.std:.6g}\t{r.note}")


def _cmd_synth(args):
    from .synth import SynthConfig, generate, write_synth

    cfg = SynthConfig.from_json(args.config) if args.config else SynthConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    write_synth(generate(cfg), args.out)
    return 0


def _cmd_report(args):
    report = load_report(args.report)
    if args.out:
        emit_report(report, args.out, tuple(args.format.split(",")))
    else:
        _print_report(report)
    return 2 if report.errors else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="perturbench", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="load and validate a bundle")
    s.add_argument("bundle")
    s.set_defaults(func=_cmd_validate)

    s = sub.add_parser("preprocess", help="drop low-count samples, optionally log-normalize")
    s.add_argument("bundle")
    s.add_argument("--out", required=True)
    s.add_argument("--min-counts", type=float, default=1000)
    s.add_argument("--lognorm", action="store_true")
    s.add_argument("--target-sum", type=float, default=1e4)
    s.set_defaults(func=_cmd_preprocess)

    s = sub.add_parser("split", help="write a batch-disjoint split as JSON")
    s.add_argument("bundle")
    s.add_argument("--kind", choices=("probe", "recon"), default="probe")
    s.add_argument("--train-frac", type=float, default=0.7)
    s.add_argument("--holdout-frac", type=float, default=0.3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=_cmd_split)

    s = sub.add_parser("embed", help="add a PCA or random embedding to a bundle")
    s.add_argument("bundle")
    s.add_argument("--method", choices=("pca", "random"), default="pca")
    s.add_argument("--dim", type=int, default=256)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--name")
    s.add_argument("--out", help="write to a new bundle instead of in place")
    s.set_defaults(func=_cmd_embed)

    s = sub.add_parser("postprocess", help="store a post-processed copy of an embedding")
    s.add_argument("bundle")
    s.add_argument("--embedding", required=True)
    s.add_argument("--method", choices=("raw", "center", "center_scale", "tvn"),
                   required=True)
    s.add_argument("--mode", choices=("per_batch_control", "global"),
                   default="per_batch_control")
    s.add_argument("--name")
    s.add_argument("--out")
    s.set_defaults(func=_cmd_postprocess)

    s = sub.add_parser("eval", help="run one task, or all of them")
    s.add_argument("task", choices=TASKS + ("all",))
    s.add_argument("--config", help="RunConfig JSON")
    s.add_argument("--bundle")
    s.add_argument("--embedding", action="append")
    s.add_argument("--post", action="append",
                   choices=("raw", "center", "center_scale", "tvn"))
    s.add_argument("--seeds", type=int, nargs="+")
    s.add_argument("--split")
    s.add_argument("--db", action="append")
    s.add_argument("--perplexity", type=float)
    s.add_argument("--k", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--null-threshold", type=float)
    s.add_argument("--min-null", type=int)
    s.add_argument("--tail", choices=("right", "left_as_printed"))
    s.add_argument("--activation", choices=("identity", "relu"))
    s.add_argument("--out", help="directory for report.tsv / report.json")
    s.set_defaults(func=_cmd_eval)

    s = sub.add_parser("synth", help="generate a synthetic screen")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_synth)

    s = sub.add_parser("report", help="re-emit a saved report.json")
    s.add_argument("report")
    s.add_argument("--out")
    s.add_argument("--format", default="tsv,json")
    s.set_defaults(func=_cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (BundleError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
