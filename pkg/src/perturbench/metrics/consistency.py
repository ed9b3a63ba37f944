"""Perturbation consistency: average cosine similarity against an unexpressed-gene null."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..data import ExpressionMatrix, Metadata
from ..preprocess import normalize_log1p

TAILS = ("right", "left_as_printed")


@dataclass(frozen=True)
class ConsistencyResult:
    per_perturbation: dict       # label -> {"avgsim": float, "p_value": float}
    null_size: int
    fraction_significant: float
    alpha: float
    tail: str
    null_avgsim: np.ndarray


def _unit_rows(x):
    norms = np.linalg.norm(x, axis=1)
    zero = norms == 0
    if zero.any():
        warnings.warn(f"dropping {int(zero.sum())} zero-norm rows", stacklevel=3)
    return x[~zero] / norms[~zero, None], zero


def avg_cosine(vectors) -> float:
    """Mean cosine similarity over all ordered pairs, diagonal included.

    Uses ``||sum of unit rows||^2 / n^2``, which equals the double sum.
    """
    x = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    u, _ = _unit_rows(x)
    if u.shape[0] == 0:
        raise ValueError("all rows have zero norm")
    s = u.sum(axis=0)
    return float(min(s @ s / u.shape[0] ** 2, 1.0))


def group_avg_cosine(emb, labels) -> dict:
    """`avg_cosine` for every distinct label in one pass."""
    x = np.asarray(emb, dtype=np.float64)
    labels = np.asarray(labels)
    norms = np.linalg.norm(x, axis=1)
    keep = norms > 0
    if not keep.all():
        warnings.warn(f"dropping {int((~keep).sum())} zero-norm rows", stacklevel=2)
    u = x[keep] / norms[keep, None]
    names, codes = np.unique(labels[keep], return_inverse=True)
    sums = np.zeros((len(names), x.shape[1]))
    np.add.at(sums, codes, u)
    counts = np.bincount(codes, minlength=len(names))
    vals = np.minimum(np.einsum("ij,ij->i", sums, sums) / counts ** 2, 1.0)
    return dict(zip(names.tolist(), vals.tolist()))


def select_null_perturbations(expr: ExpressionMatrix, meta: Metadata,
                              expression_threshold: float = 0.01,
                              min_null: int = 100) -> list[str]:
    """Perturbations whose target gene is essentially unexpressed in controls.

    A perturbation label is treated as a gene id; its mean log-normalized
    expression over control rows must fall below `expression_threshold`.
    Labels that are not gene ids are skipped with a warning.
    """
    if expr.layout_tag == "raw_counts":
        ctl = ExpressionMatrix(expr.values[meta.is_control], expr.gene_ids, "raw_counts")
        ctl_vals = normalize_log1p(ctl).values
    else:
        ctl_vals = np.asarray(expr.values[meta.is_control], dtype=np.float64)
    if ctl_vals.shape[0] == 0:
        raise ValueError("no control samples to measure baseline expression")
    mean_expr = dict(zip(expr.gene_ids, ctl_vals.mean(axis=0)))
    perts = meta.perturbations
    unmapped = [p for p in perts if p not in mean_expr]
    if unmapped:
        warnings.warn(f"{len(unmapped)} perturbation labels are not gene ids and were "
                      f"skipped: {unmapped[:5]}", stacklevel=2)
    null = sorted(p for p in perts if p in mean_expr and mean_expr[p] < expression_threshold)
    if len(null) < min_null:
        raise ValueError(
            f"only {len(null)} unexpressed target genes (need {min_null}); "
            "raise expression_threshold or lower min_null"
        )
    return null


def consistency_test(emb, meta: Metadata, null_set, alpha: float = 0.05,
                     tail: str = "right", perturbations=None,
                     min_null: int = 1) -> ConsistencyResult:
    """Permutation-style test of each perturbation's avgsim against the null genes.

    With ``tail="right"`` the p-value counts null genes at least as similar as
    the perturbation; ``"left_as_printed"`` counts those at most as similar.
    Either way ``p = max(count, 1) / K``. By default every non-control
    perturbation outside the null set is tested.
    """
    if tail not in TAILS:
        raise ValueError(f"tail must be one of {TAILS}")
    null_set = sorted(set(null_set))
    if not null_set:
        raise ValueError("empty null set")
    if len(null_set) < min_null:
        raise ValueError(f"null set has {len(null_set)} genes, need {min_null}")
    sims = group_avg_cosine(emb, meta.perturbation)
    missing = [g for g in null_set if g not in sims]
    if missing:
        raise ValueError(f"null perturbations without samples: {missing[:5]}")
    null_vals = np.sort([sims[g] for g in null_set])
    K = len(null_vals)
    if perturbations is None:
        nulls = set(null_set)
        perturbations = [p for p in meta.perturbations if p not in nulls]
    per = {}
    for g in perturbations:
        if g not in sims:
            raise ValueError(f"perturbation {g!r} has no samples")
        s = sims[g]
        if tail == "right":
            count = K - np.searchsorted(null_vals, s, side="left")
        else:
            count = np.searchsorted(null_vals, s, side="right")
        per[g] = {"avgsim": s, "p_value": max(int(count), 1) / K}
    frac = float(np.mean([v["p_value"] < alpha for v in per.values()])) if per else float("nan")
    return ConsistencyResult(per, K, frac, alpha, tail, null_vals)
