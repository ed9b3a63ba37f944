"""Zero-shot recall of known gene-gene relationships."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..data import LinkDatabase, Metadata


@dataclass(frozen=True)
class PerturbationMap:
    labels: np.ndarray      # (P,) sorted perturbation labels, controls excluded
    centroids: np.ndarray   # (P, d)


def aggregate_perturbations(emb, meta: Metadata) -> PerturbationMap:
    """Unweighted mean embedding of every non-control perturbation."""
    x = np.asarray(emb, dtype=np.float64)
    rows = ~meta.is_control
    if not rows.any():
        raise ValueError("no non-control perturbations")
    labels, codes = np.unique(meta.perturbation[rows], return_inverse=True)
    sums = np.zeros((len(labels), x.shape[1]))
    np.add.at(sums, codes, x[rows])
    return PerturbationMap(labels, sums / np.bincount(codes)[:, None])


def pairwise_cosine(pmap: PerturbationMap):
    """Upper-triangle cosine similarities as ``(i, j, sim)`` arrays."""
    c = pmap.centroids
    norms = np.linalg.norm(c, axis=1)
    if np.any(norms == 0):
        warnings.warn("zero-norm centroids get cosine similarity 0", stacklevel=3)
    u = c / np.where(norms == 0, 1.0, norms)[:, None]
    i, j = np.triu_indices(len(c), k=1)
    sims = np.einsum("ij,ij->i", u[i], u[j])
    return i, j, np.clip(sims, -1.0, 1.0)


def predicted_links(pmap: PerturbationMap, low_pct: float = 5,
                    high_pct: float = 95) -> set:
    """Pairs whose cosine similarity is at or beyond the low/high percentiles.

    Percentiles are taken over all unordered non-self pairs with linear
    interpolation; both bounds are inclusive.
    """
    if len(pmap.labels) < 3:
        raise ValueError("need at least three perturbations")
    i, j, sims = pairwise_cosine(pmap)
    lo, hi = np.percentile(sims, [low_pct, high_pct])
    if np.ptp(sims) == 0:
        warnings.warn("all pairwise similarities are equal; every pair is predicted",
                      stacklevel=2)
    pick = (sims <= lo) | (sims >= hi)
    a, b = pmap.labels[i[pick]], pmap.labels[j[pick]]
    return {(x, y) if x < y else (y, x) for x, y in zip(a.tolist(), b.tolist())}


def recall_against_db(predicted, db: LinkDatabase, universe) -> float:
    """Fraction of the database links (restricted to `universe`) that were predicted."""
    known = db.restrict(universe).links
    if not known:
        raise ValueError(f"no evaluable links in {db.name!r} for this perturbation set")
    return len(known & set(predicted)) / len(known)


def known_relationship_recall(emb, meta: Metadata, dbs, low_pct=5, high_pct=95) -> dict:
    """Recall for each database, keyed by database name."""
    pmap = aggregate_perturbations(emb, meta)
    pred = predicted_links(pmap, low_pct, high_pct)
    universe = set(pmap.labels.tolist())
    return {db.name: recall_against_db(pred, db, universe) for db in dbs}
