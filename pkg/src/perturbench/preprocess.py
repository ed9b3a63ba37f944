"""Count filtering, library-size normalization and batch-disjoint splits."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import ExpressionMatrix, Metadata


def filter_min_counts(expr: ExpressionMatrix, threshold: float = 1000) -> np.ndarray:
    """Boolean row mask keeping samples whose total count is strictly above `threshold`."""
    if expr.layout_tag != "raw_counts":
        raise ValueError(f"filter_min_counts needs raw_counts, got {expr.layout_tag}")
    return np.asarray(expr.values, dtype=np.float64).sum(axis=1) > threshold


def normalize_log1p(expr: ExpressionMatrix, target_sum: float = 1e4) -> ExpressionMatrix:
    """Scale every row to `target_sum` total counts, then apply ``log1p``."""
    if expr.layout_tag != "raw_counts":
        raise ValueError(f"normalize_log1p needs raw_counts, got {expr.layout_tag}")
    x = np.asarray(expr.values, dtype=np.float64)
    totals = x.sum(axis=1, keepdims=True)
    if np.any(totals <= 0):
        bad = np.flatnonzero(totals[:, 0] <= 0)
        raise ValueError(f"{len(bad)} rows have zero total counts (first: row {bad[0]})")
    return ExpressionMatrix(np.log1p(x * (target_sum / totals)), expr.gene_ids, "lognorm")


@dataclass
class SplitSpec:
    """Batch-level train/test partition.

    ``held_out_perturbations`` is non-empty only for reconstruction splits;
    ``excluded_perturbations`` lists labels that could not be placed on both
    sides of a probe split and are dropped from its label space.
    """

    name: str
    train_batches: list[str]
    test_batches: list[str]
    held_out_perturbations: list[str] = field(default_factory=list)
    excluded_perturbations: list[str] = field(default_factory=list)
    seed: int = 0
    train_frac: float = 0.7

    def __post_init__(self):
        if set(self.train_batches) & set(self.test_batches):
            raise ValueError("train and test batch sets overlap")

    @property
    def kind(self) -> str:
        return "recon" if self.held_out_perturbations else "probe"

    def masks(self, meta: Metadata) -> tuple[np.ndarray, np.ndarray]:
        """Row masks (train, test) for `meta`.

        Controls are kept on both sides. In a reconstruction split the test side
        holds only held-out perturbations and the train side none of them.
        """
        train = np.isin(meta.batch, self.train_batches)
        test = np.isin(meta.batch, self.test_batches)
        if self.excluded_perturbations:
            keep = ~np.isin(meta.perturbation, self.excluded_perturbations)
            train &= keep
            test &= keep
        if self.held_out_perturbations:
            held = np.isin(meta.perturbation, self.held_out_perturbations)
            train &= ~held
            test &= held | meta.is_control
        return train, test

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, text_or_path) -> "SplitSpec":
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            text = Path(text_or_path).read_text()
        return cls(**json.loads(text))


def _assign_batches(meta: Metadata, train_frac: float, rng: np.random.Generator):
    batches, sizes = np.unique(meta.batch, return_counts=True)
    if len(batches) < 2:
        raise ValueError("need at least two batches to build a batch-disjoint split")
    # largest batches first, ties in random order
    order = np.lexsort((rng.permutation(len(batches)), -sizes))
    total = sizes.sum()
    train, acc = [], 0
    for idx in order:
        if len(train) == len(batches) - 1:
            break
        if acc >= train_frac * total - 1e-9:
            break
        train.append(idx)
        acc += sizes[idx]
    test = [i for i in order if i not in set(train)]
    actual = acc / total
    if abs(actual - train_frac) > 0.1:
        warnings.warn(
            f"train fraction {actual:.3f} deviates from requested {train_frac:.3f}; "
            "batches are assigned whole",
            stacklevel=3,
        )
    return sorted(batches[train].tolist()), sorted(batches[test].tolist())


def make_probe_split(meta: Metadata, train_frac: float = 0.7, seed: int = 0,
                     name: str = "probe") -> SplitSpec:
    """Batch-disjoint split that keeps the same perturbations on both sides.

    Whole batches go to the train side until it holds at least `train_frac` of
    the rows. Perturbations that end up on only one side are listed in
    ``excluded_perturbations``.
    """
    rng = np.random.default_rng(seed)
    train_b, test_b = _assign_batches(meta, train_frac, rng)
    tr = set(meta.perturbation[np.isin(meta.batch, train_b) & ~meta.is_control])
    te = set(meta.perturbation[np.isin(meta.batch, test_b) & ~meta.is_control])
    excluded = sorted(tr ^ te)
    if excluded:
        warnings.warn(f"{len(excluded)} perturbations are not present on both sides "
                      "of the split and are excluded", stacklevel=2)
    return SplitSpec(name, train_b, test_b, [], excluded, seed, train_frac)


def make_recon_split(meta: Metadata, train_frac: float = 0.7,
                     pert_holdout_frac: float = 0.3, seed: int = 0,
                     name: str = "recon") -> SplitSpec:
    """Split with unseen batches *and* unseen perturbations on the test side."""
    perts = meta.perturbations
    if len(perts) < 2:
        raise ValueError("need at least two non-control perturbations")
    rng = np.random.default_rng(seed)
    train_b, test_b = _assign_batches(meta, train_frac, rng)
    n_hold = int(np.clip(round(pert_holdout_frac * len(perts)), 1, len(perts) - 1))
    held = sorted(rng.choice(perts, size=n_hold, replace=False).tolist())
    return SplitSpec(name, train_b, test_b, held, [], seed, train_frac)
