"""Decoding embeddings back to log expression: Spearman and Structural Integrity."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from ..data import Metadata
from ..optim import AdamW, minibatches, warmup_cosine_lr

ACTIVATIONS = ("identity", "relu")


@dataclass(frozen=True)
class DecoderHyper:
    batch_size: int = 512
    lr: float = 1e-4
    weight_decay: float = 1e-6
    warmup_epochs: int = 10
    warmup_start_lr: float = 3e-5
    total_epochs: int = 30
    hidden: int | None = None     # defaults to the embedding dim
    activation: str = "identity"
    seed: int = 0


@dataclass
class DecoderModel:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    activation: str = "identity"
    train_log: list = field(default_factory=list)

    def _hidden(self, x):
        h = x @ self.w1 + self.b1
        return np.maximum(h, 0.0) if self.activation == "relu" else h

    def predict(self, emb) -> np.ndarray:
        return self._hidden(np.asarray(emb, dtype=np.float64)) @ self.w2 + self.b2


def train_decoder(train_emb, train_expr, hyper: DecoderHyper = DecoderHyper()) -> DecoderModel:
    """Two stacked affine layers fit with mean squared error.

    Initialization follows the usual uniform(+-1/sqrt(fan_in)) rule; the
    output bias starts at the per-gene training mean.
    """
    x = np.asarray(train_emb, dtype=np.float64)
    y = np.asarray(train_expr, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise ValueError("embedding and expression rows are not aligned")
    if hyper.activation not in ACTIVATIONS:
        raise ValueError(f"activation must be one of {ACTIVATIONS}")
    d, g = x.shape[1], y.shape[1]
    h = hyper.hidden or d
    rng = np.random.default_rng(hyper.seed)
    a1, a2 = 1 / np.sqrt(d), 1 / np.sqrt(h)
    model = DecoderModel(rng.uniform(-a1, a1, (d, h)), rng.uniform(-a1, a1, h),
                         rng.uniform(-a2, a2, (h, g)), y.mean(axis=0), hyper.activation)
    params = {"w1": model.w1, "b1": model.b1, "w2": model.w2, "b2": model.b2}
    opt = AdamW(params, weight_decay=hyper.weight_decay, decay=("w1", "w2"))
    relu = hyper.activation == "relu"
    for epoch in range(hyper.total_epochs):
        lr = warmup_cosine_lr(epoch, hyper.lr, hyper.warmup_epochs,
                              hyper.total_epochs, hyper.warmup_start_lr)
        total = 0.0
        for rows in minibatches(x.shape[0], hyper.batch_size, rng):
            xb, yb = x[rows], y[rows]
            pre = xb @ params["w1"] + params["b1"]
            hid = np.maximum(pre, 0.0) if relu else pre
            err = hid @ params["w2"] + params["b2"] - yb
            total += float(np.sum(err * err))
            gout = 2.0 * err / err.size
            ghid = gout @ params["w2"].T
            if relu:
                ghid = ghid * (pre > 0)
            opt.step({"w2": hid.T @ gout, "b2": gout.sum(axis=0),
                      "w1": xb.T @ ghid, "b1": ghid.sum(axis=0)}, lr)
        loss = total / y.size
        if not np.isfinite(loss):
            raise FloatingPointError(f"decoder loss became {loss} at epoch {epoch}")
        model.train_log.append(loss)
    return model


def spearman_score(pred, actual, axis: str = "sample") -> float:
    """Mean Spearman correlation between predicted and actual profiles.

    ``axis="sample"`` correlates each sample across genes; ``"gene"`` each gene
    across samples. Ties get average ranks. A constant profile has undefined
    correlation and contributes 0.
    """
    p = np.asarray(pred, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    if p.shape != a.shape or p.ndim != 2:
        raise ValueError("pred and actual must be 2-D arrays of equal shape")
    if axis == "gene":
        p, a = p.T, a.T
    elif axis != "sample":
        raise ValueError("axis must be 'sample' or 'gene'")
    if min(p.shape) < 2:
        raise ValueError("need at least two samples and two genes")
    rp = rankdata(p, axis=1)
    ra = rankdata(a, axis=1)
    rp -= rp.mean(axis=1, keepdims=True)
    ra -= ra.mean(axis=1, keepdims=True)
    num = np.einsum("ij,ij->i", rp, ra)
    den = np.sqrt(np.einsum("ij,ij->i", rp, rp) * np.einsum("ij,ij->i", ra, ra))
    const = den == 0
    if const.any():
        warnings.warn(f"{int(const.sum())} constant profiles scored as 0", stacklevel=2)
    rho = np.where(const, 0.0, num / np.where(const, 1.0, den))
    return float(rho.mean())


@dataclass(frozen=True)
class StructuralIntegrityResult:
    per_batch_distance: dict
    distance: float
    distance_max: float
    integrity: float
    integrity_unclamped: float
    skipped_batches: list
    distance_max_bound: float | None = None


def structural_integrity(pred_lognorm, actual_lognorm, meta: Metadata,
                         library_size: float | None = None) -> StructuralIntegrityResult:
    """Control-centred Frobenius agreement between predicted and actual expression.

    In every batch, predicted rows are centred on the predicted control mean
    and actual rows on the actual control mean; the per-batch distance is the
    Frobenius norm of the difference over perturbed rows divided by their
    count. The normalizer is twice the batch-averaged norm of the centred
    actual matrix, which is the distance of the antipodal prediction.
    Batches without controls or without perturbed rows are skipped.

    If `library_size` is given, the count-bound normalizer
    ``mean_b 2 M sqrt(n_b g)`` is reported as ``distance_max_bound``.
    """
    p = np.asarray(pred_lognorm, dtype=np.float64)
    a = np.asarray(actual_lognorm, dtype=np.float64)
    if p.shape != a.shape or p.shape[0] != len(meta):
        raise ValueError("pred, actual and metadata must be row-aligned")
    per, norms, sizes, skipped = {}, [], [], []
    for b in meta.batches:
        rows = meta.batch == b
        ctl = rows & meta.is_control
        pert = rows & ~meta.is_control
        if not ctl.any() or not pert.any():
            skipped.append(b)
            continue
        pc = p[pert] - p[ctl].mean(axis=0)
        ac = a[pert] - a[ctl].mean(axis=0)
        n_b = int(pert.sum())
        per[b] = float(np.linalg.norm(pc - ac) / n_b)
        norms.append(float(np.linalg.norm(ac) / n_b))
        sizes.append(n_b)
    if not per:
        raise ValueError("every batch lacks controls or perturbed samples")
    if skipped:
        warnings.warn(f"skipped {len(skipped)} batches: {skipped[:5]}", stacklevel=2)
    dist = float(np.mean(list(per.values())))
    dmax = 2.0 * float(np.mean(norms))
    raw = 1.0 - dist / dmax if dmax > 0 else float("nan")
    bound = None
    if library_size is not None:
        bound = float(np.mean([2 * library_size * np.sqrt(n * p.shape[1]) for n in sizes]))
    return StructuralIntegrityResult(per, dist, dmax, float(np.clip(raw, 0.0, 1.0)),
                                     raw, skipped, bound)
