"""Linear probing and kNN organization on batch-disjoint splits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..neighbors import knn_search
from ..optim import AdamW, minibatches, warmup_cosine_lr


@dataclass(frozen=True)
class ProbeHyper:
    batch_size: int = 2048
    lr: float = 1e-3
    weight_decay: float = 1e-6
    warmup_epochs: int = 10
    warmup_start_lr: float = 3e-5
    total_epochs: int = 250
    seed: int = 0

    def __post_init__(self):
        if min(self.batch_size, self.lr, self.total_epochs) <= 0:
            raise ValueError("batch_size, lr and total_epochs must be positive")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ValueError("warmup_epochs must be smaller than total_epochs")


@dataclass
class ProbeModel:
    weights: np.ndarray        # (d, C)
    bias: np.ndarray           # (C,)
    class_labels: np.ndarray   # (C,)
    train_log: list = field(default_factory=list)

    def logits(self, emb) -> np.ndarray:
        return np.asarray(emb, dtype=np.float64) @ self.weights + self.bias

    def encode(self, labels) -> np.ndarray:
        labels = np.asarray(labels)
        pos = np.searchsorted(self.class_labels, labels)
        pos = np.clip(pos, 0, len(self.class_labels) - 1)
        bad = self.class_labels[pos] != labels
        if bad.any():
            raise ValueError(f"labels not seen in training: {sorted(set(labels[bad]))[:5]}")
        return pos


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def train_linear_probe(train_emb, train_labels, hyper: ProbeHyper = ProbeHyper(),
                       classes=None) -> ProbeModel:
    """Softmax regression trained with AdamW and a warmup-cosine schedule.

    Parameters start at zero, so the result depends on the seed only through
    the minibatch order.
    """
    x = np.asarray(train_emb, dtype=np.float64)
    labels = np.asarray(train_labels)
    if not np.all(np.isfinite(x)):
        raise ValueError("embeddings contain non-finite values")
    classes = np.unique(labels) if classes is None else np.asarray(sorted(classes))
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    model = ProbeModel(np.zeros((x.shape[1], len(classes))), np.zeros(len(classes)),
                       classes)
    y = model.encode(labels)
    if len(np.unique(y)) != len(classes):
        raise ValueError("some classes have no training rows")
    params = {"w": model.weights, "b": model.bias}
    opt = AdamW(params, weight_decay=hyper.weight_decay, decay=("w",))
    rng = np.random.default_rng(hyper.seed)
    n = x.shape[0]
    for epoch in range(hyper.total_epochs):
        lr = warmup_cosine_lr(epoch, hyper.lr, hyper.warmup_epochs,
                              hyper.total_epochs, hyper.warmup_start_lr)
        total = 0.0
        for rows in minibatches(n, hyper.batch_size, rng):
            xb, yb = x[rows], y[rows]
            prob = _softmax(xb @ params["w"] + params["b"])
            total += -np.log(prob[np.arange(len(rows)), yb] + 1e-300).sum()
            prob[np.arange(len(rows)), yb] -= 1.0
            prob /= len(rows)
            opt.step({"w": xb.T @ prob, "b": prob.sum(axis=0)}, lr)
        loss = total / n
        if not np.isfinite(loss):
            raise FloatingPointError(f"probe loss became {loss} at epoch {epoch} (lr={lr:g})")
        model.train_log.append(loss)
    return model


def _topk_hits(logits, y, ks):
    # rank of the true class: classes with larger logits, or equal logits and
    # smaller index, come first
    true = logits[np.arange(len(y)), y][:, None]
    idx = np.arange(logits.shape[1])[None, :]
    rank = ((logits > true) | ((logits == true) & (idx < y[:, None]))).sum(axis=1)
    return {k: float(np.mean(rank < k)) for k in ks}


def topk_accuracy(model: ProbeModel, emb, labels, k_list=(1, 5)) -> dict:
    """Fraction of rows whose true label is among the `k` largest logits."""
    y = model.encode(labels)
    return _topk_hits(model.logits(emb), y, k_list)


def knn_accuracy(reference_emb, reference_labels, query_emb, query_labels,
                 k: int | None = None, top_n_list=(1, 5), mode: str = "ranked",
                 block_size: int = 1024) -> dict:
    """Top-N kNN label accuracy of query rows against a reference set.

    ``mode="ranked"`` ranks the labels found among the k nearest reference rows
    by vote count, then by smaller mean distance, then by label order; a hit
    means the true label is within the first N. Labels absent from the
    neighbourhood are never ranked. ``mode="nearest"`` instead checks the
    labels of the N nearest rows. `k` defaults to ``floor(sqrt(n_ref))``.
    """
    ref = np.asarray(reference_emb, dtype=np.float64)
    qry = np.asarray(query_emb, dtype=np.float64)
    ref_labels = np.asarray(reference_labels)
    qry_labels = np.asarray(query_labels)
    n_ref = ref.shape[0]
    if k is None:
        k = int(np.floor(np.sqrt(n_ref)))
    if not 1 <= k <= n_ref:
        raise ValueError(f"k={k} must be in [1, {n_ref}]")
    classes, ref_codes = np.unique(ref_labels, return_inverse=True)
    pos = np.clip(np.searchsorted(classes, qry_labels), 0, len(classes) - 1)
    q_codes = np.where(classes[pos] == qry_labels, pos, -1)
    idx, d2 = knn_search(ref, qry, k=k, block_size=block_size, exclude_self=False)
    nbr = ref_codes[idx]
    if mode == "nearest":
        return {n: float(np.mean((nbr[:, :n] == q_codes[:, None]).any(axis=1)))
                for n in top_n_list}
    if mode != "ranked":
        raise ValueError(f"unknown mode {mode!r}")
    dist = np.sqrt(d2)
    C = len(classes)
    hits = {n: 0 for n in top_n_list}
    for s in range(0, len(qry), block_size):
        b = slice(s, s + block_size)
        nb, db, qc = nbr[b], dist[b], q_codes[b]
        m = nb.shape[0]
        rows = np.repeat(np.arange(m), k)
        counts = np.zeros((m, C))
        dsum = np.zeros((m, C))
        np.add.at(counts, (rows, nb.ravel()), 1.0)
        np.add.at(dsum, (rows, nb.ravel()), db.ravel())
        present = counts > 0
        mean_d = np.where(present, dsum / np.maximum(counts, 1), np.inf)
        known = qc >= 0
        qcc = np.where(known, qc, 0)
        ct = counts[np.arange(m), qcc][:, None]
        mt = mean_d[np.arange(m), qcc][:, None]
        lab = np.arange(C)[None, :]
        beats = present & ((counts > ct) | ((counts == ct) & (mean_d < mt))
                           | ((counts == ct) & (mean_d == mt) & (lab < qcc[:, None])))
        rank = beats.sum(axis=1)
        ok = known & (ct[:, 0] > 0)
        for n in top_n_list:
            hits[n] += int(np.sum(ok & (rank < n)))
    return {n: hits[n] / len(qry) for n in top_n_list}
