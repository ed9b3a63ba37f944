"""Slow reference implementations used to cross-check the vectorized metrics.

Nothing here imports the fast kernels. Everything is plain loops over Python
floats, so it is only meant for a few hundred rows.
"""

from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

MAX_N = 500


def _guard(n, small_n=MAX_N):
    if n > small_n:
        raise ValueError(f"oracle is O(n^2); refusing n={n} > {small_n}")


def _sqdist(a, b):
    return sum((float(x) - float(y)) ** 2 for x, y in zip(a, b))


def _avg_ranks(values):
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        r = (i + j) / 2 + 1
        for t in range(i, j + 1):
            ranks[order[t]] = r
        i = j + 1
    return ranks


def _pearson(a, b):
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    sab = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    saa = sum((x - ma) ** 2 for x in a)
    sbb = sum((y - mb) ** 2 for y in b)
    if saa == 0 or sbb == 0:
        return 0.0
    return sab / math.sqrt(saa * sbb)


def naive_ilisi(x, labels, perplexity=30.0, k_n=None, tol=1e-5, max_iter=100):
    """Mean inverse Simpson index of batch labels over kernel neighbourhoods."""
    x = [list(map(float, r)) for r in np.asarray(x)]
    labels = list(np.asarray(labels).tolist())
    n = len(x)
    _guard(n)
    k_n = int(3 * perplexity) if k_n is None else k_n
    target = math.log(perplexity)
    total = 0.0
    for i in range(n):
        cand = sorted((_sqdist(x[i], x[j]), j) for j in range(n) if j != i)[:k_n]
        dmin = cand[0][0]
        d = [c[0] - dmin for c in cand]

        def entropy(beta):
            w = [math.exp(-beta * v) for v in d]
            s = sum(w)
            h = math.log(s) + beta * sum(v * wi for v, wi in zip(d, w)) / s
            return h, [wi / s for wi in w]

        beta, lo, hi = 1.0, -math.inf, math.inf
        h, p = entropy(beta)
        for _ in range(max_iter):
            if abs(h - target) < tol:
                break
            if h - target > 0:
                lo = beta
                beta = beta * 2 if hi == math.inf else (beta + hi) / 2
            else:
                hi = beta
                beta = beta / 2 if lo == -math.inf else (beta + lo) / 2
            h, p = entropy(beta)
        if max(d) == 0:
            p = [1.0 / len(d)] * len(d)
        mass = defaultdict(float)
        for (_, j), pj in zip(cand, p):
            mass[labels[j]] += pj
        total += 1.0 / sum(v * v for v in mass.values())
    return total / n


def naive_avg_cosine(vectors):
    rows = [list(map(float, r)) for r in np.atleast_2d(vectors)]
    rows = [r for r in rows if any(v != 0 for v in r)]
    norms = [math.sqrt(sum(v * v for v in r)) for r in rows]
    s = 0.0
    for a, na in zip(rows, norms):
        for b, nb in zip(rows, norms):
            s += sum(u * v for u, v in zip(a, b)) / (na * nb)
    return s / len(rows) ** 2


def naive_knn_accuracy(ref, ref_labels, qry, qry_labels, k, top_n=(1, 5)):
    ref = np.asarray(ref).tolist()
    qry = np.asarray(qry).tolist()
    ref_labels = np.asarray(ref_labels).tolist()
    qry_labels = np.asarray(qry_labels).tolist()
    _guard(max(len(ref), len(qry)))
    hits = {t: 0 for t in top_n}
    for q, true in zip(qry, qry_labels):
        nb = sorted((_sqdist(q, r), j) for j, r in enumerate(ref))[:k]
        cnt, dsum = defaultdict(int), defaultdict(float)
        for d2, j in nb:
            cnt[ref_labels[j]] += 1
            dsum[ref_labels[j]] += math.sqrt(d2)
        ranked = sorted(cnt, key=lambda lab: (-cnt[lab], dsum[lab] / cnt[lab], lab))
        for t in top_n:
            hits[t] += true in ranked[:t]
    return {t: hits[t] / len(qry) for t in top_n}


def naive_percentile(values, pct):
    v = sorted(values)
    pos = pct / 100 * (len(v) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (v[hi] - v[lo]) * (pos - lo)


def naive_predicted_links(labels, centroids, low_pct=5, high_pct=95):
    labels = list(np.asarray(labels).tolist())
    cents = [list(map(float, c)) for c in np.asarray(centroids)]
    _guard(len(labels))
    pairs = []
    for i in range(len(cents)):
        for j in range(i + 1, len(cents)):
            a, b = cents[i], cents[j]
            na = math.sqrt(sum(v * v for v in a))
            nb = math.sqrt(sum(v * v for v in b))
            s = 0.0 if na == 0 or nb == 0 else sum(u * v for u, v in zip(a, b)) / (na * nb)
            pairs.append((max(-1.0, min(1.0, s)), labels[i], labels[j]))
    sims = [p[0] for p in pairs]
    lo, hi = naive_percentile(sims, low_pct), naive_percentile(sims, high_pct)
    return {tuple(sorted((a, b))) for s, a, b in pairs if s <= lo or s >= hi}


def naive_spearman(pred, actual):
    """Per-row Spearman correlation, averaged over rows."""
    rows = [_pearson(_avg_ranks(list(p)), _avg_ranks(list(a)))
            for p, a in zip(np.asarray(pred).tolist(), np.asarray(actual).tolist())]
    return sum(rows) / len(rows)


def naive_structural_distance(pred, actual, batches, is_control):
    """Return ``(distance, distance_max)`` with explicit per-element loops."""
    pred = np.asarray(pred).tolist()
    actual = np.asarray(actual).tolist()
    batches = list(np.asarray(batches).tolist())
    is_control = list(np.asarray(is_control).tolist())
    g = len(pred[0])
    dists, maxes = [], []
    for b in sorted(set(batches)):
        ctl = [i for i in range(len(pred)) if batches[i] == b and is_control[i]]
        prt = [i for i in range(len(pred)) if batches[i] == b and not is_control[i]]
        if not ctl or not prt:
            continue
        pm = [sum(pred[i][j] for i in ctl) / len(ctl) for j in range(g)]
        am = [sum(actual[i][j] for i in ctl) / len(ctl) for j in range(g)]
        sq = sa = 0.0
        for i in prt:
            for j in range(g):
                dp = pred[i][j] - pm[j]
                da = actual[i][j] - am[j]
                sq += (dp - da) ** 2
                sa += da * da
        dists.append(math.sqrt(sq) / len(prt))
        maxes.append(math.sqrt(sa) / len(prt))
    return sum(dists) / len(dists), 2 * sum(maxes) / len(maxes)


def jacobi_singular_values(a, tol=1e-14, max_sweeps=60):
    """Singular values by one-sided Jacobi rotations, sorted descending."""
    u = np.array(a, dtype=np.float64, copy=True)
    if u.shape[0] < u.shape[1]:
        u = u.T.copy()
    n = u.shape[1]
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = float(u[:, p] @ u[:, p])
                beta = float(u[:, q] @ u[:, q])
                gamma = float(u[:, p] @ u[:, q])
                if gamma == 0.0:
                    continue
                off = max(off, abs(gamma) / math.sqrt(alpha * beta))
                zeta = (beta - alpha) / (2 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1 + zeta * zeta))
                c = 1 / math.sqrt(1 + t * t)
                s = c * t
                up = u[:, p].copy()
                u[:, p] = c * up - s * u[:, q]
                u[:, q] = s * up + c * u[:, q]
        if off < tol:
            break
    return np.sort(np.linalg.norm(u, axis=0))[::-1]


def oracle_suite(dataset, embedding: str, pred=None, small_n: int = MAX_N,
                 perplexity: float = 10.0, knn_k: int | None = None) -> dict:
    """Reference metric values for a small dataset.

    The kNN reference/query sets are the first and second half of the sorted
    batch list. Spearman and structural distance compare `pred` (defaults to
    the per-batch control mean of the actual log expression) against the
    dataset's expression, log-normalized if it holds raw counts.
    """
    meta = dataset.metadata
    n = len(meta)
    _guard(n, small_n)
    x = np.asarray(dataset.embeddings[embedding].values, dtype=np.float64)
    out = {"ilisi_raw": naive_ilisi(x, meta.batch, perplexity=perplexity)}
    out["avg_cosine"] = {p: naive_avg_cosine(x[meta.perturbation == p])
                         for p in sorted(set(meta.perturbation.tolist()))}
    bl = meta.batches
    ref = np.isin(meta.batch, bl[: len(bl) // 2])
    k = knn_k or int(math.floor(math.sqrt(ref.sum())))
    out["knn"] = naive_knn_accuracy(x[ref], meta.perturbation[ref], x[~ref],
                                    meta.perturbation[~ref], k)
    rows = ~meta.is_control
    labs = sorted(set(meta.perturbation[rows].tolist()))
    cents = [x[meta.perturbation == lab].mean(axis=0) for lab in labs]
    out["predicted_links"] = naive_predicted_links(labs, cents)
    if dataset.expression is not None:
        y = np.asarray(dataset.expression.values, dtype=np.float64)
        if dataset.expression.layout_tag == "raw_counts":
            y = np.log1p(y / y.sum(axis=1, keepdims=True) * 1e4)
        if pred is None:
            pred = np.empty_like(y)
            for b in bl:
                r = meta.batch == b
                c = r & meta.is_control
                pred[r] = y[c].mean(axis=0) if c.any() else y[r].mean(axis=0)
        out["spearman"] = naive_spearman(pred, y)
        out["structural_distance"] = naive_structural_distance(pred, y, meta.batch,
                                                               meta.is_control)
    return out
