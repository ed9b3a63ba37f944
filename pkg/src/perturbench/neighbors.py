"""Exact k-nearest-neighbour search by blocked brute force."""

from __future__ import annotations

import numpy as np


def _sq_norms(x):
    return np.einsum("ij,ij->i", x, x)


def knn_search(reference, query=None, k: int = 10, block_size: int = 1024,
               exclude_self: bool | None = None):
    """Exact Euclidean kNN.

    Parameters
    ----------
    reference : (n_ref, d) array
    query : (n_q, d) array, optional
        Defaults to `reference`, in which case each point's own row is excluded.
    k : int
    block_size : int
        Queries are processed in blocks of this many rows to bound memory.

    Returns
    -------
    indices : (n_q, k) int array
        Neighbour row indices, ordered by increasing distance (ties by index).
    sq_dist : (n_q, k) float array
        Squared Euclidean distances, recomputed directly for the selected pairs.
    """
    ref = np.asarray(reference, dtype=np.float64)
    same = query is None
    qry = ref if same else np.asarray(query, dtype=np.float64)
    if exclude_self is None:
        exclude_self = same
    n_ref = ref.shape[0]
    avail = n_ref - 1 if exclude_self else n_ref
    if not 1 <= k <= avail:
        raise ValueError(f"k={k} must be in [1, {avail}]")
    ref_sq = _sq_norms(ref)
    out_idx = np.empty((qry.shape[0], k), dtype=np.int64)
    out_d = np.empty((qry.shape[0], k))
    for start in range(0, qry.shape[0], block_size):
        q = qry[start:start + block_size]
        d2 = _sq_norms(q)[:, None] + ref_sq[None, :] - 2.0 * (q @ ref.T)
        if exclude_self:
            rows = np.arange(q.shape[0])
            d2[rows, start + rows] = np.inf
        if k < n_ref:
            part = np.argpartition(d2, k - 1, axis=1)[:, :k]
        else:
            part = np.broadcast_to(np.arange(n_ref), (q.shape[0], n_ref)).copy()
        # exact distances for the candidates, then order by (distance, index)
        diff = q[:, None, :] - ref[part]
        exact = np.einsum("ijk,ijk->ij", diff, diff)
        order = np.lexsort((part, exact), axis=1)
        out_idx[start:start + q.shape[0]] = np.take_along_axis(part, order, axis=1)
        out_d[start:start + q.shape[0]] = np.take_along_axis(exact, order, axis=1)
    return out_idx, out_d
