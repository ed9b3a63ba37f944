"""Embedding post-processing: control centering, center scaling and TVN.

All transforms are affine and keep the row count and dimension. Functions take
and return plain ``(n, d)`` arrays; `EmbeddingMatrix` inputs are accepted.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import Metadata

METHODS = ("raw", "center", "center_scale", "tvn")
MODES = ("per_batch_control", "global")
STD_FLOOR = 1e-8
EIG_FLOOR = 1e-6


def _stats_per_batch(x, meta, mode, with_std):
    """Row-aligned (mean, std) arrays used for centering/scaling."""
    mu = np.empty_like(x)
    sd = np.ones_like(x) if with_std else None
    if mode == "global":
        mu[:] = x.mean(axis=0)
        if with_std:
            sd[:] = x.std(axis=0)
        return mu, sd
    if mode != "per_batch_control":
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    missing = []
    for b in np.unique(meta.batch):
        rows = meta.batch == b
        ref = x[rows & meta.is_control]
        if ref.shape[0] == 0:
            missing.append(b)
            ref = x
        mu[rows] = ref.mean(axis=0)
        if with_std:
            sd[rows] = ref.std(axis=0)
    if missing:
        warnings.warn(f"{len(missing)} batches have no controls; using the global "
                      f"mean for them: {missing[:5]}", stacklevel=3)
    return mu, sd


def center(emb, meta: Metadata, mode: str = "per_batch_control") -> np.ndarray:
    """Subtract the per-batch control mean (default) or the global feature mean."""
    x = np.asarray(emb, dtype=np.float64)
    mu, _ = _stats_per_batch(x, meta, mode, with_std=False)
    return x - mu


def center_scale(emb, meta: Metadata, mode: str = "per_batch_control") -> np.ndarray:
    x = np.asarray(emb, dtype=np.float64)
    mu, sd = _stats_per_batch(x, meta, mode, with_std=True)
    if np.any(sd < STD_FLOOR):
        warnings.warn("constant features found; their scale is floored", stacklevel=2)
    return (x - mu) / np.maximum(sd, STD_FLOOR)


@dataclass(frozen=True)
class TvnTransform:
    control_mean: np.ndarray
    control_std: np.ndarray
    rotation: np.ndarray      # W, columns are eigenvectors
    eigenvalues: np.ndarray   # D, floored

    @property
    def matrix(self) -> np.ndarray:
        """T = W D^{-1/2} W^T."""
        w = self.rotation
        return (w / np.sqrt(self.eigenvalues)) @ w.T


def fit_tvn(emb, meta: Metadata) -> TvnTransform:
    """Fit typical-variation normalization on the pooled control rows."""
    x = np.asarray(emb, dtype=np.float64)
    ctl = x[meta.is_control]
    n_ctl, d = ctl.shape
    if n_ctl == 0:
        raise ValueError("TVN needs at least one control sample")
    if n_ctl < d + 1:
        warnings.warn(f"only {n_ctl} controls for {d} dims; control covariance is "
                      "rank deficient and small eigenvalues are floored", stacklevel=2)
    mu = ctl.mean(axis=0)
    sd = np.maximum(ctl.std(axis=0), STD_FLOOR)
    z = (ctl - mu) / sd
    cov = z.T @ z / n_ctl
    evals, evecs = np.linalg.eigh(cov)
    evals = np.maximum(evals, EIG_FLOOR * max(evals.max(), STD_FLOOR))
    return TvnTransform(mu, sd, evecs, evals)


def apply_tvn(t: TvnTransform, emb) -> np.ndarray:
    x = np.asarray(emb, dtype=np.float64)
    return ((x - t.control_mean) / t.control_std) @ t.matrix


def postprocess(emb, meta: Metadata, method: str, mode: str = "per_batch_control"):
    """Apply one of ``raw``, ``center``, ``center_scale``, ``tvn``."""
    if method == "raw":
        return np.asarray(emb, dtype=np.float64)
    if method == "center":
        return center(emb, meta, mode)
    if method == "center_scale":
        return center_scale(emb, meta, mode)
    if method == "tvn":
        return apply_tvn(fit_tvn(emb, meta), emb)
    raise ValueError(f"unknown post-processing {method!r}; expected one of {METHODS}")
