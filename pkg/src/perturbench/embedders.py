"""Model-free baseline embedders: randomized PCA and random Gaussian vectors."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import EmbeddingMatrix, Metadata


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray              # (d_in,)
    components: np.ndarray        # (d_in, d_out), orthonormal columns
    singular_values: np.ndarray   # (d_out,), non-increasing
    total_variance: float         # sum of squares of the centred fit data / n
    n_fit: int
    seed: int

    @property
    def d_out(self) -> int:
        return self.components.shape[1]

    @property
    def explained_variance(self) -> np.ndarray:
        return self.singular_values ** 2 / self.n_fit

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        if self.total_variance == 0:
            return np.zeros_like(self.singular_values)
        return self.explained_variance / self.total_variance

    @property
    def provenance(self) -> str:
        return f"pca:d={self.d_out}:seed={self.seed}"

    def inverse_transform(self, scores) -> np.ndarray:
        return np.asarray(scores) @ self.components.T + self.mean


def _range_finder(x, size, power_iters, rng):
    q, _ = np.linalg.qr(x @ rng.standard_normal((x.shape[1], size)))
    for _ in range(power_iters):
        q, _ = np.linalg.qr(x.T @ q)
        q, _ = np.linalg.qr(x @ q)
    return q


def fit_pca(expr, d_out: int = 256, seed: int = 0, oversample: int = 10,
            power_iters: int = 4) -> PcaModel:
    """Fit PCA with a randomized range finder followed by an exact small SVD.

    `expr` may be an `ExpressionMatrix` or any 2-D array. No normalization is
    applied; pass raw counts to reproduce the count-space baseline.
    """
    x = np.asarray(expr, dtype=np.float64)
    n, g = x.shape
    if n < 2:
        raise ValueError("need at least two samples")
    if not 1 <= d_out <= min(n, g):
        raise ValueError(f"d_out={d_out} must be in [1, {min(n, g)}]")
    rng = np.random.default_rng(seed)
    mean = x.mean(axis=0)
    xc = x - mean
    size = min(d_out + oversample, n, g)
    q = _range_finder(xc, size, power_iters, rng)
    _, s, vt = np.linalg.svd(q.T @ xc, full_matrices=False)
    s, comps = s[:d_out], vt[:d_out].T
    # sign convention: largest-magnitude loading of each component is positive
    pivot = np.argmax(np.abs(comps), axis=0)
    signs = np.sign(comps[pivot, np.arange(d_out)])
    signs[signs == 0] = 1.0
    comps = comps * signs
    if s[0] > 0 and s[-1] < 1e-10 * s[0]:
        warnings.warn("data is rank deficient: trailing singular values are ~0",
                      stacklevel=2)
    return PcaModel(mean=mean, components=comps, singular_values=s,
                    total_variance=float(np.sum(xc * xc)) / n, n_fit=n, seed=seed)


def transform_pca(model: PcaModel, expr) -> EmbeddingMatrix:
    x = np.asarray(expr, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.mean.shape[0]:
        raise ValueError(
            f"expected {model.mean.shape[0]} input features, got shape {x.shape}"
        )
    return EmbeddingMatrix((x - model.mean) @ model.components, model.provenance)


def random_embed(n: int, d: int, seed: int = 0) -> EmbeddingMatrix:
    """I.i.d. standard normal embedding, determined only by ``(n, d, seed)``."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    rng = np.random.default_rng(seed)
    return EmbeddingMatrix(rng.standard_normal((n, d)), f"random:d={d}:seed={seed}")


def shuffle_labels(meta: Metadata, seed: int = 0) -> Metadata:
    """Permute perturbation labels across rows (a label-shuffle null).

    Batches and sample ids stay in place, so the control flag moves with the
    label.
    """
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(meta))
    return Metadata.from_labels(meta.perturbation[perm], meta.batch,
                                sample_id=meta.sample_id, cell_line=meta.cell_line,
                                control_label=meta.control_label)
