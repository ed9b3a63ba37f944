"""
A synthetic screen on disk
==========================

Generate a small screen with planted modules and silent targets, write it
as a bundle, load it back and add a PCA embedding.
"""

import tempfile
from pathlib import Path

import numpy as np

from perturbench.data import EmbeddingMatrix, load_bundle, write_bundle
from perturbench.embedders import fit_pca, transform_pca
from perturbench.preprocess import filter_min_counts, normalize_log1p
from perturbench.synth import SynthConfig, generate, write_synth

cfg = SynthConfig(n_batches=4, cells_per_batch=300, n_perturbations=24,
                  n_silent_targets=30, n_genes=200, n_modules=6, seed=1)
res = generate(cfg)
ds = res.dataset
print(ds.n_samples, "cells,", ds.expression.n_genes, "genes,",
      len(ds.metadata.batches), "batches")
print(len(res.true_links), "planted links,", len(res.silent_targets), "silent targets")

out = Path(tempfile.mkdtemp()) / "screen"
write_synth(res, out)
print(sorted(p.name for p in out.iterdir()))

# low-count cells go first; the synthetic library sizes sit well above 1000
ds = load_bundle(out)
keep = filter_min_counts(ds.expression, 1000)
print("cells kept:", int(keep.sum()), "of", len(keep))

# the PCA baseline works on raw counts; log-normalized values are what the
# decoder tasks predict
lognorm = normalize_log1p(ds.expression)
print("log-normalized range:", float(lognorm.values.min()), "to",
      round(float(lognorm.values.max()), 2))
model = fit_pca(ds.expression, d_out=16, seed=0)
print("explained variance, first 5 components:",
      np.round(model.explained_variance_ratio[:5], 3))
emb = transform_pca(model, ds.expression)
ds = ds.with_embedding("pca", EmbeddingMatrix(emb.values.astype(np.float32), emb.provenance))
write_bundle(ds, out)
print("embeddings now in bundle:", sorted(load_bundle(out).embeddings))
