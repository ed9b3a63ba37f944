"""
Decoding expression back from an embedding
==========================================

Fit a small decoder from embedding to log expression on training batches,
then score held-out perturbations with Spearman correlation and Structural
Integrity. Integrity is 1 for a perfect decoder and 0.5 for one that only
predicts the control mean.
"""

import numpy as np

from perturbench.embedders import random_embed
from perturbench.metrics import (DecoderHyper, spearman_score, structural_integrity,
                                 train_decoder)
from perturbench.preprocess import make_recon_split, normalize_log1p
from perturbench.synth import SynthConfig, generate

res = generate(SynthConfig(n_batches=4, cells_per_batch=500, n_perturbations=20,
                           n_silent_targets=0, n_genes=120, seed=4))
meta = res.dataset.metadata
y = normalize_log1p(res.dataset.expression).values

split = make_recon_split(meta, train_frac=0.7, pert_holdout_frac=0.3, seed=0)
train, test = split.masks(meta)
print("held-out perturbations:", split.held_out_perturbations)

hyper = DecoderHyper(lr=1e-2, total_epochs=30)
for name, x in {"true latent": res.true_latent,
                "random": random_embed(len(meta), 16, seed=0).values}.items():
    dec = train_decoder(x[train], y[train], hyper)
    pred = dec.predict(x[test])
    si = structural_integrity(pred, y[test], meta.subset(np.flatnonzero(test)))
    print(f"{name:12s} spearman(sample)={spearman_score(pred, y[test]):.3f} "
          f"spearman(gene)={spearman_score(pred, y[test], axis='gene'):.3f} "
          f"integrity={si.integrity:.3f}")
