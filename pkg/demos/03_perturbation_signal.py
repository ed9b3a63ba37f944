"""
Does the embedding see the perturbations?
=========================================

Four views of perturbation signal: a linear probe and kNN lookup across
held-out batches, a consistency test against unexpressed target genes, and
recall of known gene pairs from centroid similarities.
"""

import numpy as np

from perturbench.embedders import random_embed
from perturbench.metrics import (ProbeHyper, consistency_test, knn_accuracy,
                                 known_relationship_recall, select_null_perturbations,
                                 topk_accuracy, train_linear_probe)
from perturbench.postprocess import center
from perturbench.preprocess import make_probe_split
from perturbench.synth import SynthConfig, generate

res = generate(SynthConfig(n_batches=6, cells_per_batch=400, n_perturbations=30,
                           n_silent_targets=100, n_genes=300, n_modules=10, seed=3))
ds = res.dataset
meta = ds.metadata

split = make_probe_split(meta, train_frac=0.7, seed=0)
train, test = split.masks(meta)
null = select_null_perturbations(ds.expression, meta, 0.01, min_null=100)
print(len(null), "null genes found; planted:", len(res.silent_targets))

embeddings = {
    "true latent": res.true_latent,
    "random": random_embed(ds.n_samples, 16, seed=0).values,
}
for name, x in embeddings.items():
    x = center(x, meta)
    probe = train_linear_probe(x[train], meta.perturbation[train],
                               ProbeHyper(total_epochs=60))
    keep = test & np.isin(meta.perturbation, probe.class_labels)
    p = topk_accuracy(probe, x[keep], meta.perturbation[keep])
    k = knn_accuracy(x[train], meta.perturbation[train], x[test], meta.perturbation[test])
    c = consistency_test(x, meta, null)
    r = known_relationship_recall(x, meta, [res.true_links])
    print(f"{name:12s} probe top1={p[1]:.3f} top5={p[5]:.3f}  knn top1={k[1]:.3f}  "
          f"consistent={c.fraction_significant:.2f}  recall={r['true_links']:.2f}")
