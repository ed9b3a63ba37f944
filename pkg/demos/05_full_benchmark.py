"""
The whole benchmark in one call
===============================

`run_pipeline` sweeps embeddings, post-processing methods, tasks and seeds,
and adds a "best" row per metric. The same run is available from the shell:

    perturbench synth --out screen
    perturbench eval all --bundle screen --embedding pca --embedding random \\
        --db screen/true_links.tsv --out report
"""

import tempfile
from pathlib import Path

from perturbench.pipeline import RunConfig, emit_report, run_pipeline
from perturbench.synth import SynthConfig, generate, write_synth

work = Path(tempfile.mkdtemp())
write_synth(generate(SynthConfig(n_batches=6, cells_per_batch=300, n_perturbations=30,
                                 n_silent_targets=100, n_genes=300, n_modules=10,
                                 seed=5)), work / "screen")

cfg = RunConfig(bundle=str(work / "screen"), embeddings=["true_latent", "pca", "random"],
                seeds=[0, 1], pca_dim=16, random_dim=16, probe_epochs=50, recon_epochs=10,
                dbs=[str(work / "screen" / "true_links.tsv")])
report = run_pipeline(cfg)
for r in report.rows:
    if r.post_processing == "best":
        print(f"{r.embedding:12s} {r.task:12s} {r.metric:22s} {r.mean:.3f} ({r.note})")

paths = emit_report(report, work / "report")
print("wrote", [p.name for p in paths])
