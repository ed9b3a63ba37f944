"""Synthetic perturbation screens with planted ground truth.

Cells get a latent state ``z = noise + batch offset + perturbation effect``.
Active perturbations belong to modules that share an effect direction, so
every within-module pair is a true link. Counts are drawn from a zero-inflated
negative binomial whose mean is a softplus-linear map of the latent state,
scaled by a per-cell library size. Silent targets have no effect and their
target genes are essentially never detected, which makes them a planted null
set for the consistency test.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import (CONTROL_LABEL, Dataset, EmbeddingMatrix, ExpressionMatrix,
                   LinkDatabase, Metadata)


@dataclass(frozen=True)
class SynthConfig:
    n_batches: int = 6
    cells_per_batch: int = 400
    n_perturbations: int = 40
    n_genes: int = 300
    latent_dim: int = 16
    n_modules: int = 8
    batch_effect_scale: float = 1.0
    perturbation_effect_scale: float = 3.0
    zero_inflation: float = 0.1
    dispersion: float = 10.0
    library_size_mean: float = 5000.0
    n_silent_targets: int = 100
    control_fraction: float = 0.1
    module_spread: float = 0.3
    seed: int = 0

    def __post_init__(self):
        counts = (self.n_batches, self.cells_per_batch, self.n_perturbations,
                  self.n_genes, self.latent_dim, self.n_modules)
        if min(counts) < 1:
            raise ValueError("all counts must be >= 1")
        if self.n_silent_targets < 0:
            raise ValueError("n_silent_targets must be >= 0")
        if min(self.batch_effect_scale, self.perturbation_effect_scale,
               self.module_spread) < 0:
            raise ValueError("scales must be >= 0")
        if not 0 <= self.zero_inflation < 1:
            raise ValueError("zero_inflation must lie in [0, 1)")
        if self.dispersion <= 0 or self.library_size_mean <= 0:
            raise ValueError("dispersion and library_size_mean must be positive")
        if self.n_perturbations + self.n_silent_targets > self.n_genes:
            raise ValueError("need one distinct target gene per perturbation")
        if not 0 < self.control_fraction < 1:
            raise ValueError("control_fraction must lie in (0, 1)")

    @classmethod
    def from_json(cls, path) -> "SynthConfig":
        return cls(**json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class SynthResult:
    dataset: Dataset
    true_latent: np.ndarray
    true_links: LinkDatabase
    silent_targets: list
    config: SynthConfig


def _softplus(x):
    return np.logaddexp(0.0, x)


def _cell_rng(seed: int, i: int) -> np.random.Generator:
    # counter-style stream per cell: independent of generation order
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, i)))


def generate(config: SynthConfig = SynthConfig()) -> SynthResult:
    cfg = config
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0,)))
    genes = np.array([f"G{i:05d}" for i in range(cfg.n_genes)])
    targets = rng.choice(cfg.n_genes, cfg.n_perturbations + cfg.n_silent_targets,
                         replace=False)
    active = genes[targets[:cfg.n_perturbations]]
    silent = genes[targets[cfg.n_perturbations:]]

    # planted modules
    L = cfg.latent_dim
    module_of = rng.permutation(cfg.n_perturbations) % cfg.n_modules
    dirs = rng.standard_normal((cfg.n_modules, L))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    own = rng.standard_normal((cfg.n_perturbations, L))
    own /= np.linalg.norm(own, axis=1, keepdims=True)
    eff = dirs[module_of] + cfg.module_spread * own
    eff /= np.linalg.norm(eff, axis=1, keepdims=True)
    effects = {p: cfg.perturbation_effect_scale * eff[j] for j, p in enumerate(active)}
    effects.update({p: np.zeros(L) for p in silent})
    effects[CONTROL_LABEL] = np.zeros(L)
    offsets = cfg.batch_effect_scale * rng.standard_normal((cfg.n_batches, L))

    # gene map: softplus(z @ A + c); silent target genes are switched off
    A = rng.standard_normal((L, cfg.n_genes)) / np.sqrt(L)
    c = rng.normal(0.0, 1.0, cfg.n_genes)
    off = np.isin(genes, silent)

    labels_all = np.concatenate([active, silent])
    perts, batches = [], []
    for b in range(cfg.n_batches):
        n_ctl = max(1, int(round(cfg.control_fraction * cfg.cells_per_batch)))
        n_pert = cfg.cells_per_batch - n_ctl
        cyc = np.resize(rng.permutation(labels_all), n_pert)
        lab = np.concatenate([np.full(n_ctl, CONTROL_LABEL), cyc])
        perts.append(lab[rng.permutation(len(lab))])
        batches.append(np.full(len(lab), f"batch{b:03d}"))
    perts = np.concatenate(perts)
    batches = np.concatenate(batches)
    bidx = np.array([int(s[5:]) for s in batches])

    n = len(perts)
    latent = np.empty((n, L))
    counts = np.empty((n, cfg.n_genes), dtype=np.float32)
    sigma = 0.3
    mu_log = np.log(cfg.library_size_mean) - sigma ** 2 / 2
    for i in range(n):
        r = _cell_rng(cfg.seed, i)
        z = r.standard_normal(L) + offsets[bidx[i]] + effects[perts[i]]
        latent[i] = z
        rate = _softplus(z @ A + c)
        rate[off] = 0.0
        mean = r.lognormal(mu_log, sigma) * rate / rate.sum()
        w = r.gamma(cfg.dispersion, mean / cfg.dispersion)
        y = r.poisson(w)
        y[r.random(cfg.n_genes) < cfg.zero_inflation] = 0
        counts[i] = y

    meta = Metadata.from_labels(perts, batches,
                                sample_id=np.array([f"cell{i:06d}" for i in range(n)]))
    expr = ExpressionMatrix(counts, genes.tolist(), "raw_counts")
    ds = Dataset(meta, expr, {"true_latent": EmbeddingMatrix(latent.astype(np.float32),
                                                             "synthetic:true_latent")})
    pairs = [(active[i], active[j]) for i in range(len(active))
             for j in range(i + 1, len(active)) if module_of[i] == module_of[j]]
    links = LinkDatabase.from_pairs(pairs, "true_links")
    return SynthResult(ds, latent, links, sorted(silent.tolist()), cfg)


def write_synth(result: SynthResult, out_dir) -> None:
    """Write the bundle plus ``true_links.tsv``, ``silent_targets.txt`` and the config."""
    from .data import write_bundle, write_link_db

    out = Path(out_dir)
    write_bundle(result.dataset, out)
    write_link_db(result.true_links, out / "true_links.tsv")
    (out / "silent_targets.txt").write_text("".join(f"{g}\n" for g in result.silent_targets))
    (out / "synth_config.json").write_text(
        json.dumps(asdict(result.config), indent=2, sort_keys=True) + "\n")
