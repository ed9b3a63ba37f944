"""Acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line (also collected into the terminal
summary) and then asserts.
"""

import itertools
import time

import numpy as np

from perturbench.data import (LinkDatabase, bundle_checksum, load_bundle, write_bundle)
from perturbench.embedders import fit_pca, random_embed
from perturbench.metrics import (ProbeHyper, avg_cosine, consistency_test, ilisi,
                                 knn_accuracy, known_relationship_recall, predicted_links,
                                 spearman_score, structural_integrity, topk_accuracy,
                                 train_linear_probe)
from perturbench.metrics.recall import PerturbationMap
from perturbench.oracles import (jacobi_singular_values, naive_avg_cosine, naive_ilisi,
                                 naive_knn_accuracy, naive_predicted_links, naive_spearman,
                                 naive_structural_distance)
from perturbench.pipeline import RunConfig, emit_report, run_pipeline
from perturbench.postprocess import apply_tvn, fit_tvn
from perturbench.synth import SynthConfig, generate, write_synth

from conftest import ACCEPTANCE_LINES, make_meta


def verdict(num, ok, detail):
    line = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_01_random_recall():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    genes = [f"g{i:03d}" for i in range(200)]
    labels = np.array(genes)[np.arange(5000) % 200]
    meta = make_meta(labels, np.array(["b0", "b1"])[np.arange(5000) % 2])
    emb = random_embed(5000, 64, seed=7).values
    pairs = list(itertools.combinations(genes, 2))
    dbs = []
    for name in ("db_a", "db_b", "db_c"):
        pick = rng.choice(len(pairs), 500, replace=False)
        dbs.append(LinkDatabase.from_pairs([pairs[i] for i in pick], name))
    rec = known_relationship_recall(emb, meta, dbs)
    dt = time.perf_counter() - t0
    ok = all(abs(v - 0.10) <= 0.03 for v in rec.values()) and dt < 10
    verdict(1, ok, "recall " + ", ".join(f"{k}={v:.3f}" for k, v in rec.items())
            + f" (target 0.10+-0.03), {dt:.1f}s < 10s")


def test_criterion_02_random_ilisi():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    scores = {}
    for b in range(2, 9):
        x = rng.standard_normal((2000, 16))
        labels = np.arange(2000) % b
        scores[b] = ilisi(x, labels).normalized
    dt = time.perf_counter() - t0
    ok = all(abs(v - 1.0) <= 0.03 for v in scores.values()) and dt < 30
    verdict(2, ok, "iLISI " + " ".join(f"B{b}={v:.3f}" for b, v in scores.items())
            + f" (target 1.00+-0.03), {dt:.1f}s < 30s")


def test_criterion_03_null_consistency():
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    n_pert, K, reps, d = 1000, 1000, 4, 16
    names = [f"P{i}" for i in range(n_pert)] + [f"N{i}" for i in range(K)]
    labels = np.repeat(names, reps)
    x = rng.standard_normal((len(labels), d)) + 0.2
    meta = make_meta(labels, ["b0"] * len(labels))
    res = consistency_test(x, meta, names[n_pert:])
    dt = time.perf_counter() - t0
    ok = res.null_size == K and abs(res.fraction_significant - 0.05) <= 0.02 and dt < 60
    verdict(3, ok, f"fraction significant {res.fraction_significant:.4f} with K={K} "
            f"(target 0.05+-0.02), {dt:.1f}s < 60s")


def _si_data(seed):
    rng = np.random.default_rng(seed)
    perts = (["non-targeting"] * 10 + [f"p{i}" for i in range(40)]) * 3
    batches = np.repeat(["b0", "b1", "b2"], 50)
    actual = np.log1p(rng.gamma(1.5, 3.0, (150, 80)))
    actual[50:100] += 0.3
    return make_meta(perts, batches), actual


def test_criterion_04_structural_integrity_anchors():
    t0 = time.perf_counter()
    meta, actual = _si_data(404)
    ident = structural_integrity(actual, actual, meta).integrity
    ctl = np.empty_like(actual)
    for b in meta.batches:
        rows = meta.batch == b
        ctl[rows] = actual[rows & meta.is_control].mean(axis=0)
    half = structural_integrity(ctl, actual, meta).integrity
    anti = structural_integrity(2 * ctl - actual, actual, meta).integrity
    dt = time.perf_counter() - t0
    ok = ident == 1.0 and abs(half - 0.5) <= 1e-6 and anti == 0.0 and dt < 5
    verdict(4, ok, f"identical={ident!r} centered-zero={half:.9f} antipodal={anti!r}, "
            f"{dt:.2f}s < 5s")


def test_criterion_05_oracle_equivalence():
    t0 = time.perf_counter()
    worst = dict.fromkeys(["ilisi", "avg_cosine", "knn", "links", "spearman",
                           "structural"], 0.0)
    for seed in range(20):
        rng = np.random.default_rng(5000 + seed)
        x = rng.standard_normal((300, 5))
        lab = rng.integers(0, 3, 300)
        x[lab == 0] += 0.8
        worst["ilisi"] = max(worst["ilisi"], abs(
            ilisi(x, lab, perplexity=10).raw - naive_ilisi(x, lab, perplexity=10)))

        v = rng.standard_normal((20, 12))
        worst["avg_cosine"] = max(worst["avg_cosine"], abs(avg_cosine(v) - naive_avg_cosine(v)))

        ref, qry = rng.standard_normal((400, 4)), rng.standard_normal((200, 4))
        rl, ql = rng.integers(0, 15, 400), rng.integers(0, 15, 200)
        ref[:, 0] += 0.2 * rl
        qry[:, 0] += 0.2 * ql
        fast = knn_accuracy(ref, rl, qry, ql)
        slow = naive_knn_accuracy(ref, rl, qry, ql, k=20)
        worst["knn"] = max(worst["knn"], max(abs(fast[n] - slow[n]) for n in (1, 5)))

        names = np.array([f"g{i:02d}" for i in range(60)])
        pm = PerturbationMap(names, rng.standard_normal((60, 8)))
        if predicted_links(pm) != naive_predicted_links(names, pm.centroids):
            worst["links"] = 1.0

        p, a = rng.standard_normal((50, 30)), rng.standard_normal((50, 30))
        p = np.round(p, 1)  # force some ties
        worst["spearman"] = max(worst["spearman"], abs(spearman_score(p, a) - naive_spearman(p, a)))

        meta = make_meta((["non-targeting"] * 5 + [f"p{i}" for i in range(20)]) * 2,
                         np.repeat(["b0", "b1"], 25))
        si = structural_integrity(p, a, meta)
        nd, nmax = naive_structural_distance(p, a, meta.batch, meta.is_control)
        worst["structural"] = max(worst["structural"], abs(si.distance - nd),
                                  abs(si.distance_max - nmax))
    dt = time.perf_counter() - t0
    ok = all(v <= 1e-6 for v in worst.values()) and dt < 120
    verdict(5, ok, "max |fast-naive| over 20 seeds: "
            + ", ".join(f"{k}={v:.1e}" for k, v in worst.items()) + f", {dt:.1f}s < 120s")


def test_criterion_06_synthetic_hierarchy(tmp_path):
    t0 = time.perf_counter()
    cfg = SynthConfig(n_batches=8, cells_per_batch=400, n_perturbations=40,
                      n_silent_targets=100, n_genes=300, n_modules=8, latent_dim=16,
                      perturbation_effect_scale=3.0, seed=606)
    write_synth(generate(cfg), tmp_path)
    run = RunConfig(bundle=str(tmp_path), embeddings=["true_latent", "pca", "random"],
                    tasks=["probe", "consistency", "knn", "recall"], seeds=[0, 1],
                    pca_dim=16, random_dim=16, dbs=[str(tmp_path / "true_links.tsv")])
    rep = run_pipeline(run)
    dt = time.perf_counter() - t0

    def best(emb, task, metric):
        return rep.get(emb, "best", task, metric).mean

    checks = {
        "probe top1": ("probe", "top1"),
        "consistency": ("consistency", "fraction_significant"),
        "knn top1": ("knn", "top1"),
        "recall": ("recall", "recall_true_links"),
    }
    vals, ok = [], not rep.errors
    for name, (task, metric) in checks.items():
        t, r = best("true_latent", task, metric), best("random", task, metric)
        ok &= t > r
        vals.append(f"{name} true={t:.3f}>random={r:.3f}")
    pca = best("pca", "recall", "recall_true_links")
    t, r = best("true_latent", "recall", "recall_true_links"), best("random", "recall",
                                                                    "recall_true_links")
    ok &= r < pca <= t
    ok &= dt < 300
    verdict(6, ok, "; ".join(vals) + f"; recall random<pca={pca:.3f}<=true, {dt:.0f}s < 300s")


def test_criterion_07_tvn():
    rng = np.random.default_rng(707)
    n, d = 5000, 16
    meta = make_meta(["non-targeting"] * n, ["b0"] * n)
    mix = rng.standard_normal((d, d))
    x = rng.standard_normal((n, d)) @ mix + rng.normal(0, 2, d)
    out = apply_tvn(fit_tvn(x, meta), x)
    err = np.linalg.norm(np.cov(out.T, bias=True) - np.eye(d)) / d
    z = rng.standard_normal((n, d))
    z -= z.mean(axis=0)
    w, v = np.linalg.eigh(z.T @ z / n)
    z = z @ v @ np.diag(w ** -0.5) @ v.T
    t_err = np.abs(fit_tvn(z, meta).matrix - np.eye(d)).max()
    ok = err <= 1e-2 and t_err <= 1e-3
    verdict(7, ok, f"whitened covariance error {err:.2e} <= 1e-2; white input max|T-I| "
            f"{t_err:.2e} <= 1e-3")


def test_criterion_08_pca():
    worst, mono = 0.0, True
    for seed in range(10):
        x = np.random.default_rng(800 + seed).standard_normal((50, 20))
        m = fit_pca(x, 5, seed=seed)
        ref = jacobi_singular_values(x - x.mean(axis=0))[:5]
        worst = max(worst, float(np.max(np.abs(m.singular_values - ref) / ref)))
        mono &= bool(np.all(np.diff(m.explained_variance) <= 0))
    ok = worst <= 1e-4 and mono
    verdict(8, ok, f"max relative singular value error {worst:.1e} <= 1e-4; "
            f"explained variance non-increasing: {mono}")


def test_criterion_09_probe_knn_ceiling_and_chance():
    rng = np.random.default_rng(909)
    C, d, per = 10, 16, 300
    centers = 8 * rng.standard_normal((C, d))

    def blobs(n):
        y = np.repeat(np.arange(C), n)
        return centers[y] + rng.standard_normal((len(y), d)), y

    xtr, ytr = blobs(per)
    xte, yte = blobs(per // 3)
    probe = train_linear_probe(xtr, ytr, ProbeHyper())
    p_ceiling = topk_accuracy(probe, xte, yte, (1,))[1]
    k_ceiling = knn_accuracy(xtr, ytr, xte, yte, top_n_list=(1,))[1]

    # labels shuffled over the whole dataset on balanced classes: they carry no
    # information about the rows, so the expected top-1 is exactly 1/C
    chance = 1.0 / C
    ys, yq = rng.permutation(ytr), rng.permutation(yte)
    shuffled = train_linear_probe(xtr, ys, ProbeHyper())
    p_chance = topk_accuracy(shuffled, xte, yq, (1,))[1]
    k_chance = knn_accuracy(xtr, ys, xte, yq, top_n_list=(1,))[1]
    ok = (p_ceiling >= 0.95 and k_ceiling >= 0.95
          and abs(p_chance - chance) <= 0.05 and abs(k_chance - chance) <= 0.05)
    verdict(9, ok, f"blobs probe={p_ceiling:.3f} knn={k_ceiling:.3f} (>=0.95); shuffled "
            f"probe={p_chance:.3f} knn={k_chance:.3f} (chance {chance:.2f}+-0.05)")


def test_criterion_10_determinism(tmp_path):
    cfg = SynthConfig(n_batches=3, cells_per_batch=150, n_perturbations=10,
                      n_silent_targets=10, n_genes=50, n_modules=3, seed=1010)
    res = generate(cfg)
    write_synth(res, tmp_path / "bundle")
    write_bundle(res.dataset, tmp_path / "plain")
    ds = load_bundle(tmp_path / "plain")
    write_bundle(ds, tmp_path / "again")
    back = load_bundle(tmp_path / "again")
    bit_exact = (ds.expression.values.tobytes() == res.dataset.expression.values.tobytes()
                 and back.expression.values.tobytes() == ds.expression.values.tobytes()
                 and all(back.embeddings[k].values.tobytes() == ds.embeddings[k].values.tobytes()
                         for k in ds.embeddings)
                 and back.metadata.perturbation.tolist() == ds.metadata.perturbation.tolist()
                 and bundle_checksum(tmp_path / "plain") == bundle_checksum(tmp_path / "again"))

    run = RunConfig(bundle=str(tmp_path / "bundle"), embeddings=["true_latent", "random"],
                    tasks=["mixing", "probe", "knn", "recall", "recon"], seeds=[0, 1],
                    perplexity=10, random_dim=8, probe_epochs=10, recon_epochs=3,
                    dbs=[str(tmp_path / "bundle" / "true_links.tsv")])
    same = True
    emit_report(run_pipeline(run), tmp_path / "r1")
    emit_report(run_pipeline(run), tmp_path / "r2")
    for name in ("report.tsv", "report_per_seed.tsv", "report.json"):
        same &= (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()
    verdict(10, bit_exact and same, f"bundle round-trip bit-exact: {bit_exact}; "
            f"rerun reports byte-identical: {same}")
