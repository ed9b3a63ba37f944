import json

import numpy as np
import pytest

from perturbench.cli import main
from perturbench.data import load_bundle
from perturbench.pipeline import (MetricReport, ReportRow, RunConfig, emit_report,
                                  load_report, run_pipeline)
from perturbench.synth import SynthConfig, generate, write_synth


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    write_synth(generate(SynthConfig(n_batches=4, cells_per_batch=120, n_perturbations=12,
                                     n_silent_targets=12, n_genes=60, n_modules=4,
                                     latent_dim=8, seed=2)), out)
    return out


def _cfg(bundle, **kw):
    base = dict(bundle=str(bundle), embeddings=["true_latent", "random"], seeds=[0, 1],
                post_processing=["raw", "center"], perplexity=10, pca_dim=8, random_dim=8,
                probe_epochs=5, recon_epochs=3, min_null=5, dbs=[str(bundle / "true_links.tsv")])
    base.update(kw)
    return RunConfig(**base)


def test_mixing_only(bundle):
    rep = run_pipeline(_cfg(bundle, tasks=["mixing"]))
    assert {r.task for r in rep.rows} == {"mixing"}
    assert not rep.errors
    assert {r.metric for r in rep.rows} == {"ilisi", "ilisi_raw", "ilisi_theoretical"}


def test_all_tasks_and_best_rows(bundle):
    rep = run_pipeline(_cfg(bundle, embeddings=["pca", "random"]))
    assert not rep.errors, [r.note for r in rep.errors]
    tasks = {r.task for r in rep.rows}
    assert tasks == {"mixing", "probe", "consistency", "knn", "recall", "recon"}
    for r in rep.rows:
        if r.post_processing == "best":
            src = rep.get(r.embedding, r.note, r.task, r.metric)
            assert r.mean == src.mean
            peers = [x.mean for x in rep.rows if (x.embedding, x.task, x.metric) ==
                     (r.embedding, r.task, r.metric) and x.post_processing != "best"]
            assert r.mean == max(peers)
        else:
            assert len(r.per_seed) == 2
            assert r.std == pytest.approx(np.std(r.per_seed))
    assert "recall_true_links" in {r.metric for r in rep.rows}


def test_rerun_is_byte_identical(bundle, tmp_path):
    cfg = _cfg(bundle, tasks=["mixing", "knn", "recall"])
    for name in ("a", "b"):
        emit_report(run_pipeline(cfg), tmp_path / name)
    for f in ("report.tsv", "report_per_seed.tsv", "report.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_threads_do_not_change_results(bundle, monkeypatch):
    cfg = _cfg(bundle, tasks=["mixing", "knn"])
    one = run_pipeline(cfg)
    monkeypatch.setenv("PERTURBENCH_THREADS", "4")
    assert run_pipeline(cfg).to_dict() == one.to_dict()


def test_cell_errors_are_rows(bundle):
    rep = run_pipeline(_cfg(bundle, embeddings=["nope", "random"], tasks=["mixing"]))
    assert {r.embedding for r in rep.errors} == {"nope"}
    assert "not in bundle" in rep.errors[0].note
    assert any(r.embedding == "random" and r.metric == "ilisi" for r in rep.rows)


def test_report_roundtrip_and_one_row(tmp_path):
    rep = MetricReport([ReportRow("e", "raw", "mixing", "ilisi", 0.5, float("nan"), [0.5],
                                  "")])
    emit_report(rep, tmp_path)
    lines = (tmp_path / "report.tsv").read_text().splitlines()
    assert len(lines) == 2
    assert lines[1].split("\t")[4:6] == ["0.5", "nan"]
    back = load_report(tmp_path / "report.json")
    assert back.to_dict() == rep.to_dict()
    assert json.loads((tmp_path / "report.json").read_text())["rows"][0]["std"] is None
    with pytest.raises(ValueError):
        emit_report(MetricReport(), tmp_path)


def test_config_validation_and_relative_paths(tmp_path):
    with pytest.raises(ValueError):
        RunConfig(bundle="x", embeddings=["a"], tasks=["dance"])
    with pytest.raises(ValueError):
        RunConfig(bundle="x", embeddings=["a"], seeds=[1, 1])
    (tmp_path / "cfg.json").write_text(json.dumps(
        {"bundle": "data", "embeddings": ["pca"], "dbs": ["db.tsv"]}))
    cfg = RunConfig.from_json(tmp_path / "cfg.json")
    assert cfg.bundle == str(tmp_path / "data")
    assert cfg.dbs == [str(tmp_path / "db.tsv")]


def test_cli_end_to_end(bundle, tmp_path, capsys):
    work = tmp_path / "work"
    assert main(["preprocess", str(bundle), "--out", str(work), "--min-counts", "0"]) == 0
    assert main(["embed", str(work), "--method", "pca", "--dim", "6"]) == 0
    assert main(["postprocess", str(work), "--embedding", "pca", "--method", "tvn"]) == 0
    ds = load_bundle(work)
    assert set(ds.embeddings) >= {"pca", "pca.tvn", "true_latent"}
    assert main(["validate", str(work)]) == 0
    assert "pca.tvn" in capsys.readouterr().out
    assert main(["split", str(work), "--out", str(tmp_path / "split.json")]) == 0
    assert json.loads((tmp_path / "split.json").read_text())["train_batches"]
    rc = main(["eval", "mixing", "--bundle", str(work), "--embedding", "pca",
               "--seeds", "0", "--perplexity", "10", "--out", str(tmp_path / "rep")])
    assert rc == 0
    assert main(["report", str(tmp_path / "rep" / "report.json")]) == 0
    assert "ilisi" in capsys.readouterr().out


def test_cli_exit_codes(bundle, tmp_path, capsys):
    assert main(["validate", str(tmp_path / "missing")]) == 1
    assert main(["eval", "mixing", "--bundle", str(bundle), "--embedding", "nope",
                 "--seeds", "0", "--perplexity", "10"]) == 2
    assert main(["eval", "mixing"]) == 1
    with pytest.raises(SystemExit):
        main(["frobnicate"])
    assert main(["synth", "--out", str(tmp_path / "s"), "--seed", "1"]) == 0
    assert (tmp_path / "s" / "true_links.tsv").exists()
