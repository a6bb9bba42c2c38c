from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from gennape.cli import main
from gennape.families import read_dataset
from gennape.pipeline import load_predictor

SMALL = ["--head-hidden", "16", "--head-layers", "2", "--pair-hidden", "16", "--pair-layers", "2"]


def run(*argv) -> int:
    return main(["--quiet", *map(str, argv)])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """A tiny end-to-end run shared by the tests below."""
    d = tmp_path_factory.mktemp("cli")
    p = lambda name: str(d / name)
    assert run("gen", "--family", "nb101_like", "--n", 60, "--seed", 3, "--out", p("train_all.jsonl")) == 0
    assert run("split", "--data", p("train_all.jsonl"), "--seed", 1, "--out-prefix", p("nb")) == 0
    assert run("gen", "--family", "hiaml_like", "--n", 30, "--seed", 4, "--out", p("target.jsonl")) == 0
    assert run("train-encoder", "--data", p("nb.train.jsonl"), "--out", p("enc.gnpe"), "--epochs", 1, "--batch-size", 16) == 0
    assert run("embed", "--encoder", p("enc.gnpe"), "--data", p("nb.train.jsonl"), "--out", p("emb.gnpe")) == 0
    assert run("cluster", "--encoder", p("enc.gnpe"), "--data", p("nb.train.jsonl"), "--out", p("fcm.gnpe"), "--C", 3, "--m", 2.0) == 0
    for variant, name in [
        ("cl+fcm+t", "m_fcmt"),
        ("cl+t", "m_t"),
        ("pairwise+fcm", "m_pwfcm"),
        ("pairwise", "m_pw"),
        ("baseline-gnn", "m_gnn"),
    ]:
        rc = run(
            "train-predictor", "--variant", variant, "--data", p("nb.train.jsonl"),
            "--encoder", p("enc.gnpe"), "--fcm", p("fcm.gnpe"), "--out", p(name + ".gnpe"),
            "--epochs", 2, "--lr", 1e-3, *SMALL,
        )
        assert rc == 0, variant
    return d


def test_gen_is_deterministic(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert run("gen", "--family", "hiaml_like", "--n", 20, "--seed", 7, "--out", a) == 0
    assert run("gen", "--family", "hiaml_like", "--n", 20, "--seed", 7, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    manifest = json.loads((tmp_path / "a.jsonl.manifest.json").read_text())
    assert manifest["command"] == "gen" and manifest["config"]["n"] == 20


def test_split_sizes(tmp_path):
    data = tmp_path / "d.jsonl"
    assert run("gen", "--family", "twopath_like", "--n", 100, "--seed", 0, "--out", data) == 0
    assert run("split", "--data", data, "--seed", 1, "--out-prefix", tmp_path / "s") == 0
    sizes = [len(read_dataset(tmp_path / f"s.{part}.jsonl")) for part in ("train", "val", "test")]
    assert sizes == [80, 10, 10]
    names = [r.graph.name for part in ("train", "val", "test") for r in read_dataset(tmp_path / f"s.{part}.jsonl")]
    assert len(set(names)) == 100


def test_evaluate_single_and_seeded(work):
    out = work / "rep.json"
    assert run("evaluate", "--model", work / "m_fcmt.gnpe", "--data", work / "target.jsonl", "--out", out, "--ndcg-k", 5) == 0
    rep = json.loads(out.read_text())
    assert {"mae", "srcc", "kt", "ndcg"} <= set(rep) and list(rep["ndcg"]) == ["5"]
    out5 = work / "rep5.json"
    rc = run(
        "evaluate", "--model", work / "m_fcmt.gnpe", "--data", work / "target.jsonl", "--out", out5,
        "--seeds", 3, "--ft-samples", 5, "--ft-epochs", 2, "--ndcg-k", 5,
    )
    assert rc == 0
    rep = json.loads(out5.read_text())
    assert len(rep["per_seed"]) == 3
    for key in ("mae", "srcc", "kt"):
        vals = [r[key] for r in rep["per_seed"]]
        assert rep["mean"][key] == pytest.approx(np.mean(vals))
        assert rep["std"][key] == pytest.approx(np.std(vals))


def test_fine_tune_writes_samples(work):
    out = work / "ft.gnpe"
    rc = run("fine-tune", "--model", work / "m_t.gnpe", "--data", work / "target.jsonl", "--out", out, "--samples", 5, "--epochs", 2)
    assert rc == 0
    samples = json.loads(Path(str(out) + ".samples.json").read_text())
    assert len(samples["indices"]) == 5
    graphs = [r.graph for r in read_dataset(work / "target.jsonl")]
    before = load_predictor(work / "m_t.gnpe").predict(graphs)
    after = load_predictor(out).predict(graphs)
    assert not np.array_equal(before, after)


def test_persisted_predictions_are_bit_stable(work):
    graphs = [r.graph for r in read_dataset(work / "nb.train.jsonl")]
    probes = (graphs * 3)[:100]
    for name in ("m_fcmt", "m_t", "m_pwfcm", "m_pw", "m_gnn"):
        model = load_predictor(work / f"{name}.gnpe")
        copy = work / f"{name}.copy.gnpe"
        from gennape.pipeline import save_predictor

        save_predictor(copy, model)
        assert copy.read_bytes() == (work / f"{name}.gnpe").read_bytes()
        np.testing.assert_array_equal(load_predictor(copy).predict(probes), model.predict(probes))


def test_corrupted_model_is_a_runtime_error(work, capsys):
    bad = work / "bad.gnpe"
    data = bytearray((work / "m_t.gnpe").read_bytes())
    data[len(data) // 2] ^= 0xFF
    bad.write_bytes(bytes(data))
    assert run("evaluate", "--model", bad, "--data", work / "target.jsonl", "--out", work / "x.json") == 2
    assert "ChecksumError" in capsys.readouterr().err


def test_gennape_combination(work):
    models = [work / f"{n}.gnpe" for n in ("m_fcmt", "m_t", "m_pwfcm", "m_pw", "m_gnn")] + ["flops"]
    out = work / "g.json"
    assert run("gennape", "--models", *models, "--data", work / "target.jsonl", "--out", out, "--ndcg-k", 5) == 0
    rep = json.loads(out.read_text())
    assert all(w == pytest.approx(1 / 6) for w in rep["weights"].values())
    out2 = work / "g2.json"
    rc = run("gennape", "--models", *models, "--data", work / "target.jsonl", "--out", out2, "--mode", "fine_tuned", "--ft-samples", 10, "--ndcg-k", 5)
    assert rc == 0
    rep = json.loads(out2.read_text())
    assert sum(rep["weights"].values()) == pytest.approx(1.0)
    assert len(rep["ft_indices"]) == 10
    assert run("gennape", "--models", *models[:3], "--data", work / "target.jsonl", "--out", out2) == 1


def test_search_command(work):
    out = work / "traj.jsonl"
    rc = run(
        "search", "--model", work / "m_t.gnpe", "--seed-data", work / "target.jsonl", "--out", out,
        "--iterations", 2, "--top-k", 2, "--mutations", 3, "--budget", "seed",
    )
    assert rc == 0
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    best = json.loads(Path(str(out) + ".best.json").read_text())
    assert best["flops_g"] <= rows[0]["flops_g"] + 1e-12
    assert best["score"] == max(r["score"] for r in rows if r["flops_g"] <= rows[0]["flops_g"])


def test_replay_is_byte_identical(work):
    out = work / "rep_replay.json"
    assert run("evaluate", "--model", work / "m_pw.gnpe", "--data", work / "target.jsonl", "--out", out, "--ndcg-k", 5) == 0
    first = out.read_bytes()
    out.unlink()
    assert run("replay", str(out) + ".manifest.json") == 0
    assert out.read_bytes() == first


def test_replay_rejects_changed_inputs(tmp_path, capsys):
    data = tmp_path / "d.jsonl"
    assert run("gen", "--family", "nb101_like", "--n", 10, "--seed", 0, "--out", data) == 0
    assert run("split", "--data", data, "--seed", 0, "--out-prefix", tmp_path / "s") == 0
    data.write_text(data.read_text()[:-200] + "\n")
    assert run("replay", str(tmp_path / "s.train.jsonl.manifest.json")) == 2


def test_exit_codes(tmp_path, capsys):
    assert run("gen", "--family", "nope", "--n", 3, "--out", tmp_path / "x") == 1
    assert "--family" in capsys.readouterr().err
    assert run("evaluate", "--model", tmp_path / "missing.gnpe", "--data", tmp_path / "m.jsonl", "--out", tmp_path / "o") == 2
    assert run() == 1
    assert run("gen", "--family", "nb101_like", "--n", 0, "--out", tmp_path / "x") == 2


def test_config_file(tmp_path):
    cfg = tmp_path / "gen.cfg"
    cfg.write_text("# generation\nfamily = twopath_like\nn = 12\nseed = 5\n")
    out = tmp_path / "c.jsonl"
    assert main(["--quiet", "--config", str(cfg), "gen", "--out", str(out)]) == 0
    assert len(read_dataset(out)) == 12
    # flags override file values
    assert main(["--quiet", "--config", str(cfg), "gen", "--out", str(out), "--n", "4"]) == 0
    assert len(read_dataset(out)) == 4
    cfg.write_text("bogus = 1\n")
    assert main(["--quiet", "--config", str(cfg), "gen", "--out", str(out)]) == 1
