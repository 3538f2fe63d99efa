import json
import subprocess
import sys

import pytest
import yaml

from kinject.cli import main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--n", "36", "--out", str(root)]) == 0
    cfg = root / "config.yaml"
    cfg.write_text(yaml.safe_dump({
        "corpus": "corpus.jsonl", "embeddings": "embeddings.kift", "checkpoint": "ckpt", "out_dir": "runs",
        "model_preset": "micro", "model": {"max_len": 24}, "tokenizer": {"min_freq": 1},
        "train": {"epochs": 2, "lr": 1e-3, "batch_size": 8}}))
    return root, cfg


def test_evaluate_identical_files(tmp_path, capsys):
    rows = [{"id": f"a{i}", "text": t} for i, t in enumerate(["the lungs are clear .", "no pleural effusion ."])]
    path = tmp_path / "g.jsonl"
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    code, out, _ = run(capsys, "evaluate", "--gen", path, "--ref", path, "--csv", tmp_path / "m.csv")
    assert code == 0 and out["bleu"][3] == 1.0 and out["n_samples"] == 2
    header = (tmp_path / "m.csv").read_text().splitlines()[0]
    assert header.startswith("bleu_1,bleu_2,bleu_3,bleu_4")


def test_tfidf_dump_three_reports(jsonl, three_reports, capsys):
    path = jsonl(three_reports)
    code, out, _ = run(capsys, "tfidf", "--corpus", path, "--dump")
    assert code == 0
    assert out["scores"]["r1"]["effusion"] == 0.0
    assert abs(out["scores"]["r1"]["no"] - 0.20273255405408219099) < 1e-15


def test_tfidf_report_weights(jsonl, three_reports, capsys):
    code, out, _ = run(capsys, "tfidf", "--corpus", jsonl(three_reports), "--report-id", "r3")
    assert code == 0 and out["report_id"] == "r3"
    assert set(out["weights"]) <= {"heart", "normal"}


def test_index_query_k3(workspace, capsys):
    root, cfg = workspace
    code, out, _ = run(capsys, "index", "query", "--config", cfg, "--id", "s0001", "--k", "3")
    assert code == 0 and len(out["hits"]) == 3
    scores = [h["score"] for h in out["hits"]]
    assert scores == sorted(scores, reverse=True)


def test_index_build_then_query(workspace, tmp_path, capsys):
    root, cfg = workspace
    code, out, _ = run(capsys, "index", "build", "--config", cfg, "--out", tmp_path)
    assert code == 0 and out["n"] == 36
    code, a, _ = run(capsys, "index", "query", "--config", cfg, "--index", out["index"], "--id", "s0002")
    code2, b, _ = run(capsys, "index", "query", "--config", cfg, "--id", "s0002")
    assert code == code2 == 0 and a == b


def test_ingest_and_extract(workspace, capsys):
    root, cfg = workspace
    code, out, _ = run(capsys, "ingest", "--config", cfg)
    assert code == 0 and out["n_reports"] == 36 and sum(out["splits"].values()) == 36
    code, out, _ = run(capsys, "extract", "--config", cfg, "--report-id", "s0001", "--dump-prompts")
    assert code == 0 and out["report_id"] == "s0001"
    assert any(p["prompt"] == "opacity is located at right lower lobe" for p in out["prompts"])


def test_train_generate_evaluate(workspace, tmp_path, capsys):
    root, cfg = workspace
    code, out, _ = run(capsys, "train", "--config", cfg, "--out", tmp_path / "ckpt")
    assert code == 0 and (tmp_path / "ckpt" / "model_config.json").exists()
    code, gen, _ = run(capsys, "generate", "--config", cfg, "--checkpoint", tmp_path / "ckpt",
                       "--output", tmp_path / "gen.jsonl")
    assert code == 0 and gen["config_hash"] == out["config_hash"]
    first = (tmp_path / "gen.jsonl").read_bytes()
    run(capsys, "generate", "--config", cfg, "--checkpoint", tmp_path / "ckpt", "--output", tmp_path / "gen2.jsonl")
    assert (tmp_path / "gen2.jsonl").read_bytes() == first


class TestExitCodes:
    def test_unknown_command(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_unknown_flag(self, capsys):
        assert main(["evaluate", "--bogus"]) == 1

    def test_missing_data(self, tmp_path, capsys):
        code, _, err = run(capsys, "evaluate", "--gen", tmp_path / "no.jsonl", "--ref", tmp_path / "no.jsonl")
        assert code == 2 and "no.jsonl" in err

    def test_malformed_corpus(self, tmp_path, capsys):
        (tmp_path / "c.jsonl").write_text('{"id": "a", "text": "x"}\nnot json\n')
        code, _, err = run(capsys, "ingest", "--corpus", tmp_path / "c.jsonl")
        assert code == 2 and ":2" in err

    def test_bad_config(self, tmp_path, capsys):
        (tmp_path / "c.yaml").write_text("k: 0\n")
        assert main(["ingest", "--config", str(tmp_path / "c.yaml")]) == 2

    def test_index_query_needs_id(self, workspace, capsys):
        assert main(["index", "query", "--config", str(workspace[1])]) == 1

    def test_unknown_report(self, workspace, capsys):
        assert main(["tfidf", "--config", str(workspace[1]), "--report-id", "nope"]) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "kinject.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "kernels:" in res.stdout
