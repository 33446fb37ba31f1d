import json

import pytest

from milsent import cli

TINY_TRAIN_FLAGS = [
    "--classes", "5",
    "--epochs", "2",
    "--batch-size", "20",
    "--min-count", "1",
    "--embedding-dim", "8",
    "--windows", "2,3",
    "--feature-maps", "3",
    "--gru-hidden", "3",
    "--attention-dim", "4",
    "--dropout", "0.0",
    "--recurrent-dropout", "0.0",
]


def run(argv):
    return cli.main(argv)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "synth.jsonl"
    assert run(["synth", "--num-docs", "60", "--classes", "5", "--seed", "3", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory, corpus):
    path = tmp_path_factory.mktemp("model") / "model.ckpt"
    code = run(
        ["train", "--corpus", str(corpus), "--model", "milnet", "--seed", "1",
         "--out", str(path), *TINY_TRAIN_FLAGS]
    )
    assert code == 0
    return path


def test_synth_writes_requested_number_of_lines(tmp_path):
    out = tmp_path / "s.jsonl"
    assert run(["synth", "--num-docs", "100", "--classes", "5", "--seed", "7", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 100
    first = json.loads(lines[0])
    assert set(first) >= {"id", "label", "segments", "segment_labels"}
    manifest = json.loads((tmp_path / "s.jsonl.manifest.json").read_text())
    assert manifest["command"] == "synth" and manifest["seed"] == 7


def test_train_produces_checkpoint_metrics_and_manifest(checkpoint):
    assert checkpoint.exists()
    metrics = checkpoint.parent / (checkpoint.name + ".metrics.jsonl")
    rows = [json.loads(line) for line in metrics.read_text().splitlines()]
    assert [r["epoch"] for r in rows] == [1, 2]
    manifest = json.loads((checkpoint.parent / (checkpoint.name + ".manifest.json")).read_text())
    assert manifest["checkpoint"] == str(checkpoint)
    assert manifest["corpus_hashes"]


def test_train_missing_corpus_exits_one(tmp_path, capsys):
    code = run(["train", "--corpus", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "x.ckpt")])
    assert code == 1
    assert "nope.jsonl" in capsys.readouterr().err


def test_eval_reports_scores(corpus, checkpoint, tmp_path):
    report = tmp_path / "report.json"
    code = run(
        ["eval", "--ckpt", str(checkpoint), "--corpus", str(corpus), "--source", "segment",
         "--gated", "on", "--folds", "3", "--grid", "0.1", "--report", str(report)]
    )
    assert code == 0
    payload = json.loads(report.read_text())
    assert 0.0 <= payload["macro_f1"] <= 1.0
    assert set(payload["per_class"]) == {"neg", "neu", "pos"}
    assert len(payload["fold_thresholds"]) == 3
    assert (tmp_path / "report.json.manifest.json").exists()


def test_extract_writes_summaries(corpus, checkpoint, tmp_path):
    out = tmp_path / "summaries.jsonl"
    code = run(
        ["extract", "--ckpt", str(checkpoint), "--corpus", str(corpus), "--rate", "0.4",
         "--gated", "on", "--source", "segment", "--out", str(out)]
    )
    assert code == 0
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(rows) == 60
    for row in rows[:5]:
        assert {"id", "snippets", "rate", "word_budget"} <= set(row)
        for snippet in row["snippets"]:
            assert snippet["sign"] in "+-"


def test_extract_document_source_for_hiernet(corpus, tmp_path):
    ckpt = tmp_path / "hier.ckpt"
    assert run(
        ["train", "--corpus", str(corpus), "--model", "hiernet", "--seed", "1",
         "--out", str(ckpt), *TINY_TRAIN_FLAGS]
    ) == 0
    out = tmp_path / "sum.jsonl"
    assert run(
        ["extract", "--ckpt", str(ckpt), "--corpus", str(corpus), "--rate", "0.3",
         "--source", "document", "--out", str(out)]
    ) == 0
    # segment-level scores are impossible for the hierarchical model
    assert run(
        ["extract", "--ckpt", str(ckpt), "--corpus", str(corpus), "--rate", "0.3",
         "--source", "segment", "--out", str(out)]
    ) == 1


def test_gradcheck_passes_and_prints_error(capsys):
    assert run(["gradcheck", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert "max relative error" in out
    value = float(out.strip().rsplit(" ", 1)[-1])
    assert value < 1e-4


def test_unknown_flag_exits_one(capsys):
    assert run(["synth", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_command_exits_one():
    assert run(["frobnicate"]) == 1


def test_help_exits_zero():
    assert run(["--help"]) == 0


def test_train_runs_are_bitwise_identical(corpus, tmp_path):
    outs = []
    for name in ("a", "b"):
        ckpt = tmp_path / f"{name}.ckpt"
        metrics = tmp_path / f"{name}.metrics.jsonl"
        assert run(
            ["train", "--corpus", str(corpus), "--seed", "5", "--out", str(ckpt),
             "--metrics", str(metrics), *TINY_TRAIN_FLAGS]
        ) == 0
        outs.append((ckpt.read_bytes(), metrics.read_bytes()))
    assert outs[0][0] == outs[1][0]
    assert outs[0][1] == outs[1][1]


def test_segcnn_roundtrip(corpus, tmp_path):
    ckpt = tmp_path / "seg.ckpt"
    assert run(
        ["train", "--corpus", str(corpus), "--model", "segcnn", "--seed", "2",
         "--out", str(ckpt), *TINY_TRAIN_FLAGS]
    ) == 0
    report = tmp_path / "seg-report.json"
    assert run(
        ["eval", "--ckpt", str(ckpt), "--corpus", str(corpus), "--source", "document",
         "--gated", "off", "--folds", "3", "--report", str(report)]
    ) == 0
    assert json.loads(report.read_text())["variant"]["model"] == "segcnn"
