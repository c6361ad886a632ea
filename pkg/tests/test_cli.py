import json

import pytest

from nqg.cli import main
from nqg.data import read_pairs, synthetic_pairs, write_pairs
from nqg.training import Checkpoint, perplexity


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy")
    pairs = synthetic_pairs(32)
    write_pairs(d / "train.jsonl", pairs)
    write_pairs(d / "dev.jsonl", pairs[:8])
    code = main(["train", "--preset", "toy", "--train", str(d / "train.jsonl"), "--dev", str(d / "dev.jsonl"),
                 "--out", str(d / "model.ckpt"), "--log", str(d / "log.jsonl"), "--epochs", "4", "--halving-start", "4", "--seed", "3"])
    assert code == 0
    return d


def test_train_log_and_reload_reproduce_dev_perplexity(trained):
    records = [json.loads(line) for line in (trained / "log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in records] == [1, 2, 3, 4]
    assert set(records[0]) == {"epoch", "loss", "perplexity", "rate"}
    ckpt = Checkpoint.load(trained / "model.ckpt")
    logged = next(r["perplexity"] for r in records if r["epoch"] == ckpt.epoch)
    assert logged == min(r["perplexity"] for r in records)
    again = perplexity(ckpt, read_pairs(trained / "dev.jsonl"))
    assert abs(again - logged) < 1e-4


def test_generate_then_evaluate(trained, tmp_path, capsys):
    code = main(["generate", "--checkpoint", str(trained / "model.ckpt"), "--input", str(trained / "dev.jsonl"),
                 "--out", str(tmp_path / "hyp.txt"), "--max-len", "12", "--attention-dir", str(tmp_path / "att")])
    assert code == 0
    lines = (tmp_path / "hyp.txt").read_text().splitlines()
    assert len(lines) == 8
    assert sorted(p.name for p in (tmp_path / "att").iterdir())[0] == "000001.tsv"
    code = main(["evaluate", "--hyp", str(tmp_path / "hyp.txt"), "--ref-pairs", str(trained / "dev.jsonl"),
                 "--out", str(tmp_path / "report.json")])
    assert code == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert {"BLEU-1", "BLEU-4", "ROUGE-L"} <= set(report)


def test_plain_sentence_input(trained, tmp_path):
    (tmp_path / "in.txt").write_text("the king built a bridge in rome .\nmarie found gold in egypt .\n")
    assert main(["generate", "--checkpoint", str(trained / "model.ckpt"), "--input", str(tmp_path / "in.txt"),
                 "--out", str(tmp_path / "out.txt"), "--beam", "1", "--max-len", "5"]) == 0
    assert len((tmp_path / "out.txt").read_text().splitlines()) == 2


def test_generation_is_deterministic(trained, tmp_path):
    for name in ("a", "b"):
        main(["generate", "--checkpoint", str(trained / "model.ckpt"), "--input", str(trained / "dev.jsonl"),
              "--out", str(tmp_path / name), "--max-len", "8"])
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


@pytest.mark.parametrize("method", ["bm25", "edit", "directin"])
def test_baselines_then_evaluate(trained, tmp_path, method):
    assert main(["baseline", method, "--input", str(trained / "dev.jsonl"), "--train", str(trained / "train.jsonl"),
                 "--out", str(tmp_path / "hyp.txt")]) == 0
    assert main(["evaluate", "--hyp", str(tmp_path / "hyp.txt"), "--ref-pairs", str(trained / "dev.jsonl"),
                 "--out", str(tmp_path / "r.json")]) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    if method != "directin":  # retrieval of a sentence that is in the index returns its own question
        assert report["BLEU-4"] == 100.0


def test_stats(trained, tmp_path):
    assert main(["stats", str(trained / "train.jsonl"), str(trained / "dev.jsonl"), "--out", str(tmp_path / "s.json")]) == 0
    stats = json.loads((tmp_path / "s.json").read_text())
    assert stats["splits"]["train"]["pairs"] == 32 and stats["splits"]["dev"]["pairs"] == 8


def test_preprocess(tmp_path):
    doc = {"data": [{"title": f"T{i}", "paragraphs": [{"context": f"Rivers{i} flow fast. Lakes stay.", "qas": [
        {"question": f"Where do rivers{i} flow?", "answers": [{"text": "flow", "answer_start": 9}]}]}]}
        for i in range(10)]}
    (tmp_path / "squad.json").write_text(json.dumps(doc))
    assert main(["preprocess", str(tmp_path / "squad.json"), "--out-dir", str(tmp_path / "out")]) == 0
    counts = [len(read_pairs(tmp_path / "out" / f"{s}.jsonl")) for s in ("train", "dev", "test")]
    assert counts == [8, 1, 1]
    assert json.loads((tmp_path / "out" / "stats.json").read_text())["records"] == 10


def test_mismatched_evaluate_names_first_bad_line(tmp_path, capsys):
    (tmp_path / "h.txt").write_text("a b\nc d\ne f\n")
    (tmp_path / "r.txt").write_text("a b\nc d\n")
    assert main(["evaluate", "--hyp", str(tmp_path / "h.txt"), "--ref", str(tmp_path / "r.txt")]) != 0
    err = capsys.readouterr().err.strip()
    assert "line 3" in err and len(err.splitlines()) == 1


def test_missing_file(tmp_path, capsys):
    assert main(["stats", str(tmp_path / "nope.jsonl")]) != 0
    err = capsys.readouterr().err.strip()
    assert "nope.jsonl" in err and len(err.splitlines()) == 1


def test_schema_violation(tmp_path, capsys):
    (tmp_path / "bad.jsonl").write_text('{"sentence": ["a"]}\n')
    assert main(["stats", str(tmp_path / "bad.jsonl")]) != 0
    assert "bad.jsonl:1" in capsys.readouterr().err


def test_unknown_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["stats", "x.jsonl", "--bogus"])
    assert exc.value.code != 0
    assert len(capsys.readouterr().err.strip().splitlines()) == 1


def test_retrieval_needs_training_pairs(trained, tmp_path, capsys):
    assert main(["baseline", "bm25", "--input", str(trained / "dev.jsonl"), "--out", str(tmp_path / "o")]) != 0
    assert "--train" in capsys.readouterr().err
