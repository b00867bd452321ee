import json

import pytest

from afa.cli import main

TINY = """\
d_model = 8
n_heads = 2
d_ff = 16
disc_d_model = 8
disc_heads = 2
disc_d_ff = 16
pos_encoding = false
epochs = 2
batch_size = 16
lr_target = 1e-3
lr_disc = 1e-3
max_len = 16
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["gen-planted", "--out-dir", str(data), "--num-examples", "64", "--test-examples", "32",
                 "--seq-len", "6", "--distractors", "20", "--seed", "1"]) == 0
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY + f"train_path = {data / 'train.jsonl'}\ntest_path = {data / 'test.jsonl'}\n"
                   f"valid_path = {data / 'test.jsonl'}\n")
    return root, data, cfg


def test_gen_planted_outputs(workspace):
    _, data, _ = workspace
    meta = json.loads((data / "train.planted.json").read_text())
    rows = (data / "train.jsonl").read_text().splitlines()
    assert len(rows) == 64 and len(meta["signal_positions"]) == 64
    for line, pos in zip(rows, meta["signal_positions"]):
        rec = json.loads(line)
        word = rec["text"].split()[pos[0]]
        assert word in meta["signal_tokens"][str(rec["label"])]


def test_train_twice_identical(workspace, capsys):
    root, _, cfg = workspace
    for run in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--seed", "7", "--out-dir", str(root / run)]) == 0
    out = capsys.readouterr().out
    assert "seed = 7" in out and "accuracy=" in out
    for name in ("history.jsonl", "epoch000.afa", "epoch001.afa", "final.afa", "metrics.json"):
        assert (root / "a" / name).read_bytes() == (root / "b" / name).read_bytes(), name


def test_eval_deletion_zero_matches_eval(workspace):
    root, data, _ = workspace
    ck = str(root / "a" / "final.afa")
    assert main(["eval", "--checkpoint", ck, "--data", str(data / "test.jsonl"),
                 "--out-dir", str(root / "e1")]) == 0
    assert main(["eval", "--checkpoint", ck, "--data", str(data / "test.jsonl"), "--deletion", "0",
                 "--viz", "2", "--planted-meta", str(data / "test.planted.json"),
                 "--out-dir", str(root / "e2")]) == 0
    plain = json.loads((root / "e1" / "metrics.json").read_text())["accuracy"]
    curve = json.loads((root / "e2" / "deletion.json").read_text())
    assert curve["points"] == [[0, plain]]
    report = json.loads((root / "e2" / "metrics.json").read_text())
    assert 0 <= report["signal_attention_mass"] <= 1
    assert (root / "e2" / "attention_0001.html").exists()


def test_viz_command(workspace):
    root, data, _ = workspace
    ck = str(root / "a" / "final.afa")
    assert main(["eval", "--checkpoint", ck, "--data", str(data / "test.jsonl"), "--deletion", "2",
                 "--out-dir", str(root / "e3")]) == 0
    assert main(["viz", "--checkpoint", ck, "--data", str(data / "test.jsonl"), "--count", "3",
                 "--curve", str(root / "e3" / "deletion.json"), "--out-dir", str(root / "v")]) == 0
    assert (root / "v" / "deletion.svg").exists() and (root / "v" / "attention_0002.html").exists()


def test_sweep_structure(workspace):
    root, _, cfg = workspace
    fast = root / "fast.cfg"
    fast.write_text(cfg.read_text().replace("epochs = 2", "epochs = 1"))
    assert main(["sweep", "--config", str(fast), "--k-values", "1,2,3", "--trials", "5", "--jobs", "2",
                 "--out-dir", str(root / "s")]) == 0
    res = json.loads((root / "s" / "sweep.json").read_text())
    assert [r["k"] for r in res["records"]] == [1, 2, 3]
    assert all(r["trials"] == 5 and len(r["accuracies"]) == 5 for r in res["records"])
    assert (root / "s" / "sweep.svg").read_text().startswith("<svg")


@pytest.mark.parametrize("text", ["k = 0", "nonsense", "epsilon = high"])
def test_bad_config_exit_2(tmp_path, capsys, text):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text + "\n")
    assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_missing_files_exit_2(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.cfg")]) == 2
    assert main(["eval", "--checkpoint", str(tmp_path / "nope.afa"), "--data", "x"]) == 2


def test_malformed_data_exit_2(tmp_path, capsys):
    data = tmp_path / "d.jsonl"
    data.write_text('{"text": "a b", "label": 0}\n{"text": "c"}\n')
    cfg = tmp_path / "c.cfg"
    cfg.write_text(TINY + f"train_path = {data}\n")
    assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 2
    assert "d.jsonl:2" in capsys.readouterr().err


def test_nonfinite_training_exit_3(workspace, tmp_path):
    _, data, cfg = workspace
    emb = tmp_path / "emb.tsv"
    emb.write_text("".join(w + "\t" + "\t".join(["nan"] * 8) + "\n" for w in ["sig0x0", "sig1x0"]))
    bad = tmp_path / "bad.cfg"
    bad.write_text(cfg.read_text() + f"embeddings_path = {emb}\n")
    assert main(["train", "--config", str(bad), "--out-dir", str(tmp_path / "o")]) == 3
    assert (tmp_path / "o" / "abort_batch.txt").exists()
