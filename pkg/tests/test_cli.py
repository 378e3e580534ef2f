import csv
import json

import pytest

from esm_tts.cli import main
from esm_tts.config import RunConfig
from esm_tts.training import SAMPLE_LINE

LINES = [
    "// two utterances",
    SAMPLE_LINE,
    "corpus=mandarin ;; lang=cn : cn:n cn:i cn:t3 br:#1 cn:h cn:ao cn:t3 br:/sil/",
]


@pytest.fixture
def utt_file(tmp_path):
    p = tmp_path / "in.txt"
    p.write_text("\n".join(LINES) + "\n")
    return p


@pytest.fixture
def tiny_config(tmp_path):
    p = tmp_path / "cfg.json"
    cfg = RunConfig(d_model=8, heads=2, ffn_hidden=8, steps=3, n_utterances=2, gradcheck_max_entries=50)
    p.write_text(json.dumps(cfg.to_dict()))
    return p


def test_inventory(tmp_path):
    out = tmp_path / "inv.csv"
    assert main(["inventory", "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["symbol", "kind", "id"]
    assert len(rows) == 129


def test_control_smooth_then_condition(utt_file, tiny_config, tmp_path):
    ctl = tmp_path / "ctl.json"
    assert main(["control", "--in", str(utt_file), "--mode", "smooth-transition", "--out", str(ctl)]) == 0
    doc = json.loads(ctl.read_text())
    assert doc["mode"] == "smooth-transition" and len(doc["utterances"]) == 2
    out = tmp_path / "cond"
    argv = ["condition", "--in", str(utt_file), "--out", str(out), "--config", str(tiny_config), "--control", str(ctl)]
    assert main(argv) == 0
    cond = json.loads((out / "conditioned.json").read_text())
    assert cond["utterances"][0]["control"] == doc["utterances"][0]


def test_control_enhance_rejects_mixed(utt_file, capsys):
    assert main(["control", "--in", str(utt_file), "--mode", "enhance"]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "InvalidLabel"


def test_condition_outputs(utt_file, tiny_config, tmp_path):
    out = tmp_path / "c"
    assert main(["condition", "--in", str(utt_file), "--out", str(out), "--config", str(tiny_config), "--combo", "c"]) == 0
    assert {p.name for p in out.iterdir()} == {"conditioned.json", "components.json", "combinations.json", "alpha.csv"}
    combos = json.loads((out / "combinations.json").read_text())
    assert sorted(combos["utterances"][0]["outputs"]) == list("abcdef")
    with open(out / "alpha.csv") as f:
        header = next(csv.reader(f))
    assert header == ["utterance", "esm", "span", "token_index", "head", "alpha"]


def test_condition_deterministic(utt_file, tiny_config, tmp_path):
    dirs = [tmp_path / "r1", tmp_path / "r2"]
    for d in dirs:
        assert main(["condition", "--in", str(utt_file), "--out", str(d), "--config", str(tiny_config)]) == 0
    for name in ("conditioned.json", "components.json", "combinations.json", "alpha.csv"):
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()


def test_train_then_condition_from_checkpoint(utt_file, tiny_config, tmp_path):
    out = tmp_path / "train"
    assert main(["train-toy", "--config", str(tiny_config), "--out", str(out)]) == 0
    rows = list(csv.reader((out / "losses.csv").open()))
    assert rows[0] == ["step", "loss"] and len(rows) == 1 + 4
    cond = tmp_path / "cond"
    assert main(["condition", "--in", str(utt_file), "--out", str(cond), "--ckpt", str(out / "model.json")]) == 0


def test_gradcheck_exit_codes(tiny_config, tmp_path):
    assert main(["gradcheck", "--config", str(tiny_config)]) == 0
    strict = tmp_path / "strict.json"
    cfg = json.loads(tiny_config.read_text())
    cfg["gradcheck_tolerance"] = 1e-15
    strict.write_text(json.dumps(cfg))
    assert main(["gradcheck", "--config", str(strict)]) == 1


def test_parse_error_report(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("lang=cn : cn:a cn:zz\n")
    assert main(["condition", "--in", str(bad), "--out", str(tmp_path / "o")]) == 2
    report = json.loads(capsys.readouterr().err)
    assert report == {"error": "UnknownSymbol", "message": report["message"], "line": 1, "column": 16}


def test_missing_file(tmp_path, capsys):
    assert main(["control", "--in", str(tmp_path / "nope.txt"), "--mode", "enhance"]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "FileNotFoundError"
