import filecmp
import json
import subprocess
import sys

import pytest

from predft.cli import dispatch, parse_range

SYNTH = {"stories": 5, "frames_per_story": 16, "n_voxels": 60, "vocab_size": 20, "words_per_frame": [1, 3]}
TINY = {"d_model": 16, "heads": 2, "ffn_dim": 32, "enc_layers": 1, "dec_layers": 1, "side_enc_layers": 1,
        "side_dec_layers": 1, "frames": 6, "roi_hidden": 16, "batch_size": 8, "epochs": 2, "max_gen_len": 12}


def run(*argv):
    return dispatch([str(a) for a in argv])


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    pending = [cmp]
    while pending:
        c = pending.pop()
        if c.left_only or c.right_only:
            return False
        _, mismatch, errors = filecmp.cmpfiles(c.left, c.right, c.common_files, shallow=False)
        if mismatch or errors:
            return False
        pending.extend(c.subdirs.values())
    return True


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_json(root / "synth.json", {"synth": SYNTH})
    assert run("synth", "--config", cfg, "--seed", 3, "--out", root / "data") == 0
    train_cfg = write_json(root / "train.json", {"model": TINY, "split": {"n_valid": 1, "n_test": 1}})
    assert run("train", "--data", root / "data", "--config", train_cfg, "--out", root / "run") == 0
    assert run("decode", "--run", root / "run", "--stride", 3, "--out", root / "dec") == 0
    assert run("evaluate", "--decoded", root / "dec", "--out", root / "eval") == 0
    assert run("analyze-errors", "--decoded", root / "dec", "--out", root / "err") == 0
    return root


def test_parse_range():
    assert parse_range("0:8") == list(range(9))
    assert parse_range("3:2") == []
    with pytest.raises(ValueError):
        parse_range("3-5")


def test_synth_twice_identical(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"synth": SYNTH})
    for name in ("a", "b"):
        assert run("synth", "--config", cfg, "--seed", 7, "--out", tmp_path / name) == 0
    assert same_tree(tmp_path / "a", tmp_path / "b")


def test_verify_full_grid(pipeline, tmp_path):
    out = tmp_path / "r"
    assert run("verify", "--data", pipeline / "data", "--roi", "BPC", "--d-range", "0:8",
               "--l-range", "1:6", "--reduced-dim", 8, "--out", out) == 0
    lines = (out / "scores.csv").read_text().splitlines()
    assert len(lines) == 55
    assert (out / "surface.svg").read_text().count("<polyline") == 6


def test_verify_empty_sweep(pipeline, tmp_path):
    out = tmp_path / "r"
    assert run("verify", "--data", pipeline / "data", "--d-range", "3:2", "--out", out) == 0
    assert (out / "scores.csv").read_text() == "d,l,roi_set,score,fold_std\n"
    assert not list(out.glob("*.svg"))


def test_bad_lambda_writes_nothing(pipeline, tmp_path):
    cfg = write_json(tmp_path / "bad.json", {"lambda": -1.0})
    assert run("train", "--data", pipeline / "data", "--config", cfg, "--out", tmp_path / "o") == 1
    assert not (tmp_path / "o").exists()


def test_unknown_flag(tmp_path):
    assert run("synth", "--out", tmp_path / "o", "--bogus") == 1
    assert not (tmp_path / "o").exists()


def test_unknown_config_key(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"nonsense": 1})
    assert run("synth", "--config", cfg, "--out", tmp_path / "o") == 1


def test_existing_output_refused(pipeline):
    assert run("synth", "--out", pipeline / "data") == 1


def test_missing_data(tmp_path):
    assert run("verify", "--data", tmp_path / "nowhere", "--out", tmp_path / "o") == 1


def test_train_artifacts(pipeline):
    names = {p.name for p in (pipeline / "run").iterdir()}
    assert {"checkpoint", "vocab.json", "split.json", "train_log.jsonl", "history.json", "run_config.json"} <= names
    history = json.loads((pipeline / "run" / "history.json").read_text())
    assert len(history) == 2


def test_decode_and_reports(pipeline):
    rows = [json.loads(x) for x in (pipeline / "dec" / "decoded.jsonl").read_text().splitlines()]
    assert rows and all(sum(r["frame_sizes"]) == len(r["truth"]) for r in rows)
    metrics = json.loads((pipeline / "eval" / "metrics.json").read_text())
    assert all(0 <= metrics[f"bleu_{n}"] <= 100 for n in range(1, 5))
    assert metrics["pairs"] == len(rows)
    assert (pipeline / "err" / "errors.csv").read_text().startswith("pair,kind,truth_pos,frame,pospct\n")
    assert len((pipeline / "err" / "histogram.csv").read_text().splitlines()) == 11


def test_every_text_artifact_ends_with_newline(pipeline):
    outputs = [p for step in ("data", "run", "dec", "eval", "err") for p in (pipeline / step).rglob("*")]
    for path in outputs:
        if path.suffix in (".json", ".jsonl", ".csv", ".svg"):
            text = path.read_text()
            assert not text or text.endswith("\n"), path


@pytest.mark.parametrize("step", ["data", "run", "dec", "eval", "err"])
def test_rerun_from_snapshot_is_identical(pipeline, tmp_path, step):
    snapshot = json.loads((pipeline / step / "run_config.json").read_text())
    again = tmp_path / "again"
    assert run(snapshot["command"], "--config", pipeline / step / "run_config.json", "--out", again) == 0
    assert same_tree(pipeline / step, again)


def test_console_script_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "predft.cli", "synth", "--out", str(tmp_path / "o"), "--nope"],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    assert "usage" in proc.stderr
