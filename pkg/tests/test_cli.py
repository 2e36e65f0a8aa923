import hashlib
import json

import pytest

from boostlens.cli import MANIFEST, run, subseed

SMALL = {"n_rows": 300}
FAST = {"train": {"num_rounds": 10, "max_depth": 3}}


@pytest.fixture
def configs(tmp_path):
    synth = tmp_path / "synth.json"
    synth.write_text(json.dumps(SMALL))
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps(FAST))
    return ["--synth-config", str(synth), "--config", str(cfg)]


def digest_dir(path):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(path.iterdir())}


def test_pipeline_happy_path(tmp_path, configs):
    out = tmp_path / "a"
    assert run(["pipeline", "--seed", "7", "--out", str(out), "--folds", "3", "--interactions", *configs]) == 0
    names = {p.name for p in out.iterdir()}
    assert {MANIFEST, "model.json", "cv.json", "compare.json", "explanations.json", "run.importance.json",
            "run.effects.json"} <= names
    manifest = json.loads((out / MANIFEST).read_text())
    assert manifest["seeds"]["run"] == 7
    assert manifest["seeds"]["folds"] == subseed(7, "folds")
    listed = set()
    for stage in manifest["stages"].values():
        for name, sha in stage["artifacts"].items():
            assert hashlib.sha256((out / name).read_bytes()).hexdigest() == sha
            listed.add(name)
    assert names - {MANIFEST} == listed


def test_pipeline_byte_identical_across_threads(tmp_path, configs):
    args = ["pipeline", "--seed", "3", "--folds", "3", "--interactions", "--format", "csv", *configs]
    assert run([*args, "--out", str(tmp_path / "a"), "--threads", "1"]) == 0
    assert run([*args, "--out", str(tmp_path / "b"), "--threads", "4"]) == 0
    assert digest_dir(tmp_path / "a") == digest_dir(tmp_path / "b")


def test_pipeline_equals_individual_stages(tmp_path, configs):
    common = ["--seed", "5", "--folds", "3", "--interactions", *configs]
    whole = tmp_path / "whole"
    assert run(["pipeline", "--out", str(whole), *common]) == 0
    s = tmp_path / "staged"
    o = ["--out", str(s), *common]
    assert run(["synth", *o]) == 0
    assert run(["clean", *o, "--input", str(s / "survey.csv")]) == 0
    assert run(["train", *o, "--input", str(s / "clean.csv")]) == 0
    for stage in ("eval", "compare", "explain"):
        assert run([stage, *o, "--input", str(s / "clean.csv"), "--model", str(s / "model.json")]) == 0
    assert run(["report", *o, "--input", str(s / "explanations.json")]) == 0
    assert digest_dir(whole) == digest_dir(s)


def test_missing_input_is_data_error(tmp_path, capsys):
    assert run(["train", "--input", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o")]) == 3
    assert "missing.csv" in capsys.readouterr().err


def test_bad_model_is_model_error(tmp_path, configs, capsys):
    out = tmp_path / "o"
    assert run(["pipeline", "--out", str(out), "--folds", "3", *configs]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code = run(["explain", "--out", str(out), "--input", str(out / "clean.csv"), "--model", str(bad)])
    assert code == 4
    assert "bad.json" in capsys.readouterr().err


def test_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run(["nonsense"])
    assert exc.value.code == 2
    assert run(["synth", "--out", str(tmp_path), "--folds", "1"]) == 2
    assert run(["synth", "--out", str(tmp_path), "--config", str(tmp_path / "nope.json")]) == 2


def test_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("BOOSTLENS_THREADS", "zero")
    assert run(["synth", "--out", str(tmp_path)]) == 2


def test_search_budget_writes_search_report(tmp_path, configs):
    out = tmp_path / "s"
    code = run(["pipeline", "--out", str(out), "--folds", "3", "--search-budget", "2", *configs])
    assert code == 0
    search = json.loads((out / "search.json").read_text())
    assert len(search["trials"]) == 2
    model = json.loads((out / "model.json").read_text())
    assert model["config"]["num_rounds"] == search["best"]["num_rounds"]
