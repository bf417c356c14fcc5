"""End-to-end CLI runs on tiny configurations."""

import json
from pathlib import Path

import pytest

from icaval.cli import main

BASE_SPEC = {
    "version": 1,
    "seed": 3,
    "data": {"scenario": "noise", "kind": "sft", "n_train": 12, "n_holdout": 6, "n_test": 6,
             "noise_rate": 0.25, "len_min": 3, "len_max": 4, "alphabet": "abcdefgh"},
    "model": {"vocab": 16, "dim": 8, "layers": 1, "heads": 2, "ctx_len": 64},
    "train": {"steps": 4, "batch_size": 4, "scorer": "ica", "eval_every": 2,
              "weighting": {"kind": "maxmin"}},
}


def write_spec(tmp_path, name="spec.json", **overrides):
    raw = json.loads(json.dumps(BASE_SPEC))
    for key, val in overrides.items():
        if isinstance(val, dict) and isinstance(raw.get(key), dict):
            raw[key].update(val)
        else:
            raw[key] = val
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return path


def read_all(root: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(root.iterdir()) if p.is_file()}


def test_gen_deterministic_and_manifest(tmp_path):
    spec = write_spec(tmp_path)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["gen", "--config", str(spec), "--out", str(out_a)]) == 0
    assert main(["gen", "--config", str(spec), "--out", str(out_b)]) == 0
    assert read_all(out_a) == read_all(out_b)
    manifest = json.loads((out_a / "manifest.json").read_text())
    assert manifest["counts"] == {"train": 12, "holdout": 6, "test": 6}
    assert manifest["corrupted"] == 3  # floor(0.25 * 12)
    for name, count in manifest["counts"].items():
        lines = (out_a / f"{name}.jsonl").read_text().strip().splitlines()
        assert len(lines) == count


def test_gen_refuses_nonempty_without_force(tmp_path, capsys):
    spec = write_spec(tmp_path)
    out = tmp_path / "out"
    assert main(["gen", "--config", str(spec), "--out", str(out)]) == 0
    assert main(["gen", "--config", str(spec), "--out", str(out)]) == 1
    assert "--force" in capsys.readouterr().err
    assert main(["gen", "--config", str(spec), "--out", str(out), "--force"]) == 0


def test_train_writes_artifacts_and_reproduces(tmp_path):
    spec = write_spec(tmp_path)
    out_a, out_b = tmp_path / "ra", tmp_path / "rb"
    assert main(["train", "--config", str(spec), "--out", str(out_a)]) == 0
    assert main(["train", "--config", str(spec), "--out", str(out_b)]) == 0
    for name in ("init.ckpt", "final.ckpt", "metrics.jsonl", "summary.json"):
        assert (out_a / name).exists()
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()
    summary = json.loads((out_a / "summary.json").read_text())
    assert summary["refresh_steps"] == [0, 3]  # period = 12 // (4 * 1) = 3


def test_train_loads_generated_data_dir(tmp_path):
    spec = write_spec(tmp_path)
    data_dir = tmp_path / "data"
    assert main(["gen", "--config", str(spec), "--out", str(data_dir)]) == 0
    spec2 = write_spec(tmp_path, name="spec2.json", data={"dir": str(data_dir)})
    out = tmp_path / "run"
    assert main(["train", "--config", str(spec2), "--out", str(out)]) == 0


def test_uniform_and_ica_from_one_spec(tmp_path, capsys):
    spec = write_spec(tmp_path)
    ica_out, uni_out = tmp_path / "ica", tmp_path / "uni"
    assert main(["train", "--config", str(spec), "--out", str(ica_out)]) == 0
    spec_uni = write_spec(tmp_path, name="uni.json", train={"weighting": {"kind": "uniform"}})
    assert main(["train", "--config", str(spec_uni), "--out", str(uni_out)]) == 0
    # compare a run to itself: all deltas zero, nothing "better"
    assert main(["compare", str(ica_out / "metrics.jsonl"), str(ica_out / "metrics.jsonl")]) == 0
    text = capsys.readouterr().out
    assert "delta=+0.000000" in text


def test_compare_flags_zero_weight_diagnostic_as_worse(tmp_path, capsys):
    spec = write_spec(tmp_path, train={"weighting": {"kind": "uniform"}, "optimizer": "sgd",
                                       "lr": 0.05, "steps": 6})
    spec_zero = write_spec(tmp_path, name="zero.json",
                           train={"weighting": {"kind": "zero"}, "optimizer": "sgd",
                                  "lr": 0.05, "steps": 6})
    out_u, out_z = tmp_path / "u", tmp_path / "z"
    assert main(["train", "--config", str(spec), "--out", str(out_u)]) == 0
    assert main(["train", "--config", str(spec_zero), "--out", str(out_z)]) == 0
    report_dir = tmp_path / "cmp"
    assert main(["compare", str(out_u / "metrics.jsonl"), str(out_z / "metrics.jsonl"),
                 "--out", str(report_dir)]) == 0
    text = capsys.readouterr().out
    assert "holdout_loss" in text and "A_better=True" in text
    assert (report_dir / "compare.csv").exists()


def test_score_report_degenerate_zero_layers(tmp_path):
    spec = write_spec(tmp_path, model={"layers": 0},
                      data={"scenario": "domain", "num_domains": 2, "n_train": 12},
                      train={"position_matched": True})
    out = tmp_path / "report"
    assert main(["score-report", "--config", str(spec), "--out", str(out), "--dump-demos"]) == 0
    summary = json.loads((out / "score_summary.json").read_text())
    # zero-layer model cannot transport context: all scores 0 -> degenerate norm -> all 1
    assert summary["domain_means"] == {"0": 1.0, "1": 1.0}
    assert (out / "scores.csv").exists()
    assert (out / "demos.csv").exists()


def test_oracle_one_step_and_undefined_correlations(tmp_path):
    spec = write_spec(tmp_path, model={"layers": 0},
                      train={"steps": 2, "position_matched": True})
    out = tmp_path / "oracle"
    assert main(["oracle", "--config", str(spec), "--out", str(out), "--mode", "one_step"]) == 0
    summary = json.loads((out / "oracle_summary.json").read_text())
    # layerless model: ica and one_shot are constant zero -> undefined, reported as null
    assert summary["correlations"]["ica"]["spearman"] is None
    assert summary["correlations"]["one_shot"]["spearman"] is None
    assert summary["correlations"]["oracle"]["spearman"] == 1.0
    lines = (out / "oracle.csv").read_text().strip().splitlines()
    assert lines[0] == "example_id,ica,rho,one_shot,oracle"
    assert len(lines) == 13


def test_oracle_retrain_mode_budget(tmp_path):
    spec = write_spec(tmp_path, data={"n_train": 80, "len_min": 3, "len_max": 3})
    out = tmp_path / "oracle"
    assert main(["oracle", "--config", str(spec), "--out", str(out), "--mode", "retrain"]) == 1


def test_oracle_retrain_mode_small(tmp_path):
    spec = write_spec(tmp_path, data={"n_train": 4, "n_holdout": 4},
                      train={"steps": 2, "batch_size": 2})
    out = tmp_path / "oracle"
    assert main(["oracle", "--config", str(spec), "--out", str(out), "--mode", "retrain"]) == 0
    summary = json.loads((out / "oracle_summary.json").read_text())
    assert summary["mode"] == "retrain"
    assert summary["n"] == 4


def test_train_rejects_bad_config(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"version": 1, "nope": 2}))
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "x")]) == 1
    assert "unknown keys" in capsys.readouterr().err
