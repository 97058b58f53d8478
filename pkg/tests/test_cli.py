"""CLI and pipeline integration on a miniature scenario."""

import hashlib
import json
from pathlib import Path

import pytest
import yaml

from rancast.cli import main

MICRO = {
    "scenario": {"weeks": 8, "seed": 3},
    "split": {"train_weeks": 5, "val_weeks": 2, "test_weeks": 1},
    "train": {"hidden": 8, "epochs": 4, "batch_size": 128},
    "calibration": {"targets": [0.05], "w_grid": [1, 4, 16, 64], "refine_iters": 1},
    "evaluation": {"horizons": [1, 2, 24]},
}


def write_config(tmp_path, overrides=None, name="config.yaml"):
    cfg = json.loads(json.dumps(MICRO))
    for key, value in (overrides or {}).items():
        cfg.setdefault(key, {}).update(value)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return path


def tree_hashes(root):
    root = Path(root)
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


@pytest.fixture(scope="module")
def completed_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    config = write_config(tmp)
    out = tmp / "out"
    code = main(["run-all", "--config", str(config), "--out", str(out)])
    assert code in (0, 5)  # tiny models may leave the SLA target unsatisfied
    return config, out


class TestSynthCommand:
    def test_emits_expected_files(self, tmp_path):
        config = write_config(tmp_path)
        out = tmp_path / "out"
        assert main(["synth", "--config", str(config), "--out", str(out)]) == 0
        names = sorted(p.name for p in (out / "synth").iterdir())
        assert names == ["GU12.csv", "GU14.csv", "SY24.csv", "VO14.csv",
                         "handover.csv", "manifest.json"]

    def test_same_seed_same_bytes(self, tmp_path):
        config = write_config(tmp_path)
        main(["synth", "--config", str(config), "--out", str(tmp_path / "a")])
        main(["synth", "--config", str(config), "--out", str(tmp_path / "b")])
        assert tree_hashes(tmp_path / "a") == tree_hashes(tmp_path / "b")

    def test_invalid_rho_exits_with_config_code(self, tmp_path, capsys):
        config = write_config(tmp_path, {"scenario": {"counter_rho": 1.0}})
        code = main(["synth", "--config", str(config), "--out", str(tmp_path / "out")])
        assert code == 2
        assert "counter correlation" in capsys.readouterr().err

    def test_unknown_config_key_rejected(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("scenario:\n  wibble: 3\n")
        assert main(["synth", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


class TestRunAll:
    def test_full_artifact_tree(self, completed_run):
        _, out = completed_run
        report = json.loads((out / "report" / "report.json").read_text())
        assert set(report["results"]) == {"univariate", "ran", "peak", "handover", "all"}
        for stage in ("synth", "features", "train", "calibrate", "eval", "report"):
            assert (out / stage / "manifest.json").exists()
        assert (out / "report" / "single_step.csv").exists()
        assert (out / "report" / "overlay_sla5.png").exists()
        assert (out / "report" / "horizon_loss_sla5.png").exists()
        assert (out / "report" / "predictions_sla5.csv").exists()

    def test_manifest_lists_every_file(self, completed_run):
        _, out = completed_run
        manifest = json.loads((out / "synth" / "manifest.json").read_text())
        listed = set(manifest["files"])
        actual = {p.name for p in (out / "synth").iterdir() if p.name != "manifest.json"}
        assert listed == actual

    def test_warm_cache_skips_and_preserves_bytes(self, completed_run, capsys):
        config, out = completed_run
        before = tree_hashes(out)
        code = main(["run-all", "--config", str(config), "--out", str(out)])
        assert code in (0, 5)
        output = capsys.readouterr().out
        assert output.count("cached, skipped") == 6
        assert tree_hashes(out) == before

    def test_config_mismatch_refused(self, completed_run, capsys):
        config, out = completed_run
        code = main(["features", "--config", str(config), "--seed", "99",
                     "--out", str(out)])
        assert code == 2
        assert "refusing to mix" in capsys.readouterr().err

    def test_single_stage_flag(self, completed_run, capsys):
        config, out = completed_run
        code = main(["run-all", "--config", str(config), "--out", str(out),
                     "--stage", "report"])
        assert code == 0
        assert "report" in capsys.readouterr().out

    def test_stage_without_upstream_errors(self, tmp_path):
        config = write_config(tmp_path)
        code = main(["eval", "--config", str(config), "--out", str(tmp_path / "fresh")])
        assert code == 2

    def test_missing_handover_csv_is_a_data_error(self, tmp_path, capsys):
        config = write_config(tmp_path)
        out = tmp_path / "out"
        assert main(["synth", "--config", str(config), "--out", str(out)]) == 0
        (out / "synth" / "handover.csv").unlink()
        code = main(["features", "--config", str(config), "--out", str(out)])
        assert code == 3
        assert "handover.csv" in capsys.readouterr().err

    def test_env_var_overrides(self, tmp_path, monkeypatch):
        config = write_config(tmp_path)
        monkeypatch.setenv("RANCAST_OUT", str(tmp_path / "env_out"))
        monkeypatch.setenv("RANCAST_CONFIG", str(config))
        assert main(["synth"]) == 0
        assert (tmp_path / "env_out" / "synth" / "GU14.csv").exists()


class TestPredictCommand:
    def test_per_step_csv(self, completed_run, tmp_path):
        config, out = completed_run
        model = out / "calibrate" / "models" / "univariate_sla5.json"
        target = tmp_path / "pred.csv"
        code = main([
            "predict", "--config", str(config), "--out", str(out),
            "--model", str(model), "--origin", "2024-02-19T00:00:00",
            "--horizon", "6", "--out-file", str(target),
        ])
        assert code == 0
        lines = target.read_text().strip().split("\n")
        assert lines[0] == "step,timestamp,prediction"
        assert len(lines) == 7
        assert lines[1].startswith("1,2024-02-19T01:00:00,")

    def test_unknown_origin_rejected(self, completed_run, capsys):
        config, out = completed_run
        model = out / "calibrate" / "models" / "univariate_sla5.json"
        code = main([
            "predict", "--config", str(config), "--out", str(out),
            "--model", str(model), "--origin", "2030-01-01T00:00:00",
        ])
        assert code == 3

    def test_neighbor_recursive_policy(self, completed_run, tmp_path):
        """Each handover neighbor gets its own recursive forecaster."""
        config, out = completed_run
        model = out / "calibrate" / "models" / "handover_sla5.json"
        target = tmp_path / "pred.csv"
        code = main([
            "predict", "--config", str(config), "--out", str(out),
            "--model", str(model), "--origin", "2024-02-19T00:00:00",
            "--horizon", "3", "--handover-policy", "neighbor-recursive",
            "--out-file", str(target),
        ])
        assert code == 0
        assert len(target.read_text().strip().split("\n")) == 4


class TestGridSearchConfig:
    def test_grid_is_searched_and_recorded(self, tmp_path):
        config = write_config(tmp_path, {
            "train": {"grid": {"hidden": [4, 8]}, "cv_folds": 2,
                      "cv_shift_hours": 168, "epochs": 2},
            "evaluation": {"variants": ["univariate"]},
        })
        out = tmp_path / "out"
        for stage in ("synth", "features", "train"):
            assert main([stage, "--config", str(config), "--out", str(out)]) == 0
        hp = json.loads((out / "train" / "hyperparams.json").read_text())
        chosen = hp["chosen"]["univariate"]
        assert chosen["hidden"] in (4, 8)
        assert len(chosen["grid_scores"]) == 2
        assert all(s > 0 for s in chosen["grid_scores"])


class TestDeterminism:
    def test_cold_rerun_with_different_jobs_is_hash_identical(self, completed_run,
                                                              tmp_path):
        config, out = completed_run
        out2 = tmp_path / "out2"
        code = main(["run-all", "--config", str(config), "--out", str(out2),
                     "--jobs", "2"])
        assert code in (0, 5)
        assert tree_hashes(out) == tree_hashes(out2)
