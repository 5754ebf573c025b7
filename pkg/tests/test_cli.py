"""
Unit tests for the command-line interface.

Validates:
- synth / train-clinical / evaluate / report on a tiny phantom cohort
- Config file and flag precedence
- Error exits leave no partial output
"""

import json

import pandas as pd
import pytest
from click.testing import CliRunner

from src.cli import RunConfig, _build_config, main, staged_output
from src.evaluation import MetricsReport

pytestmark = pytest.mark.unit

TINY_CONFIG = {
    "k": 3,
    "phantom": {
        "n_positive": 3,
        "n_negative": 3,
        "slices_min": 16,
        "slices_max": 18,
        "image_size": 32,
        "lesion_contrast": 0.6,
        "lesion_radius": 0.2,
        "speckle_noise": 0.1,
    },
    "clinical_forest": {"n_trees": 20},
    "slice_forest": {"n_trees": 10},
    "encoder": {"input_size": 32},
    "train": {"batch_size": 16, "max_epochs": 1},
    "aggregation": {"run_length": 4, "slice_threshold": 0.5},
}


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY_CONFIG))
    return path


@pytest.fixture
def cohort_dir(runner, tmp_path, config_file):
    out = tmp_path / "cohort"
    result = runner.invoke(main, ["synth", "--config", str(config_file), "--seed", "5", "--out", str(out)])
    assert result.exit_code == 0, result.output
    return out


class TestRunConfig:
    """Test config loading and overrides."""

    def test_defaults(self):
        config = RunConfig()
        assert config.seed == 42
        assert config.aggregation.run_length == 8
        assert config.slice_forest.n_trees == 1000

    def test_file_then_flags(self, config_file, tmp_path):
        config = _build_config(config_file, seed=9, out=tmp_path / "x", threshold=0.2)
        assert config.seed == 9
        assert config.k == 3
        assert config.aggregation.slice_threshold == 0.2
        assert config.aggregation.run_length == 4
        assert config.phantom.image_size == 32

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"sed": 1}))
        with pytest.raises(ValueError):
            RunConfig.load(path)

    def test_nested_validation(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"aggregation": {"run_length": 0}}))
        with pytest.raises(ValueError):
            RunConfig.load(path)


class TestStagedOutput:
    """Test all-or-nothing publication."""

    def test_failure_leaves_nothing(self, tmp_path):
        out = tmp_path / "out"
        with pytest.raises(RuntimeError):
            with staged_output(out) as staging:
                (staging / "partial.csv").write_text("a\n")
                raise RuntimeError("boom")
        assert not out.exists()
        assert list(tmp_path.iterdir()) == []

    def test_success_publishes(self, tmp_path):
        out = tmp_path / "out"
        with staged_output(out) as staging:
            (staging / "sub").mkdir()
            (staging / "sub" / "a.txt").write_text("x")
        assert (out / "sub" / "a.txt").read_text() == "x"
        assert [p.name for p in tmp_path.iterdir()] == ["out"]


class TestSynth:
    """Test cohort synthesis."""

    def test_outputs(self, cohort_dir):
        manifest = json.loads((cohort_dir / "manifest.json").read_text())
        assert len(manifest["patients"]) == 6
        assert (cohort_dir / "cohort_summary.csv").is_file()
        audit = json.loads((cohort_dir / "audit_log.json").read_text())
        paths = [e["details"]["path"] for e in audit["events"] if e["event_type"] == "artifact"]
        assert paths == ["manifest.json", "cohort_summary.csv"]

    def test_reproducible(self, runner, tmp_path, config_file, cohort_dir):
        again = tmp_path / "again"
        result = runner.invoke(main, ["synth", "--config", str(config_file), "--seed", "5", "--out", str(again)])
        assert result.exit_code == 0, result.output
        for name in ("manifest.json", "audit_log.json", "cohort_summary.csv"):
            assert (again / name).read_bytes() == (cohort_dir / name).read_bytes()


class TestTrainClinical:
    """Test the clinical training command."""

    def test_writes_forest_and_oob(self, runner, tmp_path, config_file, cohort_dir):
        out = tmp_path / "clinical"
        result = runner.invoke(main, [
            "train-clinical", "--config", str(config_file),
            "--manifest", str(cohort_dir / "manifest.json"), "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        oob = json.loads((out / "clinical_forest_oob.json").read_text())
        assert oob["n_patients"] == 6
        assert 0.0 <= oob["oob_score"] <= 1.0
        assert json.loads((out / "clinical_forest.json").read_text())["config"]["n_trees"] == 20


class TestEvaluateAndReport:
    """Test cross-validation output and report merging."""

    def test_clinical_evaluation(self, runner, tmp_path, config_file, cohort_dir):
        out = tmp_path / "eval"
        result = runner.invoke(main, [
            "evaluate", "--config", str(config_file), "--manifest", str(cohort_dir / "manifest.json"),
            "--model", "clinical", "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        report = MetricsReport.from_json(out / "clinical_report.json")
        assert len(report.folds) == 3
        scores = pd.read_csv(out / "clinical_patient_scores.csv")
        assert len(scores) == 6
        assert (out / "roc" / "clinical_pooled.csv").is_file()
        comparison = pd.read_csv(out / "comparison.csv")
        assert comparison["model"].tolist() == ["clinical"]

        merged = tmp_path / "merged"
        result = runner.invoke(main, ["report", str(out / "clinical_report.json"), "--out", str(merged)])
        assert result.exit_code == 0, result.output
        assert pd.read_csv(merged / "folds.csv")["fold"].tolist() == ["0", "1", "2", "mean"]

    def test_imaging_evaluation(self, runner, tmp_path, config_file, cohort_dir):
        out = tmp_path / "eval"
        result = runner.invoke(main, [
            "evaluate", "--config", str(config_file), "--manifest", str(cohort_dir / "manifest.json"),
            "--model", "imaging", "--run-length", "2", "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        sweep = pd.read_csv(out / "imaging_run_length_sweep.csv")
        assert sweep["run_length"].tolist() == [1, 2, 4, 6, 8, 10, 12, 16]
        assert MetricsReport.from_json(out / "imaging_report.json").threshold == 0.5

        predictions = pd.read_csv(out / "imaging_slice_predictions.csv")
        assert list(predictions.columns) == ["patient_id", "frame_index", "probability"]
        patients = json.loads((cohort_dir / "manifest.json").read_text())["patients"]
        assert len(predictions) == sum(len(p["slices"]) for p in patients)
        assert predictions["probability"].between(0.0, 1.0).all()
        folds = json.loads((out / "folds.json").read_text())["fold_of"]
        order = [folds[pid] for pid in predictions["patient_id"].drop_duplicates()]
        assert order == sorted(order)


class TestErrors:
    """Test failure exits."""

    def test_missing_manifest_flag(self, runner, tmp_path):
        result = runner.invoke(main, ["train-clinical", "--out", str(tmp_path / "o")])
        assert result.exit_code == 2
        assert "manifest" in result.output

    def test_unreadable_manifest(self, runner, tmp_path):
        out = tmp_path / "o"
        result = runner.invoke(main, ["train-clinical", "--manifest", str(tmp_path / "none.json"), "--out", str(out)])
        assert result.exit_code == 1
        assert "not found" in result.output
        assert not out.exists()

    def test_report_rejects_non_report(self, runner, tmp_path):
        path = tmp_path / "x.json"
        path.write_text("{}")
        result = runner.invoke(main, ["report", str(path), "--out", str(tmp_path / "r")])
        assert result.exit_code == 1
        assert not (tmp_path / "r").exists()

    def test_report_with_malformed_mean(self, runner, tmp_path):
        document = {
            "format_version": 1, "model": "imaging", "threshold": 0.15, "threshold_policy": "fixed",
            "folds": [{"fold": 0, "threshold": 0.15, "n_test": 4, "n_positive": 2, "auroc": 0.75,
                       "sensitivity": 0.5, "specificity": 1.0, "accuracy": 0.75, "precision": 1.0, "f1": 0.6667}],
            "mean": {"auroc": "0.75"},
        }
        path = tmp_path / "imaging_report.json"
        path.write_text(json.dumps(document))
        result = runner.invoke(main, ["report", str(path), "--out", str(tmp_path / "r")])
        assert result.exit_code == 1
        assert "malformed" in result.output
        assert not (tmp_path / "r").exists()

    def test_manifest_with_wrong_field_type(self, runner, tmp_path, cohort_dir):
        manifest = cohort_dir / "manifest.json"
        document = json.loads(manifest.read_text())
        document["patients"][0]["age"] = [70]
        manifest.write_text(json.dumps(document))
        out = tmp_path / "o"
        result = runner.invoke(main, ["train-clinical", "--manifest", str(manifest), "--out", str(out)])
        assert result.exit_code == 1
        assert "field 'age'" in result.output
        assert not out.exists()
