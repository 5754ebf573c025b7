"""
Command-line entry point.

    python -m src.cli [--log-level LEVEL] COMMAND [OPTIONS]

Commands: synth, train-ae, extract, train-forest, train-clinical, evaluate,
report. Each command writes into a staging directory next to ``--out`` and
publishes its files only after every artifact was written, together with an
``audit_log.json`` listing their checksums. Flags also read ``MICROUS_*``
environment variables; a ``.env`` file in the working directory is loaded.
"""

from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence
import functools
import logging
import os
import shutil
import tempfile

import click
import numpy as np
import pandas as pd
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field
from rich.console import Console
from rich.table import Table

from src.artifacts import read_npz, write_csv, write_json, write_npz
from src.audit_log import AuditLog
from src.autoencoder import (
    EncoderConfig,
    TrainConfig,
    extract_features,
    load_checkpoint,
    save_checkpoint,
    train_autoencoder,
)
from src.dataset import Cohort, SliceLabel, load_manifest, validate_cohort
from src.evaluation import (
    CrossValidationConfig,
    MetricsReport,
    PipelineKind,
    ThresholdPolicy,
    comparison_frame,
    make_folds,
    run_cross_validation,
    write_report_csv,
)
from src.forest import ForestConfig, fit_forest, oob_score, save_forest
from src.logging_config import configure_logging
from src.screening import (
    AggregationConfig,
    SlicePrediction,
    clinical_matrix,
    fit_clinical,
    run_length_sweep,
    write_patient_scores,
    write_slice_predictions,
)
from src.seeding import derive_seed
from src.synthesis import ClinicalDistributions, PhantomConfig, write_cohort

logger = logging.getLogger(__name__)

ENV_PREFIX = "MICROUS"
SWEEP_RUN_LENGTHS = (1, 2, 4, 6, 8, 10, 12, 16)
TABLE_COLUMNS = [
    ("auroc", "AUROC"),
    ("sensitivity", "Sensitivity"),
    ("specificity", "Specificity"),
    ("accuracy", "Accuracy"),
    ("precision", "Precision"),
    ("f1", "F1-Score"),
]

console = Console()


class RunConfig(BaseModel):
    """Everything a command needs; loaded from a JSON file, then overridden by flags."""
    model_config = ConfigDict(extra="forbid")

    manifest: Optional[Path] = Field(default=None, description="cohort manifest.json")
    out: Path = Field(default=Path("runs"), description="output directory")
    checkpoint: Optional[Path] = Field(default=None, description="autoencoder checkpoint (.npz)")
    features: Optional[Path] = Field(default=None, description="feature archive written by extract")
    seed: int = 42
    k: int = Field(default=5, ge=3)
    threshold_policy: ThresholdPolicy = ThresholdPolicy.FIXED
    n_jobs: int = Field(default=1, ge=1)
    phantom: PhantomConfig = Field(default_factory=PhantomConfig)
    clinical: ClinicalDistributions = Field(default_factory=ClinicalDistributions)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    slice_forest: ForestConfig = Field(default_factory=ForestConfig)
    clinical_forest: ForestConfig = Field(default_factory=ForestConfig)
    aggregation: AggregationConfig = Field(default_factory=AggregationConfig)

    @classmethod
    def load(cls, path: Optional[Path]) -> "RunConfig":
        if path is None:
            return cls()
        return cls.model_validate_json(Path(path).read_text())

    def cross_validation(self) -> CrossValidationConfig:
        return CrossValidationConfig(
            k=self.k,
            train=self.train,
            encoder=self.encoder,
            slice_forest=self.slice_forest,
            clinical_forest=self.clinical_forest,
            aggregation=self.aggregation,
            threshold_policy=self.threshold_policy,
            n_jobs=self.n_jobs,
        )


def _build_config(
    config_path: Optional[Path],
    seed: Optional[int] = None,
    out: Optional[Path] = None,
    manifest: Optional[Path] = None,
    threshold: Optional[float] = None,
    run_length: Optional[int] = None,
) -> RunConfig:
    config = RunConfig.load(config_path)
    updates: Dict = {}
    if seed is not None:
        updates["seed"] = seed
    if out is not None:
        updates["out"] = out
    if manifest is not None:
        updates["manifest"] = manifest
    if threshold is not None or run_length is not None:
        updates["aggregation"] = AggregationConfig(
            run_length=config.aggregation.run_length if run_length is None else run_length,
            slice_threshold=config.aggregation.slice_threshold if threshold is None else threshold,
        )
    return config.model_copy(update=updates)


@contextmanager
def staged_output(out: Path) -> Iterator[Path]:
    """Yield a staging directory; move its files into ``out`` only on success."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{out.name}-staging-", dir=out.parent))
    try:
        yield staging
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    out.mkdir(parents=True, exist_ok=True)
    for source in sorted(p for p in staging.rglob("*") if p.is_file()):
        target = out / source.relative_to(staging)
        target.parent.mkdir(parents=True, exist_ok=True)
        os.replace(source, target)
    shutil.rmtree(staging, ignore_errors=True)


def _finish(audit: AuditLog, staging: Path, stage: str, paths: Sequence[Path]) -> None:
    for path in paths:
        audit.log_artifact(stage, path, root=staging)
    (staging / "audit_log.json").write_text(audit.export_json())


def fails_cleanly(func: Callable) -> Callable:
    """Turn domain and I/O errors into a one-line diagnostic with exit code 1."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (ValueError, OSError, RuntimeError) as exc:
            logger.error("command failed", extra={"command": func.__name__, "error": str(exc)})
            raise click.ClickException(str(exc)) from exc

    return wrapper


def _load_cohort(config: RunConfig, audit: AuditLog) -> Cohort:
    if config.manifest is None:
        raise click.UsageError("no manifest given (use --manifest or the config's 'manifest')")
    cohort, exclusions = validate_cohort(load_manifest(config.manifest))
    audit.log_event(
        "cohort_loaded",
        "dataset",
        {
            "studies": len(cohort),
            "positive": sum(cohort.labels().values()),
            "excluded": [e.to_dict() for e in exclusions],
        },
    )
    return cohort


def _metrics_table(title: str, reports: Sequence[MetricsReport]) -> Table:
    table = Table(title=title)
    table.add_column("Model")
    for _, header in TABLE_COLUMNS:
        table.add_column(header, justify="right")
    for report in reports:
        mean = report.mean()
        table.add_row(
            report.model,
            *["-" if mean[name] is None else f"{mean[name]:.3f}" for name, _ in TABLE_COLUMNS],
        )
    return table


# Shared options

def config_option(func):
    return click.option(
        "--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
        envvar=f"{ENV_PREFIX}_CONFIG", help="JSON run config",
    )(func)


def seed_option(func):
    return click.option("--seed", type=int, envvar=f"{ENV_PREFIX}_SEED", help="global seed")(func)


def out_option(func):
    return click.option(
        "--out", type=click.Path(file_okay=False, path_type=Path), envvar=f"{ENV_PREFIX}_OUT",
        help="output directory",
    )(func)


def manifest_option(func):
    return click.option(
        "--manifest", type=click.Path(path_type=Path), envvar=f"{ENV_PREFIX}_MANIFEST",
        help="cohort manifest.json",
    )(func)


@click.group()
@click.option(
    "--log-level", default="INFO", envvar=f"{ENV_PREFIX}_LOG_LEVEL", show_default=True,
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
)
def main(log_level: str) -> None:
    """Micro-ultrasound screening: synthesize, train, evaluate, report."""
    configure_logging(log_level)


@main.command()
@config_option
@seed_option
@out_option
@fails_cleanly
def synth(config_path, seed, out):
    """Write a phantom cohort (manifest + PNG slices)."""
    config = _build_config(config_path, seed=seed, out=out)
    phantom = replace(config.phantom, seed=derive_seed(config.seed, "synthesis"))
    audit = AuditLog("synth", config.seed)
    audit.log_event("config", "synthesis", {"phantom": phantom.to_dict()})

    with staged_output(config.out) as staging:
        manifest = write_cohort(staging, phantom, config.clinical)
        summary = pd.DataFrame(
            [("positive", phantom.n_positive), ("negative", phantom.n_negative)], columns=["class", "patients"]
        )
        summary_path = write_csv(staging / "cohort_summary.csv", summary)
        _finish(audit, staging, "synthesis", [manifest, summary_path])

    console.print(
        f"cohort written to {config.out}: {phantom.n_positive} positive, {phantom.n_negative} negative patients"
    )


@main.command("train-ae")
@config_option
@seed_option
@out_option
@manifest_option
@fails_cleanly
def train_ae(config_path, seed, out, manifest):
    """Train the autoencoder on round 0's training folds, checkpoint on its validation fold."""
    config = _build_config(config_path, seed=seed, out=out, manifest=manifest)
    audit = AuditLog("train-ae", config.seed)
    cohort = _load_cohort(config, audit)
    folds = make_folds(cohort, config.k, derive_seed(config.seed, "folds"))
    training, validation, _ = folds.roles(0)

    train_config = replace(config.train, seed=derive_seed(config.seed, "autoencoder"))
    weights, history = train_autoencoder(
        [image for study in cohort.subset(training) for image in study.slices],
        [image for study in cohort.subset(validation) for image in study.slices],
        train_config,
        config.encoder,
    )
    audit.log_event("trained", "autoencoder", {"best_epoch": history.best_epoch, "epochs": len(history)})

    with staged_output(config.out) as staging:
        checkpoint = save_checkpoint(weights, staging / "autoencoder.npz", train_config)
        losses = write_csv(staging / "loss_history.csv", pd.DataFrame(history.to_rows()))
        _finish(audit, staging, "autoencoder", [checkpoint, losses])
    console.print(f"best epoch {history.best_epoch}, validation MSE {history.best_val_loss:.6f}")


@main.command()
@config_option
@seed_option
@out_option
@manifest_option
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              envvar=f"{ENV_PREFIX}_CHECKPOINT")
@fails_cleanly
def extract(config_path, seed, out, manifest, checkpoint):
    """Encode every slice of the cohort into a feature archive."""
    config = _build_config(config_path, seed=seed, out=out, manifest=manifest)
    checkpoint = checkpoint or config.checkpoint
    if checkpoint is None:
        raise click.UsageError("no checkpoint given")
    audit = AuditLog("extract", config.seed)
    cohort = _load_cohort(config, audit)
    weights = load_checkpoint(checkpoint, expected=config.encoder)

    slices = [image for study in cohort for image in study.slices]
    arrays = {
        "features": extract_features(slices, weights),
        "patient_id": np.array([image.patient_id for image in slices], dtype=str),
        "frame_index": np.array([image.frame_index for image in slices], dtype=np.int64),
        "label": np.array([label.value for study in cohort for label in study.labels], dtype=str),
    }
    with staged_output(config.out) as staging:
        archive = write_npz(staging / "features.npz", arrays, meta={"encoder_config": config.encoder.to_dict()})
        _finish(audit, staging, "features", [archive])
    console.print(f"{len(slices)} slices encoded")


@main.command("train-forest")
@config_option
@seed_option
@out_option
@click.option("--features", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              envvar=f"{ENV_PREFIX}_FEATURES")
@fails_cleanly
def train_forest(config_path, seed, out, features):
    """Fit the slice forest on labeled (non-EXCLUDED) slice features."""
    config = _build_config(config_path, seed=seed, out=out)
    features = features or config.features
    if features is None:
        raise click.UsageError("no feature archive given")
    audit = AuditLog("train-forest", config.seed)
    arrays, _ = read_npz(features)
    keep = arrays["label"] != SliceLabel.EXCLUDED.value
    X = arrays["features"][keep]
    y = (arrays["label"][keep] == SliceLabel.POSITIVE.value).astype(np.int64)

    forest_config = replace(config.slice_forest, seed=derive_seed(config.seed, "slice-forest"))
    model = fit_forest(X, y, forest_config)
    summary = {"oob_score": oob_score(model, X, y), "oob_fraction": model.oob_fraction(), "n_slices": int(len(y))}
    audit.log_event("trained", "slice-forest", summary)

    with staged_output(config.out) as staging:
        paths = [
            save_forest(model, staging / "slice_forest.json"),
            write_json(staging / "slice_forest_oob.json", summary),
        ]
        _finish(audit, staging, "slice-forest", paths)
    console.print(f"slice forest OOB accuracy {summary['oob_score']:.3f}")


@main.command("train-clinical")
@config_option
@seed_option
@out_option
@manifest_option
@fails_cleanly
def train_clinical(config_path, seed, out, manifest):
    """Fit the clinical forest on (age, psa, volume, dre) with OOB validation."""
    config = _build_config(config_path, seed=seed, out=out, manifest=manifest)
    audit = AuditLog("train-clinical", config.seed)
    cohort = _load_cohort(config, audit)
    records = [study.record for study in cohort]
    forest_config = replace(config.clinical_forest, seed=derive_seed(config.seed, "clinical-forest"))
    model = fit_clinical(records, forest_config)
    X, y = clinical_matrix(records)
    summary = {"oob_score": oob_score(model, X, y), "oob_fraction": model.oob_fraction(), "n_patients": len(records)}
    audit.log_event("trained", "clinical-forest", summary)

    with staged_output(config.out) as staging:
        paths = [
            save_forest(model, staging / "clinical_forest.json"),
            write_json(staging / "clinical_forest_oob.json", summary),
        ]
        _finish(audit, staging, "clinical-forest", paths)
    console.print(f"clinical forest OOB accuracy {summary['oob_score']:.3f}")


@main.command()
@config_option
@seed_option
@out_option
@manifest_option
@click.option("--model", "model_choice", type=click.Choice(["imaging", "clinical", "both"]), default="both",
              show_default=True, envvar=f"{ENV_PREFIX}_MODEL")
@click.option("--threshold", type=float, envvar=f"{ENV_PREFIX}_THRESHOLD",
              help="slice/patient decision threshold [default: 0.15]")
@click.option("--run-length", type=int, envvar=f"{ENV_PREFIX}_RUN_LENGTH",
              help="consecutive positive slices required [default: 8]")
@fails_cleanly
def evaluate(config_path, seed, out, manifest, model_choice, threshold, run_length):
    """Cross-validate the selected pipelines and write reports and ROC points."""
    config = _build_config(config_path, seed=seed, out=out, manifest=manifest, threshold=threshold,
                           run_length=run_length)
    audit = AuditLog("evaluate", config.seed)
    cohort = _load_cohort(config, audit)
    folds = make_folds(cohort, config.k, derive_seed(config.seed, "folds"))
    pipelines = [PipelineKind.IMAGING, PipelineKind.CLINICAL] if model_choice == "both" else [PipelineKind(model_choice)]
    cv_config = config.cross_validation()

    results = [run_cross_validation(cohort, kind, cv_config, seed=config.seed, folds=folds) for kind in pipelines]
    with staged_output(config.out) as staging:
        paths: List[Path] = [write_json(staging / "folds.json", folds.to_dict())]
        for result in results:
            name = result.pipeline.value
            audit.log_event("evaluated", name, {"mean": result.report.mean()})
            paths.append(result.report.to_json(staging / f"{name}_report.json"))
            paths.append(write_report_csv([result.report], staging / f"{name}_report.csv"))
            paths.append(write_patient_scores(result.all_scores(), staging / f"{name}_patient_scores.csv"))
            for round_result in result.rounds:
                curve = round_result.roc()
                if curve is not None:
                    path = staging / "roc" / f"{name}_fold{round_result.round_index}.csv"
                    paths.append(write_csv(path, curve.to_frame()))
            paths.append(write_csv(staging / "roc" / f"{name}_pooled.csv", result.pooled_roc().to_frame()))
            if result.pipeline == PipelineKind.IMAGING:
                probabilities = {pid: p for r in result.rounds for pid, p in r.slice_probabilities.items()}
                predictions = [
                    SlicePrediction(pid, image.frame_index, p)
                    for pid, probs in probabilities.items()
                    for image, p in zip(cohort.by_id(pid).slices, probs)
                ]
                paths.append(write_slice_predictions(predictions, staging / "imaging_slice_predictions.csv"))
                sweep = run_length_sweep(
                    probabilities, cohort.labels(), SWEEP_RUN_LENGTHS, config.aggregation.slice_threshold
                )
                paths.append(write_csv(staging / "imaging_run_length_sweep.csv", sweep))
        reports = [result.report for result in results]
        paths.append(write_csv(staging / "comparison.csv", comparison_frame(reports)))
        _finish(audit, staging, "evaluation", paths)

    console.print(_metrics_table("Cross-validated metrics (mean over folds)", reports))


@main.command()
@click.argument("reports", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@out_option
@fails_cleanly
def report(reports, out):
    """Merge report JSON files into one comparison table."""
    loaded = [MetricsReport.from_json(path) for path in reports]
    audit = AuditLog("report", 0)
    audit.log_event("inputs", "report", {"reports": [path.name for path in reports]})
    with staged_output(out or Path("report")) as staging:
        paths = [
            write_csv(staging / "comparison.csv", comparison_frame(loaded)),
            write_report_csv(loaded, staging / "folds.csv"),
        ]
        _finish(audit, staging, "report", paths)
    console.print(_metrics_table("Threshold-based classification metrics (mean over folds)", loaded))


def run() -> None:
    load_dotenv()
    main()


if __name__ == "__main__":
    run()
