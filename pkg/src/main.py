"""
Main module for the mTBI-BoW CLI.
"""
import os
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import typer
from dotenv import load_dotenv
from rich.console import Console
from rich.table import Table

from src.encoder import feature_matrix, load_feature_matrix
from src.errors import BowError, DataError
from src.pipeline import FEATURES_CSV, MODEL_JSON, Pipeline
from src.run_config import RunConfig, load_run_config
from src.svm_classifier import load_model, scaler_apply

# Load environment variables from .env file
script_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
load_dotenv(os.path.join(script_dir, ".env"))

app = typer.Typer(help="mTBI-BoW: bag-of-visual-words classification of mild traumatic brain injury")
console = Console()

CONFIG_OPTION = typer.Option(None, "--config", "-c", help="Run configuration file (KEY=value lines)")
SEED_OPTION = typer.Option(None, "--seed", help="Root random seed")
WORKERS_OPTION = typer.Option(None, "--workers", "-w", help="Worker processes (-1 for all cores)")
OUT_OPTION = typer.Option(None, "--out", "-o", help="Output directory")
DATA_OPTION = typer.Option(None, "--data", help="Dataset directory (default: <out>/dataset)")
MODE_OPTION = typer.Option(None, "--mode", help="Feature mode: bow or mean_baseline")
HONEST_OPTION = typer.Option(
    None, "--honest-codebooks/--global-codebooks", help="Learn codebooks inside each cross-validation split"
)


def error_line(error: BaseException, code: int) -> str:
    """Single-line machine-parsable error report."""
    message = " ".join(str(error).split())
    return f"error code={code} kind={type(error).__name__} message={message}"


def _resolve(
    config: Optional[Path],
    seed: Optional[int],
    workers: Optional[int],
    out: Optional[Path],
    data: Optional[Path] = None,
    mode: Optional[str] = None,
    honest: Optional[bool] = None,
    check_paths: bool = True,
) -> RunConfig:
    cfg = load_run_config(
        config,
        overrides={
            "seed": seed,
            "workers": workers,
            "out": str(out) if out is not None else None,
            "data_dir": str(data) if data is not None else None,
            "mode": mode,
            "honest_codebooks": honest,
        },
    )
    cfg.validate(check_paths=check_paths)
    return cfg


def _run(action: Callable[[], None]) -> None:
    """Run a command body and turn pipeline errors into exit codes."""
    try:
        action()
    except BowError as e:
        typer.echo(error_line(e, e.exit_code), err=True)
        raise typer.Exit(code=e.exit_code)
    except OSError as e:
        typer.echo(error_line(e, DataError.exit_code), err=True)
        raise typer.Exit(code=DataError.exit_code)


def _stage(stage: str, cfg_args: dict, check_paths: bool = True) -> None:
    def action() -> None:
        cfg = _resolve(**cfg_args, check_paths=check_paths)
        pipeline = Pipeline(cfg)
        getattr(pipeline, f"{stage}_stage")()
        pipeline.write_run_record()

    _run(action)


@app.command("synth")
def cmd_synth(
    config: Optional[Path] = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    workers: Optional[int] = WORKERS_OPTION,
    out: Optional[Path] = OUT_OPTION,
    data: Optional[Path] = DATA_OPTION,
):
    """
    Generate a synthetic two-cohort dataset.
    """
    _stage("synth", dict(config=config, seed=seed, workers=workers, out=out, data=data), check_paths=False)


@app.command("extract")
def cmd_extract(
    config: Optional[Path] = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    workers: Optional[int] = WORKERS_OPTION,
    out: Optional[Path] = OUT_OPTION,
    data: Optional[Path] = DATA_OPTION,
):
    """
    Extract patches from every subject's ROI images.
    """
    _stage("extract", dict(config=config, seed=seed, workers=workers, out=out, data=data))


@app.command("codebook")
def cmd_codebook(
    config: Optional[Path] = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    workers: Optional[int] = WORKERS_OPTION,
    out: Optional[Path] = OUT_OPTION,
    data: Optional[Path] = DATA_OPTION,
):
    """
    Learn one codebook per (metric, region) pair.
    """
    _stage("codebook", dict(config=config, seed=seed, workers=workers, out=out, data=data))


@app.command("encode")
def cmd_encode(
    config: Optional[Path] = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    workers: Optional[int] = WORKERS_OPTION,
    out: Optional[Path] = OUT_OPTION,
    data: Optional[Path] = DATA_OPTION,
    mode: Optional[str] = MODE_OPTION,
):
    """
    Write the feature matrix (BoW histograms or mean-value baseline).
    """
    _stage("encode", dict(config=config, seed=seed, workers=workers, out=out, data=data, mode=mode))


@app.command("select")
def cmd_select(
    config: Optional[Path] = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    workers: Optional[int] = WORKERS_OPTION,
    out: Optional[Path] = OUT_OPTION,
    data: Optional[Path] = DATA_OPTION,
    mode: Optional[str] = MODE_OPTION,
    honest: Optional[bool] = HONEST_OPTION,
):
    """
    Run greedy forward feature selection.
    """
    _stage("select", dict(config=config, seed=seed, workers=workers, out=out, data=data, mode=mode, honest=honest))


@app.command("evaluate")
def cmd_evaluate(
    config: Optional[Path] = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    workers: Optional[int] = WORKERS_OPTION,
    out: Optional[Path] = OUT_OPTION,
    data: Optional[Path] = DATA_OPTION,
    mode: Optional[str] = MODE_OPTION,
    honest: Optional[bool] = HONEST_OPTION,
):
    """
    Write the evaluation tables, figures and word images.
    """
    _stage("evaluate", dict(config=config, seed=seed, workers=workers, out=out, data=data, mode=mode, honest=honest))


@app.command("pipeline")
def cmd_pipeline(
    config: Optional[Path] = CONFIG_OPTION,
    seed: Optional[int] = SEED_OPTION,
    workers: Optional[int] = WORKERS_OPTION,
    out: Optional[Path] = OUT_OPTION,
    data: Optional[Path] = DATA_OPTION,
    mode: Optional[str] = MODE_OPTION,
    honest: Optional[bool] = HONEST_OPTION,
):
    """
    Run every stage and train the final model.
    """

    def action() -> None:
        cfg = _resolve(config, seed, workers, out, data, mode, honest)
        Pipeline(cfg).run_all()

    _run(action)


@app.command("predict")
def cmd_predict(
    config: Optional[Path] = CONFIG_OPTION,
    out: Optional[Path] = OUT_OPTION,
    features: Optional[Path] = typer.Option(None, "--features", help="Feature CSV (default: <out>/features/features.csv)"),
):
    """
    Classify subjects with the final model of a run.
    """

    def action() -> None:
        cfg = _resolve(config, None, None, out)
        model, scaler, names = load_model(cfg.out_dir / MODEL_JSON)
        if scaler is None or names is None:
            raise DataError("model file has no scaler or feature names")
        vectors = load_feature_matrix(features or cfg.out_dir / FEATURES_CSV)
        X, labels, all_names = feature_matrix(vectors)
        missing = [n for n in names if n not in all_names]
        if missing:
            raise DataError(f"feature CSV lacks model features: {missing}")
        columns = [all_names.index(n) for n in names]
        decisions = model.decision_function(scaler_apply(scaler, X[:, columns]))

        table = Table(title="Predictions")
        table.add_column("subject")
        table.add_column("label")
        table.add_column("predicted")
        table.add_column("decision", justify="right")
        for vector, label, decision in zip(vectors, labels, decisions):
            predicted = "mTBI" if decision >= 0 else "control"
            table.add_row(vector.subject_id, "mTBI" if label == 1 else "control", predicted, f"{decision:.4f}")
        console.print(table)
        accuracy = float(np.mean((decisions >= 0) == (labels == 1)))
        console.print(f"[green]Agreement with stored labels: {accuracy:.4f}")

    _run(action)


if __name__ == "__main__":
    app()
