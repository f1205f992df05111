"""
Greedy forward feature selection for mTBI-BoW.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from rich.console import Console
from rich.progress import Progress

from src.cross_validation import CvConfig, CvResult, Features, best_result, evaluate_pairs
from src.errors import ConfigError, DataError
from src.svm_classifier import GridConfig, SvmSpec

console = Console()

TUNING_MODES = ("per_set", "once")
STOP_MAX_SIZE = "max_size"
STOP_NO_IMPROVEMENT = "no_improvement"
REPORT_COLUMNS = ["step", "feature_name", "mean_cv_accuracy"]


@dataclass
class SelectionStep:
    """One accepted feature with the cross-validation outcome of the set it completes."""

    index: int
    name: str
    mean_accuracy: float
    repeat_accuracies: Tuple[float, ...]
    C: float
    gamma_scale: float
    sensitivity: Optional[float] = None
    specificity: Optional[float] = None


@dataclass
class SelectionTrace:
    """Ordered outcome of greedy forward selection."""

    steps: List[SelectionStep] = field(default_factory=list)
    stop_reason: str = STOP_MAX_SIZE
    tuning: Optional[str] = None
    source_hash: Optional[str] = None

    @property
    def indices(self) -> List[int]:
        return [s.index for s in self.steps]

    @property
    def names(self) -> List[str]:
        return [s.name for s in self.steps]

    @property
    def accuracies(self) -> List[float]:
        return [s.mean_accuracy for s in self.steps]

    def __len__(self) -> int:
        return len(self.steps)


def _n_features(X: Features) -> int:
    return X.shape[1] if isinstance(X, np.ndarray) else X[0].shape[1]


def _score_candidate(
    X: Features,
    y: np.ndarray,
    cfg: CvConfig,
    columns: List[int],
    pairs: List[Tuple[float, float]],
    spec: SvmSpec,
) -> CvResult:
    return best_result(evaluate_pairs(X, y, cfg, pairs, spec.tol, spec.max_passes, columns))


def greedy_forward_select(
    X: Features,
    y: Sequence[int],
    cfg: CvConfig,
    max_size: int,
    spec: SvmSpec = SvmSpec(),
    grid: Optional[GridConfig] = None,
    tuning: str = "per_set",
    names: Optional[Sequence[str]] = None,
    n_jobs: int = 1,
) -> SelectionTrace:
    """
    Add one feature at a time, keeping the candidate with the best repeated-CV accuracy.

    Every candidate is scored on the same splits. Ties go to the lowest
    feature index; selection stops at ``max_size`` or when the best candidate
    does not strictly improve on the previous step.

    Args:
        X: (n, d) feature matrix, or one matrix per CV repeat
        y: Labels in {0, 1} or {-1, +1}
        cfg: Split protocol
        max_size: Largest subset size
        spec: SVM settings (C and gamma scale are used when ``grid`` is None)
        grid: Hyperparameter grid for tuning
        tuning: ``per_set`` tunes every candidate set, ``once`` tunes on the full pool and reuses the result
        names: Feature names for the trace
        n_jobs: Workers across candidates; output does not depend on it

    Returns:
        SelectionTrace: Accepted features with per-step accuracies and stop reason
    """
    spec.validate()
    if tuning not in TUNING_MODES:
        raise ConfigError(f"unknown tuning mode '{tuning}', expected one of {', '.join(TUNING_MODES)}")
    d = _n_features(X)
    names = list(names) if names is not None else [f"f{i}" for i in range(d)]
    if len(names) != d:
        raise DataError(f"{len(names)} names for {d} features")
    if not 0 <= max_size <= d:
        raise DataError(f"max_size {max_size} outside [0, {d}]")
    y = np.asarray(y)

    # Fixed hyperparameters unless a grid is given
    pairs = [(spec.C, spec.gamma_scale)]
    trace = SelectionTrace(tuning=tuning if grid is not None else None)
    if grid is not None:
        if tuning == "once":
            tuned = best_result(evaluate_pairs(X, y, cfg, grid.pairs(), spec.tol, spec.max_passes, n_jobs=n_jobs))
            pairs = [(tuned.C, tuned.gamma_scale)]
            console.print(f"[blue]Tuned once on the full pool: C={tuned.C:g}, gamma_scale={tuned.gamma_scale:g}")
        else:
            pairs = grid.pairs()

    chosen: List[int] = []
    previous = -np.inf
    with Progress(console=console, transient=True) as progress:
        task = progress.add_task("[green]Selecting features...", total=max_size)
        while len(chosen) < max_size:
            # Score every unchosen feature added to the current subset
            candidates = [f for f in range(d) if f not in chosen]
            tasks = [delayed(_score_candidate)(X, y, cfg, chosen + [f], pairs, spec) for f in candidates]
            if n_jobs != 1:
                results = Parallel(n_jobs=n_jobs)(tasks)
            else:
                results = [func(*args, **kwargs) for func, args, kwargs in tasks]

            # First best wins ties
            best_pos = 0
            for pos in range(1, len(results)):
                if results[pos].mean_accuracy > results[best_pos].mean_accuracy:
                    best_pos = pos
            best = results[best_pos]
            # Stop as soon as accuracy does not strictly improve
            if not best.mean_accuracy > previous:
                trace.stop_reason = STOP_NO_IMPROVEMENT
                console.print(f"[yellow]Stopping at {len(chosen)} features: no candidate improves {previous:.4f}")
                return trace

            feature = candidates[best_pos]
            chosen.append(feature)
            previous = best.mean_accuracy
            trace.steps.append(
                SelectionStep(
                    index=feature,
                    name=names[feature],
                    mean_accuracy=best.mean_accuracy,
                    repeat_accuracies=tuple(best.accuracies),
                    C=best.C,
                    gamma_scale=best.gamma_scale,
                    sensitivity=best.mean_sensitivity,
                    specificity=best.mean_specificity,
                )
            )
            console.print(f"[green]Step {len(chosen)}: {names[feature]} (accuracy {best.mean_accuracy:.4f})")
            progress.update(task, advance=1)

    trace.stop_reason = STOP_MAX_SIZE
    return trace


def selection_report(trace: SelectionTrace) -> pd.DataFrame:
    """Rows ``step, feature_name, mean_cv_accuracy``."""
    return pd.DataFrame(
        [(k + 1, s.name, s.mean_accuracy) for k, s in enumerate(trace.steps)],
        columns=REPORT_COLUMNS,
    )


def write_selection_report(trace: SelectionTrace, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    selection_report(trace).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def save_trace(trace: SelectionTrace, path: Union[str, Path]) -> None:
    """Write the full trace (per-repeat accuracies and tuned settings per step) as JSON."""
    payload = {
        "stop_reason": trace.stop_reason,
        "tuning": trace.tuning,
        "source_hash": trace.source_hash,
        "steps": [
            {
                "index": s.index,
                "name": s.name,
                "mean_accuracy": s.mean_accuracy,
                "repeat_accuracies": list(s.repeat_accuracies),
                "C": s.C,
                "gamma_scale": s.gamma_scale,
                "sensitivity": s.sensitivity,
                "specificity": s.specificity,
            }
            for s in trace.steps
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=1)
        f.write("\n")


def load_trace(path: Union[str, Path]) -> SelectionTrace:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
        steps = [
            SelectionStep(
                index=int(s["index"]),
                name=s["name"],
                mean_accuracy=float(s["mean_accuracy"]),
                repeat_accuracies=tuple(float(a) for a in s["repeat_accuracies"]),
                C=float(s["C"]),
                gamma_scale=float(s["gamma_scale"]),
                sensitivity=s.get("sensitivity"),
                specificity=s.get("specificity"),
            )
            for s in payload["steps"]
        ]
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        console.print(f"[red]Malformed selection trace {path}: {e}")
        raise DataError(f"malformed selection trace {path}: {e}") from e
    return SelectionTrace(
        steps=steps,
        stop_reason=payload.get("stop_reason", STOP_MAX_SIZE),
        tuning=payload.get("tuning"),
        source_hash=payload.get("source_hash"),
    )
