"""
Repeated random-split cross-validation for mTBI-BoW.

Every repeat draws a (by default stratified) train/validation split from its
own seeded stream, fits the scaler and the SVM on the training rows only and
scores the validation rows. The same splits are shared by every candidate
feature set and every grid point, so their accuracies are paired.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from rich.console import Console

from src.errors import ConfigError, DataError
from src.metrics import ConfusionCounts, accuracy, confusion, mean_defined, sensitivity, specificity
from src.random_streams import STREAM_CV_SPLIT, derive_rng
from src.svm_classifier import (
    GridConfig,
    SvmSpec,
    check_dual_coefs,
    predict_labels,
    scaler_apply,
    scaler_fit,
    smo_solve,
    squared_distances,
)

console = Console()

Split = Tuple[np.ndarray, np.ndarray]
Features = Union[np.ndarray, Sequence[np.ndarray]]

MAX_SPLIT_ATTEMPTS = 1000
# absorbs rounding in 1 - ratio before flooring split sizes
SPLIT_EPS = 1e-9


@dataclass(frozen=True)
class CvConfig:
    """Repeated-split protocol."""

    validation_fraction: float = 0.2
    repeats: int = 50
    stratified: bool = True
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError(f"validation_fraction must lie in (0, 1), got {self.validation_fraction}")
        if self.repeats < 1:
            raise ConfigError(f"repeats must be at least 1, got {self.repeats}")


@dataclass(frozen=True)
class CvResult:
    """Per-repeat outcome of one classifier configuration."""

    accuracies: Tuple[float, ...]
    confusions: Tuple[ConfusionCounts, ...]
    C: float
    gamma_scale: float

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def mean_sensitivity(self) -> Optional[float]:
        return mean_defined([sensitivity(c) for c in self.confusions])

    @property
    def mean_specificity(self) -> Optional[float]:
        return mean_defined([specificity(c) for c in self.confusions])


def signed_labels(y: Sequence[int]) -> np.ndarray:
    """Map labels in {0, 1} or {-1, +1} to {-1, +1} (mTBI = +1)."""
    y = np.asarray(y)
    if y.ndim != 1 or not np.all(np.isin(y, (-1, 0, 1))):
        raise DataError("labels must be a vector over {0, 1} or {-1, +1}")
    return np.where(y == 1, 1, -1)


def _stratified_split(y: np.ndarray, fraction: float, rng: np.random.Generator) -> Split:
    validation = []
    for cls in (-1, 1):
        members = np.flatnonzero(y == cls)
        n_val = int(np.floor(fraction * len(members) + SPLIT_EPS))
        if len(members) - n_val < 1:
            raise DataError(f"degenerate split: class {cls:+d} has no training example")
        validation.append(rng.permutation(members)[:n_val])
    val = np.sort(np.concatenate(validation))
    if len(val) == 0:
        raise DataError(f"degenerate split: validation fraction {fraction} leaves no validation example")
    train = np.setdiff1d(np.arange(len(y)), val)
    return train, val


def _random_split(y: np.ndarray, fraction: float, rng: np.random.Generator) -> Split:
    n_val = int(np.floor(fraction * len(y) + SPLIT_EPS))
    if n_val < 1:
        raise DataError(f"degenerate split: validation fraction {fraction} leaves no validation example")
    for _ in range(MAX_SPLIT_ATTEMPTS):
        order = rng.permutation(len(y))
        val = np.sort(order[:n_val])
        train = np.sort(order[n_val:])
        if len(np.unique(y[train])) == 2:
            return train, val
    raise DataError("degenerate split: could not draw a training set containing both classes")


def cv_splits(y: Sequence[int], cfg: CvConfig) -> List[Split]:
    """
    Deterministic train/validation index splits, one per repeat.

    Stratified splits put floor(fraction * n_c) examples of each class c in
    validation; the remainder goes to training.
    """
    cfg.validate()
    y = signed_labels(y)
    if not (np.any(y == 1) and np.any(y == -1)):
        raise DataError("both classes must be present for cross-validation")
    draw = _stratified_split if cfg.stratified else _random_split
    return [draw(y, cfg.validation_fraction, derive_rng(cfg.seed, STREAM_CV_SPLIT, r)) for r in range(cfg.repeats)]


def _select(X: Features, repeat: int, columns: Optional[Sequence[int]]) -> np.ndarray:
    matrix = X if isinstance(X, np.ndarray) else X[repeat]
    matrix = np.asarray(matrix, dtype=np.float64)
    if columns is not None:
        matrix = matrix[:, list(columns)]
    return matrix


def _score_split(
    X: np.ndarray,
    y: np.ndarray,
    split: Split,
    pairs: Sequence[Tuple[float, float]],
    tol: float,
    max_passes: int,
) -> List[Tuple[float, ConfusionCounts]]:
    train, val = split
    y_train = y[train]
    if len(np.unique(y_train)) < 2:
        raise DataError("degenerate split: training rows contain a single class")
    scaler = scaler_fit(X[train])
    X_train = scaler_apply(scaler, X[train])
    X_val = scaler_apply(scaler, X[val])
    d_train = squared_distances(X_train, X_train)
    d_val = squared_distances(X_val, X_train)
    n_features = max(X.shape[1], 1)

    scores = []
    for C, gamma_scale in pairs:
        gamma = gamma_scale / n_features
        alpha, bias, _, _ = smo_solve(np.exp(-gamma * d_train), y_train, C, tol, max_passes)
        coefs = alpha * y_train
        check_dual_coefs(coefs, C)
        decisions = np.exp(-gamma * d_val) @ coefs + bias
        counts = confusion(predict_labels(decisions), y[val])
        scores.append((accuracy(counts), counts))
    return scores


def evaluate_pairs(
    X: Features,
    y: Sequence[int],
    cfg: CvConfig,
    pairs: Sequence[Tuple[float, float]],
    tol: float = 1e-3,
    max_passes: int = 1000,
    columns: Optional[Sequence[int]] = None,
    n_jobs: int = 1,
) -> List[CvResult]:
    """
    Repeated-split accuracy of several (C, gamma scale) settings on shared splits.

    Args:
        X: (n, d) matrix, or one matrix per repeat (codebooks learned per split)
        y: Labels in {0, 1} or {-1, +1}
        cfg: Split protocol
        pairs: (C, gamma scale) settings; gamma = scale / number of columns
        tol: SMO tolerance
        max_passes: SMO iteration budget, in multiples of n
        columns: Optional column subset
        n_jobs: Workers across repeats; output does not depend on it

    Returns:
        List[CvResult]: One result per pair, in input order
    """
    y = signed_labels(y)
    splits = cv_splits(y, cfg)
    if not isinstance(X, np.ndarray) and len(X) != len(splits):
        raise DataError(f"{len(X)} per-split matrices for {len(splits)} repeats")
    tasks = (
        delayed(_score_split)(_select(X, r, columns), y, split, pairs, tol, max_passes)
        for r, split in enumerate(splits)
    )
    per_repeat = Parallel(n_jobs=n_jobs)(tasks) if n_jobs != 1 else [t[0](*t[1], **t[2]) for t in tasks]
    return [
        CvResult(
            accuracies=tuple(scores[p][0] for scores in per_repeat),
            confusions=tuple(scores[p][1] for scores in per_repeat),
            C=float(C),
            gamma_scale=float(g),
        )
        for p, (C, g) in enumerate(pairs)
    ]


def repeated_cv_accuracy(
    X: Features,
    y: Sequence[int],
    cfg: CvConfig,
    spec: SvmSpec = SvmSpec(),
    columns: Optional[Sequence[int]] = None,
    n_jobs: int = 1,
) -> CvResult:
    """
    Mean validation accuracy over repeated random splits.

    Args:
        X: (n, d) matrix, or one matrix per repeat
        y: Labels; both classes present
        cfg: Split protocol
        spec: SVM settings
        columns: Optional column subset
        n_jobs: Worker count

    Returns:
        CvResult: Per-repeat accuracies and confusion tables
    """
    spec.validate()
    return evaluate_pairs(X, y, cfg, [(spec.C, spec.gamma_scale)], spec.tol, spec.max_passes, columns, n_jobs)[0]


def grid_search_results(
    X: Features,
    y: Sequence[int],
    grid: GridConfig,
    cv: CvConfig,
    spec: SvmSpec = SvmSpec(),
    columns: Optional[Sequence[int]] = None,
    n_jobs: int = 1,
) -> List[CvResult]:
    """Cross-validation result for every distinct grid point (smaller C first, then smaller gamma)."""
    return evaluate_pairs(X, y, cv, grid.pairs(), spec.tol, spec.max_passes, columns, n_jobs)


def best_result(results: Sequence[CvResult]) -> CvResult:
    """Highest mean accuracy; ties keep the earliest (smaller C, then smaller gamma)."""
    best = results[0]
    for result in results[1:]:
        if result.mean_accuracy > best.mean_accuracy:
            best = result
    return best


def grid_search(
    X: Features,
    y: Sequence[int],
    grid: GridConfig,
    cv: CvConfig,
    spec: SvmSpec = SvmSpec(),
    columns: Optional[Sequence[int]] = None,
    n_jobs: int = 1,
) -> Tuple[float, float]:
    """
    Tune C and gamma by repeated-split cross-validation.

    Returns:
        Tuple[float, float]: (C*, gamma*) with gamma* = factor / d
    """
    best = best_result(grid_search_results(X, y, grid, cv, spec, columns, n_jobs))
    n_features = len(columns) if columns is not None else (X.shape[1] if isinstance(X, np.ndarray) else X[0].shape[1])
    return best.C, best.gamma_scale / max(n_features, 1)
