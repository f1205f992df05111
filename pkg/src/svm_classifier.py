"""
Feature standardization and RBF-kernel SVM for mTBI-BoW.

The dual problem

    max  sum(a) - 1/2 sum_ij a_i a_j y_i y_j k(x_i, x_j)
    s.t. 0 <= a_i <= C,  sum_i a_i y_i = 0

is solved by sequential minimal optimization: each step picks the maximal
violating pair (second-order choice of the partner) and optimizes the two
multipliers analytically.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from rich.console import Console

from src.errors import ConfigError, DataError, NumericError

console = Console()

TAU = 1e-12
ZERO_VARIANCE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class Scaler:
    """Per-dimension mean and standard deviation of the training rows."""

    mean: np.ndarray
    scale: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.size


def scaler_fit(train: np.ndarray) -> Scaler:
    """
    Fit a z-score scaler on training rows.

    Zero-variance columns keep a scale of 1, so they are only centered.

    Args:
        train: (n, d) matrix with n >= 2

    Returns:
        Scaler: Column means and population standard deviations
    """
    train = np.asarray(train, dtype=np.float64)
    if train.ndim != 2 or train.shape[0] < 2:
        raise DataError(f"scaler needs at least 2 training rows, got shape {train.shape}")
    mean = train.mean(axis=0)
    sd = train.std(axis=0)
    flat = sd <= ZERO_VARIANCE_RTOL * np.maximum(1.0, np.abs(train).max(axis=0))
    sd = np.where(flat, 1.0, sd)
    return Scaler(mean=mean, scale=sd)


def scaler_apply(scaler: Scaler, matrix: np.ndarray) -> np.ndarray:
    """Standardize ``matrix`` with a fitted scaler."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape[-1] != scaler.dim:
        raise DataError(f"matrix has {matrix.shape[-1]} columns, scaler expects {scaler.dim}")
    return (matrix - scaler.mean) / scaler.scale


def rbf_kernel(x: Sequence[float], y: Sequence[float], gamma: float) -> float:
    """exp(-gamma * ||x - y||^2)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DataError(f"kernel arguments differ in shape: {x.shape} vs {y.shape}")
    return float(np.exp(-gamma * np.sum((x - y) ** 2)))


def squared_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances between the rows of A and B."""
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def rbf_matrix(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * squared_distances(A, B))


@dataclass(frozen=True)
class SvmSpec:
    """Classifier settings used by cross-validation: gamma = gamma_scale / d."""

    C: float = 1.0
    gamma_scale: float = 1.0
    tol: float = 1e-3
    max_passes: int = 1000

    def gamma(self, n_features: int) -> float:
        return self.gamma_scale / max(int(n_features), 1)

    def validate(self) -> None:
        if not (self.C > 0 and self.gamma_scale > 0 and self.tol > 0):
            raise ConfigError(f"C, gamma_scale and tol must be positive: {self}")
        if self.max_passes < 1:
            raise ConfigError(f"max_passes must be at least 1, got {self.max_passes}")


@dataclass(frozen=True)
class GridConfig:
    """Hyperparameter grid; gamma values are ``factor / d``."""

    C_grid: Tuple[float, ...] = (0.1, 1.0, 10.0, 100.0)
    gamma_factors: Tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 4.0)

    def validate(self) -> None:
        if not self.C_grid or not self.gamma_factors:
            raise ConfigError("C_grid and gamma_factors must not be empty")
        if any(v <= 0 for v in tuple(self.C_grid) + tuple(self.gamma_factors)):
            raise ConfigError("grid values must be positive")

    def pairs(self) -> List[Tuple[float, float]]:
        """Distinct (C, gamma factor) pairs, smaller C first, then smaller gamma."""
        self.validate()
        return [(c, g) for c in sorted(set(self.C_grid)) for g in sorted(set(self.gamma_factors))]



def check_dual_coefs(dual_coefs: np.ndarray, C: float, atol: float = 1e-8) -> None:
    """
    Check the box and equality constraints of a dual solution.

    Args:
        dual_coefs: alpha_i * y_i per training row (or per support vector)
        C: Box bound
        atol: Absolute tolerance on sum(alpha_i * y_i)
    """
    alpha = np.abs(np.asarray(dual_coefs, dtype=np.float64))
    if np.any(alpha > C * (1.0 + 1e-12)):
        raise NumericError(f"dual coefficient exceeds C = {C}")
    total = float(np.sum(dual_coefs))
    if abs(total) > atol:
        raise NumericError(f"sum of alpha_i y_i is {total}, expected 0")

@dataclass(frozen=True, eq=False)
class SvmModel:
    """Trained RBF-kernel SVM."""

    support_vectors: np.ndarray
    dual_coefs: np.ndarray
    bias: float
    gamma: float
    C: float
    dual_objective: float = 0.0
    converged: bool = True
    objective_trace: Tuple[float, ...] = field(default=(), repr=False)

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    def check_invariants(self, atol: float = 1e-8) -> None:
        """Raise NumericError unless 0 <= alpha <= C and sum(alpha * y) = 0."""
        check_dual_coefs(self.dual_coefs, self.C, atol)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise DataError(f"dimension mismatch: model expects {self.dim} features, got {X.shape[1]}")
        if len(self.dual_coefs) == 0:
            return np.full(len(X), self.bias)
        return rbf_matrix(X, self.support_vectors, self.gamma) @ self.dual_coefs + self.bias


def _dual_objective(alpha: np.ndarray, G: np.ndarray) -> float:
    return 0.5 * float(np.sum(alpha)) - 0.5 * float(alpha @ G)


def smo_solve(
    K: np.ndarray,
    y: np.ndarray,
    C: float,
    tol: float = 1e-3,
    max_passes: int = 1000,
    record_objective: bool = False,
) -> Tuple[np.ndarray, float, bool, List[float]]:
    """
    Solve the SVM dual for a precomputed kernel matrix.

    Args:
        K: (n, n) kernel matrix
        y: Labels in {-1, +1}
        C: Misclassification penalty
        tol: Stop when the maximal KKT violation falls below tol
        max_passes: Iteration budget, in multiples of n
        record_objective: Keep the dual objective after every update

    Returns:
        Tuple: (alpha, bias, converged, objective trace)
    """
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if not np.all(np.isfinite(K)):
        raise NumericError("kernel matrix contains non-finite values")
    Q = np.outer(y, y) * K
    QD = np.diag(K).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    trace = [0.0] if record_objective else []
    pos = y > 0
    converged = False

    for _ in range(max(1, max_passes) * max(n, 1)):
        at_upper = alpha >= C
        at_lower = alpha <= 0
        up = np.where(pos, ~at_upper, ~at_lower)
        low = np.where(pos, ~at_lower, ~at_upper)
        yG = y * G
        if not up.any() or not low.any():
            converged = True
            break
        candidates_i = np.where(up, -yG, -np.inf)
        i = int(np.argmax(candidates_i))
        g_max = candidates_i[i]
        g_max2 = float(np.max(np.where(low, yG, -np.inf)))
        if g_max + g_max2 < tol:
            converged = True
            break

        grad_diff = g_max + yG
        usable = low & (grad_diff > 0)
        quad = QD[i] + QD - 2.0 * K[i]
        quad = np.where(quad > 0, quad, TAU)
        j = int(np.argmin(np.where(usable, -(grad_diff ** 2) / quad, np.inf)))

        old_i, old_j = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad_coef = max(QD[i] + QD[j] + 2.0 * Q[i, j], TAU)
            delta = (-G[i] - G[j]) / quad_coef
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            elif alpha[j] > C:
                alpha[j] = C
                alpha[i] = C + diff
        else:
            quad_coef = max(QD[i] + QD[j] - 2.0 * Q[i, j], TAU)
            delta = (G[i] - G[j]) / quad_coef
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            elif alpha[j] < 0:
                alpha[j] = 0.0
                alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = total

        G += Q[:, i] * (alpha[i] - old_i) + Q[:, j] * (alpha[j] - old_j)
        if record_objective:
            trace.append(_dual_objective(alpha, G))

    if not converged:
        console.print(f"[yellow]Warning: SMO stopped after {max_passes} passes without reaching tol {tol}")

    # bias from free vectors, bound midpoint otherwise
    yG = y * G
    at_upper = alpha >= C
    at_lower = alpha <= 0
    free = ~at_upper & ~at_lower
    if free.any():
        rho = float(np.mean(yG[free]))
    else:
        ub_mask = (at_upper & ~pos) | (at_lower & pos)
        lb_mask = (at_upper & pos) | (at_lower & ~pos)
        ub = float(np.min(yG[ub_mask])) if ub_mask.any() else np.inf
        lb = float(np.max(yG[lb_mask])) if lb_mask.any() else -np.inf
        rho = 0.5 * (ub + lb) if np.isfinite(ub) and np.isfinite(lb) else (ub if np.isfinite(ub) else lb)
    if not np.isfinite(rho):
        raise NumericError("could not determine the SVM bias")
    return alpha, -rho, converged, trace


def _check_labels(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or not np.all(np.isin(y, (-1, 1))):
        raise DataError("labels must be a vector over {-1, +1}")
    if not (np.any(y == 1) and np.any(y == -1)):
        raise DataError("training data must contain both classes (single-class input)")
    return y.astype(np.float64)


def svm_train(
    X: np.ndarray,
    y: np.ndarray,
    C: float,
    gamma: float,
    tol: float = 1e-3,
    max_passes: int = 1000,
    record_objective: bool = False,
) -> SvmModel:
    """
    Train an RBF-kernel SVM by sequential minimal optimization.

    Args:
        X: (n, d) standardized training matrix
        y: Labels in {-1, +1} (mTBI = +1)
        C: Misclassification penalty
        gamma: Kernel width
        tol: KKT violation tolerance
        max_passes: Iteration budget, in multiples of n
        record_objective: Keep the dual objective after every update

    Returns:
        SvmModel: Support vectors (alpha > 0), dual coefficients alpha_i y_i and bias
    """
    X = np.asarray(X, dtype=np.float64)
    y = _check_labels(y)
    if X.ndim != 2 or len(X) != len(y):
        raise DataError(f"X shape {X.shape} does not match {len(y)} labels")
    if not (C > 0 and gamma > 0):
        raise ConfigError(f"C and gamma must be positive, got C={C}, gamma={gamma}")
    K = rbf_matrix(X, X, gamma)
    alpha, bias, converged, trace = smo_solve(K, y, C, tol, max_passes, record_objective)
    support = alpha > 0
    coefs = alpha[support] * y[support]
    objective = float(np.sum(alpha) - 0.5 * alpha @ (np.outer(y, y) * K) @ alpha)
    model = SvmModel(
        support_vectors=X[support].copy(),
        dual_coefs=coefs,
        bias=bias,
        gamma=float(gamma),
        C=float(C),
        dual_objective=objective,
        converged=converged,
        objective_trace=tuple(trace),
    )
    model.check_invariants()
    return model


def svm_predict(model: SvmModel, x: Sequence[float]) -> Tuple[int, float]:
    """
    Classify one sample.

    Returns:
        Tuple[int, float]: Label in {-1, +1} (a zero decision maps to +1) and the decision value
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != model.dim:
        raise DataError(f"dimension mismatch: model expects {model.dim} features, got {x.size}")
    decision = float(model.decision_function(x[None, :])[0])
    return (1 if decision >= 0 else -1), decision


def predict_labels(decisions: np.ndarray) -> np.ndarray:
    return np.where(decisions >= 0, 1, -1)


def save_model(
    model: SvmModel,
    path: Union[str, Path],
    scaler: Optional[Scaler] = None,
    feature_names: Optional[Sequence[str]] = None,
) -> None:
    """Write a model (and optionally its scaler and feature names) as JSON."""
    payload: Dict = {
        "gamma": model.gamma,
        "C": model.C,
        "b": model.bias,
        "dual_coefs": model.dual_coefs.tolist(),
        "support_vectors": model.support_vectors.tolist(),
    }
    if scaler is not None:
        payload["scaler"] = {"mean": scaler.mean.tolist(), "scale": scaler.scale.tolist()}
    if feature_names is not None:
        payload["features"] = list(feature_names)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=1)
        f.write("\n")


def load_model(path: Union[str, Path]) -> Tuple[SvmModel, Optional[Scaler], Optional[List[str]]]:
    """Read a model written by ``save_model``."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
        coefs = np.array(payload["dual_coefs"], dtype=np.float64)
        svs = np.array(payload["support_vectors"], dtype=np.float64).reshape(len(coefs), -1)
        model = SvmModel(
            support_vectors=svs,
            dual_coefs=coefs,
            bias=float(payload["b"]),
            gamma=float(payload["gamma"]),
            C=float(payload["C"]),
        )
        scaler = None
        if "scaler" in payload:
            scaler = Scaler(np.array(payload["scaler"]["mean"]), np.array(payload["scaler"]["scale"]))
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        console.print(f"[red]Malformed model {path}: {e!r}")
        raise DataError(f"malformed model {path}: {e!r}") from e
    model.check_invariants()
    return model, scaler, payload.get("features")
