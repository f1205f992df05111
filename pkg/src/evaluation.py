"""
Report tables, figures and word images for mTBI-BoW.
"""
import dataclasses
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from PIL import Image  # noqa: E402
from rich.console import Console  # noqa: E402

from src.codebook import Codebook  # noqa: E402
from src.cross_validation import CvConfig, Features, cv_splits, repeated_cv_accuracy  # noqa: E402
from src.data_types import key_name  # noqa: E402
from src.encoder import HonestFeatureProvider  # noqa: E402
from src.errors import DataError  # noqa: E402
from src.feature_selector import SelectionTrace  # noqa: E402
from src.svm_classifier import SvmSpec  # noqa: E402

console = Console()

MID_GRAY = 128
SVG_HASH_SALT = "mtbi-bow"

PathLike = Union[str, Path]


def subset_size_curve(trace: SelectionTrace) -> pd.DataFrame:
    """Accuracy against subset size, one row per accepted step."""
    return pd.DataFrame(
        {
            "size": list(range(1, len(trace) + 1)),
            "feature_name": trace.names,
            "accuracy": trace.accuracies,
        },
        columns=["size", "feature_name", "accuracy"],
    )


def training_ratio_curve(
    X: Features,
    y: Sequence[int],
    ratios: Sequence[float],
    cfg: CvConfig,
    spec: SvmSpec = SvmSpec(),
    columns: Optional[Sequence[int]] = None,
    n_jobs: int = 1,
    honest: Optional[HonestFeatureProvider] = None,
) -> pd.DataFrame:
    """
    Repeated-CV accuracy, sensitivity and specificity for several training ratios.

    Args:
        X: Feature matrix
        y: Labels
        ratios: Training fractions; each is run with validation fraction ``1 - ratio``
        cfg: Split protocol (its validation fraction is replaced)
        spec: SVM settings
        columns: Optional column subset
        n_jobs: Worker count
        honest: When set, codebooks are relearned inside every split of every ratio and ``X`` is ignored

    Returns:
        pd.DataFrame: Columns ``ratio, accuracy, sensitivity, specificity``
    """
    rows = []
    for ratio in ratios:
        if not 0.0 < ratio < 1.0:
            raise DataError(f"degenerate training ratio {ratio}")
        ratio_cfg = dataclasses.replace(cfg, validation_fraction=1.0 - ratio)
        features = X if honest is None else honest.matrices(cv_splits(y, ratio_cfg))
        result = repeated_cv_accuracy(features, y, ratio_cfg, spec, columns, n_jobs)
        rows.append((ratio, result.mean_accuracy, result.mean_sensitivity, result.mean_specificity))
        console.print(f"[blue]Training ratio {ratio:.2f}: accuracy {result.mean_accuracy:.4f}")
    return pd.DataFrame(rows, columns=["ratio", "accuracy", "sensitivity", "specificity"])


def cohort_histogram_contrast(X: np.ndarray, labels: Sequence[int], names: Sequence[str]) -> pd.DataFrame:
    """
    Per-dimension cohort means and their difference (mTBI minus control).

    Returns:
        pd.DataFrame: Columns ``feature, mean_control, mean_mtbi, difference``
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    if X.ndim != 2 or X.shape[1] != len(names) or len(X) != len(labels):
        raise DataError(f"matrix shape {X.shape} does not match {len(names)} names and {len(labels)} labels")
    mtbi = labels == 1
    if not mtbi.any() or mtbi.all():
        raise DataError("both cohorts must be present")
    mean_control = X[~mtbi].mean(axis=0)
    mean_mtbi = X[mtbi].mean(axis=0)
    return pd.DataFrame(
        {
            "feature": list(names),
            "mean_control": mean_control,
            "mean_mtbi": mean_mtbi,
            "difference": mean_mtbi - mean_control,
        }
    )


def word_image(word: np.ndarray) -> np.ndarray:
    """Min-max scale one word to an 8-bit square image; a constant word is mid-gray."""
    word = np.asarray(word, dtype=np.float64).reshape(-1)
    side = int(round(np.sqrt(word.size)))
    if side * side != word.size:
        raise DataError(f"word length {word.size} is not a square")
    lo, hi = word.min(), word.max()
    if hi == lo:
        pixels = np.full(word.size, MID_GRAY, dtype=np.uint8)
    else:
        pixels = np.round((word - lo) / (hi - lo) * 255.0).astype(np.uint8)
    return pixels.reshape(side, side)


def word_filename(codebook: Codebook, index: int) -> str:
    return f"{key_name(codebook.key)}_word{index:02d}_{codebook.provenance[index]}.png"


def render_words(codebook: Codebook, directory: PathLike) -> List[Path]:
    """
    Write every word of a codebook as a grayscale PNG.

    Returns:
        List[Path]: One file per word, in word order
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for index, word in enumerate(codebook.words):
        path = directory / word_filename(codebook, index)
        Image.fromarray(word_image(word)).save(path, format="PNG")
        paths.append(path)
    return paths


def write_table(table: pd.DataFrame, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def _save_svg(fig, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT, "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_subset_size_curve(table: pd.DataFrame, path: PathLike) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(table["size"], table["accuracy"], marker="o")
    ax.set_xlabel("Number of selected features")
    ax.set_ylabel("Cross-validation accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save_svg(fig, path)


def plot_training_ratio_curve(table: pd.DataFrame, path: PathLike) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for column in ("accuracy", "sensitivity", "specificity"):
        ax.plot(table["ratio"], table[column].astype(float), marker="o", label=column)
    ax.set_xlabel("Training ratio")
    ax.set_ylabel("Rate")
    ax.set_ylim(0.0, 1.05)
    ax.legend(loc="lower right")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save_svg(fig, path)


def plot_histogram_contrast(table: pd.DataFrame, path: PathLike) -> None:
    positions = np.arange(len(table))
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(10, 6), sharex=True)
    top.plot(positions, table["mean_control"], label="control", linewidth=1)
    top.plot(positions, table["mean_mtbi"], label="mTBI", linewidth=1)
    top.set_ylabel("Mean value")
    top.legend(loc="upper right")
    bottom.bar(positions, table["difference"], width=1.0)
    bottom.set_ylabel("mTBI - control")
    bottom.set_xlabel("Feature index")
    fig.tight_layout()
    _save_svg(fig, path)


def summarize_selection(trace: SelectionTrace) -> Dict[str, Optional[Union[str, int, float]]]:
    """
    Single-best-feature accuracy against the best selected subset.

    Returns:
        Dict: ``single_best_feature``, ``single_best_accuracy``, ``best_subset_size``, ``best_subset_accuracy``
    """
    if len(trace) == 0:
        return {
            "single_best_feature": None,
            "single_best_accuracy": None,
            "best_subset_size": 0,
            "best_subset_accuracy": None,
        }
    accuracies = trace.accuracies
    best = int(np.argmax(accuracies))
    return {
        "single_best_feature": trace.names[0],
        "single_best_accuracy": accuracies[0],
        "best_subset_size": best + 1,
        "best_subset_accuracy": accuracies[best],
    }

