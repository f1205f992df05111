"""
Visual-word codebooks for mTBI-BoW.

Words are k-means centroids of raw patch vectors, learned separately for the
control and mTBI cohorts of every (metric, region) pair and then merged into
one dictionary (control words first).
"""
import hashlib
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from rich.console import Console

from src.data_types import LABEL_MTBI, FeatureKey, MetricId, RegionId, key_name
from src.errors import ConfigError, DataError, NumericError
from src.patch_extractor import Patch, patch_matrix
from src.random_streams import STREAM_KMEANS_RESTART, derive_rng

console = Console()

COHORT_CONTROL = "control"
COHORT_MTBI = "mtbi"


@dataclass(frozen=True)
class KMeansConfig:
    """Lloyd/k-means++ parameters."""

    k: int = 10
    max_iter: int = 300
    rel_tol: float = 1e-6
    n_restarts: int = 8
    seed: int = 0

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError(f"k must be at least 1, got {self.k}")
        if self.max_iter < 1 or self.n_restarts < 1:
            raise ConfigError("max_iter and n_restarts must be at least 1")
        if self.rel_tol < 0:
            raise ConfigError(f"rel_tol must be non-negative, got {self.rel_tol}")


def _squared_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _assign(points: np.ndarray, centers: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    d2 = _squared_distances(points, centers)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(len(points)), labels]


def _kmeans_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = np.sum((points - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            raise NumericError("k-means++ ran out of distinct points")
        index = int(rng.choice(n, p=closest / total))
        centers[i] = points[index]
        closest = np.minimum(closest, np.sum((points - centers[i]) ** 2, axis=1))
    return centers


def _update_centers(points: np.ndarray, labels: np.ndarray, d2: np.ndarray, k: int) -> np.ndarray:
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((k, points.shape[1]))
    np.add.at(sums, labels, points)
    centers = np.empty_like(sums)
    filled = counts > 0
    centers[filled] = sums[filled] / counts[filled, None]
    if not filled.all():
        # re-seed each empty cluster with the point farthest from its centroid
        cost = d2.copy()
        for j in np.flatnonzero(~filled):
            far = int(np.argmax(cost))
            centers[j] = points[far]
            cost[far] = -1.0
    return centers


def _hartigan_refine(points: np.ndarray, labels: np.ndarray, k: int, max_passes: int) -> np.ndarray:
    """Single-point transfers that lower WCSS, until no point moves."""
    labels = labels.copy()
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    sums = np.zeros((k, points.shape[1]))
    np.add.at(sums, labels, points)
    for _ in range(max_passes):
        moved = False
        for i in range(len(points)):
            a = labels[i]
            if counts[a] <= 1:
                continue
            centers = sums / np.maximum(counts, 1.0)[:, None]
            d2 = np.sum((centers - points[i]) ** 2, axis=1)
            remove = counts[a] / (counts[a] - 1.0) * d2[a]
            add = counts / (counts + 1.0) * d2
            add[a] = np.inf
            b = int(np.argmin(add))
            if add[b] < remove * (1.0 - 1e-12) - 1e-15:
                sums[a] -= points[i]
                counts[a] -= 1
                sums[b] += points[i]
                counts[b] += 1
                labels[i] = b
                moved = True
        if not moved:
            break
    return labels


def _single_run(points: np.ndarray, cfg: KMeansConfig, restart: int) -> Tuple[np.ndarray, float]:
    rng = derive_rng(cfg.seed, STREAM_KMEANS_RESTART, restart)
    centers = _kmeans_plus_plus(points, cfg.k, rng)
    labels, d2 = _assign(points, centers)
    wcss = float(d2.sum())
    for _ in range(cfg.max_iter):
        centers = _update_centers(points, labels, d2, cfg.k)
        labels, d2 = _assign(points, centers)
        new_wcss = float(d2.sum())
        if new_wcss > wcss * (1.0 + 1e-12) + 1e-12:
            raise NumericError(f"k-means WCSS increased from {wcss} to {new_wcss}")
        improvement = wcss - new_wcss
        wcss = new_wcss
        if wcss == 0.0 or improvement <= cfg.rel_tol * wcss:
            break

    labels = _hartigan_refine(points, labels, cfg.k, cfg.max_iter)
    counts = np.bincount(labels, minlength=cfg.k)
    sums = np.zeros((cfg.k, points.shape[1]))
    np.add.at(sums, labels, points)
    centers = sums / np.maximum(counts, 1)[:, None]
    wcss = float(np.sum((points - centers[labels]) ** 2))
    return centers, wcss


def _canonical_rows(matrix: np.ndarray) -> np.ndarray:
    """Rows sorted lexicographically (first column most significant)."""
    if len(matrix) == 0:
        return matrix
    return matrix[np.lexsort(matrix.T[::-1])]


def kmeans(points: Union[np.ndarray, Sequence[Sequence[float]]], cfg: KMeansConfig, n_jobs: int = 1) -> Tuple[np.ndarray, float]:
    """
    Cluster points with k-means++ seeded Lloyd iterations.

    Args:
        points: (n, d) array of points
        cfg: Number of clusters, iteration limits, restarts and seed
        n_jobs: Workers for the restarts; output does not depend on it

    Returns:
        Tuple[np.ndarray, float]: Centroids sorted lexicographically, and the
        within-cluster sum of squares of the best restart
    """
    cfg.validate()
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise DataError(f"points must form an (n, d) array, got shape {points.shape}")
    if not np.all(np.isfinite(points)):
        raise DataError("points contain non-finite values")
    distinct = len(np.unique(points, axis=0)) if len(points) else 0
    if cfg.k > distinct:
        raise DataError(f"k = {cfg.k} exceeds the number of distinct points ({distinct})")

    # canonical input order makes the result independent of point order
    points = _canonical_rows(points)
    if n_jobs == 1:
        runs = [_single_run(points, cfg, r) for r in range(cfg.n_restarts)]
    else:
        runs = Parallel(n_jobs=n_jobs)(delayed(_single_run)(points, cfg, r) for r in range(cfg.n_restarts))
    best = min(range(len(runs)), key=lambda r: (runs[r][1], r))
    centers, wcss = runs[best]
    return _canonical_rows(centers), wcss


@dataclass(frozen=True, eq=False)
class Codebook:
    """Merged visual-word dictionary of one (metric, region) pair."""

    key: FeatureKey
    words: np.ndarray
    provenance: Tuple[str, ...]
    source_hash: Optional[str] = None

    def __post_init__(self):
        words = np.array(self.words, dtype=np.float64)
        if words.ndim != 2 or len(words) == 0:
            raise DataError("codebook needs a non-empty (k, d) word array")
        if len(self.provenance) != len(words):
            raise DataError(f"{len(words)} words but {len(self.provenance)} provenance tags")
        if any(tag not in (COHORT_CONTROL, COHORT_MTBI) for tag in self.provenance):
            raise DataError(f"provenance tags must be {COHORT_CONTROL!r} or {COHORT_MTBI!r}")
        if not np.all(np.isfinite(words)):
            raise DataError("codebook words contain non-finite values")
        words.setflags(write=False)
        object.__setattr__(self, "words", words)
        object.__setattr__(self, "provenance", tuple(self.provenance))

    @property
    def k_total(self) -> int:
        return len(self.words)

    @property
    def dim(self) -> int:
        return self.words.shape[1]


def nearest_word(vector: Sequence[float], codebook: Codebook) -> int:
    """
    Index of the word closest to ``vector`` in squared Euclidean distance.

    Ties resolve to the lowest index.
    """
    if codebook is None or codebook.k_total == 0:
        raise DataError("empty codebook")
    vector = np.asarray(vector, dtype=np.float64).reshape(-1)
    if vector.size != codebook.dim:
        raise DataError(f"vector length {vector.size} does not match word length {codebook.dim}")
    return int(np.argmin(np.sum((codebook.words - vector) ** 2, axis=1)))


def nearest_words(matrix: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Vectorized ``nearest_word`` over the rows of ``matrix``."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != codebook.dim:
        raise DataError(f"patch matrix shape {matrix.shape} does not match word length {codebook.dim}")
    if len(matrix) == 0:
        return np.zeros(0, dtype=int)
    diff = matrix[:, None, :] - codebook.words[None, :, :]
    return np.argmin(np.sum(diff ** 2, axis=2), axis=1)


def codebook_source_hash(
    control: np.ndarray, mtbi: np.ndarray, key: FeatureKey, k_per_cohort: int, cfg: KMeansConfig
) -> str:
    """Hash of everything a codebook is learned from."""
    digest = hashlib.sha256()
    digest.update(json.dumps({"key": key_name(key), "k_per_cohort": k_per_cohort, "kmeans": asdict(cfg)},
                             sort_keys=True).encode("utf-8"))
    for block in (control, mtbi):
        block = np.ascontiguousarray(block, dtype="<f8")
        digest.update(str(block.shape).encode("utf-8"))
        digest.update(block.tobytes())
    return digest.hexdigest()


def _check_patches(patches: Sequence[Patch], key: FeatureKey, cohort: str, k: int) -> np.ndarray:
    if len(patches) < k:
        raise DataError(
            f"insufficient patches for {key_name(key)} in the {cohort} cohort: {len(patches)} < {k}"
        )
    for patch in patches:
        if patch.key != key:
            raise DataError(f"patch of {key_name(patch.key)} passed for codebook {key_name(key)}")
    return patch_matrix(patches)


def learn_codebook(
    patches_control: Sequence[Patch],
    patches_mtbi: Sequence[Patch],
    key: FeatureKey,
    k_per_cohort: int = 10,
    cfg: Optional[KMeansConfig] = None,
) -> Codebook:
    """
    Learn the merged codebook of one (metric, region) pair.

    Args:
        patches_control: Training patches of control subjects
        patches_mtbi: Training patches of mTBI subjects
        key: (metric, region) pair
        k_per_cohort: Words learned per cohort
        cfg: k-means settings (its ``k`` is replaced by ``k_per_cohort``)

    Returns:
        Codebook: Control words then mTBI words, ``k_total = 2 * k_per_cohort``
    """
    cfg = replace(cfg or KMeansConfig(), k=k_per_cohort)
    control = _check_patches(patches_control, key, COHORT_CONTROL, k_per_cohort)
    mtbi = _check_patches(patches_mtbi, key, COHORT_MTBI, k_per_cohort)
    if control.shape[1] != mtbi.shape[1]:
        raise DataError(f"patch sizes differ between cohorts for {key_name(key)}")
    control_words, _ = kmeans(control, cfg)
    mtbi_words, _ = kmeans(mtbi, cfg)
    return Codebook(
        key=key,
        words=np.vstack([control_words, mtbi_words]),
        provenance=(COHORT_CONTROL,) * len(control_words) + (COHORT_MTBI,) * len(mtbi_words),
        source_hash=codebook_source_hash(control, mtbi, key, k_per_cohort, cfg),
    )


def split_by_cohort(
    subject_patches: Sequence[Dict[FeatureKey, List[Patch]]], labels: Sequence[int], key: FeatureKey
) -> Tuple[List[Patch], List[Patch]]:
    """Pool the patches of ``key`` by cohort."""
    control: List[Patch] = []
    mtbi: List[Patch] = []
    for patches, label in zip(subject_patches, labels):
        (mtbi if int(label) == LABEL_MTBI else control).extend(patches[key])
    return control, mtbi


def learn_codebooks(
    subject_patches: Sequence[Dict[FeatureKey, List[Patch]]],
    labels: Sequence[int],
    keys: Sequence[FeatureKey],
    k_per_cohort: int,
    cfg: KMeansConfig,
    n_jobs: int = 1,
) -> Dict[FeatureKey, Codebook]:
    """
    Learn one codebook per key, in parallel across keys.

    Args:
        subject_patches: Per-subject patches from ``extract_subject_patches``
        labels: Cohort label per subject (0 control, 1 mTBI)
        keys: (metric, region) pairs to learn
        k_per_cohort: Words per cohort
        cfg: k-means settings
        n_jobs: Worker count; output does not depend on it

    Returns:
        Dict[FeatureKey, Codebook]: Codebook per key
    """
    jobs = [split_by_cohort(subject_patches, labels, key) for key in keys]
    books = Parallel(n_jobs=n_jobs)(
        delayed(learn_codebook)(control, mtbi, key, k_per_cohort, cfg) for key, (control, mtbi) in zip(keys, jobs)
    )
    return dict(zip(keys, books))


def codebook_filename(key: FeatureKey) -> str:
    return f"{key_name(key)}.codebook.json"


def save_codebook(codebook: Codebook, path: Union[str, Path]) -> None:
    """Write a codebook as JSON (words as nested arrays of 64-bit reals)."""
    payload = {
        "key": {"metric": codebook.key[0].value, "region": codebook.key[1].value},
        "k": codebook.k_total,
        "provenance": list(codebook.provenance),
        "words": codebook.words.tolist(),
        "source_hash": codebook.source_hash,
    }
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f)
            f.write("\n")
    except OSError as e:
        console.print(f"[red]Error writing codebook {path}: {e}")
        raise DataError(f"cannot write codebook {path}: {e}") from e


def load_codebook(path: Union[str, Path]) -> Codebook:
    """Read a codebook written by ``save_codebook``."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        console.print(f"[red]Error reading codebook {path}: {e}")
        raise DataError(f"unreadable codebook {path}: {e}") from e
    try:
        codebook = Codebook(
            key=(MetricId.parse(payload["key"]["metric"]), RegionId.parse(payload["key"]["region"])),
            words=np.array(payload["words"], dtype=np.float64),
            provenance=tuple(payload["provenance"]),
            source_hash=payload.get("source_hash"),
        )
        k = int(payload["k"])
    except (KeyError, TypeError, ValueError) as e:
        console.print(f"[red]Malformed codebook {path}: {e!r}")
        raise DataError(f"malformed codebook {path}: {e!r}") from e
    if codebook.k_total != k:
        raise DataError(f"codebook {path}: k = {payload['k']} but {codebook.k_total} words stored")
    return codebook
