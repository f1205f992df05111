"""
Feature encoding for mTBI-BoW: bag-of-words histograms, feature assembly
and the mean-value baseline features.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from rich.console import Console

from src.codebook import Codebook, KMeansConfig, learn_codebooks, nearest_words
from src.data_types import (
    CLINICAL_FIELDS,
    ClinicalRecord,
    Dataset,
    FeatureKey,
    MetricId,
    RegionId,
    key_name,
    key_order,
)
from src.errors import DataError
from src.patch_extractor import Patch, patch_matrix
from src.random_streams import STREAM_HONEST_CODEBOOK, derive_seed

console = Console()

THALAMUS_METRICS = (MetricId.FA, MetricId.MD, MetricId.AK, MetricId.MK, MetricId.RK)


@dataclass(frozen=True)
class FeatureLayout:
    """Ordered (metric, region) keys followed by the clinical covariates."""

    keys: Tuple[FeatureKey, ...]
    clinical: Tuple[str, ...] = CLINICAL_FIELDS

    def __post_init__(self):
        keys = tuple(self.keys)
        if len(set(keys)) != len(keys):
            raise DataError("feature layout repeats a (metric, region) key")
        for metric, region in keys:
            if not region.supports_bow:
                raise DataError(f"region {region.value} is not available to the bag-of-words pipeline")
        object.__setattr__(self, "keys", keys)

    @classmethod
    def default(cls) -> "FeatureLayout":
        """Nine metrics in the corpus callosum, then FA, MD, AK, MK, RK in the thalamus."""
        keys = [(m, RegionId.CorpusCallosum) for m in MetricId]
        keys += [(m, RegionId.Thalamus) for m in THALAMUS_METRICS]
        return cls(tuple(keys))

    @classmethod
    def for_keys(cls, keys: Sequence[FeatureKey]) -> "FeatureLayout":
        """Layout over the given keys in canonical (region, metric) order."""
        return cls(tuple(sorted(keys, key=key_order)))

    def names(self, k_totals: Union[int, Mapping[FeatureKey, int]]) -> List[str]:
        """Column names such as ``CC.FA.word07`` and ``clin.age``."""
        names = []
        for key in self.keys:
            k = k_totals if isinstance(k_totals, int) else k_totals[key]
            names.extend(f"{key[1].short}.{key[0].value}.word{i:02d}" for i in range(k))
        names.extend(f"clin.{name}" for name in self.clinical)
        return names


@dataclass(frozen=True, eq=False)
class SubjectFeatureVector:
    """One subject's feature values with a name per dimension."""

    subject_id: str
    values: np.ndarray
    names: Tuple[str, ...]
    label: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        names = tuple(self.names)
        if values.size != len(names):
            raise DataError(f"{values.size} values but {len(names)} names for subject {self.subject_id}")
        if len(set(names)) != len(names):
            raise DataError(f"feature names are not unique for subject {self.subject_id}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", names)


def encode_histogram(patches: Sequence[Patch], codebook: Codebook, normalize: bool = True) -> np.ndarray:
    """
    Histogram of nearest-word assignments.

    Args:
        patches: Patches of one subject for the codebook's key
        codebook: Merged codebook
        normalize: Relative frequencies when True, raw counts otherwise

    Returns:
        np.ndarray: Vector of length ``codebook.k_total``
    """
    if not patches:
        raise DataError(f"no patches for key {key_name(codebook.key)}")
    for patch in patches:
        if patch.key != codebook.key:
            raise DataError(f"patch of {key_name(patch.key)} encoded with codebook {key_name(codebook.key)}")
    words = nearest_words(patch_matrix(patches), codebook)
    counts = np.bincount(words, minlength=codebook.k_total).astype(np.float64)
    return counts / counts.sum() if normalize else counts


def assemble_features(
    histograms: Mapping[FeatureKey, np.ndarray], clinical: ClinicalRecord, layout: FeatureLayout
) -> SubjectFeatureVector:
    """
    Concatenate histograms in layout order, clinical covariates last.

    Args:
        histograms: Histogram per key; must cover exactly the layout's keys
        clinical: Subject's clinical record
        layout: Feature layout

    Returns:
        SubjectFeatureVector: Values and names for every dimension
    """
    missing = [key_name(k) for k in layout.keys if k not in histograms]
    extra = [key_name(k) for k in histograms if k not in layout.keys]
    if missing or extra:
        raise DataError(f"histograms do not match the layout: missing {missing}, extra {extra}")
    parts = [np.asarray(histograms[key], dtype=np.float64).reshape(-1) for key in layout.keys]
    sizes = {key: part.size for key, part in zip(layout.keys, parts)}
    parts.append(np.array([float(getattr(clinical, name)) for name in layout.clinical]))
    return SubjectFeatureVector(
        subject_id=clinical.subject_id,
        values=np.concatenate(parts),
        names=tuple(layout.names(sizes)),
        label=clinical.label,
    )


def _encode_subject(
    patches: Mapping[FeatureKey, List[Patch]],
    record: ClinicalRecord,
    codebooks: Mapping[FeatureKey, Codebook],
    layout: FeatureLayout,
    normalize: bool,
) -> SubjectFeatureVector:
    histograms = {}
    for key in layout.keys:
        try:
            histograms[key] = encode_histogram(patches[key], codebooks[key], normalize)
        except DataError as e:
            raise DataError(f"subject {record.subject_id}: {e}") from e
    return assemble_features(histograms, record, layout)


def encode_dataset(
    dataset: Dataset,
    subject_patches: Sequence[Mapping[FeatureKey, List[Patch]]],
    codebooks: Mapping[FeatureKey, Codebook],
    layout: FeatureLayout,
    normalize: bool = True,
    n_jobs: int = 1,
) -> List[SubjectFeatureVector]:
    """
    Encode every subject of a dataset.

    Args:
        dataset: Dataset (for clinical records)
        subject_patches: Per-subject patches, aligned with ``dataset.subjects``
        codebooks: Codebook per layout key
        layout: Feature layout
        normalize: Relative-frequency histograms when True
        n_jobs: Worker count; output order follows the dataset

    Returns:
        List[SubjectFeatureVector]: One vector per subject
    """
    return Parallel(n_jobs=n_jobs)(
        delayed(_encode_subject)(patches, subject.record, codebooks, layout, normalize)
        for patches, subject in zip(subject_patches, dataset.subjects)
    )


def mean_baseline_features(dataset: Dataset, regions: Sequence[RegionId]) -> List[SubjectFeatureVector]:
    """
    Mean of each metric inside each region, plus the clinical covariates.

    Args:
        dataset: Dataset; every region in ``regions`` must be present
        regions: Regions to summarize (any of the six)

    Returns:
        List[SubjectFeatureVector]: Names like ``mean.CCBody.AWF`` then ``clin.age``...
    """
    # Column names follow the region order, then metric order
    keys = [key for region in regions for key in dataset.keys if key[1] == region]
    absent = [r.value for r in regions if not any(k[1] == r for k in dataset.keys)]
    if absent:
        raise DataError(f"dataset has no images for regions {absent}")
    names = [f"mean.{region.short}.{metric.value}" for metric, region in keys]
    names += [f"clin.{name}" for name in CLINICAL_FIELDS]

    # One mean per key, then the covariates
    vectors = []
    for subject in dataset.subjects:
        values = []
        for key in keys:
            volume, mask = subject.images[key]
            if mask.count == 0:
                raise DataError(f"empty mask: subject {subject.subject_id}, region {key[1].value}")
            values.append(float(np.mean(volume.voxels[mask.bits])))
        values.extend(subject.record.covariates)
        vectors.append(SubjectFeatureVector(subject.subject_id, np.array(values), tuple(names), subject.label))
    return vectors


def feature_matrix(vectors: Sequence[SubjectFeatureVector]) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """Stack vectors into ``(X, labels, names)``."""
    if not vectors:
        raise DataError("no feature vectors")
    names = list(vectors[0].names)
    for vector in vectors[1:]:
        if list(vector.names) != names:
            raise DataError(f"subject {vector.subject_id} has a different feature layout")
    X = np.vstack([v.values for v in vectors])
    labels = np.array([v.label for v in vectors], dtype=int)
    return X, labels, names


def write_feature_matrix(vectors: Sequence[SubjectFeatureVector], path: Union[str, Path]) -> None:
    """Write the feature CSV with header ``subject_id,label,<names...>``."""
    X, labels, names = feature_matrix(vectors)
    table = pd.DataFrame(X, columns=names)
    table.insert(0, "label", labels)
    table.insert(0, "subject_id", [v.subject_id for v in vectors])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    console.print(f"[green]Wrote {len(vectors)} x {len(names)} feature matrix to {path}")


def load_feature_matrix(path: Union[str, Path]) -> List[SubjectFeatureVector]:
    """Read a feature CSV written by ``write_feature_matrix``."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    try:
        table = pd.read_csv(path, dtype={"subject_id": str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        console.print(f"[red]Error reading feature matrix {path}: {e}")
        raise DataError(f"unreadable feature matrix {path}: {e}") from e
    if list(table.columns[:2]) != ["subject_id", "label"]:
        raise DataError(f"feature matrix {path} must start with subject_id,label")
    names = tuple(table.columns[2:])
    try:
        values = table[list(names)].to_numpy(dtype=np.float64)
    except ValueError as e:
        raise DataError(f"feature matrix {path} has a non-numeric entry: {e}") from e
    return [
        SubjectFeatureVector(str(sid), row, names, int(label))
        for sid, label, row in zip(table["subject_id"], table["label"], values)
    ]


class HonestFeatureProvider:
    """
    Feature matrices whose codebooks are learned on training subjects only.

    One matrix is built per cross-validation repeat: codebooks come from the
    repeat's training subjects, then every subject is encoded with them.
    """

    def __init__(
        self,
        dataset: Dataset,
        subject_patches: Sequence[Mapping[FeatureKey, List[Patch]]],
        layout: FeatureLayout,
        k_per_cohort: int,
        kmeans_cfg: KMeansConfig,
        normalize: bool = True,
        n_jobs: int = 1,
    ):
        """
        Initialize the HonestFeatureProvider.

        Args:
            dataset: Dataset (labels and clinical records)
            subject_patches: Per-subject patches aligned with the dataset
            layout: Feature layout
            k_per_cohort: Words per cohort
            kmeans_cfg: k-means settings; each repeat derives its own seed
            normalize: Relative-frequency histograms when True
            n_jobs: Worker count
        """
        self.dataset = dataset
        self.subject_patches = list(subject_patches)
        self.layout = layout
        self.k_per_cohort = k_per_cohort
        self.kmeans_cfg = kmeans_cfg
        self.normalize = normalize
        self.n_jobs = n_jobs
        self.names: Optional[List[str]] = None

    def matrix_for_split(self, repeat: int, train: np.ndarray) -> np.ndarray:
        """Feature matrix of all subjects with codebooks learned on ``train``."""
        # Each repeat gets its own k-means seed
        labels = self.dataset.labels
        cfg = KMeansConfig(
            k=self.k_per_cohort,
            max_iter=self.kmeans_cfg.max_iter,
            rel_tol=self.kmeans_cfg.rel_tol,
            n_restarts=self.kmeans_cfg.n_restarts,
            seed=derive_seed(self.kmeans_cfg.seed, STREAM_HONEST_CODEBOOK, repeat),
        )
        # Learn on the training subjects only
        codebooks = learn_codebooks(
            [self.subject_patches[i] for i in train],
            labels[train],
            self.layout.keys,
            self.k_per_cohort,
            cfg,
            n_jobs=self.n_jobs,
        )
        # Encode everyone, validation subjects included
        vectors = encode_dataset(self.dataset, self.subject_patches, codebooks, self.layout, self.normalize)
        X, _, names = feature_matrix(vectors)
        self.names = names
        return X

    def matrices(self, splits: Sequence[Tuple[np.ndarray, np.ndarray]]) -> List[np.ndarray]:
        """One matrix per split, in split order."""
        console.print(f"[yellow]Learning codebooks inside {len(splits)} cross-validation splits...")
        return [self.matrix_for_split(r, train) for r, (train, _) in enumerate(splits)]
