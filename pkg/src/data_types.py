"""
Domain types for mTBI-BoW: metric and region identifiers, volumes, masks,
clinical records and the dataset container.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import DataError

Dims = Tuple[int, int, int]


class MetricId(Enum):
    """Diffusion MRI metric maps."""

    AWF = "AWF"  # axonal water fraction
    DA = "DA"  # diffusivity within axons
    DePar = "DePar"  # extra-axonal diffusion parallel to the tracts
    DePerp = "DePerp"  # extra-axonal diffusion perpendicular to the tracts
    FA = "FA"  # fractional anisotropy
    MD = "MD"  # mean diffusion
    AK = "AK"  # axial kurtosis
    MK = "MK"  # mean kurtosis
    RK = "RK"  # radial kurtosis

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "MetricId":
        """
        Parse a metric name.

        Args:
            text: Canonical name, or one of the spellings ``De-par``, ``De_par``,
                ``De-perp``, ``De_perp`` (case-insensitive)

        Returns:
            MetricId: The matching metric
        """
        token = str(text).strip().replace("-", "").replace("_", "").lower()
        for member in cls:
            if member.value.lower() == token:
                return member
        raise DataError(f"unknown metric: {text!r}")


class RegionId(Enum):
    """Brain regions of interest."""

    CorpusCallosum = "CorpusCallosum"
    Thalamus = "Thalamus"
    PrefrontalWM = "PrefrontalWM"
    CCGenu = "CCGenu"
    CCBody = "CCBody"
    CCSplenium = "CCSplenium"

    def __str__(self) -> str:
        return self.value

    @property
    def short(self) -> str:
        """Token used in feature names."""
        return "CC" if self is RegionId.CorpusCallosum else self.value

    @property
    def parent(self) -> Optional["RegionId"]:
        """The region a subregion is carved from, None for whole regions."""
        return RegionId.CorpusCallosum if self in CC_SUBREGIONS else None

    @property
    def supports_bow(self) -> bool:
        return self in BOW_REGIONS

    @classmethod
    def parse(cls, text: str) -> "RegionId":
        token = str(text).strip().lower()
        for member in cls:
            if member.value.lower() == token or member.short.lower() == token:
                return member
        raise DataError(f"unknown region: {text!r}")


BOW_REGIONS = (RegionId.CorpusCallosum, RegionId.Thalamus)
# anterior to posterior
CC_SUBREGIONS = (RegionId.CCGenu, RegionId.CCBody, RegionId.CCSplenium)
BASELINE_REGIONS = (RegionId.Thalamus, RegionId.PrefrontalWM, RegionId.CCBody, RegionId.CCGenu, RegionId.CCSplenium)

FeatureKey = Tuple[MetricId, RegionId]

CLINICAL_FIELDS = ("age", "sex", "stroop", "sdmt", "cvlt", "fss")

LABEL_CONTROL = 0
LABEL_MTBI = 1


def key_name(key: FeatureKey) -> str:
    """``<metric>_<region>`` as used in file names."""
    return f"{key[0].value}_{key[1].value}"


def _check_dims(dims: Sequence[int]) -> Dims:
    if len(dims) != 3:
        raise DataError(f"dims must have three entries, got {tuple(dims)}")
    out = tuple(int(d) for d in dims)
    if any(d <= 0 for d in out):
        raise DataError(f"dims must be positive, got {out}")
    return out  # type: ignore[return-value]


@dataclass(frozen=True, eq=False)
class MetricVolume:
    """One scalar 3-D image for one (subject, metric) pair."""

    subject_id: str
    metric: MetricId
    dims: Dims
    voxels: np.ndarray

    def __post_init__(self):
        dims = _check_dims(self.dims)
        voxels = np.array(self.voxels, dtype=np.float64).reshape(-1)
        expected = int(np.prod(dims))
        if voxels.size != expected:
            raise DataError(
                f"voxel count mismatch: dims {dims} need {expected} values, got {voxels.size}"
            )
        bad = np.flatnonzero(~np.isfinite(voxels))
        if bad.size:
            raise DataError(f"non-finite voxel value at index {int(bad[0])}")
        voxels.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxels", voxels)

    @property
    def array(self) -> np.ndarray:
        """Voxels viewed as an (nz, ny, nx) array."""
        return self.voxels.reshape(self.dims)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MetricVolume):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and self.metric == other.metric
            and self.dims == other.dims
            and np.array_equal(self.voxels, other.voxels)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class RoiMask:
    """Boolean region-of-interest mask laid out like ``MetricVolume``."""

    region: RegionId
    dims: Dims
    bits: np.ndarray

    def __post_init__(self):
        dims = _check_dims(self.dims)
        bits = np.array(self.bits, dtype=bool).reshape(-1)
        expected = int(np.prod(dims))
        if bits.size != expected:
            raise DataError(
                f"voxel count mismatch: dims {dims} need {expected} values, got {bits.size}"
            )
        bits.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "bits", bits)

    @property
    def array(self) -> np.ndarray:
        return self.bits.reshape(self.dims)

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, RoiMask):
            return NotImplemented
        return (
            self.region == other.region
            and self.dims == other.dims
            and np.array_equal(self.bits, other.bits)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class ClinicalRecord:
    """Demographic and neurocognitive covariates plus the cohort label."""

    subject_id: str
    age: float
    sex: int
    stroop: float
    sdmt: float
    cvlt: float
    fss: float
    label: int

    def __post_init__(self):
        if not self.subject_id:
            raise DataError("empty subject_id")
        if not (np.isfinite(self.age) and self.age > 0):
            raise DataError(f"subject {self.subject_id}: age must be finite and positive, got {self.age}")
        if self.sex not in (0, 1):
            raise DataError(f"subject {self.subject_id}: sex must be 0 or 1, got {self.sex}")
        if self.label not in (LABEL_CONTROL, LABEL_MTBI):
            raise DataError(f"subject {self.subject_id}: label must be 0 or 1, got {self.label}")
        for name in ("stroop", "sdmt", "cvlt", "fss"):
            if not np.isfinite(getattr(self, name)):
                raise DataError(f"subject {self.subject_id}: {name} is not finite")

    @property
    def covariates(self) -> np.ndarray:
        """The six covariates in ``CLINICAL_FIELDS`` order."""
        return np.array([float(getattr(self, name)) for name in CLINICAL_FIELDS])


@dataclass(frozen=True)
class SubjectData:
    """One subject: clinical record and its (metric, region) images."""

    record: ClinicalRecord
    images: Dict[FeatureKey, Tuple[MetricVolume, RoiMask]] = field(default_factory=dict)

    @property
    def subject_id(self) -> str:
        return self.record.subject_id

    @property
    def label(self) -> int:
        return self.record.label


@dataclass(frozen=True)
class Dataset:
    """A cohort of subjects sharing one (metric, region) key set."""

    subjects: Tuple[SubjectData, ...]

    def __post_init__(self):
        subjects = tuple(self.subjects)
        object.__setattr__(self, "subjects", subjects)
        seen = set()
        for subject in subjects:
            if subject.subject_id in seen:
                raise DataError(f"duplicate subject: {subject.subject_id}")
            seen.add(subject.subject_id)
        if not subjects:
            return
        reference = set(subjects[0].images)
        for subject in subjects[1:]:
            keys = set(subject.images)
            if keys != reference:
                missing = sorted(key_name(k) for k in reference ^ keys)
                raise DataError(
                    f"subject {subject.subject_id} does not provide the same (metric, region) pairs: {missing}"
                )
        for subject in subjects:
            for key, (volume, mask) in subject.images.items():
                if volume.metric != key[0] or mask.region != key[1]:
                    raise DataError(f"subject {subject.subject_id}: image stored under wrong key {key_name(key)}")
                if volume.dims != mask.dims:
                    raise DataError(
                        f"subject {subject.subject_id}, {key_name(key)}: volume dims {volume.dims} "
                        f"do not match mask dims {mask.dims}"
                    )

    @property
    def keys(self) -> List[FeatureKey]:
        """(metric, region) pairs, sorted by region then metric enum order."""
        if not self.subjects:
            return []
        return sorted(self.subjects[0].images, key=key_order)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.subjects], dtype=int)

    @property
    def subject_ids(self) -> List[str]:
        return [s.subject_id for s in self.subjects]

    def __len__(self) -> int:
        return len(self.subjects)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(tuple(self.subjects[int(i)] for i in indices))


_METRIC_ORDER = {m: i for i, m in enumerate(MetricId)}
_REGION_ORDER = {r: i for i, r in enumerate(RegionId)}


def key_order(key: FeatureKey) -> Tuple[int, int]:
    return _REGION_ORDER[key[1]], _METRIC_ORDER[key[0]]
