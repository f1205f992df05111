"""
Patch extraction for mTBI-BoW.

Windows of p x p voxels are taken from axial slices on a regular grid and kept
when enough of the window lies inside the region mask.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from numpy.lib.stride_tricks import sliding_window_view
from rich.console import Console

from src.data_types import Dataset, FeatureKey, MetricVolume, RoiMask, SubjectData
from src.errors import ConfigError, DataError

console = Console()


@dataclass(frozen=True)
class PatchConfig:
    """Grid parameters for patch extraction."""

    patch_size: int = 16
    stride: int = 16
    coverage_threshold: float = 0.5

    def validate(self) -> None:
        if self.patch_size < 2:
            raise ConfigError(f"patch_size must be at least 2, got {self.patch_size}")
        if self.stride < 1:
            raise ConfigError(f"stride must be at least 1, got {self.stride}")
        if not 0.0 < self.coverage_threshold <= 1.0:
            raise ConfigError(f"coverage_threshold must lie in (0, 1], got {self.coverage_threshold}")


@dataclass(frozen=True, eq=False)
class Patch:
    """A p x p window of one metric volume, flattened row-major."""

    values: np.ndarray
    origin: Tuple[int, int, int]
    key: FeatureKey
    subject_id: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        side = int(round(np.sqrt(values.size)))
        if side * side != values.size:
            raise DataError(f"patch length {values.size} is not a perfect square")
        if not np.all(np.isfinite(values)):
            raise DataError(f"non-finite value in patch at {self.origin}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def size(self) -> int:
        return int(round(np.sqrt(self.values.size)))


def grid_origins(ny: int, nx: int, cfg: PatchConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Row and column origins of every in-bounds grid window."""
    p = cfg.patch_size
    return np.arange(0, ny - p + 1, cfg.stride), np.arange(0, nx - p + 1, cfg.stride)


def extract_patches(volume: MetricVolume, mask: RoiMask, cfg: PatchConfig) -> List[Patch]:
    """
    Extract the grid patches of one volume that lie inside a region.

    Args:
        volume: Metric volume
        mask: Region mask with the same dims
        cfg: Patch size, stride and coverage threshold

    Returns:
        List[Patch]: Patches in (z, y, x) lexicographic order
    """
    cfg.validate()
    if volume.dims != mask.dims:
        raise DataError(f"dims mismatch: volume {volume.dims} vs mask {mask.dims}")
    p = cfg.patch_size
    nz, ny, nx = volume.dims
    if ny < p or nx < p:
        return []

    image = volume.array
    bits = mask.array.astype(np.float64)
    key = (volume.metric, mask.region)
    needed = cfg.coverage_threshold * p * p

    patches: List[Patch] = []
    for z in range(nz):
        # window sums on the stride grid
        coverage = sliding_window_view(bits[z], (p, p))[:: cfg.stride, :: cfg.stride].sum(axis=(2, 3))
        rows, cols = np.nonzero(coverage >= needed - 1e-9)
        for gy, gx in zip(rows, cols):
            y, x = int(gy) * cfg.stride, int(gx) * cfg.stride
            patches.append(
                Patch(
                    values=image[z, y:y + p, x:x + p].copy(),
                    origin=(z, y, x),
                    key=key,
                    subject_id=volume.subject_id,
                )
            )
    return patches


def patch_matrix(patches: Sequence[Patch]) -> np.ndarray:
    """Stack patch values into an (n, p*p) array."""
    if not patches:
        return np.zeros((0, 0))
    return np.vstack([patch.values for patch in patches])


def _subject_patches(subject: SubjectData, keys: Sequence[FeatureKey], cfg: PatchConfig) -> Dict[FeatureKey, List[Patch]]:
    out = {}
    for key in keys:
        if key not in subject.images:
            raise DataError(f"subject {subject.subject_id} has no image for {key[0].value}/{key[1].value}")
        volume, mask = subject.images[key]
        out[key] = extract_patches(volume, mask, cfg)
    return out


def extract_subject_patches(
    dataset: Dataset, keys: Sequence[FeatureKey], cfg: PatchConfig, n_jobs: int = 1
) -> List[Dict[FeatureKey, List[Patch]]]:
    """
    Extract patches for every subject and key.

    Args:
        dataset: Dataset to process
        keys: (metric, region) pairs to extract
        cfg: Patch grid parameters
        n_jobs: Worker count; output order follows the dataset

    Returns:
        List[Dict[FeatureKey, List[Patch]]]: One mapping per subject
    """
    cfg.validate()
    return Parallel(n_jobs=n_jobs)(delayed(_subject_patches)(subject, keys, cfg) for subject in dataset.subjects)


def write_patch_dump(patches: Sequence[Patch], path: Union[str, Path]) -> None:
    """
    Write patches as CSV with columns ``subject_id,metric,region,z,y,x,v0..v{p*p-1}``.

    Args:
        patches: Patches of a single patch size
        path: Output CSV path
    """
    sizes = {patch.values.size for patch in patches}
    if len(sizes) > 1:
        raise DataError(f"patch dump needs one patch size, got lengths {sorted(sizes)}")
    n_values = sizes.pop() if sizes else 0
    meta = pd.DataFrame(
        {
            "subject_id": [p.subject_id for p in patches],
            "metric": [p.key[0].value for p in patches],
            "region": [p.key[1].value for p in patches],
            "z": [p.origin[0] for p in patches],
            "y": [p.origin[1] for p in patches],
            "x": [p.origin[2] for p in patches],
        }
    )
    values = pd.DataFrame(
        patch_matrix(patches) if patches else np.zeros((0, n_values)),
        columns=[f"v{i}" for i in range(n_values)],
    )
    table = pd.concat([meta, values], axis=1)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format="%.9g", lineterminator="\n")
    console.print(f"[green]Wrote {len(patches)} patches to {path}")
