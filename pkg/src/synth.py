"""
Synthetic two-cohort dataset generator for mTBI-BoW.

Each (metric, region) pair owns a pool of zero-mean, unit-RMS p x p texture
patterns: some shared by both cohorts, some specific to one cohort. A whole
region occupies a horizontal band of every axial slice, tiled by p x p blocks;
corpus callosum subregions split its mask into genu, body and splenium
column groups of whole blocks. Each block draws a cohort-specific pattern
with probability ``texture_contrast`` and a shared one otherwise. Masks are
rectangles of whole blocks, so the ROI mean is the metric level plus noise in
both cohorts: cohorts differ in texture, not in mean (unless ``mean_shift``
is set).
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from rich.console import Console

from src.data_types import (
    BOW_REGIONS,
    CC_SUBREGIONS,
    LABEL_CONTROL,
    LABEL_MTBI,
    ClinicalRecord,
    Dataset,
    Dims,
    MetricId,
    MetricVolume,
    RegionId,
    RoiMask,
    SubjectData,
)
from src.errors import ConfigError, DataError
from src.random_streams import STREAM_SYNTH_PATTERNS, STREAM_SYNTH_SUBJECT, derive_rng
from src.volume_handler import DatasetHandler

console = Console()

METRIC_LEVELS = {
    MetricId.AWF: 4.5,
    MetricId.DA: 10.0,
    MetricId.DePar: 18.0,
    MetricId.DePerp: 9.0,
    MetricId.FA: 5.0,
    MetricId.MD: 8.0,
    MetricId.AK: 9.0,
    MetricId.MK: 10.0,
    MetricId.RK: 11.0,
}

N_SHARED_PATTERNS = 4
N_COHORT_PATTERNS = 2
N_PATTERN_WAVES = 3
SUBJECT_OFFSET_SIGMA = 0.05


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of a synthetic cohort."""

    n_control: int = 30
    n_mtbi: int = 30
    dims: Dims = (2, 64, 64)
    metrics: Tuple[MetricId, ...] = tuple(MetricId)
    regions: Tuple[RegionId, ...] = BOW_REGIONS
    texture_contrast: float = 1.0
    mean_shift: float = 0.0
    noise_sigma: float = 0.1
    seed: int = 0
    texture_amplitude: float = 1.0
    clinical_effect: float = 0.0
    block_size: int = 16

    def validate(self) -> None:
        if self.n_control < 2 or self.n_mtbi < 2:
            raise ConfigError("n_control and n_mtbi must both be at least 2")
        if not 0.0 <= self.texture_contrast <= 1.0:
            raise ConfigError(f"texture_contrast must lie in [0, 1], got {self.texture_contrast}")
        if not self.noise_sigma > 0:
            raise ConfigError(f"noise_sigma must be positive, got {self.noise_sigma}")
        if not self.metrics or not self.regions:
            raise ConfigError("at least one metric and one region are required")
        if len(set(self.metrics)) != len(self.metrics) or len(set(self.regions)) != len(self.regions):
            raise ConfigError("metrics and regions must not repeat")
        subregions = [r for r in self.regions if r.parent is not None]
        if subregions and RegionId.CorpusCallosum not in self.regions:
            raise ConfigError(f"{', '.join(r.value for r in subregions)} need CorpusCallosum in the region list")
        if self.block_size < 2:
            raise ConfigError(f"block_size must be at least 2, got {self.block_size}")
        if len(self.dims) != 3 or any(int(d) <= 0 for d in self.dims):
            raise ConfigError(f"dims must be three positive integers, got {self.dims}")
        bands = self.band_regions()
        band = region_band_height(self.dims, len(bands), self.block_size)
        if band < self.block_size or self.dims[2] < self.block_size:
            raise DataError(
                f"dims {tuple(self.dims)} too small to contain one {self.block_size}x{self.block_size} "
                f"patch per region in a masked slice ({len(bands)} region bands)"
            )
        if subregions and self.dims[2] // self.block_size < len(CC_SUBREGIONS):
            raise DataError(
                f"dims {tuple(self.dims)} too narrow to split the corpus callosum into "
                f"{len(CC_SUBREGIONS)} columns of {self.block_size}-voxel blocks"
            )

    def band_regions(self) -> Tuple[RegionId, ...]:
        """Regions that own a band of their own (everything but the subregions)."""
        return tuple(r for r in self.regions if r.parent is None)


def region_band_height(dims: Dims, n_regions: int, block: int) -> int:
    """Rows per region band, rounded down to whole blocks."""
    return (int(dims[1]) // n_regions) // block * block


def cc_column_groups(start: int, width: int) -> List[Tuple[int, int]]:
    """
    Block-column ranges of genu, body and splenium inside a corpus callosum mask.

    Args:
        start: First block column of the mask
        width: Mask width in blocks, at least 3

    Returns:
        List[Tuple[int, int]]: Half-open ``(first, stop)`` block columns, anterior first
    """
    side = width // 3
    return [(start, start + side), (start + side, start + width - side), (start + width - side, start + width)]


def make_pattern_pool(cfg: SynthConfig, metric: MetricId, region: RegionId) -> Dict[str, np.ndarray]:
    """
    Texture patterns for one (metric, region) pair.

    Returns:
        Dict[str, np.ndarray]: ``shared``, ``control`` and ``mtbi`` stacks of
        zero-mean, unit-RMS p x p patterns
    """
    rng = derive_rng(cfg.seed, STREAM_SYNTH_PATTERNS, list(MetricId).index(metric), list(RegionId).index(region))
    p = cfg.block_size
    yy, xx = np.mgrid[0:p, 0:p].astype(np.float64)

    def pattern() -> np.ndarray:
        img = np.zeros((p, p))
        for _ in range(N_PATTERN_WAVES):
            fy, fx = rng.integers(0, 4, size=2)
            if fy == 0 and fx == 0:
                fx = 1
            phase = rng.uniform(0, 2 * np.pi)
            img += rng.uniform(0.5, 1.0) * np.cos(2 * np.pi * (fy * yy + fx * xx) / p + phase)
        img -= img.mean()
        return img / np.sqrt(np.mean(img ** 2))

    return {
        "shared": np.stack([pattern() for _ in range(N_SHARED_PATTERNS)]),
        "control": np.stack([pattern() for _ in range(N_COHORT_PATTERNS)]),
        "mtbi": np.stack([pattern() for _ in range(N_COHORT_PATTERNS)]),
    }


def _clinical_record(cfg: SynthConfig, subject_id: str, label: int, rng: np.random.Generator) -> ClinicalRecord:
    shift = cfg.clinical_effect if label == LABEL_MTBI else 0.0
    return ClinicalRecord(
        subject_id=subject_id,
        age=float(rng.uniform(18.0, 64.0)),
        sex=int(rng.integers(0, 2)),
        stroop=float(rng.normal(50.0 - 10.0 * shift, 10.0)),
        sdmt=float(rng.normal(55.0 - 10.0 * shift, 10.0)),
        cvlt=float(rng.normal(50.0 - 10.0 * shift, 10.0)),
        fss=float(rng.normal(3.5 + 1.0 * shift, 1.0)),
        label=label,
    )


def _block_mask(region: RegionId, dims: Dims, rows: slice, x0: int, x1: int) -> RoiMask:
    bits = np.zeros(dims, dtype=bool)
    bits[:, rows, x0:x1] = True
    return RoiMask(region=region, dims=dims, bits=bits)


def _generate_subject(
    cfg: SynthConfig,
    index: int,
    subject_id: str,
    label: int,
    pools: Dict[Tuple[MetricId, RegionId], Dict[str, np.ndarray]],
) -> SubjectData:
    rng = derive_rng(cfg.seed, STREAM_SYNTH_SUBJECT, index)
    record = _clinical_record(cfg, subject_id, label, rng)
    nz, ny, nx = (int(d) for d in cfg.dims)
    p = cfg.block_size
    bands = cfg.band_regions()
    band = region_band_height(cfg.dims, len(bands), p)
    block_rows, block_cols = band // p, nx // p
    cohort = "mtbi" if label == LABEL_MTBI else "control"

    split_cc = len(bands) < len(cfg.regions)
    masks: Dict[RegionId, RoiMask] = {}
    for r, region in enumerate(bands):
        low = max(1, block_cols - 1)
        if split_cc and region is RegionId.CorpusCallosum:
            low = max(low, len(CC_SUBREGIONS))
        width = int(rng.integers(low, block_cols + 1))
        start = int(rng.integers(0, block_cols - width + 1))
        rows = slice(r * band, r * band + block_rows * p)
        masks[region] = _block_mask(region, (nz, ny, nx), rows, start * p, (start + width) * p)
        if split_cc and region is RegionId.CorpusCallosum:
            for sub, (first, stop) in zip(CC_SUBREGIONS, cc_column_groups(start, width)):
                if sub in cfg.regions:
                    masks[sub] = _block_mask(sub, (nz, ny, nx), rows, first * p, stop * p)

    images = {}
    for metric in cfg.metrics:
        level = METRIC_LEVELS[metric] + rng.normal(0.0, SUBJECT_OFFSET_SIGMA)
        if label == LABEL_MTBI:
            level += cfg.mean_shift
        img = np.full((nz, ny, nx), level) + rng.normal(0.0, cfg.noise_sigma, size=(nz, ny, nx))
        for r, region in enumerate(bands):
            pool = pools[(metric, region)]
            for z in range(nz):
                for by in range(block_rows):
                    for bx in range(block_cols):
                        if rng.random() < cfg.texture_contrast:
                            stack = pool[cohort]
                        else:
                            stack = pool["shared"]
                        choice = stack[int(rng.integers(0, len(stack)))]
                        y0, x0 = r * band + by * p, bx * p
                        img[z, y0:y0 + p, x0:x0 + p] += cfg.texture_amplitude * choice
        # values must survive float32 storage bit-exactly
        voxels = img.astype(np.float32).astype(np.float64)
        volume = MetricVolume(subject_id=subject_id, metric=metric, dims=(nz, ny, nx), voxels=voxels)
        for region in cfg.regions:
            images[(metric, region)] = (volume, masks[region])
    return SubjectData(record=record, images=images)


def subject_plan(cfg: SynthConfig) -> List[Tuple[str, int]]:
    """(subject_id, label) for every subject, controls first."""
    plan = [(f"ctl{i + 1:03d}", LABEL_CONTROL) for i in range(cfg.n_control)]
    plan += [(f"mtbi{i + 1:03d}", LABEL_MTBI) for i in range(cfg.n_mtbi)]
    return plan


def generate(cfg: SynthConfig, n_jobs: int = 1) -> Dataset:
    """
    Generate a synthetic two-cohort dataset.

    Args:
        cfg: Generator parameters
        n_jobs: Worker count; output does not depend on it

    Returns:
        Dataset: Controls first, then mTBI subjects
    """
    cfg.validate()
    pools = {(m, r): make_pattern_pool(cfg, m, r) for m in cfg.metrics for r in cfg.band_regions()}
    plan = subject_plan(cfg)
    console.print(
        f"[yellow]Generating {cfg.n_control} control and {cfg.n_mtbi} mTBI subjects "
        f"(contrast {cfg.texture_contrast}, mean shift {cfg.mean_shift})..."
    )
    subjects = Parallel(n_jobs=n_jobs)(
        delayed(_generate_subject)(cfg, i, subject_id, label, pools) for i, (subject_id, label) in enumerate(plan)
    )
    return Dataset(tuple(subjects))


def write_dataset(dataset: Dataset, directory: Union[str, Path]) -> Dict:
    """Persist a dataset directory (clinical.csv, volumes, masks, manifest.json)."""
    return DatasetHandler(directory).write(dataset)
