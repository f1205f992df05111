"""
Volume, mask and clinical-table storage for mTBI-BoW.

Volumes are stored as a JSON header ``<name>.vol.json`` plus a raw payload
``<name>.vol.raw`` of little-endian float32 values in (slice, row, col) order.
Masks use ``<name>.mask.json`` / ``<name>.mask.raw`` with one byte (0/1) per
voxel. The clinical table is a CSV with the exact header
``subject_id,age,sex,stroop,sdmt,cvlt,fss,label`` (sex: 0 = female, 1 = male;
label: 0 = control, 1 = mTBI).
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from rich.console import Console

from src.data_types import (
    CLINICAL_FIELDS,
    ClinicalRecord,
    Dataset,
    FeatureKey,
    MetricId,
    MetricVolume,
    RegionId,
    RoiMask,
    SubjectData,
    key_order,
)
from src.errors import DataError

console = Console()

PathLike = Union[str, Path]

CLINICAL_HEADER = ("subject_id",) + CLINICAL_FIELDS + ("label",)

VOLUME_SUFFIX = ".vol"
MASK_SUFFIX = ".mask"
MANIFEST_NAME = "manifest.json"
CLINICAL_NAME = "clinical.csv"


def _pair_paths(path: PathLike, suffix: str) -> Tuple[Path, Path]:
    """Resolve ``path`` (stem, header or payload) to its header and payload paths."""
    path = Path(path)
    name = path.name
    for ending in (f"{suffix}.json", f"{suffix}.raw"):
        if name.endswith(ending):
            name = name[: -len(ending)]
            break
    base = path.with_name(name)
    return base.with_name(name + f"{suffix}.json"), base.with_name(name + f"{suffix}.raw")


def _read_header(header_path: Path) -> Dict[str, Any]:
    if not header_path.exists():
        raise DataError(f"missing file: {header_path}")
    try:
        with open(header_path, "r", encoding="utf-8") as f:
            header = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        console.print(f"[red]Error reading header {header_path}: {e}")
        raise DataError(f"unreadable header {header_path}: {e}") from e
    dims = header.get("dims")
    if not isinstance(dims, list) or len(dims) != 3:
        raise DataError(f"header {header_path}: dims must be a list of three integers")
    return header


def _read_payload(raw_path: Path, dtype: str, dims: Sequence[int]) -> np.ndarray:
    if not raw_path.exists():
        raise DataError(f"missing file: {raw_path}")
    data = np.fromfile(raw_path, dtype=dtype)
    expected = int(np.prod([int(d) for d in dims]))
    if data.size != expected:
        raise DataError(
            f"voxel count mismatch: {raw_path} has {data.size} values, dims {tuple(dims)} need {expected}"
        )
    return data


def _write_json(path: Path, payload: Dict[str, Any]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")


def load_volume(path: PathLike) -> MetricVolume:
    """
    Load a metric volume from its header/payload pair.

    Args:
        path: Stem, header (``.vol.json``) or payload (``.vol.raw``) path

    Returns:
        MetricVolume: Voxels widened losslessly from float32 to float64
    """
    header_path, raw_path = _pair_paths(path, VOLUME_SUFFIX)
    header = _read_header(header_path)
    data = _read_payload(raw_path, "<f4", header["dims"])
    bad = np.flatnonzero(~np.isfinite(data))
    if bad.size:
        raise DataError(f"non-finite voxel value in {raw_path} at index {int(bad[0])}")
    try:
        return MetricVolume(
            subject_id=str(header["subject_id"]),
            metric=MetricId.parse(header["metric"]),
            dims=tuple(header["dims"]),
            voxels=data.astype(np.float64),
        )
    except (KeyError, ValueError) as e:
        raise DataError(f"malformed volume header {header_path}: {e!r}") from e


def write_volume(volume: MetricVolume, path: PathLike) -> None:
    """
    Write a metric volume as a header/payload pair.

    Args:
        volume: Volume to store; every voxel must be exactly representable as float32
        path: Stem, header or payload path
    """
    narrowed = volume.voxels.astype("<f4")
    if not np.all(np.isfinite(narrowed)):
        index = int(np.flatnonzero(~np.isfinite(narrowed))[0])
        raise DataError(f"voxel {index} overflows float32")
    inexact = np.flatnonzero(narrowed.astype(np.float64) != volume.voxels)
    if inexact.size:
        raise DataError(f"voxel {int(inexact[0])} is not exactly representable as float32")
    header_path, raw_path = _pair_paths(path, VOLUME_SUFFIX)
    try:
        header_path.parent.mkdir(parents=True, exist_ok=True)
        _write_json(
            header_path,
            {"subject_id": volume.subject_id, "metric": volume.metric.value, "dims": list(volume.dims)},
        )
        narrowed.tofile(raw_path)
    except OSError as e:
        console.print(f"[red]Error writing volume {header_path}: {e}")
        raise DataError(f"cannot write volume {header_path}: {e}") from e


def load_mask(path: PathLike) -> RoiMask:
    """Load a region mask from its header/payload pair."""
    header_path, raw_path = _pair_paths(path, MASK_SUFFIX)
    header = _read_header(header_path)
    data = _read_payload(raw_path, "u1", header["dims"])
    if np.any(data > 1):
        index = int(np.flatnonzero(data > 1)[0])
        raise DataError(f"mask byte at index {index} in {raw_path} is not 0 or 1")
    try:
        region = RegionId.parse(header["region"])
    except (KeyError, ValueError) as e:
        raise DataError(f"malformed mask header {header_path}: {e!r}") from e
    return RoiMask(region=region, dims=tuple(header["dims"]), bits=data.astype(bool))


def write_mask(mask: RoiMask, path: PathLike) -> None:
    """Write a region mask as a header/payload pair."""
    header_path, raw_path = _pair_paths(path, MASK_SUFFIX)
    try:
        header_path.parent.mkdir(parents=True, exist_ok=True)
        _write_json(header_path, {"region": mask.region.value, "dims": list(mask.dims)})
        mask.bits.astype("u1").tofile(raw_path)
    except OSError as e:
        console.print(f"[red]Error writing mask {header_path}: {e}")
        raise DataError(f"cannot write mask {header_path}: {e}") from e


def _parse_number(value: str, column: str, row: int) -> float:
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise DataError(f"row {row}: unparsable number in column {column}: {value!r}")
    if not np.isfinite(number):
        raise DataError(f"row {row}: non-finite value in column {column}: {value!r}")
    return number


def _parse_binary(value: str, column: str, row: int) -> int:
    number = _parse_number(value, column, row)
    if number not in (0.0, 1.0):
        raise DataError(f"row {row}: {column} outside {{0,1}}: {value!r}")
    return int(number)


def load_clinical(path: PathLike) -> List[ClinicalRecord]:
    """
    Load the clinical covariate table.

    Args:
        path: CSV file with the exact header ``subject_id,age,sex,stroop,sdmt,cvlt,fss,label``

    Returns:
        List[ClinicalRecord]: One record per row, in file order
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    try:
        table = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError) as e:
        console.print(f"[red]Error reading clinical table {path}: {e}")
        raise DataError(f"unreadable clinical table {path}: {e}") from e
    except pd.errors.EmptyDataError:
        raise DataError(f"clinical table {path} has no header")
    if tuple(table.columns) != CLINICAL_HEADER:
        raise DataError(
            f"clinical header must be exactly {','.join(CLINICAL_HEADER)}, got {','.join(table.columns)}"
        )

    records: List[ClinicalRecord] = []
    seen = set()
    for offset, row in enumerate(table.itertuples(index=False)):
        line = offset + 2
        subject_id = row.subject_id.strip()
        if subject_id in seen:
            raise DataError(f"duplicate subject: {subject_id} (row {line})")
        seen.add(subject_id)
        records.append(
            ClinicalRecord(
                subject_id=subject_id,
                age=_parse_number(row.age, "age", line),
                sex=_parse_binary(row.sex, "sex", line),
                stroop=_parse_number(row.stroop, "stroop", line),
                sdmt=_parse_number(row.sdmt, "sdmt", line),
                cvlt=_parse_number(row.cvlt, "cvlt", line),
                fss=_parse_number(row.fss, "fss", line),
                label=_parse_binary(row.label, "label", line),
            )
        )
    return records


def write_clinical(records: Sequence[ClinicalRecord], path: PathLike) -> None:
    """Write clinical records with the exact CSV header."""
    rows = [
        [r.subject_id, repr(float(r.age)), str(int(r.sex)), repr(float(r.stroop)), repr(float(r.sdmt)),
         repr(float(r.cvlt)), repr(float(r.fss)), str(int(r.label))]
        for r in records
    ]
    table = pd.DataFrame(rows, columns=list(CLINICAL_HEADER))
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        console.print(f"[red]Error writing clinical table {path}: {e}")
        raise DataError(f"cannot write clinical table {path}: {e}") from e


class DatasetHandler:
    """Reads and writes dataset directories (clinical table, volumes, masks, manifest)."""

    def __init__(self, directory: PathLike):
        """
        Initialize the DatasetHandler.

        Args:
            directory: Dataset directory
        """
        self.directory = Path(directory)

    @property
    def manifest_path(self) -> Path:
        return self.directory / MANIFEST_NAME

    def volume_stem(self, subject_id: str, metric: MetricId) -> str:
        return f"volumes/{subject_id}_{metric.value}"

    def mask_stem(self, subject_id: str, region: RegionId) -> str:
        return f"masks/{subject_id}_{region.value}"

    def write(self, dataset: Dataset) -> Dict[str, Any]:
        """
        Store a dataset and its manifest.

        Args:
            dataset: Dataset to store

        Returns:
            Dict[str, Any]: The manifest written
        """
        # Write the clinical table first
        self.directory.mkdir(parents=True, exist_ok=True)
        write_clinical([s.record for s in dataset.subjects], self.directory / CLINICAL_NAME)

        # Write each volume and mask once per subject
        files = [CLINICAL_NAME]
        subjects = []
        for subject in dataset.subjects:
            volumes: Dict[str, str] = {}
            masks: Dict[str, str] = {}
            for key in sorted(subject.images, key=key_order):
                volume, mask = subject.images[key]
                if volume.metric.value not in volumes:
                    stem = self.volume_stem(subject.subject_id, volume.metric)
                    write_volume(volume, self.directory / stem)
                    volumes[volume.metric.value] = stem
                    files.extend([stem + ".vol.json", stem + ".vol.raw"])
                if mask.region.value not in masks:
                    stem = self.mask_stem(subject.subject_id, mask.region)
                    write_mask(mask, self.directory / stem)
                    masks[mask.region.value] = stem
                    files.extend([stem + ".mask.json", stem + ".mask.raw"])
            subjects.append({"subject_id": subject.subject_id, "volumes": volumes, "masks": masks})

        # Write the manifest last
        manifest = {
            "pairs": [[m.value, r.value] for m, r in dataset.keys],
            "subjects": subjects,
            "files": files,
        }
        _write_json(self.manifest_path, manifest)
        console.print(f"[green]Wrote dataset with {len(dataset)} subjects to {self.directory}")
        return manifest

    def load(self) -> Dataset:
        """
        Load the dataset described by the manifest.

        Returns:
            Dataset: Validated dataset, subjects in clinical-table order
        """
        # Load the manifest
        if not self.manifest_path.exists():
            raise DataError(f"missing file: {self.manifest_path}")
        try:
            with open(self.manifest_path, "r", encoding="utf-8") as f:
                manifest = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            console.print(f"[red]Error reading manifest {self.manifest_path}: {e}")
            raise DataError(f"unreadable manifest {self.manifest_path}: {e}") from e

        # Parse the pair list and the subject index
        try:
            pairs: List[FeatureKey] = [(MetricId.parse(m), RegionId.parse(r)) for m, r in manifest["pairs"]]
            entries = {entry["subject_id"]: entry for entry in manifest["subjects"]}
        except (KeyError, TypeError, ValueError) as e:
            console.print(f"[red]Malformed manifest {self.manifest_path}: {e!r}")
            raise DataError(f"malformed manifest {self.manifest_path}: {e!r}") from e
        records = load_clinical(self.directory / CLINICAL_NAME)

        # Load each subject's volumes and masks, sharing files across pairs
        subjects = []
        for record in records:
            entry = entries.get(record.subject_id)
            if entry is None:
                raise DataError(f"subject {record.subject_id} is in {CLINICAL_NAME} but not in the manifest")
            volumes = {}
            masks = {}
            images = {}
            for metric, region in pairs:
                try:
                    volume_stem = entry["volumes"][metric.value]
                    mask_stem = entry["masks"][region.value]
                except KeyError as e:
                    raise DataError(
                        f"subject {record.subject_id} is missing {metric.value}/{region.value} (no {e.args[0]})"
                    ) from e
                if metric not in volumes:
                    volumes[metric] = load_volume(self.directory / volume_stem)
                if region not in masks:
                    masks[region] = load_mask(self.directory / mask_stem)
                if volumes[metric].subject_id != record.subject_id:
                    raise DataError(f"{volume_stem} belongs to subject {volumes[metric].subject_id}")
                images[(metric, region)] = (volumes[metric], masks[region])
            subjects.append(SubjectData(record=record, images=images))

        # Every manifest subject must have a clinical row
        extra = set(entries) - {r.subject_id for r in records}
        if extra:
            raise DataError(f"manifest lists subjects missing from {CLINICAL_NAME}: {sorted(extra)}")
        console.print(f"[green]Loaded dataset with {len(subjects)} subjects and {len(pairs)} (metric, region) pairs")
        return Dataset(tuple(subjects))
