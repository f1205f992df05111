"""
Run configuration for mTBI-BoW.

A run is described by one flat ``KEY=value`` file (dotenv syntax). Values are
resolved from the field defaults, then the file, then ``MTBI_BOW_<KEY>``
environment variables; the command line overrides all of them.
"""
import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Union

from dotenv import dotenv_values
from rich.console import Console

from src.codebook import KMeansConfig
from src.cross_validation import CvConfig
from src.data_types import BASELINE_REGIONS, BOW_REGIONS, FeatureKey, MetricId, RegionId
from src.encoder import FeatureLayout
from src.errors import ConfigError, DataError
from src.feature_selector import TUNING_MODES
from src.patch_extractor import PatchConfig
from src.svm_classifier import GridConfig, SvmSpec
from src.synth import SynthConfig

console = Console()

ENV_PREFIX = "MTBI_BOW_"
MODES = ("bow", "mean_baseline")
TRUE_WORDS = ("1", "true", "yes", "on")
FALSE_WORDS = ("0", "false", "no", "off")
MAX_SEED = (1 << 64) - 1


@dataclass(frozen=True)
class RunConfig:
    """Every parameter of a pipeline run."""

    data_dir: Optional[str] = None
    out: str = "runs/default"
    seed: int = 0
    workers: int = 1
    mode: str = "bow"
    honest_codebooks: bool = False

    n_control: int = 30
    n_mtbi: int = 30
    dims: Tuple[int, ...] = (2, 64, 64)
    texture_contrast: float = 1.0
    mean_shift: float = 0.0
    noise_sigma: float = 0.1
    texture_amplitude: float = 1.0
    clinical_effect: float = 0.0

    patch_size: int = 16
    stride: int = 16
    coverage_threshold: float = 0.5
    write_patch_dump: bool = False

    k_per_cohort: int = 10
    kmeans_max_iter: int = 300
    kmeans_rel_tol: float = 1e-6
    kmeans_restarts: int = 8
    normalize_histograms: bool = True

    validation_fraction: float = 0.2
    cv_repeats: int = 50
    stratified: bool = True

    c_grid: Tuple[float, ...] = (0.1, 1.0, 10.0, 100.0)
    gamma_factors: Tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 4.0)
    svm_tol: float = 1e-3
    svm_max_passes: int = 1000
    tuning: str = "per_set"
    max_features: int = 10

    training_ratios: Tuple[float, ...] = (0.5, 0.6, 0.7, 0.8, 0.9)
    baseline_regions: Tuple[str, ...] = tuple(r.value for r in BASELINE_REGIONS)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def dataset_dir(self) -> Path:
        """Input dataset; synthesized data goes to ``<out>/dataset`` when no directory is given."""
        return Path(self.data_dir) if self.data_dir else self.out_dir / "dataset"

    def validate(self, check_paths: bool = True) -> None:
        """
        Check every parameter against the module preconditions.

        Args:
            check_paths: Require ``data_dir`` to exist when it is set
        """
        # Choices and ranges
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode '{self.mode}', expected one of {', '.join(MODES)}")
        if self.tuning not in TUNING_MODES:
            raise ConfigError(f"unknown tuning '{self.tuning}', expected one of {', '.join(TUNING_MODES)}")
        if not 0 <= self.seed <= MAX_SEED:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.workers < 1 and self.workers != -1:
            raise ConfigError(f"workers must be positive (or -1 for all cores), got {self.workers}")
        if self.k_per_cohort < 1:
            raise ConfigError(f"k_per_cohort must be at least 1, got {self.k_per_cohort}")
        if self.max_features < 0:
            raise ConfigError(f"max_features must be non-negative, got {self.max_features}")
        if not self.training_ratios or any(not 0.0 < r < 1.0 for r in self.training_ratios):
            raise ConfigError(f"training_ratios must lie in (0, 1): {self.training_ratios}")
        # Paths and module configs
        if check_paths and self.data_dir and not Path(self.data_dir).is_dir():
            raise ConfigError(f"data_dir does not exist: {self.data_dir}")
        self.regions()
        try:
            self.synth_config().validate()
        except DataError as e:
            raise ConfigError(str(e)) from e
        self.patch_config().validate()
        self.kmeans_config().validate()
        self.cv_config().validate()
        self.grid_config().validate()
        self.svm_spec().validate()

    def regions(self) -> Tuple[RegionId, ...]:
        try:
            return tuple(RegionId.parse(r) for r in self.baseline_regions)
        except ValueError as e:
            raise ConfigError(f"baseline_regions: {e}") from e

    def synth_regions(self) -> Tuple[RegionId, ...]:
        """BoW regions plus the baseline regions and the regions they are carved from, in enum order."""
        wanted = set(BOW_REGIONS) | set(self.regions())
        wanted |= {r.parent for r in wanted if r.parent is not None}
        return tuple(r for r in RegionId if r in wanted)

    def synth_config(self) -> SynthConfig:
        return SynthConfig(
            n_control=self.n_control,
            n_mtbi=self.n_mtbi,
            dims=tuple(self.dims),
            metrics=tuple(MetricId),
            regions=self.synth_regions(),
            texture_contrast=self.texture_contrast,
            mean_shift=self.mean_shift,
            noise_sigma=self.noise_sigma,
            seed=self.seed,
            texture_amplitude=self.texture_amplitude,
            clinical_effect=self.clinical_effect,
            block_size=self.patch_size,
        )

    def patch_config(self) -> PatchConfig:
        return PatchConfig(self.patch_size, self.stride, self.coverage_threshold)

    def kmeans_config(self) -> KMeansConfig:
        return KMeansConfig(
            k=self.k_per_cohort,
            max_iter=self.kmeans_max_iter,
            rel_tol=self.kmeans_rel_tol,
            n_restarts=self.kmeans_restarts,
            seed=self.seed,
        )

    def cv_config(self) -> CvConfig:
        return CvConfig(self.validation_fraction, self.cv_repeats, self.stratified, self.seed)

    def grid_config(self) -> GridConfig:
        return GridConfig(tuple(self.c_grid), tuple(self.gamma_factors))

    def svm_spec(self) -> SvmSpec:
        return SvmSpec(tol=self.svm_tol, max_passes=self.svm_max_passes)

    def layout(self, available: Optional[Sequence[FeatureKey]] = None) -> FeatureLayout:
        """The default 286-dimensional layout, or the BoW keys of ``available`` if it lacks some of them."""
        default = FeatureLayout.default()
        if available is None or set(default.keys) <= set(available):
            return default
        keys = [key for key in available if key[1].supports_bow]
        if not keys:
            raise DataError("dataset has no corpus callosum or thalamus images")
        return FeatureLayout.for_keys(keys)

    def to_dict(self) -> Dict[str, Any]:
        """Plain values, lists for tuples; suitable for JSON."""
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out


FIELD_NAMES = frozenset(f.name for f in fields(RunConfig))


def _parse_bool(text: str) -> bool:
    word = text.strip().lower()
    if word in TRUE_WORDS:
        return True
    if word in FALSE_WORDS:
        return False
    raise ValueError(f"not a boolean: '{text}'")


def _parse_scalar(text: str, like: Any) -> Any:
    if isinstance(like, bool):
        return _parse_bool(text)
    if isinstance(like, int):
        return int(text.strip())
    if isinstance(like, float):
        return float(text.strip())
    return text.strip()


def parse_value(name: str, text: str) -> Any:
    """Convert the text of one config entry to the field's type."""
    defaults = RunConfig()
    if name not in FIELD_NAMES:
        raise ConfigError(f"unknown config key '{name.upper()}'")
    like = getattr(defaults, name)
    try:
        if isinstance(like, tuple):
            items = [item for item in text.split(",") if item.strip()]
            return tuple(_parse_scalar(item, like[0]) for item in items)
        if like is None:
            return text.strip() or None
        return _parse_scalar(text, like)
    except (ValueError, IndexError) as e:
        raise ConfigError(f"invalid value for {name.upper()}: '{text}' ({e})") from e


def _apply(cfg: RunConfig, entries: Mapping[str, Optional[str]], source: str) -> RunConfig:
    updates = {}
    for key, text in entries.items():
        if text is None:
            raise ConfigError(f"{source}: key '{key}' has no value")
        updates[key.lower()] = parse_value(key.lower(), text)
    return dataclasses.replace(cfg, **updates) if updates else cfg


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """
    Resolve a run configuration.

    Args:
        path: Optional ``KEY=value`` file
        overrides: Explicit values (command-line flags); ``None`` entries are ignored
        environ: Environment to read ``MTBI_BOW_*`` variables from (``os.environ`` by default)

    Returns:
        RunConfig: Resolved, unvalidated configuration
    """
    # Defaults, then the file
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        cfg = _apply(cfg, dotenv_values(path), str(path))
        console.print(f"[blue]Loaded run configuration from {path}")

    # Environment
    environ = os.environ if environ is None else environ
    from_env = {k[len(ENV_PREFIX):]: v for k, v in environ.items() if k.startswith(ENV_PREFIX)}
    cfg = _apply(cfg, from_env, "environment")

    # Command line
    explicit = {k: v for k, v in (overrides or {}).items() if v is not None}
    for key in explicit:
        if key not in FIELD_NAMES:
            raise ConfigError(f"unknown config key '{key.upper()}'")
    return dataclasses.replace(cfg, **explicit) if explicit else cfg


def write_run_config(cfg: RunConfig, path: Union[str, Path]) -> None:
    """Write ``cfg`` in the ``KEY=value`` format read by ``load_run_config``."""
    lines = []
    for name, value in cfg.to_dict().items():
        if isinstance(value, list):
            text = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        elif isinstance(value, bool):
            text = "true" if value else "false"
        elif value is None:
            text = ""
        else:
            text = repr(value) if isinstance(value, float) else str(value)
        lines.append(f"{name.upper()}={text}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
