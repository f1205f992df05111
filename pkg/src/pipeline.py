"""
Stage orchestration for mTBI-BoW.

Each stage reads what it needs from memory when an earlier stage of the same
run produced it, otherwise from the output directory, so stages can be run
one command at a time. Codebook files are reused whenever their stored source
hash matches the current patches and k-means settings.
"""
import dataclasses
import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from rich.console import Console

from src import __version__
from src.codebook import (
    Codebook,
    codebook_filename,
    codebook_source_hash,
    learn_codebook,
    load_codebook,
    save_codebook,
    split_by_cohort,
)
from src.cross_validation import Features, best_result, cv_splits, evaluate_pairs, signed_labels
from src.data_types import Dataset, FeatureKey, key_name
from src.encoder import (
    FeatureLayout,
    HonestFeatureProvider,
    SubjectFeatureVector,
    encode_dataset,
    feature_matrix,
    load_feature_matrix,
    mean_baseline_features,
    write_feature_matrix,
)
from src.errors import DataError
from src.evaluation import (
    cohort_histogram_contrast,
    plot_histogram_contrast,
    plot_subset_size_curve,
    plot_training_ratio_curve,
    render_words,
    subset_size_curve,
    summarize_selection,
    training_ratio_curve,
    write_table,
)
from src.feature_selector import (
    SelectionTrace,
    greedy_forward_select,
    load_trace,
    save_trace,
    write_selection_report,
)
from src.metrics import chance_interval
from src.patch_extractor import extract_subject_patches, patch_matrix, write_patch_dump
from src.run_config import RunConfig
from src.svm_classifier import SvmSpec, save_model, scaler_apply, scaler_fit, svm_train
from src.synth import generate, write_dataset
from src.volume_handler import DatasetHandler

console = Console()

RUN_RECORD = "run.json"
FEATURES_CSV = "features/features.csv"
SELECTION_CSV = "selection/selection.csv"
TRACE_JSON = "selection/trace.json"
FEATURES_SOURCE = "features/source.json"
MODEL_JSON = "models/svm_model.json"


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def stable_hash(payload: Dict[str, Any]) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def stored_source_hash(path: Path) -> Optional[str]:
    """The ``source_hash`` recorded in a JSON file, or None when it is absent or unreadable."""
    if not path.exists():
        return None
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError):
        return None
    return payload.get("source_hash") if isinstance(payload, dict) else None


def _write_json(path: Path, payload: Dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")


class Pipeline:
    """Runs the stages of one configuration against one output directory."""

    def __init__(self, cfg: RunConfig):
        """
        Initialize the Pipeline.

        Args:
            cfg: Validated run configuration
        """
        self.cfg = cfg
        self.out_dir = cfg.out_dir
        self.n_jobs = cfg.workers
        self.stages_run: List[str] = []
        self._dataset: Optional[Dataset] = None
        self._layout: Optional[FeatureLayout] = None
        self._patches: Optional[List[Dict[FeatureKey, list]]] = None
        self._codebooks: Optional[Dict[FeatureKey, Codebook]] = None
        self._vectors: Optional[List[SubjectFeatureVector]] = None
        self._trace: Optional[SelectionTrace] = None
        self._split_matrices: Optional[List[np.ndarray]] = None
        self._honest: Optional[HonestFeatureProvider] = None
        self._fingerprint: Optional[str] = None

    # Inputs

    def dataset(self) -> Dataset:
        if self._dataset is None:
            console.print(f"[yellow]Loading dataset from {self.cfg.dataset_dir}...")
            self._dataset = DatasetHandler(self.cfg.dataset_dir).load()
        return self._dataset

    def layout(self) -> FeatureLayout:
        if self._layout is None:
            self._layout = self.cfg.layout(self.dataset().keys)
        return self._layout

    def patches(self) -> List[Dict[FeatureKey, list]]:
        if self._patches is None:
            self._patches = extract_subject_patches(
                self.dataset(), self.layout().keys, self.cfg.patch_config(), self.n_jobs
            )
        return self._patches

    def codebooks(self) -> Dict[FeatureKey, Codebook]:
        if self._codebooks is None:
            self.codebook_stage()
        return self._codebooks

    def vectors(self) -> List[SubjectFeatureVector]:
        if self._vectors is None:
            path = self.out_dir / FEATURES_CSV
            if path.exists() and stored_source_hash(self.out_dir / FEATURES_SOURCE) == self.features_hash():
                console.print(f"[yellow]Reusing feature matrix {path}")
                self._vectors = load_feature_matrix(path)
            else:
                if path.exists():
                    console.print(f"[yellow]Feature matrix {path} was built from other inputs; encoding again")
                self.encode_stage()
        return self._vectors

    def trace(self) -> SelectionTrace:
        if self._trace is None:
            path = self.out_dir / TRACE_JSON
            if path.exists() and stored_source_hash(path) == self.selection_hash():
                self._trace = load_trace(path)
            else:
                if path.exists():
                    console.print(f"[yellow]Selection trace {path} was built from other inputs; selecting again")
                self.select_stage()
        return self._trace

    def honest_provider(self) -> HonestFeatureProvider:
        if self._honest is None:
            self._honest = HonestFeatureProvider(
                self.dataset(),
                self.patches(),
                self.layout(),
                self.cfg.k_per_cohort,
                self.cfg.kmeans_config(),
                self.cfg.normalize_histograms,
                self.n_jobs,
            )
        return self._honest

    # Source hashes

    def dataset_fingerprint(self) -> str:
        """sha256 over the relative path and content of every file in the dataset directory."""
        if self._fingerprint is None:
            root = self.cfg.dataset_dir
            digest = hashlib.sha256()
            if root.is_dir():
                for path in sorted(root.rglob("*")):
                    if path.is_file():
                        digest.update(path.relative_to(root).as_posix().encode("utf-8"))
                        digest.update(file_sha256(path).encode("ascii"))
            self._fingerprint = digest.hexdigest()
        return self._fingerprint

    def features_hash(self) -> str:
        """Identity of the feature matrix: dataset content plus every setting encoding depends on."""
        cfg = self.cfg
        return stable_hash(
            {
                "dataset": self.dataset_fingerprint(),
                "mode": cfg.mode,
                "patch": [cfg.patch_size, cfg.stride, cfg.coverage_threshold],
                "kmeans": [cfg.k_per_cohort, cfg.kmeans_max_iter, cfg.kmeans_rel_tol, cfg.kmeans_restarts, cfg.seed],
                "normalize": cfg.normalize_histograms,
                "baseline_regions": list(cfg.baseline_regions),
            }
        )

    def selection_hash(self) -> str:
        """Identity of the selection trace: the features plus the split, grid and search settings."""
        cfg = self.cfg
        return stable_hash(
            {
                "features": self.features_hash(),
                "honest_codebooks": cfg.honest_codebooks,
                "cv": [cfg.validation_fraction, cfg.cv_repeats, cfg.stratified, cfg.seed],
                "grid": [list(cfg.c_grid), list(cfg.gamma_factors)],
                "svm": [cfg.svm_tol, cfg.svm_max_passes],
                "tuning": cfg.tuning,
                "max_features": cfg.max_features,
            }
        )

    # Stages

    def synth_stage(self) -> Dataset:
        """Generate the synthetic cohort and write it to the dataset directory."""
        dataset = generate(self.cfg.synth_config(), self.n_jobs)
        write_dataset(dataset, self.cfg.dataset_dir)
        self._dataset = dataset
        self._layout = None
        self._fingerprint = None
        self.stages_run.append("synth")
        return dataset

    def extract_stage(self) -> None:
        """Extract patches and write per-subject counts (and optionally every patch)."""
        dataset = self.dataset()
        patches = self.patches()
        rows = [
            (subject.subject_id, key[0].value, key[1].value, len(subject_patches[key]))
            for subject, subject_patches in zip(dataset.subjects, patches)
            for key in self.layout().keys
        ]
        counts = pd.DataFrame(rows, columns=["subject_id", "metric", "region", "n_patches"])
        write_table(counts, self.out_dir / "patches" / "patch_counts.csv")
        if self.cfg.write_patch_dump:
            flat = [p for subject_patches in patches for key in self.layout().keys for p in subject_patches[key]]
            write_patch_dump(flat, self.out_dir / "patches" / "patches.csv")
        console.print(f"[green]Extracted {int(counts['n_patches'].sum())} patches over {len(dataset)} subjects")
        self.stages_run.append("extract")

    def codebook_stage(self) -> Dict[FeatureKey, Codebook]:
        """Learn (or reuse) one codebook per layout key on all subjects."""
        if self.cfg.mode != "bow":
            console.print("[yellow]Mean-baseline mode: no codebooks needed")
            self._codebooks = {}
            return self._codebooks
        kmeans_cfg = self.cfg.kmeans_config()
        k = self.cfg.k_per_cohort
        labels = self.dataset().labels
        directory = self.out_dir / "codebooks"

        codebooks: Dict[FeatureKey, Codebook] = {}
        pending = []
        for key in self.layout().keys:
            control, mtbi = split_by_cohort(self.patches(), labels, key)
            source_hash = codebook_source_hash(patch_matrix(control), patch_matrix(mtbi), key, k, kmeans_cfg)
            path = directory / codebook_filename(key)
            if path.exists():
                existing = load_codebook(path)
                if existing.source_hash == source_hash:
                    codebooks[key] = existing
                    continue
            pending.append((key, control, mtbi))

        if len(pending) < len(self.layout().keys):
            console.print(f"[yellow]Reusing {len(self.layout().keys) - len(pending)} codebooks from {directory}")
        if pending:
            console.print(f"[yellow]Learning {len(pending)} codebooks ({k} words per cohort)...")
            learned = Parallel(n_jobs=self.n_jobs)(
                delayed(learn_codebook)(control, mtbi, key, k, kmeans_cfg) for key, control, mtbi in pending
            )
            for (key, _, _), codebook in zip(pending, learned):
                save_codebook(codebook, directory / codebook_filename(key))
                codebooks[key] = codebook
        self._codebooks = {key: codebooks[key] for key in self.layout().keys}
        console.print(f"[green]Codebooks ready for {len(self._codebooks)} (metric, region) pairs")
        self.stages_run.append("codebook")
        return self._codebooks

    def encode_stage(self) -> List[SubjectFeatureVector]:
        """Write the feature matrix of the configured mode."""
        if self.cfg.mode == "bow":
            vectors = encode_dataset(
                self.dataset(),
                self.patches(),
                self.codebooks(),
                self.layout(),
                self.cfg.normalize_histograms,
                self.n_jobs,
            )
        else:
            vectors = mean_baseline_features(self.dataset(), self.cfg.regions())
        write_feature_matrix(vectors, self.out_dir / FEATURES_CSV)
        _write_json(self.out_dir / FEATURES_SOURCE, {"source_hash": self.features_hash()})
        self._vectors = vectors
        self.stages_run.append("encode")
        return vectors

    def _split_features(self, y: np.ndarray) -> List[np.ndarray]:
        """One matrix per CV repeat, codebooks learned on that repeat's training subjects."""
        if self._split_matrices is None:
            self._split_matrices = self.honest_provider().matrices(cv_splits(y, self.cfg.cv_config()))
        return self._split_matrices

    def _selection_features(self, X: np.ndarray, y: np.ndarray) -> Features:
        """The global matrix, or one matrix per CV repeat when codebooks are learned inside splits."""
        if self.cfg.mode != "bow" or not self.cfg.honest_codebooks:
            return X
        return self._split_features(y)

    def select_stage(self) -> SelectionTrace:
        """Greedy forward selection, then the selection report and trace."""
        X, y, names = feature_matrix(self.vectors())
        features = self._selection_features(X, y)
        max_size = min(self.cfg.max_features, X.shape[1])
        console.print(f"[yellow]Selecting up to {max_size} of {X.shape[1]} features ({self.cfg.tuning} tuning)...")
        trace = greedy_forward_select(
            features,
            y,
            self.cfg.cv_config(),
            max_size,
            spec=self.cfg.svm_spec(),
            grid=self.cfg.grid_config(),
            tuning=self.cfg.tuning,
            names=names,
            n_jobs=self.n_jobs,
        )
        trace = dataclasses.replace(trace, source_hash=self.selection_hash())
        write_selection_report(trace, self.out_dir / SELECTION_CSV)
        save_trace(trace, self.out_dir / TRACE_JSON)
        self._trace = trace
        self.stages_run.append("select")
        return trace

    def _full_pool_summary(self, features: Features, y: np.ndarray) -> Dict[str, Any]:
        """Grid-searched repeated-CV score of every feature at once."""
        spec = self.cfg.svm_spec()
        results = evaluate_pairs(
            features,
            y,
            self.cfg.cv_config(),
            self.cfg.grid_config().pairs(),
            spec.tol,
            spec.max_passes,
            n_jobs=self.n_jobs,
        )
        best = best_result(results)
        return {
            "accuracy": best.mean_accuracy,
            "sensitivity": best.mean_sensitivity,
            "specificity": best.mean_specificity,
            "C": best.C,
            "gamma_scale": best.gamma_scale,
            "n_features": int(features.shape[1] if isinstance(features, np.ndarray) else features[0].shape[1]),
        }

    def _full_pool_report(self, X: np.ndarray, y: np.ndarray) -> Dict[str, Any]:
        """
        Full-pool scores next to the chance interval of the validation sets.

        BoW runs are scored with codebooks learned on all subjects and with
        codebooks learned inside every split, whatever the configured mode.
        Global codebooks have seen the validation subjects' patches, so only
        the per-split score is a fair estimate.

        Returns:
            Dict[str, Any]: ``full_pool`` (configured mode), ``chance_interval``
            and, for BoW, ``codebook_modes`` with both scores
        """
        splits = cv_splits(y, self.cfg.cv_config())
        low, high = chance_interval(y, len(splits[0][1]))
        report: Dict[str, Any] = {"chance_interval": [low, high]}
        if self.cfg.mode != "bow":
            report["full_pool"] = self._full_pool_summary(X, y)
            report["full_pool"]["inside_chance_interval"] = low <= report["full_pool"]["accuracy"] <= high
            return report

        modes = {"global": self._full_pool_summary(X, y), "honest": self._full_pool_summary(self._split_features(y), y)}
        for entry in modes.values():
            entry["inside_chance_interval"] = low <= entry["accuracy"] <= high
        if modes["global"]["accuracy"] > high and modes["honest"]["inside_chance_interval"]:
            console.print(
                f"[yellow]Warning: global codebooks score {modes['global']['accuracy']:.4f} but per-split codebooks "
                f"{modes['honest']['accuracy']:.4f}, inside the chance interval [{low:.4f}, {high:.4f}]"
            )
        report["codebook_modes"] = modes
        report["full_pool"] = modes["honest" if self.cfg.honest_codebooks else "global"]
        return report

    def evaluate_stage(self) -> Dict[str, Any]:
        """Curves, histogram contrast, word images and the run summary."""
        X, y, names = feature_matrix(self.vectors())
        trace = self.trace()
        directory = self.out_dir / "evaluation"

        sizes = subset_size_curve(trace)
        write_table(sizes, directory / "subset_size.csv")
        plot_subset_size_curve(sizes, directory / "subset_size.svg")

        if len(trace):
            columns = trace.indices
            last = trace.steps[-1]
            spec = SvmSpec(last.C, last.gamma_scale, self.cfg.svm_tol, self.cfg.svm_max_passes)
        else:
            columns, spec = None, self.cfg.svm_spec()
        honest = self.honest_provider() if self.cfg.mode == "bow" and self.cfg.honest_codebooks else None
        ratios = training_ratio_curve(
            X, y, self.cfg.training_ratios, self.cfg.cv_config(), spec, columns, self.n_jobs, honest
        )
        write_table(ratios, directory / "training_ratio.csv")
        plot_training_ratio_curve(ratios, directory / "training_ratio.svg")

        contrast = cohort_histogram_contrast(X, y, names)
        write_table(contrast, directory / "histogram_contrast.csv")
        plot_histogram_contrast(contrast, directory / "histogram_contrast.svg")

        if self.cfg.mode == "bow":
            for key, codebook in self.codebooks().items():
                render_words(codebook, directory / "words" / key_name(key))

        summary = {
            "mode": self.cfg.mode,
            "honest_codebooks": self.cfg.honest_codebooks,
            "selection": summarize_selection(trace),
        }
        summary.update(self._full_pool_report(X, y))
        _write_json(directory / "summary.json", summary)
        console.print(
            f"[green]Full-pool accuracy {summary['full_pool']['accuracy']:.4f}; "
            f"best subset {summary['selection']['best_subset_accuracy']}"
        )
        self.stages_run.append("evaluate")
        return summary

    def model_stage(self) -> Optional[Path]:
        """Train the final SVM on the selected features over all subjects."""
        trace = self.trace()
        if not len(trace):
            console.print("[yellow]Empty selection: no final model trained")
            return None
        X, y, names = feature_matrix(self.vectors())
        columns = trace.indices
        last = trace.steps[-1]
        scaler = scaler_fit(X[:, columns])
        model = svm_train(
            scaler_apply(scaler, X[:, columns]),
            signed_labels(y),
            C=last.C,
            gamma=last.gamma_scale / len(columns),
            tol=self.cfg.svm_tol,
            max_passes=self.cfg.svm_max_passes,
        )
        path = self.out_dir / MODEL_JSON
        save_model(model, path, scaler, [names[i] for i in columns])
        console.print(f"[green]Final model with {len(model.dual_coefs)} support vectors written to {path}")
        self.stages_run.append("model")
        return path

    def run_all(self, synthesize: bool = True) -> Dict[str, Any]:
        """Chain every stage; synthesize data first unless a dataset directory is configured."""
        # Build the features
        if synthesize and not self.cfg.data_dir:
            self.synth_stage()
        self.extract_stage()
        if self.cfg.mode == "bow":
            self.codebook_stage()
        self.encode_stage()

        # Select, report and fit
        self.select_stage()
        self.evaluate_stage()
        self.model_stage()

        # Hash what was written
        return self.write_run_record()

    # Provenance

    def artifact_hashes(self) -> Dict[str, str]:
        """sha256 of every file under the output directory except the run record, by relative path."""
        if not self.out_dir.exists():
            return {}
        hashes = {}
        for path in sorted(self.out_dir.rglob("*")):
            if path.is_file() and path.name != RUN_RECORD:
                hashes[path.relative_to(self.out_dir).as_posix()] = file_sha256(path)
        return dict(sorted(hashes.items()))

    def write_run_record(self) -> Dict[str, Any]:
        record = {
            "version": __version__,
            "seed": self.cfg.seed,
            "config": self.cfg.to_dict(),
            "stages": list(self.stages_run),
            "artifacts": self.artifact_hashes(),
        }
        _write_json(self.out_dir / RUN_RECORD, record)
        console.print(f"[green]Run record written to {self.out_dir / RUN_RECORD}")
        return record


def load_run_record(out_dir: Path) -> Dict[str, Any]:
    path = Path(out_dir) / RUN_RECORD
    if not path.exists():
        raise DataError(f"missing file: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            record = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        console.print(f"[red]Error reading run record {path}: {e}")
        raise DataError(f"unreadable run record {path}: {e}") from e
    if not isinstance(record, dict):
        raise DataError(f"run record {path} must be a JSON object")
    return record
