"""
Tests for histogram encoding, feature assembly and the mean baseline.
"""
import tempfile
import unittest
from pathlib import Path

import numpy as np

from src.codebook import COHORT_CONTROL, COHORT_MTBI, Codebook, KMeansConfig
from src.cross_validation import CvConfig, cv_splits
from src.data_types import (
    ClinicalRecord,
    Dataset,
    MetricId,
    MetricVolume,
    RegionId,
    RoiMask,
    SubjectData,
)
from src.encoder import (
    FeatureLayout,
    HonestFeatureProvider,
    assemble_features,
    encode_histogram,
    feature_matrix,
    load_feature_matrix,
    mean_baseline_features,
    write_feature_matrix,
)
from src.errors import DataError
from src.patch_extractor import Patch, PatchConfig, extract_subject_patches
from src.synth import SynthConfig, generate

KEY = (MetricId.MK, RegionId.CorpusCallosum)
RECORD = ClinicalRecord("s1", 30.0, 1, 50.0, 55.0, 48.0, 3.0, 1)


def three_word_codebook():
    words = [[0.0, 0.0, 0.0, 0.0], [10.0, 0.0, 0.0, 0.0], [0.0, 10.0, 0.0, 0.0]]
    return Codebook(KEY, words, (COHORT_CONTROL, COHORT_CONTROL, COHORT_MTBI))


def patches_near(rows):
    return [Patch(np.asarray(r, dtype=float), (0, i, 0), KEY, "s1") for i, r in enumerate(rows)]


class TestEncodeHistogram(unittest.TestCase):
    """Nearest-word histograms."""

    def test_relative_frequencies(self):
        """Assignments 2/1/1 over three words give (0.5, 0.25, 0.25)."""
        patches = patches_near([[0.1, 0, 0, 0], [-0.2, 0, 0, 0], [9.0, 0, 0, 0], [0, 11.0, 0, 0]])
        np.testing.assert_allclose(encode_histogram(patches, three_word_codebook()), [0.5, 0.25, 0.25])

    def test_single_word(self):
        """Patches that all fall on word 0 give a one-hot histogram."""
        patches = patches_near([[0.0, 0, 0, 0.1]] * 5)
        np.testing.assert_array_equal(encode_histogram(patches, three_word_codebook()), [1.0, 0.0, 0.0])

    def test_raw_counts(self):
        """Without normalization the histogram holds counts."""
        patches = patches_near([[0.1, 0, 0, 0], [-0.2, 0, 0, 0], [9.0, 0, 0, 0]])
        np.testing.assert_array_equal(encode_histogram(patches, three_word_codebook(), normalize=False), [2, 1, 0])

    def test_permutation_invariant(self):
        """Patch order does not change the histogram."""
        rng = np.random.default_rng(0)
        rows = rng.normal(scale=6.0, size=(20, 4))
        codebook = three_word_codebook()
        first = encode_histogram(patches_near(rows), codebook)
        second = encode_histogram(patches_near(rows[rng.permutation(20)]), codebook)
        np.testing.assert_array_equal(first, second)
        self.assertAlmostEqual(first.sum(), 1.0, places=12)
        self.assertTrue(np.all(first >= 0))

    def test_empty_patch_list(self):
        """No patches is an error, not a zero histogram."""
        with self.assertRaisesRegex(DataError, "no patches for key"):
            encode_histogram([], three_word_codebook())


class TestAssembleFeatures(unittest.TestCase):
    """Feature concatenation."""

    def test_default_layout_dimension(self):
        """The default layout has 14 keys of 20 words plus 6 covariates."""
        layout = FeatureLayout.default()
        self.assertEqual(len(layout.keys), 14)
        histograms = {key: np.full(20, 0.05) for key in layout.keys}
        vector = assemble_features(histograms, RECORD, layout)
        self.assertEqual(vector.values.size, 286)
        self.assertEqual(vector.names[-6:], ("clin.age", "clin.sex", "clin.stroop", "clin.sdmt", "clin.cvlt", "clin.fss"))
        self.assertEqual(vector.names[0], "CC.AWF.word00")

    def test_single_key_dimension(self):
        """One key of 20 words plus covariates gives 26 dimensions."""
        layout = FeatureLayout((KEY,))
        vector = assemble_features({KEY: np.zeros(20)}, RECORD, layout)
        self.assertEqual(vector.values.size, 26)
        np.testing.assert_array_equal(vector.values[20:], RECORD.covariates)
        self.assertEqual(vector.label, 1)

    def test_insertion_order_irrelevant(self):
        """Histogram map order does not change the vector."""
        other = (MetricId.FA, RegionId.Thalamus)
        layout = FeatureLayout((KEY, other))
        a = assemble_features({KEY: np.ones(2), other: np.zeros(2)}, RECORD, layout)
        b = assemble_features({other: np.zeros(2), KEY: np.ones(2)}, RECORD, layout)
        np.testing.assert_array_equal(a.values, b.values)
        self.assertEqual(a.names, b.names)

    def test_missing_and_extra_keys(self):
        """Histograms must cover exactly the layout."""
        other = (MetricId.FA, RegionId.Thalamus)
        layout = FeatureLayout((KEY,))
        with self.assertRaisesRegex(DataError, "missing"):
            assemble_features({}, RECORD, layout)
        with self.assertRaisesRegex(DataError, "extra"):
            assemble_features({KEY: np.zeros(2), other: np.zeros(2)}, RECORD, layout)

    def test_sub_region_rejected(self):
        """Sub-regions of the corpus callosum cannot enter a BoW layout."""
        with self.assertRaises(DataError):
            FeatureLayout(((MetricId.FA, RegionId.CCBody),))


class TestMeanBaseline(unittest.TestCase):
    """Mean-value baseline features."""

    def make_dataset(self, voxels, bits):
        dims = (1, 1, len(voxels))
        subjects = []
        for i, label in enumerate((0, 1)):
            key = (MetricId.AWF, RegionId.CCBody)
            volume = MetricVolume(f"s{i}", MetricId.AWF, dims, voxels)
            mask = RoiMask(RegionId.CCBody, dims, bits)
            record = ClinicalRecord(f"s{i}", 30.0, 0, 50.0, 55.0, 48.0, 3.0, label)
            subjects.append(SubjectData(record, {key: (volume, mask)}))
        return Dataset(tuple(subjects))

    def test_masked_mean(self):
        """The mean covers masked voxels only."""
        dataset = self.make_dataset([1.0, 7.0, 3.0], [1, 0, 1])
        vectors = mean_baseline_features(dataset, [RegionId.CCBody])
        self.assertEqual(vectors[0].names[0], "mean.CCBody.AWF")
        self.assertEqual(vectors[0].values[0], 2.0)
        self.assertEqual(vectors[0].values.size, 7)

    def test_empty_mask(self):
        """An empty mask is reported."""
        dataset = self.make_dataset([1.0, 2.0], [0, 0])
        with self.assertRaisesRegex(DataError, "empty mask"):
            mean_baseline_features(dataset, [RegionId.CCBody])

    def test_absent_region(self):
        """Regions without images are rejected."""
        dataset = self.make_dataset([1.0, 2.0], [1, 1])
        with self.assertRaises(DataError):
            mean_baseline_features(dataset, [RegionId.Thalamus])

    def test_matches_independent_sum(self):
        """Means agree with a reversed-order summation."""
        dataset = generate(SynthConfig(n_control=2, n_mtbi=2, dims=(1, 16, 16), block_size=4, metrics=(MetricId.FA,)))
        vectors = mean_baseline_features(dataset, [RegionId.CorpusCallosum, RegionId.Thalamus])
        for subject, vector in zip(dataset.subjects, vectors):
            for j, key in enumerate(dataset.keys):
                volume, mask = subject.images[key]
                selected = [v for v, b in zip(volume.voxels, mask.bits) if b][::-1]
                self.assertAlmostEqual(vector.values[j], sum(selected) / len(selected), delta=1e-12)


class TestFeatureMatrix(unittest.TestCase):
    """Feature CSV persistence."""

    def test_round_trip(self):
        """Written vectors load back with identical values."""
        dataset = generate(SynthConfig(n_control=2, n_mtbi=2, dims=(1, 16, 16), block_size=4, metrics=(MetricId.MD,)))
        vectors = mean_baseline_features(dataset, [RegionId.CorpusCallosum, RegionId.Thalamus])
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "features.csv"
            write_feature_matrix(vectors, path)
            header = path.read_text(encoding="utf-8").splitlines()[0]
            loaded = load_feature_matrix(path)
        self.assertTrue(header.startswith("subject_id,label,"))
        X, labels, names = feature_matrix(vectors)
        X2, labels2, names2 = feature_matrix(loaded)
        np.testing.assert_array_equal(X, X2)
        np.testing.assert_array_equal(labels, labels2)
        self.assertEqual(names, names2)


class TestHonestFeatures(unittest.TestCase):
    """Codebooks learned inside cross-validation splits."""

    def test_one_matrix_per_split(self):
        """Each split yields a full matrix over every subject."""
        dataset = generate(SynthConfig(n_control=4, n_mtbi=4, dims=(1, 16, 16), block_size=4, metrics=(MetricId.FA,)))
        layout = FeatureLayout.for_keys(dataset.keys)
        patches = extract_subject_patches(dataset, layout.keys, PatchConfig(patch_size=4, stride=4))
        provider = HonestFeatureProvider(dataset, patches, layout, 2, KMeansConfig(n_restarts=2))
        splits = cv_splits(dataset.labels, CvConfig(validation_fraction=0.25, repeats=2))
        matrices = provider.matrices(splits)
        self.assertEqual(len(matrices), 2)
        for X in matrices:
            self.assertEqual(X.shape, (8, 2 * 4 + 6))
        self.assertEqual(len(provider.names), 14)


if __name__ == "__main__":
    unittest.main()
