"""
Tests for the synthetic cohort generator.
"""
import unittest

import numpy as np

from src.data_types import CC_SUBREGIONS, LABEL_CONTROL, LABEL_MTBI, MetricId, RegionId
from src.errors import ConfigError, DataError
from src.synth import METRIC_LEVELS, SynthConfig, cc_column_groups, generate, make_pattern_pool, subject_plan

SMALL = dict(dims=(1, 16, 16), block_size=4, metrics=(MetricId.FA, MetricId.MK))
ALL_REGIONS = dict(dims=(1, 24, 16), block_size=4, metrics=(MetricId.FA, MetricId.MK), regions=tuple(RegionId))


def roi_means(dataset, key):
    means = []
    for subject in dataset.subjects:
        volume, mask = subject.images[key]
        means.append(volume.voxels[mask.bits].mean())
    return np.array(means)


class TestGenerate(unittest.TestCase):
    """Dataset generation."""

    def test_deterministic(self):
        """The same configuration yields bit-identical datasets."""
        cfg = SynthConfig(n_control=3, n_mtbi=3, seed=11, **SMALL)
        first, second = generate(cfg), generate(cfg)
        for a, b in zip(first.subjects, second.subjects):
            self.assertEqual(a.record, b.record)
            for key in first.keys:
                self.assertEqual(a.images[key][0], b.images[key][0])
                self.assertEqual(a.images[key][1], b.images[key][1])

    def test_worker_count_does_not_change_output(self):
        """Parallel generation matches sequential generation."""
        cfg = SynthConfig(n_control=3, n_mtbi=3, seed=5, **SMALL)
        sequential, parallel = generate(cfg, n_jobs=1), generate(cfg, n_jobs=2)
        for a, b in zip(sequential.subjects, parallel.subjects):
            for key in sequential.keys:
                self.assertEqual(a.images[key][0], b.images[key][0])

    def test_seed_changes_output(self):
        """Different seeds give different voxels."""
        a = generate(SynthConfig(n_control=2, n_mtbi=2, seed=1, **SMALL))
        b = generate(SynthConfig(n_control=2, n_mtbi=2, seed=2, **SMALL))
        key = a.keys[0]
        self.assertFalse(np.array_equal(a.subjects[0].images[key][0].voxels, b.subjects[0].images[key][0].voxels))

    def test_subject_plan(self):
        """Controls come first, then mTBI subjects, with matching labels."""
        cfg = SynthConfig(n_control=2, n_mtbi=3, **SMALL)
        plan = subject_plan(cfg)
        self.assertEqual([sid for sid, _ in plan], ["ctl001", "ctl002", "mtbi001", "mtbi002", "mtbi003"])
        dataset = generate(cfg)
        np.testing.assert_array_equal(dataset.labels, [LABEL_CONTROL] * 2 + [LABEL_MTBI] * 3)

    def test_keys_cover_metrics_and_regions(self):
        """Every configured metric is paired with both regions."""
        dataset = generate(SynthConfig(n_control=2, n_mtbi=2, **SMALL))
        self.assertEqual(len(dataset.keys), 4)
        for subject in dataset.subjects:
            for key in dataset.keys:
                self.assertGreater(subject.images[key][1].count, 0)

    def test_voxels_survive_float32(self):
        """Generated voxels are exactly representable as float32."""
        dataset = generate(SynthConfig(n_control=2, n_mtbi=2, **SMALL))
        voxels = dataset.subjects[0].images[dataset.keys[0]][0].voxels
        np.testing.assert_array_equal(voxels.astype(np.float32).astype(np.float64), voxels)


class TestMeanPreservation(unittest.TestCase):
    """Cohorts differ in texture, not in ROI mean."""

    def test_cohort_means_agree_without_shift(self):
        """With mean_shift 0 the cohort ROI means agree within 4 standard errors."""
        cfg = SynthConfig(n_control=20, n_mtbi=20, seed=3, texture_contrast=1.0, **SMALL)
        dataset = generate(cfg)
        labels = dataset.labels
        for key in dataset.keys:
            means = roi_means(dataset, key)
            control, mtbi = means[labels == 0], means[labels == 1]
            se = np.sqrt(control.var(ddof=1) / len(control) + mtbi.var(ddof=1) / len(mtbi))
            self.assertLess(abs(control.mean() - mtbi.mean()), 4.0 * se + 1e-6)

    def test_roi_mean_near_metric_level(self):
        """ROI means sit at the metric level because texture patterns are zero-mean."""
        dataset = generate(SynthConfig(n_control=4, n_mtbi=4, seed=3, **SMALL))
        key = (MetricId.FA, RegionId.CorpusCallosum)
        self.assertLess(np.max(np.abs(roi_means(dataset, key) - METRIC_LEVELS[MetricId.FA])), 0.3)

    def test_mean_shift(self):
        """mean_shift raises the mTBI ROI means."""
        dataset = generate(SynthConfig(n_control=6, n_mtbi=6, seed=3, mean_shift=2.0, **SMALL))
        means = roi_means(dataset, (MetricId.MK, RegionId.Thalamus))
        labels = dataset.labels
        self.assertGreater(means[labels == 1].mean() - means[labels == 0].mean(), 1.5)


class TestSubregions(unittest.TestCase):
    """Prefrontal white matter and corpus callosum subregions."""

    def test_column_groups(self):
        self.assertEqual(cc_column_groups(0, 4), [(0, 1), (1, 3), (3, 4)])
        self.assertEqual(cc_column_groups(2, 3), [(2, 3), (3, 4), (4, 5)])

    def test_subregions_partition_the_corpus_callosum(self):
        """Genu, body and splenium are disjoint, non-empty and cover the whole mask, anterior first."""
        dataset = generate(SynthConfig(n_control=3, n_mtbi=3, seed=2, **ALL_REGIONS))
        self.assertEqual(len(dataset.keys), 2 * 6)
        for subject in dataset.subjects:
            whole = subject.images[(MetricId.FA, RegionId.CorpusCallosum)][1].bits
            parts = [subject.images[(MetricId.FA, region)][1].bits for region in CC_SUBREGIONS]
            self.assertTrue(all(part.any() for part in parts))
            np.testing.assert_array_equal(parts[0] | parts[1] | parts[2], whole)
            self.assertEqual(sum(int(part.sum()) for part in parts), int(whole.sum()))
            columns = [np.flatnonzero(part.reshape(-1, 16).any(axis=0)) for part in parts]
            self.assertLess(columns[0].max(), columns[1].min())
            self.assertLess(columns[1].max(), columns[2].min())
            prefrontal = subject.images[(MetricId.FA, RegionId.PrefrontalWM)][1].bits
            self.assertTrue(prefrontal.any())
            self.assertFalse((prefrontal & whole).any())

    def test_subregion_means_carry_no_texture(self):
        """Subregion and prefrontal ROI means sit at the metric level in both cohorts."""
        dataset = generate(SynthConfig(n_control=4, n_mtbi=4, seed=6, **ALL_REGIONS))
        for region in CC_SUBREGIONS + (RegionId.PrefrontalWM,):
            means = roi_means(dataset, (MetricId.MK, region))
            self.assertLess(np.max(np.abs(means - METRIC_LEVELS[MetricId.MK])), 0.3, msg=region.value)

    def test_subregions_need_the_whole_region(self):
        with self.assertRaises(ConfigError):
            SynthConfig(dims=(1, 24, 16), block_size=4, regions=(RegionId.Thalamus, RegionId.CCBody)).validate()

    def test_too_narrow_to_split(self):
        """Three subregions need at least three block columns."""
        with self.assertRaises(DataError):
            SynthConfig(dims=(1, 24, 8), block_size=4, regions=(RegionId.CorpusCallosum, RegionId.CCGenu)).validate()


class TestPatterns(unittest.TestCase):
    """Texture pattern pools."""

    def test_patterns_zero_mean_unit_rms(self):
        """Every pattern has zero mean and unit RMS."""
        cfg = SynthConfig(**SMALL)
        pool = make_pattern_pool(cfg, MetricId.FA, RegionId.Thalamus)
        for stack in pool.values():
            for pattern in stack:
                self.assertAlmostEqual(pattern.mean(), 0.0, places=12)
                self.assertAlmostEqual(np.sqrt(np.mean(pattern ** 2)), 1.0, places=12)


class TestValidation(unittest.TestCase):
    """Configuration checks."""

    def test_too_few_subjects(self):
        """Each cohort needs at least two subjects."""
        with self.assertRaises(ConfigError):
            SynthConfig(n_control=1, **SMALL).validate()

    def test_dims_too_small(self):
        """Dims that cannot hold one patch per region are rejected."""
        with self.assertRaises(DataError):
            SynthConfig(dims=(1, 8, 8), block_size=16).validate()


if __name__ == "__main__":
    unittest.main()
