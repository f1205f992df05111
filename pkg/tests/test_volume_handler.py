"""
Tests for volume, mask, clinical-table and dataset-directory storage.
"""
import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from src.data_types import ClinicalRecord, MetricId, MetricVolume, RegionId, RoiMask
from src.errors import DataError
from src.synth import SynthConfig, generate
from src.volume_handler import (
    DatasetHandler,
    load_clinical,
    load_mask,
    load_volume,
    write_clinical,
    write_mask,
    write_volume,
)

HEADER = "subject_id,age,sex,stroop,sdmt,cvlt,fss,label\n"


class TestVolumeStorage(unittest.TestCase):
    """Header/payload volume and mask files."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_volume_round_trip(self):
        """A float32-representable volume is restored exactly."""
        volume = MetricVolume("s1", MetricId.MK, (2, 3, 4), np.arange(24, dtype=np.float32) * 0.25)
        write_volume(volume, self.dir / "s1_MK")
        self.assertEqual(load_volume(self.dir / "s1_MK.vol.json"), volume)
        self.assertEqual(load_volume(self.dir / "s1_MK.vol.raw"), volume)

    def test_payload_is_little_endian_float32(self):
        """The payload holds one 4-byte value per voxel."""
        volume = MetricVolume("s1", MetricId.FA, (1, 2, 2), [1.0, 2.0, 3.0, 4.0])
        write_volume(volume, self.dir / "v")
        raw = (self.dir / "v.vol.raw").read_bytes()
        self.assertEqual(len(raw), 16)
        np.testing.assert_array_equal(np.frombuffer(raw, dtype="<f4"), [1, 2, 3, 4])

    def test_write_rejects_inexact_values(self):
        """Values that float32 cannot hold exactly are refused."""
        volume = MetricVolume("s1", MetricId.FA, (1, 1, 2), [0.1, 1.0])
        with self.assertRaisesRegex(DataError, "voxel 0"):
            write_volume(volume, self.dir / "v")

    def test_short_payload(self):
        """A payload shorter than the header dims is a voxel count mismatch."""
        volume = MetricVolume("s1", MetricId.FA, (1, 2, 2), [1.0, 2.0, 3.0, 4.0])
        write_volume(volume, self.dir / "v")
        np.array([1.0, 2.0, 3.0], dtype="<f4").tofile(self.dir / "v.vol.raw")
        with self.assertRaisesRegex(DataError, "voxel count mismatch"):
            load_volume(self.dir / "v")

    def test_non_finite_payload(self):
        """A NaN in the payload is reported with its index."""
        volume = MetricVolume("s1", MetricId.FA, (1, 2, 2), [1.0, 2.0, 3.0, 4.0])
        write_volume(volume, self.dir / "v")
        np.array([1.0, np.nan, 3.0, 4.0], dtype="<f4").tofile(self.dir / "v.vol.raw")
        with self.assertRaisesRegex(DataError, "index 1"):
            load_volume(self.dir / "v")

    def test_missing_file(self):
        """A missing header raises DataError."""
        with self.assertRaisesRegex(DataError, "missing file"):
            load_volume(self.dir / "absent")

    def test_mask_round_trip(self):
        """Masks are stored one byte per voxel."""
        mask = RoiMask(RegionId.Thalamus, (1, 2, 3), [1, 0, 1, 0, 0, 1])
        write_mask(mask, self.dir / "m")
        self.assertEqual((self.dir / "m.mask.raw").stat().st_size, 6)
        self.assertEqual(load_mask(self.dir / "m"), mask)


class TestClinicalTable(unittest.TestCase):
    """Clinical CSV parsing."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "clinical.csv"

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, body):
        self.path.write_text(HEADER + body, encoding="utf-8")

    def test_parse(self):
        """Rows become records in file order."""
        self.write("c1,30,0,50,55,48,3.2,0\nm1,41.5,1,42,47,40,4.1,1\n")
        records = load_clinical(self.path)
        self.assertEqual([r.subject_id for r in records], ["c1", "m1"])
        self.assertEqual(records[1].age, 41.5)
        self.assertEqual(records[1].label, 1)

    def test_round_trip(self):
        """write_clinical and load_clinical are inverse."""
        records = [
            ClinicalRecord("c1", 30.25, 0, 50.0, 55.0, 48.0, 3.2, 0),
            ClinicalRecord("m1", 41.5, 1, 42.125, 47.0, 40.0, 4.1, 1),
        ]
        write_clinical(records, self.path)
        self.assertEqual(load_clinical(self.path), records)

    def test_wrong_header(self):
        """The header must match exactly."""
        self.path.write_text("subject_id,age,sex,label\nc1,30,0,0\n", encoding="utf-8")
        with self.assertRaisesRegex(DataError, "header"):
            load_clinical(self.path)

    def test_duplicate_subject(self):
        """Duplicate subject ids are rejected."""
        self.write("c1,30,0,50,55,48,3.2,0\nc1,31,0,50,55,48,3.2,0\n")
        with self.assertRaisesRegex(DataError, "duplicate subject"):
            load_clinical(self.path)

    def test_label_outside_range(self):
        """Labels other than 0 and 1 are rejected."""
        self.write("c1,30,0,50,55,48,3.2,2\n")
        with self.assertRaises(DataError):
            load_clinical(self.path)

    def test_header_only(self):
        """A table with the header and no rows has no records."""
        self.write("")
        self.assertEqual(load_clinical(self.path), [])

    def test_unparsable_number(self):
        """Non-numeric covariates name the column."""
        self.write("c1,thirty,0,50,55,48,3.2,0\n")
        with self.assertRaisesRegex(DataError, "age"):
            load_clinical(self.path)


class TestDatasetHandler(unittest.TestCase):
    """Dataset directories."""

    def test_write_then_load(self):
        """A written dataset loads back with identical images and records."""
        cfg = SynthConfig(n_control=2, n_mtbi=2, dims=(1, 8, 8), block_size=4, metrics=(MetricId.FA, MetricId.MD))
        dataset = generate(cfg)
        with tempfile.TemporaryDirectory() as tmp:
            manifest = DatasetHandler(tmp).write(dataset)
            loaded = DatasetHandler(tmp).load()
        self.assertIn("clinical.csv", manifest["files"])
        self.assertEqual(len(manifest["pairs"]), 4)
        self.assertEqual(loaded.subject_ids, dataset.subject_ids)
        self.assertEqual(loaded.keys, dataset.keys)
        for original, restored in zip(dataset.subjects, loaded.subjects):
            self.assertEqual(original.record, restored.record)
            for key in dataset.keys:
                self.assertEqual(original.images[key][0], restored.images[key][0])
                self.assertEqual(original.images[key][1], restored.images[key][1])

    def test_missing_manifest(self):
        """Loading an empty directory raises DataError."""
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaisesRegex(DataError, "missing file"):
                DatasetHandler(tmp).load()

    def test_malformed_manifest(self):
        """Missing or mis-shaped manifest entries raise DataError."""
        cfg = SynthConfig(n_control=2, n_mtbi=2, dims=(1, 8, 8), block_size=4, metrics=(MetricId.FA,))
        dataset = generate(cfg)
        for broken in ({"subjects": []}, {"pairs": [["FA"]], "subjects": []}, {"pairs": [], "subjects": [{}]}):
            with tempfile.TemporaryDirectory() as tmp:
                handler = DatasetHandler(tmp)
                handler.write(dataset)
                handler.manifest_path.write_text(json.dumps(broken), encoding="utf-8")
                with self.assertRaisesRegex(DataError, "malformed manifest"):
                    handler.load()

    def test_volume_header_without_subject(self):
        volume = MetricVolume("s1", MetricId.FA, (1, 2, 2), np.arange(4.0))
        with tempfile.TemporaryDirectory() as tmp:
            stem = Path(tmp) / "s1_FA"
            write_volume(volume, stem)
            header = Path(tmp) / "s1_FA.vol.json"
            header.write_text(json.dumps({"metric": "FA", "dims": [1, 2, 2]}), encoding="utf-8")
            with self.assertRaisesRegex(DataError, "malformed volume header"):
                load_volume(stem)


if __name__ == "__main__":
    unittest.main()
