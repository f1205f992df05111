"""
Tests for run configuration resolution.
"""
import tempfile
import unittest
from pathlib import Path

from src.data_types import RegionId
from src.errors import ConfigError
from src.run_config import RunConfig, load_run_config, parse_value, write_run_config


class TestParsing(unittest.TestCase):
    """Typed parsing of single entries."""

    def test_scalars(self):
        self.assertEqual(parse_value("seed", "42"), 42)
        self.assertEqual(parse_value("mean_shift", "0.25"), 0.25)
        self.assertIs(parse_value("stratified", "no"), False)
        self.assertEqual(parse_value("mode", " mean_baseline "), "mean_baseline")

    def test_lists(self):
        self.assertEqual(parse_value("dims", "1,32,32"), (1, 32, 32))
        self.assertEqual(parse_value("c_grid", "0.5, 2"), (0.5, 2.0))
        self.assertEqual(parse_value("baseline_regions", "CCBody,CCGenu"), ("CCBody", "CCGenu"))

    def test_optional_path(self):
        self.assertIsNone(parse_value("data_dir", ""))
        self.assertEqual(parse_value("data_dir", "/data/cohort"), "/data/cohort")

    def test_unknown_key(self):
        with self.assertRaisesRegex(ConfigError, "unknown config key"):
            parse_value("colour", "blue")
        with self.assertRaisesRegex(ConfigError, "unknown config key"):
            parse_value("validate", "1")

    def test_bad_values(self):
        with self.assertRaises(ConfigError):
            parse_value("seed", "seven")
        with self.assertRaises(ConfigError):
            parse_value("stratified", "maybe")


class TestResolution(unittest.TestCase):
    """Defaults, file, environment and command-line precedence."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "run.env"
        self.path.write_text("SEED=5\nCV_REPEATS=7\nTUNING=once\n", encoding="utf-8")

    def tearDown(self):
        self.tmp.cleanup()

    def test_defaults(self):
        cfg = load_run_config(environ={})
        self.assertEqual(cfg, RunConfig())
        self.assertEqual(cfg.cv_repeats, 50)
        self.assertEqual(cfg.dataset_dir, Path("runs/default/dataset"))

    def test_file_values(self):
        cfg = load_run_config(self.path, environ={})
        self.assertEqual((cfg.seed, cfg.cv_repeats, cfg.tuning), (5, 7, "once"))

    def test_environment_overrides_file(self):
        cfg = load_run_config(self.path, environ={"MTBI_BOW_SEED": "9", "OTHER": "x"})
        self.assertEqual(cfg.seed, 9)
        self.assertEqual(cfg.cv_repeats, 7)

    def test_flags_override_environment(self):
        cfg = load_run_config(self.path, overrides={"seed": 11, "workers": None}, environ={"MTBI_BOW_SEED": "9"})
        self.assertEqual(cfg.seed, 11)
        self.assertEqual(cfg.workers, 1)

    def test_missing_file(self):
        with self.assertRaisesRegex(ConfigError, "not found"):
            load_run_config(Path(self.tmp.name) / "absent.env", environ={})

    def test_unknown_override(self):
        with self.assertRaises(ConfigError):
            load_run_config(overrides={"colour": "blue"}, environ={})

    def test_write_then_load(self):
        cfg = RunConfig(seed=3, dims=(1, 32, 32), c_grid=(0.5,), stratified=False, data_dir=None)
        path = Path(self.tmp.name) / "written.env"
        write_run_config(cfg, path)
        self.assertEqual(load_run_config(path, environ={}), cfg)


class TestValidation(unittest.TestCase):
    """Parameter checks."""

    def test_defaults_are_valid(self):
        RunConfig().validate()

    def test_invalid_values(self):
        for bad in (
            RunConfig(mode="deep"),
            RunConfig(tuning="nested"),
            RunConfig(validation_fraction=1.5),
            RunConfig(cv_repeats=0),
            RunConfig(k_per_cohort=0),
            RunConfig(c_grid=(-1.0,)),
            RunConfig(training_ratios=(1.0,)),
            RunConfig(baseline_regions=("Cerebellum",)),
            RunConfig(n_control=1),
            RunConfig(dims=(1, 8, 8)),
            RunConfig(dims=(2, 64, 32)),
        ):
            with self.assertRaises(ConfigError, msg=repr(bad)):
                bad.validate()

    def test_missing_data_dir(self):
        cfg = RunConfig(data_dir="/nonexistent/cohort")
        with self.assertRaises(ConfigError):
            cfg.validate()
        cfg.validate(check_paths=False)

    def test_module_configs(self):
        cfg = RunConfig(seed=4, patch_size=8, cv_repeats=3)
        self.assertEqual(cfg.synth_config().block_size, 8)
        self.assertEqual(cfg.kmeans_config().seed, 4)
        self.assertEqual(cfg.cv_config().repeats, 3)
        self.assertEqual(
            cfg.regions(),
            (RegionId.Thalamus, RegionId.PrefrontalWM, RegionId.CCBody, RegionId.CCGenu, RegionId.CCSplenium),
        )
        self.assertEqual(cfg.synth_config().regions, tuple(RegionId))
        self.assertEqual(len(cfg.layout().keys), 14)

    def test_synth_regions_add_parents(self):
        """A subregion pulls in the corpus callosum; the BoW regions are always generated."""
        cfg = RunConfig(baseline_regions=("CCBody",))
        self.assertEqual(cfg.synth_regions(), (RegionId.CorpusCallosum, RegionId.Thalamus, RegionId.CCBody))
        cfg = RunConfig(baseline_regions=("Thalamus",))
        self.assertEqual(cfg.synth_regions(), (RegionId.CorpusCallosum, RegionId.Thalamus))


if __name__ == "__main__":
    unittest.main()
