"""
Configuration management tests for Mimic Explorer
"""

import json
import shutil
import tempfile
import unittest
from pathlib import Path

import mimic
from mimic.config import ConfigManager, ModelConfig, RunConfig, parse_dims
from mimic.errors import ConfigValidationError, UsageError
from utils.validation import ConfigValidator

from .fixtures import tiny_config_dict


class TestRunConfig(unittest.TestCase):
    """Test RunConfig model."""

    def test_defaults(self):
        """Test default configuration values."""
        config = RunConfig()
        self.assertEqual(config.dims, (45, 80))
        self.assertEqual(config.explore.policy, "model-weighted")
        self.assertEqual(config.traces.long_touch_ms, 500)
        self.assertIsNone(config.train.max_steps)

    def test_dict_round_trip(self):
        """Test to_dict/from_dict symmetry."""
        data = tiny_config_dict()
        config = RunConfig.from_dict(data)
        self.assertEqual(config.dims, (12, 20))
        self.assertEqual(config.model.conv_widths, (2, 3, 3, 4, 4))
        self.assertEqual(RunConfig.from_dict(config.to_dict()), config)
        self.assertNotIn("dims", config.to_dict()["model"])

    def test_header(self):
        """Test the provenance header."""
        config = RunConfig(seed=11)
        header = config.header()
        self.assertTrue(header.startswith("mimic-explorer "))
        self.assertIn(" seed=11 ", header)
        self.assertEqual(json.loads(header.split("config=", 1)[1]), config.to_dict())
        self.assertNotIn("\n", header)

    def test_model_validation(self):
        """Test ModelConfig rejects inconsistent architectures."""
        with self.assertRaises(ValueError):
            ModelConfig(conv_widths=(8, 8, 8))
        with self.assertRaises(ValueError):
            ModelConfig(lstm_hidden=(4, 4, 4))
        with self.assertRaises(ValueError):
            ModelConfig(kernel_size=4)
        with self.assertRaises(ValueError):
            ModelConfig(dims=(2, 80))

    def test_parse_dims(self):
        """Test WxH parsing."""
        self.assertEqual(parse_dims("45x80"), (45, 80))
        self.assertEqual(parse_dims("12X20"), (12, 20))
        with self.assertRaises(UsageError):
            parse_dims("45by80")


class TestConfigValidator(unittest.TestCase):
    """Test ConfigValidator."""

    def setUp(self):
        """Set up test fixtures."""
        self.valid_config = tiny_config_dict()

    def test_valid_config(self):
        """Test validation of valid configuration."""
        errors = ConfigValidator.validate_config(self.valid_config)
        self.assertEqual(len(errors), 0)

    def test_invalid_policy(self):
        """Test validation with an unknown policy."""
        self.valid_config["explore"]["policy"] = "clairvoyant"
        errors = ConfigValidator.validate_config(self.valid_config)
        self.assertEqual(len(errors), 1)
        self.assertEqual(errors[0].field, "explore.policy")

    def test_negative_budget(self):
        """Test validation with a non-positive budget."""
        self.valid_config["compare"]["budget"] = 0
        errors = ConfigValidator.validate_config(self.valid_config)
        self.assertGreater(len(errors), 0)

    def test_lstm_width_rule(self):
        """Test the residual width business rule."""
        self.valid_config["model"]["lstm_hidden"] = [2, 3, 4]
        errors = ConfigValidator.validate_config(self.valid_config)
        self.assertEqual([e.field for e in errors], ["model.lstm_hidden"])

    def test_decoder_rules(self):
        """Test decoder stage count and output channel rules."""
        self.valid_config["model"]["deconv_widths"] = [3, 2, 2, 1]
        self.assertEqual(ConfigValidator.validate_config(self.valid_config)[0].field, "model.deconv_widths")
        self.valid_config["model"]["deconv_widths"] = [3, 2, 2, 2, 2]
        self.assertEqual(ConfigValidator.validate_config(self.valid_config)[0].field, "model.deconv_widths")

    def test_even_kernel(self):
        """Test the odd kernel rule."""
        self.valid_config["model"]["kernel_size"] = 2
        errors = ConfigValidator.validate_config(self.valid_config)
        self.assertEqual(errors[0].field, "model.kernel_size")

    def test_too_few_comparison_seeds(self):
        """Test comparison needs five seeds."""
        self.valid_config["compare"]["seeds"] = 4
        errors = ConfigValidator.validate_config(self.valid_config)
        self.assertEqual([e.field for e in errors], ["compare.seeds"])

    def test_single_policy_comparison(self):
        """Test comparison needs two distinct policies."""
        self.valid_config["compare"]["policies"] = ["random", "random"]
        errors = ConfigValidator.validate_config(self.valid_config)
        self.assertEqual(errors[0].field, "compare.policies")


class TestConfigManager(unittest.TestCase):
    """Test ConfigManager."""

    def setUp(self):
        """Set up test fixtures."""
        self.temp_dir = Path(tempfile.mkdtemp())
        self.config_file = self.temp_dir / "run.json"

    def tearDown(self):
        """Clean up test fixtures."""
        shutil.rmtree(self.temp_dir)

    def test_load_packaged_defaults(self):
        """Test loading without a configuration file."""
        config = ConfigManager().load_config()
        self.assertEqual(config, RunConfig())

    def test_defaults_ship_inside_package(self):
        """Test the fallback file sits in the installed package."""
        manager = ConfigManager()
        self.assertTrue(manager.fallback_path.is_file())
        self.assertEqual(manager.fallback_path.parent.parent, Path(mimic.__file__).parent)

    def test_load_json_file(self):
        """Test loading a JSON configuration file."""
        self.config_file.write_text(json.dumps(tiny_config_dict()))
        config = ConfigManager(str(self.config_file)).load_config()
        self.assertEqual(config.seed, 5)
        self.assertEqual(config.train.max_steps, 2)
        self.assertEqual(config.compare.policies, ["model-weighted", "random"])

    def test_load_toml_file(self):
        """Test loading a TOML configuration file."""
        toml_file = self.temp_dir / "run.toml"
        toml_file.write_text(
            "seed = 3\n"
            "dims = [24, 40]\n"
            "\n"
            "[explore]\n"
            "policy = \"random\"\n"
            "budget = 50\n"
        )
        config = ConfigManager(str(toml_file)).load_config()
        self.assertEqual(config.seed, 3)
        self.assertEqual(config.dims, (24, 40))
        self.assertEqual(config.explore.budget, 50)
        self.assertEqual(config.model.conv_widths, RunConfig().model.conv_widths)

    def test_missing_file(self):
        """Test a configuration path that does not exist."""
        with self.assertRaises(UsageError):
            ConfigManager(str(self.temp_dir / "absent.json")).load_config()

    def test_invalid_syntax(self):
        """Test loading a file that is not JSON."""
        self.config_file.write_text("{ not json")
        with self.assertRaises(ConfigValidationError):
            ConfigManager(str(self.config_file)).load_config()

    def test_invalid_values(self):
        """Test loading a file that breaks the schema."""
        data = tiny_config_dict()
        data["workers"] = 0
        self.config_file.write_text(json.dumps(data))
        with self.assertLogs("mimic.config", level="ERROR"):
            with self.assertRaises(ConfigValidationError):
                ConfigManager(str(self.config_file)).load_config()

    def test_apply_overrides(self):
        """Test dotted command line overrides."""
        manager = ConfigManager()
        manager.load_config()
        config = manager.apply_overrides(**{
            "seed": 42,
            "model.seed": 42,
            "dims": (24, 40),
            "explore.budget": 9,
            "paths.checkpoint": None,
        })
        self.assertEqual(config.seed, 42)
        self.assertEqual(config.model.seed, 42)
        self.assertEqual(config.dims, (24, 40))
        self.assertEqual(config.explore.budget, 9)
        self.assertIsNone(config.paths.checkpoint)

    def test_invalid_override(self):
        """Test overrides are validated."""
        manager = ConfigManager()
        with self.assertRaises(ConfigValidationError):
            manager.apply_overrides(**{"explore.policy": "clairvoyant"})

    def test_save_config(self):
        """Test saving and reloading configuration."""
        manager = ConfigManager()
        self.assertFalse(manager.save_config(self.config_file))
        manager.load_config()
        manager.apply_overrides(**{"suite.count": 3})
        self.assertTrue(manager.save_config(self.config_file))
        reloaded = ConfigManager(str(self.config_file)).load_config()
        self.assertEqual(reloaded.suite.count, 3)
        self.assertEqual(reloaded, manager.get_config())


if __name__ == '__main__':
    unittest.main()
