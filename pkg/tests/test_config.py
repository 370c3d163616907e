import os
import sys
import tempfile
import unittest

import toml

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "modules")))

from config import Config, parse_override  # noqa: E402
from errors import ConfigError  # noqa: E402


class TestParseOverride(unittest.TestCase):
    def test_values_are_toml_literals(self):
        self.assertEqual(parse_override("model.attention.k=32"), (["model", "attention", "k"], 32))
        self.assertEqual(parse_override("train.lr0=4e-4"), (["train", "lr0"], 4e-4))
        self.assertEqual(parse_override("model.attention.residual=false"), (["model", "attention", "residual"], False))
        self.assertEqual(parse_override("model.task = demosaic"), (["model", "task"], "demosaic"))

    def test_malformed(self):
        for bad in ("model.channels", "channels=3", "=3"):
            with self.assertRaises(ConfigError):
                parse_override(bad)


class TestConfig(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "run.toml")
        with open(self.path, "w") as f:
            toml.dump({"model": {"channels": 32, "attention": {"k": 16}}, "train": {"iterations": 10}}, f)

    def tearDown(self):
        self.tmp.cleanup()

    def test_file_and_overrides(self):
        config = Config(self.path, ["model.attention.k=8", "eval.color_space=y"], environ={})
        self.assertEqual(config.get("model", "channels"), 32)
        self.assertEqual(config.get("model.attention", "k"), 8)
        self.assertEqual(config.section("eval"), {"color_space": "y"})
        self.assertEqual(config.section("loss"), {})
        self.assertEqual(config.debug_level, "WARNING")

    def test_defaults_and_missing_keys(self):
        config = Config(environ={})
        self.assertEqual(config.get("paths", "train_dir", "fallback"), "fallback")
        with self.assertRaises(KeyError):
            config.get("paths", "train_dir")

    def test_seed_from_environment(self):
        config = Config(self.path, environ={"VRL_SEED": "7"})
        self.assertEqual(config.get("model", "seed"), 7)
        self.assertEqual(config.get("train", "seed"), 7)
        explicit = Config(self.path, ["train.seed=1"], environ={"VRL_SEED": "7"})
        self.assertEqual(explicit.get("train", "seed"), 1)
        with self.assertRaises(ConfigError):
            Config(environ={"VRL_SEED": "seven"})

    def test_errors(self):
        with self.assertRaises(FileNotFoundError):
            Config(os.path.join(self.tmp.name, "missing.toml"), environ={})
        broken = os.path.join(self.tmp.name, "broken.toml")
        with open(broken, "w") as f:
            f.write("[model\nchannels = ")
        with self.assertRaises(ConfigError):
            Config(broken, environ={})
        with self.assertRaises(ConfigError):
            Config(self.path, ["train.iterations.value=3"], environ={})
        with self.assertRaises(ConfigError):
            Config(self.path, ["train.iterations=3"], environ={}).section("train.iterations")

    def test_dump_round_trip(self):
        config = Config(self.path, environ={})
        out = os.path.join(self.tmp.name, "out", "resolved.toml")
        Config.dump(config.settings, out)
        self.assertEqual(Config(out, environ={}).settings, config.settings)


if __name__ == "__main__":
    unittest.main()
