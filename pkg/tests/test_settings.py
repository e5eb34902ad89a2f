import json
import unittest
from pathlib import Path
from tempfile import TemporaryDirectory
from unittest import mock

from config.settings import RunConfig, default_output_dir, load_config, parse_config
from utils.errors import ConfigError


class TestLoadConfig(unittest.TestCase):
    def write(self, td, text):
        path = Path(td) / "config.json"
        path.write_text(text)
        return path

    def test_minimal_config_gets_defaults(self):
        with TemporaryDirectory() as td:
            cfg = load_config(self.write(td, '{"seed": 7}'))
        self.assertEqual(cfg.seed, 7)
        self.assertEqual(cfg.num_clients, 2)
        self.assertEqual(cfg.prune.ratio, 0.6)
        self.assertEqual(cfg.lora.rank, 4)
        self.assertEqual(cfg.fusion.method, "fedavg")
        self.assertIsNone(cfg.cr.max_dirs)
        self.assertEqual(cfg.max_dirs, cfg.lora.rank)
        self.assertEqual(cfg.to_dict()["domains"]["overlap"], 0.8)

    def test_ratio_out_of_range(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config({"prune": {"ratio": 1.5}})
        self.assertIn("prune.ratio", str(ctx.exception))
        self.assertIn("[0.0, 1.0]", str(ctx.exception))

    def test_duplicate_key(self):
        with TemporaryDirectory() as td:
            path = self.write(td, '{"seed": 1, "seed": 2}')
            with self.assertRaises(ConfigError) as ctx:
                load_config(path)
        self.assertIn("duplicate key 'seed'", str(ctx.exception))

    def test_every_problem_reported(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config({"bogus": 1, "lora": {"rank": 0, "extra": True}, "fusion": {"method": "median"}})
        problems = ctx.exception.problems
        self.assertEqual(len(problems), 4)
        joined = "\n".join(problems)
        for key in ("bogus", "lora.rank", "lora.extra", "fusion.method"):
            self.assertIn(key, joined)

    def test_type_errors(self):
        with self.assertRaises(ConfigError):
            parse_config({"seed": "zero"})
        with self.assertRaises(ConfigError):
            parse_config({"cr": {"enabled": 1}})
        with self.assertRaises(ConfigError):
            parse_config({"num_clients": True})

    def test_integer_accepted_for_float_field(self):
        cfg = parse_config({"lora": {"alpha": 16}})
        self.assertIsInstance(cfg.lora.alpha, float)
        self.assertEqual(cfg.lora.alpha, 16.0)

    def test_teacher_rank_must_fit(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config({"num_clients": 4, "domains": {"d_out": 8, "teacher_rank": 2}})
        self.assertIn("teacher_rank", str(ctx.exception))

    def test_seed_override(self):
        with TemporaryDirectory() as td:
            cfg = load_config(self.write(td, '{"seed": 7}'), seed=3)
        self.assertEqual(cfg.seed, 3)

    def test_missing_file(self):
        with TemporaryDirectory() as td:
            with self.assertRaises(ConfigError) as ctx:
                load_config(Path(td) / "nope.json")
        self.assertIn("nope.json", str(ctx.exception))

    def test_invalid_json(self):
        with TemporaryDirectory() as td:
            with self.assertRaises(ConfigError):
                load_config(self.write(td, "{seed: 1"))

    def test_top_level_must_be_object(self):
        with TemporaryDirectory() as td:
            with self.assertRaises(ConfigError):
                load_config(self.write(td, json.dumps([1, 2])))


class TestDefaults(unittest.TestCase):
    def test_output_dir_under_user_data_dir(self):
        with mock.patch("config.settings.user_data_dir", return_value="/data/lorafuse"):
            self.assertEqual(default_output_dir(), str(Path("/data/lorafuse") / "runs"))

    def test_overrides(self):
        cfg = RunConfig().with_overrides(prune={"ratio": 0.2}, cr={"enabled": False})
        self.assertEqual(cfg.prune.ratio, 0.2)
        self.assertFalse(cfg.cr.enabled)
        self.assertEqual(cfg.prune.calibration_size, 32)


if __name__ == "__main__":
    unittest.main()
