import tempfile
import unittest
from pathlib import Path

import yaml

from app.utils.config import cli_overrides, dump_config, load_experiment_config
from app.utils.errors import ConfigError

ROOT = Path(__file__).resolve().parents[1]


class TestExperimentConfig(unittest.TestCase):
    def test_default_file(self):
        config = load_experiment_config(ROOT / "configs" / "default.yaml")
        self.assertEqual(config.topology.num_exits, 3)
        self.assertEqual(config.clusters.k, 20)
        self.assertEqual(config.lambdas[0], 0.0)
        self.assertEqual(len(config.lambdas), 17)
        self.assertEqual(config.k_list, (1, 5, 20, 50))

    def test_overrides_reach_every_seed(self):
        overrides = cli_overrides(seed=7, k=4, path_cap=6, out="output/x", lambdas=[1.0, 0.1])
        config = load_experiment_config(ROOT / "configs" / "smoke.yaml", overrides)
        self.assertEqual(
            (config.seed, config.synthetic.seed, config.topology.seed, config.clusters.seed, config.training.seed),
            (7, 7, 7, 7, 7),
        )
        self.assertEqual(config.clusters.k, 4)
        self.assertEqual(config.topology.path_cap, 6)
        self.assertEqual(config.lambdas, (0.1, 1.0))
        self.assertEqual(config.synthetic.num_samples, 600)

    def test_dataset_file_replaces_synthetic(self):
        config = load_experiment_config(None, cli_overrides(dataset_file="records.ndjson"))
        self.assertIsNone(config.synthetic)
        self.assertEqual(config.dataset_file, "records.ndjson")

    def test_unsorted_lambdas(self):
        with self.assertRaises(ConfigError) as ctx:
            load_experiment_config(None, {"lambdas": [0.5, 0.1]})
        self.assertIn("lambdas", str(ctx.exception))

    def test_bad_values(self):
        with self.assertRaises(ConfigError):
            load_experiment_config(None, cli_overrides(k=0))
        with self.assertRaises(ConfigError):
            load_experiment_config(None, {"topology": {"num_exits": 2, "block_flops": [1.0], "bit_widths": [4, 8]}})
        with self.assertRaises(ConfigError):
            load_experiment_config(None, {"gate1_bits": 6})

    def test_missing_and_malformed_files(self):
        with self.assertRaises(ConfigError):
            load_experiment_config(ROOT / "configs" / "absent.yaml")
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "list.yaml"
            path.write_text("- 1\n- 2\n", encoding="utf-8")
            with self.assertRaises(ConfigError):
                load_experiment_config(path)

    def test_dump_round_trip(self):
        config = load_experiment_config(ROOT / "configs" / "smoke.yaml")
        with tempfile.TemporaryDirectory() as tmp:
            path = dump_config(config, Path(tmp) / "config.yaml")
            self.assertIsInstance(yaml.safe_load(path.read_text(encoding="utf-8")), dict)
            again = load_experiment_config(path)
        self.assertEqual(again.config_hash(), config.config_hash())


if __name__ == "__main__":
    unittest.main()
