#!/usr/bin/env python3

import os
import shutil
import tempfile
import unittest
from dataclasses import fields

from quanvnet.config import (
    ExperimentConfig,
    get_template_vars,
    load_env,
    save_env,
    set_value,
)
from quanvnet.errors import ConfigError

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
TEMPLATE = os.path.join(REPO_ROOT, "experiment.env.template")


class TestExperimentConfig(unittest.TestCase):
    def setUp(self):
        """Set up a temporary config directory"""
        self.tmp = tempfile.mkdtemp()

    def tearDown(self):
        """Clean up the temporary config directory"""
        shutil.rmtree(self.tmp)

    def write(self, name, text):
        path = os.path.join(self.tmp, name)
        with open(path, "w") as f:
            f.write(text)
        return path

    def test_defaults(self):
        """Test an absent file gives the documented defaults"""
        config = ExperimentConfig.from_file()
        self.assertEqual(config.model_kind, "cnn")
        self.assertEqual(config.filters, 5)
        self.assertIsNone(config.budget)
        self.assertEqual(config.load_topology().num_qubits, 25)

    def test_file_and_overrides(self):
        """Test file values, empty values and flag overrides"""
        path = self.write("run.env", "# desk run\nmodel_kind=qnn\nshots=200\nbudget=\nlearning_rate=0.1\n")
        config = ExperimentConfig.from_file(path, {"shots": 500, "seed": None, "mode": "shots"})
        self.assertEqual(config.model_kind, "qnn")
        self.assertEqual(config.shots, 500)
        self.assertEqual(config.mode, "shots")
        self.assertEqual(config.seed, 0)
        self.assertIsNone(config.budget)
        self.assertEqual(config.learning_rate, 0.1)

    def test_invalid_values(self):
        """Test unknown keys, bad numbers and out-of-range values"""
        for text in ["colour=blue\n", "filters=many\n", "replicas=0\n", "p=5\n", "mode=noisy\n",
                     "topology=nowhere\n", "dataset=missing.csv\n", "budget=0\n"]:
            with self.assertRaises(ConfigError, msg=text):
                ExperimentConfig.from_file(self.write("bad.env", text))
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_file(os.path.join(self.tmp, "absent.env"))

    def test_dataset_relative_to_config(self):
        """Test dataset paths resolve next to the config file"""
        self.write("data.csv", "")
        config = ExperimentConfig.from_file(self.write("run.env", "dataset=data.csv\n"))
        self.assertEqual(config.dataset, os.path.join(self.tmp, "data.csv"))

    def test_topology_file(self):
        """Test topology paths are read from disk"""
        path = self.write("tri.topo", "qubits=3\nedges=(0,1),(1,2)\n")
        config = ExperimentConfig.from_file(self.write("run.env", f"topology={path}\n"))
        self.assertEqual(config.load_topology().num_edges, 2)
        self.assertEqual(len(config.filter_bank()), 5)

    def test_train_config_per_replica(self):
        """Test replicas get consecutive seeds"""
        config = ExperimentConfig(seed=7, max_steps=20)
        self.assertEqual(config.train_config(3).seed, 10)
        self.assertEqual(config.train_config().max_steps, 20)

    def test_bundled_desk_configs(self):
        """Test the shipped desk configs load"""
        qnn = ExperimentConfig.from_file(os.path.join(REPO_ROOT, "configs", "desk_qnn.env"))
        self.assertEqual((qnn.model_kind, qnn.group_size), ("qnn", 20))
        self.assertEqual(qnn.filter_bank()[0].parameter_count, 5)
        cnn = ExperimentConfig.from_file(os.path.join(REPO_ROOT, "configs", "desk_cnn.env"))
        self.assertEqual(cnn.model_kind, "cnn")


class TestConfigFiles(unittest.TestCase):
    def setUp(self):
        """Set up a temporary config file"""
        self.tmp = tempfile.mkdtemp()
        self.path = os.path.join(self.tmp, "experiment.env")
        with open(self.path, "w") as f:
            f.write("# filters\nfilters=5\n\n# seeds\nseed=0\n")

    def tearDown(self):
        """Clean up the temporary config file"""
        shutil.rmtree(self.tmp)

    def test_template_documents_every_key(self):
        """Test the template lists every config field with a description"""
        template = get_template_vars(TEMPLATE)
        self.assertEqual(set(template), {f.name for f in fields(ExperimentConfig)})
        self.assertTrue(all(template.values()))
        self.assertIn("QAOA layers", template["p"])

    def test_save_keeps_comments_and_order(self):
        """Test updates stay in place and new keys are appended"""
        save_env({"filters": "3", "seed": "0", "shots": "10"}, self.path)
        with open(self.path) as f:
            lines = f.read().splitlines()
        self.assertEqual(lines, ["# filters", "filters=3", "", "# seeds", "seed=0", "shots=10"])
        self.assertEqual(load_env(self.path)["filters"], "3")

    def test_set_value_validates(self):
        """Test invalid values are not written"""
        set_value(self.path, "replicas", "4")
        self.assertEqual(load_env(self.path)["replicas"], "4")
        with self.assertRaises(ConfigError):
            set_value(self.path, "replicas", "0")
        self.assertEqual(load_env(self.path)["replicas"], "4")

    def test_missing_file(self):
        """Test an absent config reads as empty"""
        self.assertEqual(load_env(os.path.join(self.tmp, "none.env")), {})


if __name__ == "__main__":
    unittest.main()
