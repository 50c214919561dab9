"""
Tests for configuration loading and merging.
"""

import json
import os
import shutil
import tempfile
import unittest
from pathlib import Path
from unittest import mock

from fairprobe.config import CONFIG_ENV_VAR, ToolkitConfig, load_config
from fairprobe.errors import InvalidConfig


class TestConfig(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.test_dir = Path(tempfile.mkdtemp())

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.test_dir)

    def write(self, name, data):
        path = self.test_dir / name
        path.write_text(json.dumps(data), encoding='utf-8')
        return path

    def test_packaged_defaults(self):
        with mock.patch.dict(os.environ, {}, clear=False):
            os.environ.pop(CONFIG_ENV_VAR, None)
            config = load_config()
        self.assertEqual(config.validation.tolerance, 1e-9)
        self.assertEqual(config.estimator.condition_threshold, 1e12)
        self.assertEqual(config.simulation.se_multiplier, 4.0)
        self.assertEqual(config.probing.rbf_max_samples, 50_000)
        self.assertEqual(config.logging.level, 'INFO')
        self.assertEqual(config.to_dict(), ToolkitConfig().to_dict())

    def test_user_file_merged_by_section(self):
        path = self.write('user.json', {'simulation': {'threads': 4}, 'cli': {'percent_scale': False}})
        config = load_config(path)
        self.assertEqual(config.simulation.threads, 4)
        self.assertEqual(config.simulation.cov_slack, 0.05)
        self.assertFalse(config.cli.percent_scale)

    def test_environment_variable(self):
        path = self.write('env.json', {'probing': {'knn_k': 5}})
        with mock.patch.dict(os.environ, {CONFIG_ENV_VAR: str(path)}):
            self.assertEqual(load_config().probing.knn_k, 5)

    def test_unknown_keys(self):
        with self.assertRaises(InvalidConfig):
            load_config(self.write('bad_key.json', {'simulation': {'speed': 'fast'}}))
        with self.assertRaises(InvalidConfig):
            load_config(self.write('bad_section.json', {'rendering': {}}))

    def test_unreadable(self):
        path = self.test_dir / 'broken.json'
        path.write_text('{', encoding='utf-8')
        with self.assertRaises(InvalidConfig):
            load_config(path)


if __name__ == '__main__':
    unittest.main()
