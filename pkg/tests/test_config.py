"""Tests for configuration settings"""

import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

from scholar_impact.config import Settings, load_settings


class TestSettings(unittest.TestCase):
    """Test suite for Settings configuration"""

    def setUp(self):
        """Set up test fixtures"""
        self.original_env = os.environ.copy()
        self.temp_dir = tempfile.TemporaryDirectory()

    def tearDown(self):
        """Clean up after tests"""
        os.environ.clear()
        os.environ.update(self.original_env)
        self.temp_dir.cleanup()

    def _write_config(self, text: str) -> Path:
        path = Path(self.temp_dir.name) / "settings.toml"
        path.write_text(text, encoding="utf-8")
        return path

    @patch.dict(os.environ, {
        'S2_API_KEY': 'test-key-123',
        'S2_LIVE': 'true',
        'CACHE_DIR': '/tmp/scholar-cache',
        'LLM_MODEL': 'gpt-4o-mini'
    })
    def test_settings_from_env_vars(self):
        """Test loading settings from environment variables"""
        settings = Settings()

        self.assertEqual(settings.s2_api_key, 'test-key-123')
        self.assertTrue(settings.s2_live)
        self.assertEqual(settings.cache_dir, '/tmp/scholar-cache')
        self.assertEqual(settings.llm_model, 'gpt-4o-mini')

    def test_default_settings(self):
        """Test default settings values"""
        settings = Settings()

        self.assertEqual(settings.s2_api_base_url, "https://api.semanticscholar.org/graph/v1")
        self.assertFalse(settings.s2_live)
        self.assertEqual(settings.cohort_capacity, 1000)
        self.assertEqual(settings.half_span_months, 6)
        self.assertEqual(settings.min_cohort_size, 30)
        self.assertEqual(settings.ndcg_k, 20)
        self.assertEqual(settings.llm_model, "gpt-3.5-turbo-0125")

        self.assertEqual(settings.server_name, "scholar-impact")
        self.assertEqual(settings.log_level, "INFO")

    @patch.dict(os.environ, {'LOG_LEVEL': 'DEBUG'})
    def test_log_level_override(self):
        """Test log level override from environment"""
        settings = Settings()
        self.assertEqual(settings.log_level, 'DEBUG')

    @patch.dict(os.environ, {'COHORT_CAPACITY': '250', 'S2_WINDOW_SECONDS': '2.5'})
    def test_settings_type_validation(self):
        """Test that settings properly validate and convert types"""
        settings = Settings()

        self.assertEqual(settings.cohort_capacity, 250)
        self.assertIsInstance(settings.cohort_capacity, int)
        self.assertEqual(settings.s2_window_seconds, 2.5)

    def test_validate_settings_success(self):
        """Test successful settings validation"""
        settings = Settings()
        self.assertTrue(settings.validate_settings())

    def test_validate_settings_bad_log_level(self):
        """Test validation fails for an unknown log level"""
        settings = Settings(log_level='chatty')

        with self.assertRaises(ValueError) as context:
            settings.validate_settings()
        self.assertIn('LOG_LEVEL', str(context.exception))

    def test_require_llm_missing_key(self):
        """Test the chat gateway check fails without a key"""
        settings = Settings(llm_api_key=None)

        with self.assertRaises(ValueError) as context:
            settings.require_llm()
        self.assertIn('LLM_API_KEY', str(context.exception))

    def test_gateway_config_derived(self):
        """Test the gateway configuration mirrors the settings"""
        settings = Settings(s2_api_key='abc', cache_dir='/tmp/cache', s2_max_requests_per_window=3)
        config = settings.gateway_config()

        self.assertEqual(config.api_key.get_secret_value(), 'abc')
        self.assertEqual(config.cache_dir, Path('/tmp/cache'))
        self.assertEqual(config.max_requests_per_window, 3)
        self.assertFalse(config.live)

    def test_llm_config_derived(self):
        """Test the chat configuration mirrors the settings"""
        settings = Settings(llm_api_key='sk-test', llm_model='m', llm_max_workers=2)
        config = settings.llm_config()

        self.assertEqual(config.api_key.get_secret_value(), 'sk-test')
        self.assertEqual(config.model, 'm')
        self.assertEqual(config.max_workers, 2)

    @patch.dict(os.environ, {'SEED': '3', 'NDCG_K': '10'})
    def test_load_settings_file_overrides_env(self):
        """Test TOML values win over environment values"""
        path = self._write_config('seed = 11\nhalf_span_months = 3\n')
        settings = load_settings(path)

        self.assertEqual(settings.seed, 11)
        self.assertEqual(settings.half_span_months, 3)
        self.assertEqual(settings.ndcg_k, 10)

    def test_load_settings_overrides_win(self):
        """Test explicit overrides win and None overrides are ignored"""
        path = self._write_config('seed = 11\ncache_dir = "/tmp/a"\n')
        settings = load_settings(path, seed=5, cache_dir=None)

        self.assertEqual(settings.seed, 5)
        self.assertEqual(settings.cache_dir, '/tmp/a')

    def test_load_settings_rejects_nested_tables(self):
        """Test nested TOML tables are refused"""
        path = self._write_config('[s2]\nlive = true\n')

        with self.assertRaises(ValueError) as context:
            load_settings(path)
        self.assertIn('nested table', str(context.exception))

    def test_load_settings_missing_file(self):
        """Test a missing config file is a configuration error"""
        with self.assertRaises(ValueError):
            load_settings(Path(self.temp_dir.name) / 'missing.toml')


if __name__ == '__main__':
    unittest.main()
