"""Tests for popinfer core functionality."""

import contextvars
import unittest
from unittest.mock import patch

from popinfer.core import (
    generate_run_id,
    get_config,
    get_run_id,
    init,
    is_initialized,
    reset,
    set_run_id,
)
from popinfer.dci_linear import predictability_spectrum
from popinfer.gaussian import make_gaussian, make_linear_map
from popinfer.kde import fit_kde


class TestCore(unittest.TestCase):
    """Test the core functionality of popinfer."""

    def setUp(self):
        """Set up the test environment."""
        reset()

    def tearDown(self):
        reset()

    @patch("popinfer.logging.setup_logging")
    def test_init(self, mock_setup_logging):
        """Test initialization of popinfer."""
        self.assertFalse(is_initialized())

        # Test with default values
        init()
        config = get_config()
        self.assertTrue(is_initialized())
        self.assertEqual(config.get("predictability_tolerance"), 1e-8)
        self.assertEqual(config.get("kde_bandwidth"), "scott")
        mock_setup_logging.assert_called_with(level="INFO", json_logs=False)

        # Test with custom values
        init(log_level="DEBUG", json_logs=True, kde_bandwidth="silverman", ood_alpha=0.01)
        self.assertEqual(config.get("kde_bandwidth"), "silverman")
        self.assertEqual(config.get("ood_alpha"), 0.01)
        mock_setup_logging.assert_called_with(level="DEBUG", json_logs=True)

    def test_reset(self):
        """Test that reset restores the defaults."""
        get_config()["kde_bandwidth"] = "silverman"
        reset()
        self.assertEqual(get_config()["kde_bandwidth"], "scott")
        self.assertFalse(is_initialized())

    def test_run_id(self):
        """Test run ID generation and management."""
        run_id = generate_run_id()
        self.assertIsInstance(run_id, str)
        self.assertEqual(len(run_id), 36)  # UUID4 length

        set_run_id(run_id)
        self.assertEqual(get_run_id(), run_id)

        set_run_id("test-run-id")
        self.assertEqual(get_run_id(), "test-run-id")

        # A missing ID is generated
        generated = set_run_id()
        self.assertEqual(len(generated), 36)
        self.assertEqual(get_run_id(), generated)

    def test_get_run_id_not_set(self):
        """Test getting the run ID in a fresh context."""
        self.assertEqual(contextvars.Context().run(get_run_id), "")

    def test_configured_tolerance(self):
        """Test that the predictability check uses the configured tolerance by default."""
        init_density = make_gaussian([0.4, 0.0], [[0.15, 0.0], [0.0, 0.15]])
        spectrum_map = make_linear_map([[2.0, -1.0]])
        observed = make_gaussian([0.1], [[0.3]])
        get_config()["predictability_tolerance"] = 1e-3
        self.assertEqual(predictability_spectrum(init_density, spectrum_map, observed).tolerance, 1e-3)

    def test_configured_bandwidth(self):
        """Test that KDE fitting uses the configured bandwidth rule by default."""
        samples = [[0.0], [1.0], [3.0], [4.0]]
        get_config()["kde_bandwidth"] = "silverman"
        silverman = fit_kde(samples, bandwidth="silverman").bandwidths
        self.assertEqual(list(fit_kde(samples).bandwidths), list(silverman))

    @patch("popinfer.core.logger")
    def test_init_logs_config(self, mock_logger):
        """Test that initialization logs the configuration."""
        with patch("popinfer.logging.setup_logging"):
            init(log_level="WARNING")
        message = mock_logger.debug.call_args[0][0]
        self.assertTrue(message.startswith("popinfer initialized with config:"))
        self.assertIn("'log_level': 'WARNING'", message)


if __name__ == "__main__":
    unittest.main()
