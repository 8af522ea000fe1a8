#!/usr/bin/env python
"""Run all tests for popinfer."""

import sys
import unittest

if __name__ == "__main__":
    # Discover and run all tests
    test_suite = unittest.defaultTestLoader.discover("tests")
    test_runner = unittest.TextTestRunner(verbosity=2)
    result = test_runner.run(test_suite)
    sys.exit(0 if result.wasSuccessful() else 1)
