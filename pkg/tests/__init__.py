"""Test package for popinfer."""
