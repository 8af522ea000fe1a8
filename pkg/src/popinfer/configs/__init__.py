"""Experiment configs shipped with popinfer."""
