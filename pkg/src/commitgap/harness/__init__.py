"""Experiment matrix, synthetic datasets and reporting."""
