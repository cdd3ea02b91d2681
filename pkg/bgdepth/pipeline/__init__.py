"""Synthetic data, datasets, training, checkpoints and evaluation."""
