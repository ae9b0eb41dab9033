"""Backtracking counterfactuals on invertible structural causal models."""

from ._backtrack import Error, Model, generate_dataset, read_csv, train

__all__ = ["Error", "Model", "generate_dataset", "read_csv", "train"]
