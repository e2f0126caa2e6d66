"""Training procedures for task diffs and their baselines."""
