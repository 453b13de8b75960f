"""Prefect tasks wrapping the data, training and evaluation steps."""
