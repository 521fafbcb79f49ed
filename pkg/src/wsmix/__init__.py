"""Windowed SummaryMixing, its baselines, and a selective fine-tuning testbed."""

__version__ = "0.1.0"
