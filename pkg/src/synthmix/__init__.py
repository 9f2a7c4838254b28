"""Desk-scale laboratory for studying synthetic data in LM pre-training:
deterministic corpus mixing, prompted synthesis, n-gram surrogate
training, scaling-law fitting, and mixture-ratio search."""

__version__ = "0.1.0"
