"""Prune, sparsify and benchmark small flow-anomaly classifiers."""
__version__ = "0.1.0"
