"""Multi-stage cross-market recommendation ensembles."""

__version__ = "0.1.0"
