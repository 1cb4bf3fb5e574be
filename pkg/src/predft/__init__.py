"""fMRI-to-text decoding with predictive coding."""

__version__ = "0.1.0"
