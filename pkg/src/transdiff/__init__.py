"""Multi-modal diffusions built by quantile transformation of tractable base diffusions."""

__version__ = "0.1.0"
