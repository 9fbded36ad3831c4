"""Semi-supervised boundary-aware segmentation with pseudo-label refinement."""

__version__ = "0.1.0"
