"""Multi-relation product-graph pre-training for zero-shot item recommendation."""

__version__ = "0.1.0"
