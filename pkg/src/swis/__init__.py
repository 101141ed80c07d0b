"""Self-supervised patch-grid pretraining and SVM-based writer-independent signature verification."""

__version__ = "0.1.0"
