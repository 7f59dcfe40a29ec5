"""Point cloud completion from multi-view depth images with feature distillation."""

__version__ = "0.1.0"
