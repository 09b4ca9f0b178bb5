"""Two-branch segmentation with cooperative multi-view training on a numpy autodiff core."""

__version__ = "0.1.0"
