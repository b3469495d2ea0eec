"""Scene segmentation and multimodal scene tagging for video ads."""

__version__ = "0.1.0"
