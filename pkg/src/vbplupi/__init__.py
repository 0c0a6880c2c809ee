"""Segmentation masks as privileged information, enforced through a VisualBackProp head."""

__version__ = "0.1.0"
