"""Promptable visual object tracking at desk scale."""

from .datamodel import BoundingBox, SearchRegion, giou, iou

__version__ = "0.1.0"
__all__ = ["BoundingBox", "SearchRegion", "giou", "iou", "__version__"]
