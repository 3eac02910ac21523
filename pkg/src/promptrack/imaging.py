"""Sub-pixel crops of frames into model patches."""

from __future__ import annotations

import math

import cv2
import numpy as np

from .datamodel import BoundingBox, SearchRegion


def to_float(image: np.ndarray) -> np.ndarray:
    if image.dtype == np.uint8:
        return image.astype(np.float32) / 255.0
    return np.asarray(image, dtype=np.float32)


def warp_crop(image: np.ndarray, x0: float, y0: float, w: float, h: float,
              out_w: int, out_h: int) -> np.ndarray:
    """Bilinearly resample the image rectangle ``[x0, x0+w) x [y0, y0+h)``.

    Pixels outside the frame replicate the nearest edge pixel. The result is
    float32 in ``[0, 1]``.
    """
    sx, sy = w / out_w, h / out_h
    # cv2 samples destination pixel i at source index M @ i; both use pixel
    # centres at integer + 0.5 in continuous coordinates.
    m = np.array([[sx, 0.0, x0 + 0.5 * sx - 0.5],
                  [0.0, sy, y0 + 0.5 * sy - 0.5]], dtype=np.float64)
    return cv2.warpAffine(to_float(image), m, (out_w, out_h),
                          flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                          borderMode=cv2.BORDER_REPLICATE)


def resize_image(image: np.ndarray, size: int) -> np.ndarray:
    h, w = image.shape[:2]
    return warp_crop(image, 0.0, 0.0, float(w), float(h), size, size)


def crop_region(image: np.ndarray, region: SearchRegion) -> np.ndarray:
    return warp_crop(image, region.x0, region.y0, region.side, region.side,
                     region.resolution, region.resolution)


def region_around(box: BoundingBox, scale_factor: float, resolution: int,
                  frame_shape: tuple[int, ...] | None = None) -> SearchRegion:
    """Square region of side ``scale_factor * sqrt(w * h)`` centred on ``box``."""
    cx, cy = box.center
    side = scale_factor * math.sqrt(box.w * box.h)
    padded = False
    if frame_shape is not None:
        fh, fw = frame_shape[:2]
        padded = cx - side / 2 < 0 or cy - side / 2 < 0 or cx + side / 2 > fw or cy + side / 2 > fh
    return SearchRegion(cx, cy, side, resolution, padded)


def crop_box(image: np.ndarray, box: BoundingBox, out_size: int) -> np.ndarray:
    """Exact box crop stretched to ``out_size x out_size``."""
    return warp_crop(image, box.x, box.y, box.w, box.h, out_size, out_size)


def clip_box_to_frame(box: BoundingBox, frame_shape: tuple[int, ...]) -> BoundingBox | None:
    """Intersection of ``box`` with the frame, or ``None`` if they do not overlap."""
    fh, fw = frame_shape[:2]
    x1, y1 = max(box.x, 0.0), max(box.y, 0.0)
    x2, y2 = min(box.x2, float(fw)), min(box.y2, float(fh))
    if x2 - x1 <= 0 or y2 - y1 <= 0:
        return None
    return BoundingBox(x1, y1, x2 - x1, y2 - y1)
