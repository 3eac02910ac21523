"""Boxes, grid points, search-region geometry and the dense ltrb box encoding.

Conventions used throughout the package:

* boxes are ``(x, y, w, h)`` with a top-left origin, in image pixels;
* image coordinates are continuous, pixel ``k`` covers ``[k, k + 1)``;
* a search region is a square of ``side`` pixels centred on ``(cx, cy)``
  that is resampled to a ``resolution x resolution`` patch;
* grid cell ``(row, col)`` of an ``H x W`` map over that region has its
  centre at normalised coordinates ``((col + 0.5) / W, (row + 0.5) / H)``;
* ltrb distances are stored normalised by the region side, so they are
  independent of the target scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box extents must be positive, got w={self.w}, h={self.h}")

    @classmethod
    def from_xyxy(cls, x1: float, y1: float, x2: float, y2: float) -> "BoundingBox":
        return cls(float(x1), float(y1), float(x2 - x1), float(y2 - y1))

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        return cls(float(cx - w / 2), float(cy - h / 2), float(w), float(h))

    @classmethod
    def from_array(cls, arr: Sequence[float]) -> "BoundingBox":
        x, y, w, h = (float(v) for v in arr)
        return cls(x, y, w, h)

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2, self.y + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=np.float64)

    def scaled(self, s: float) -> "BoundingBox":
        return BoundingBox(self.x * s, self.y * s, self.w * s, self.h * s)

    def clamp_to(self, width: int, height: int, min_size: float = 1.0) -> "BoundingBox":
        """Move the box inside a ``width x height`` frame, keeping its size where possible."""
        w = min(max(self.w, min_size), float(width))
        h = min(max(self.h, min_size), float(height))
        x = min(max(self.x, 0.0), width - w)
        y = min(max(self.y, 0.0), height - h)
        return BoundingBox(x, y, w, h)


class GridPoint(NamedTuple):
    row: int
    col: int


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    # rounding can push identical boxes a hair above 1
    return min(1.0, inter / (a.area + b.area - inter))


def giou(a: BoundingBox, b: BoundingBox) -> float:
    iw = max(0.0, min(a.x2, b.x2) - max(a.x, b.x))
    ih = max(0.0, min(a.y2, b.y2) - max(a.y, b.y))
    inter = iw * ih
    union = a.area + b.area - inter
    enclose = (max(a.x2, b.x2) - min(a.x, b.x)) * (max(a.y2, b.y2) - min(a.y, b.y))
    return inter / union - (enclose - union) / enclose


def iou_xywh(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise IoU of two ``(N, 4)`` arrays of xywh boxes.

    Rows with non-positive extent in either array score 0.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, 0] + a[:, 2], b[:, 0] + b[:, 2]) - np.maximum(a[:, 0], b[:, 0])
    ih = np.minimum(a[:, 1] + a[:, 3], b[:, 1] + b[:, 3]) - np.maximum(a[:, 1], b[:, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = a[:, 2] * a[:, 3] + b[:, 2] * b[:, 3] - inter
    valid = (a[:, 2] > 0) & (a[:, 3] > 0) & (b[:, 2] > 0) & (b[:, 3] > 0) & (union > 0)
    out = np.zeros(len(a))
    out[valid] = np.minimum(inter[valid] / union[valid], 1.0)
    return out


@dataclass(frozen=True)
class SearchRegion:
    """Square image region resampled to a ``resolution``-pixel patch.

    ``padded`` records that the region reaches past the frame border when it
    was cropped; it does not affect the mapping.
    """

    cx: float
    cy: float
    side: float
    resolution: int
    padded: bool = False

    def __post_init__(self):
        if not self.side > 0:
            raise ValueError(f"region side must be positive, got {self.side}")

    @property
    def x0(self) -> float:
        return self.cx - self.side / 2

    @property
    def y0(self) -> float:
        return self.cy - self.side / 2

    @property
    def scale(self) -> float:
        """Image pixels per patch pixel."""
        return self.side / self.resolution

    def to_normalized(self, x, y):
        return (np.asarray(x) - self.x0) / self.side, (np.asarray(y) - self.y0) / self.side

    def from_normalized(self, u, v):
        return self.x0 + np.asarray(u) * self.side, self.y0 + np.asarray(v) * self.side

    def image_to_patch(self, x, y):
        u, v = self.to_normalized(x, y)
        return u * self.resolution, v * self.resolution

    def patch_to_image(self, px, py):
        return self.from_normalized(np.asarray(px) / self.resolution, np.asarray(py) / self.resolution)

    def cell_center(self, p: GridPoint, shape: tuple[int, int]) -> tuple[float, float]:
        """Image coordinates of the centre of cell ``p`` in an ``H x W`` grid."""
        h, w = shape
        x, y = self.from_normalized((p.col + 0.5) / w, (p.row + 0.5) / h)
        return float(x), float(y)

    def scaled(self, s: float) -> "SearchRegion":
        return SearchRegion(self.cx * s, self.cy * s, self.side * s, self.resolution, self.padded)


def cell_centers(shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Normalised ``(u, v)`` cell-centre coordinates, each of shape ``(H, W)``."""
    h, w = shape
    v, u = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
    return u, v


def ltrb_encode(box: BoundingBox, region: SearchRegion, shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Dense ltrb targets for ``box`` over an ``H x W`` grid on ``region``.

    Returns ``(ltrb, mask)``: ``ltrb`` has shape ``(H, W, 4)`` holding
    normalised ``(c - left, c - top, right - c, bottom - c)`` and ``mask`` is
    true for cells whose centre lies strictly inside the box. Values outside
    the mask are still filled with the same formula but must not be used as
    regression targets.
    """
    u, v = cell_centers(shape)
    left, top = region.to_normalized(box.x, box.y)
    right, bottom = region.to_normalized(box.x2, box.y2)
    ltrb = np.stack([u - left, v - top, right - u, bottom - v], axis=-1)
    mask = np.all(ltrb > 0, axis=-1)
    return ltrb, mask


def ltrb_decode(d: np.ndarray, p: GridPoint, region: SearchRegion) -> tuple[BoundingBox, bool]:
    """Decode the ltrb vector at cell ``p`` into an image box.

    Returns ``(box, degenerate)``. A non-positive decoded width or height
    yields a 1x1 box at the cell centre with ``degenerate`` set.
    """
    h, w = d.shape[:2]
    if not (0 <= p.row < h and 0 <= p.col < w):
        raise IndexError(f"grid point {tuple(p)} outside {h}x{w} map")
    l, t, r, b = (float(v) for v in d[p.row, p.col])
    uc, vc = (p.col + 0.5) / w, (p.row + 0.5) / h
    x1, y1 = region.from_normalized(uc - l, vc - t)
    x2, y2 = region.from_normalized(uc + r, vc + b)
    x1, y1, x2, y2 = float(x1), float(y1), float(x2), float(y2)
    if not (x2 - x1 > 0 and y2 - y1 > 0) or not all(map(math.isfinite, (x1, y1, x2, y2))):
        cx, cy = region.cell_center(p, (h, w))
        return BoundingBox.from_center(cx, cy, 1.0, 1.0), True
    return BoundingBox(x1, y1, x2 - x1, y2 - y1), False
