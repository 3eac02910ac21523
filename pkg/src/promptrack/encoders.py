"""Frame and region encoders.

Two narrow interfaces are used by the rest of the package:

``FrameEncoder``
    patch ``(B, 3, R, R)`` in ``[0, 1]`` -> feature grid ``(B, C, H, W)``.
    A frozen backbone followed by a trainable single-layer adapter.

``EmbeddingEncoder``
    arbitrary RGB crop -> unit-norm embedding vector.

The toy implementations here need no pretrained weights. A foundation
backbone can be dropped in by subclassing ``Backbone`` (frame features) or
providing any object with an ``encode(crop) -> np.ndarray`` method
(embeddings).
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .imaging import to_float


@dataclass(frozen=True)
class FrameEncoderSpec:
    name: str = "toy"
    input_resolution: int = 72
    cell_size: int = 6
    channels: int = 32
    pool_to: tuple[int, int] | None = None
    trainable_adapter: bool = True
    seed: int = 0

    @property
    def native_grid(self) -> tuple[int, int]:
        g = self.input_resolution // self.cell_size
        return g, g

    @property
    def output_shape(self) -> tuple[int, int, int]:
        h, w = self.pool_to or self.native_grid
        return h, w, self.channels

    def __post_init__(self):
        if self.input_resolution % self.cell_size:
            raise ValueError("input_resolution must be a multiple of cell_size")
        if self.pool_to is not None:
            nh, nw = self.native_grid
            if self.pool_to[0] > nh or self.pool_to[1] > nw:
                raise ValueError(f"pool_to {self.pool_to} exceeds native grid {self.native_grid}")


def adaptive_avg_pool(x: torch.Tensor, out_hw: tuple[int, int]) -> torch.Tensor:
    return F.adaptive_avg_pool2d(x, out_hw)


class Backbone(nn.Module):
    """Frozen feature extractor. Subclasses must not hold trainable parameters."""

    def __init__(self, spec: FrameEncoderSpec):
        super().__init__()
        self.spec = spec


class ToyBackbone(Backbone):
    """Per-cell colour statistics plus seeded random projections.

    Channels: mean RGB (3), mean gradient magnitude (1), and ``C - 4`` fixed
    random linear projections of the cell's pixels (mean-removed, so they
    respond to texture rather than colour). Edge pixels are replicated for the
    gradient, so a constant patch maps to a spatially constant grid.
    """

    def __init__(self, spec: FrameEncoderSpec):
        super().__init__(spec)
        k = spec.cell_size
        g = torch.Generator().manual_seed(spec.seed)
        n_proj = spec.channels - 4
        if n_proj < 0:
            raise ValueError("toy backbone needs at least 4 channels")
        w = torch.randn(n_proj, 3, k, k, generator=g) * (4.0 / k)
        self.register_buffer("proj", w)

    def forward(self, patch: torch.Tensor) -> torch.Tensor:
        k = self.spec.cell_size
        mean_rgb = F.avg_pool2d(patch, k)
        gray = patch.mean(dim=1, keepdim=True)
        padded = F.pad(gray, (1, 1, 1, 1), mode="replicate")
        gx = padded[..., 1:-1, 2:] - padded[..., 1:-1, :-2]
        gy = padded[..., 2:, 1:-1] - padded[..., :-2, 1:-1]
        grad = F.avg_pool2d(torch.sqrt(gx * gx + gy * gy + 1e-12), k) * 4.0
        local = patch - F.interpolate(mean_rgb, scale_factor=k, mode="nearest")
        proj = F.conv2d(local, self.proj.to(patch.dtype), stride=k)
        return torch.cat([mean_rgb * 2.0 - 1.0, grad, proj], dim=1)


class FrameEncoder(nn.Module):
    def __init__(self, spec: FrameEncoderSpec, backbone: Backbone | None = None):
        super().__init__()
        self.spec = spec
        self.backbone = backbone if backbone is not None else ToyBackbone(spec)
        c = spec.channels
        self.adapter = nn.Conv2d(c, c, kernel_size=1)
        with torch.no_grad():
            self.adapter.weight.copy_(torch.eye(c).view(c, c, 1, 1))
            self.adapter.bias.zero_()
        self.adapter.requires_grad_(spec.trainable_adapter)

    def forward(self, patch: torch.Tensor) -> torch.Tensor:
        r = self.spec.input_resolution
        if patch.dim() != 4 or patch.shape[1] != 3 or patch.shape[-2:] != (r, r):
            raise ValueError(f"expected patches of shape (B, 3, {r}, {r}), got {tuple(patch.shape)}")
        with torch.no_grad():
            feat = self.backbone(patch)
        if self.spec.pool_to is not None:
            feat = adaptive_avg_pool(feat, self.spec.pool_to)
        return self.adapter(feat)


def images_to_tensor(images, dtype=torch.float32) -> torch.Tensor:
    """Stack HxWx3 images (uint8 or float) into a ``(B, 3, H, W)`` tensor."""
    if isinstance(images, np.ndarray) and images.ndim == 3:
        images = [images]
    arr = np.stack([to_float(im) for im in images])
    return torch.from_numpy(arr).permute(0, 3, 1, 2).to(dtype).contiguous()


class ToyEmbeddingEncoder:
    """Centre-weighted soft colour histogram, zero-mean and unit-norm.

    The crop is resized to ``resolution`` pixels a side. Each pixel votes for
    a grid of ``levels**3`` RGB prototypes with a Gaussian colour kernel of
    width ``sigma``, weighted by a Gaussian window (``window`` times the crop
    side) centred on the crop so that surrounding background counts little.
    Subtracting the mean vote makes unrelated colours roughly orthogonal.
    """

    def __init__(self, resolution: int = 24, levels: int = 6, sigma: float = 0.1, window: float = 0.25):
        self.resolution = resolution
        g = (np.arange(levels) + 0.5) / levels
        self.prototypes = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
        self.sigma = sigma
        u = (np.arange(resolution) + 0.5) / resolution - 0.5
        self.weights = np.exp(-(u[:, None] ** 2 + u[None, :] ** 2) / (2 * window * window)).ravel()

    @property
    def dim(self) -> int:
        return len(self.prototypes)

    def encode(self, crop: np.ndarray) -> np.ndarray:
        if crop is None or crop.ndim != 3 or crop.shape[0] < 1 or crop.shape[1] < 1:
            raise ValueError("empty crop passed to the embedding encoder")
        r = self.resolution
        pix = cv2.resize(to_float(crop), (r, r), interpolation=cv2.INTER_AREA).reshape(-1, 3).astype(np.float64)
        d2 = ((pix[:, None, :] - self.prototypes[None]) ** 2).sum(axis=-1)
        votes = self.weights @ np.exp(-d2 / (2 * self.sigma ** 2)) / self.weights.sum()
        votes -= votes.mean()
        n = np.linalg.norm(votes)
        if not n > 0:
            raise ValueError("crop has no colour content to embed")
        return votes / n


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
