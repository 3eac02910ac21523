"""Prompt generation and relation modelling.

``PromptGenerator`` maps the concatenated template and current features to a
single-channel candidate map; ``RelationModule`` fuses that map back into the
current features. Both operate on channel-first tensors ``(B, C, H, W)``.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .datamodel import BoundingBox
from .encoders import FrameEncoder, images_to_tensor
from .imaging import clip_box_to_frame, crop_box


def _check_grids(*grids: torch.Tensor) -> None:
    shape = grids[0].shape
    for g in grids[1:]:
        if g.shape != shape:
            raise ValueError(f"feature grid shapes differ: {tuple(shape)} vs {tuple(g.shape)}")


class PromptGenerator(nn.Module):
    """Three 3x3 conv blocks, ``3C -> C -> C/2 -> 1``, linear output."""

    def __init__(self, channels: int):
        super().__init__()
        c = channels
        self.body = nn.Sequential(
            nn.Conv2d(3 * c, c, 3, padding=1), nn.GELU(),
            nn.Conv2d(c, c // 2, 3, padding=1), nn.GELU(),
            nn.Conv2d(c // 2, 1, 3, padding=1),
        )
        _init_small(self)

    def forward(self, v_tem1: torch.Tensor, v_tem2: torch.Tensor, v_cur: torch.Tensor) -> torch.Tensor:
        _check_grids(v_tem1, v_tem2, v_cur)
        return self.body(torch.cat([v_tem1, v_tem2, v_cur], dim=1)).squeeze(1)


class RelationModule(nn.Module):
    """Conv-BN-GELU then Conv-BN over ``[prompt, features]``, plus a residual.

    The second normalisation starts with zero gain, so an untrained module is
    the identity on ``v_cur``.
    """

    def __init__(self, channels: int):
        super().__init__()
        c = channels
        self.channels = c
        self.block1 = nn.Sequential(nn.Conv2d(c + 1, c, 3, padding=1), nn.BatchNorm2d(c), nn.GELU())
        self.block2 = nn.Sequential(nn.Conv2d(c, c, 3, padding=1), nn.BatchNorm2d(c))
        _init_small(self)
        nn.init.zeros_(self.block2[1].weight)

    def forward(self, h_can: torch.Tensor, v_cur: torch.Tensor) -> torch.Tensor:
        if h_can.dim() != 3 or h_can.shape[0] != v_cur.shape[0] or h_can.shape[-2:] != v_cur.shape[-2:]:
            raise ValueError(f"prompt {tuple(h_can.shape)} does not match features {tuple(v_cur.shape)}")
        x = torch.cat([h_can.unsqueeze(1), v_cur], dim=1)
        if x.shape[1] != self.channels + 1:
            raise ValueError(f"relation module expects {self.channels + 1} input channels, got {x.shape[1]}")
        return v_cur + self.block2(self.block1(x))


def _init_small(module: nn.Module, gain: float = 1.0) -> None:
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
            nn.init.normal_(m.weight, std=gain / np.sqrt(fan_in))
            nn.init.zeros_(m.bias)


def template_patch(frame: np.ndarray, box: BoundingBox, resolution: int) -> np.ndarray:
    """Exact box crop (clipped to the frame) stretched to the encoder input."""
    clipped = clip_box_to_frame(box, frame.shape)
    if clipped is None:
        raise ValueError(f"template box {box} lies entirely outside the frame")
    return crop_box(frame, clipped, resolution)


@torch.no_grad()
def extract_template_feature(frame: np.ndarray, box: BoundingBox, encoder: FrameEncoder) -> torch.Tensor:
    """Feature grid ``(1, C, H, W)`` of the exact target box."""
    patch = template_patch(frame, box, encoder.spec.input_resolution)
    return encoder(images_to_tensor(patch, dtype=encoder.adapter.weight.dtype))
