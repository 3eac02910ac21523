"""Transformer model predictor and box decoding.

Reference features are tagged with their labels, joined with the current
frame's features into one token sequence and encoded. A single learned
query decodes the filter ``omega`` from the encoded tokens; the score map is
the 1x1 convolution of ``omega`` with the encoded current-frame tokens, and
the ltrb map comes from a small conv head on the ``omega``-modulated
current features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .datamodel import BoundingBox, GridPoint, SearchRegion, ltrb_decode


@dataclass
class HeadOutput:
    omega: torch.Tensor   # (B, C)
    z_cur: torch.Tensor   # (B, C, H, W)
    h_cls: torch.Tensor   # (B, H, W), float64
    d: torch.Tensor       # (B, 4, H, W)


def apply_filter(omega: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    """``h[b, i, j] = sum_c omega[b, c] * z[b, c, i, j]``, accumulated in float64.

    Float32 accumulation drifts by ~1e-6 on large responses, enough to make
    the score map depend on the summation order.
    """
    return torch.einsum("bc,bchw->bhw", omega.double(), z.double())


class Attention(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, 2 * dim)
        self.out = nn.Linear(dim, dim)
        self.scale = dim ** -0.5

    def forward(self, x: torch.Tensor, mem: torch.Tensor) -> torch.Tensor:
        q = self.q(x)
        k, v = self.kv(mem).chunk(2, dim=-1)
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        return self.out(attn @ v)


class Block(nn.Module):
    """Pre-norm attention + MLP block; cross-attends when ``mem`` is given."""

    def __init__(self, dim: int, mlp_ratio: int = 2):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.norm_mem = nn.LayerNorm(dim)
        self.attn = Attention(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_ratio * dim), nn.GELU(), nn.Linear(mlp_ratio * dim, dim))

    def forward(self, x: torch.Tensor, mem: torch.Tensor | None = None) -> torch.Tensor:
        y = self.norm1(x)
        x = x + self.attn(y, y if mem is None else self.norm_mem(mem))
        return x + self.mlp(self.norm2(x))


class TrackingHead(nn.Module):
    def __init__(self, channels: int, grid: tuple[int, int], enc_layers: int = 2, dec_layers: int = 1):
        super().__init__()
        c = channels
        h, w = grid
        self.channels, self.grid = c, (h, w)
        self.cls_embed = nn.Conv2d(1, c, 1)
        self.reg_embed = nn.Conv2d(4, c, 1)
        self.pos = nn.Parameter(torch.randn(1, h * w, c) * 0.02)
        self.slot = nn.Parameter(torch.randn(3, 1, c) * 0.02)
        self.encoder = nn.ModuleList(Block(c) for _ in range(enc_layers))
        self.decoder = nn.ModuleList(Block(c) for _ in range(dec_layers))
        self.query = nn.Parameter(torch.randn(1, 1, c) * 0.02)
        self.norm_out = nn.LayerNorm(c)
        self.filter_proj = nn.Linear(c, c)
        self.reg_head = nn.Sequential(
            nn.Conv2d(c, c, 3, padding=1), nn.GELU(),
            nn.Conv2d(c, 4, 3, padding=1),
        )
        # softplus(bias) ~ 0.1, the half extent of a target filling a fifth of the region
        nn.init.constant_(self.reg_head[-1].bias, float(np.log(np.expm1(0.1))))
        nn.init.normal_(self.reg_head[-1].weight, std=1e-3)

    def _tokens(self, v: torch.Tensor, slot: int) -> torch.Tensor:
        return v.flatten(2).transpose(1, 2) + self.pos + self.slot[slot]

    def forward(self, v_ref1: torch.Tensor, y1: tuple[torch.Tensor, torch.Tensor],
                v_ref2: torch.Tensor, y2: tuple[torch.Tensor, torch.Tensor],
                v_cur: torch.Tensor) -> HeadOutput:
        """``y = (cls (B, H, W), ltrb (B, 4, H, W))``; ltrb is zero outside the box."""
        for v in (v_ref1, v_ref2):
            if v.shape != v_cur.shape:
                raise ValueError(f"reference grid {tuple(v.shape)} != current grid {tuple(v_cur.shape)}")
        b, c, h, w = v_cur.shape
        if (h, w) != self.grid or c != self.channels:
            raise ValueError(f"head built for {self.grid}x{self.channels}, got {(h, w)}x{c}")
        refs = []
        for slot, (v, (cls, reg)) in enumerate(((v_ref1, y1), (v_ref2, y2))):
            v = v + self.cls_embed(cls.unsqueeze(1)) + self.reg_embed(reg)
            refs.append(self._tokens(v, slot))
        tokens = torch.cat(refs + [self._tokens(v_cur, 2)], dim=1)
        for blk in self.encoder:
            tokens = blk(tokens)
        q = self.query.expand(b, -1, -1)
        for blk in self.decoder:
            q = blk(q, tokens)
        omega = self.filter_proj(self.norm_out(q[:, 0]))
        z_cur = tokens[:, 2 * h * w:].transpose(1, 2).reshape(b, c, h, w)
        h_cls = apply_filter(omega, z_cur)
        d = F.softplus(self.reg_head(z_cur * omega[:, :, None, None]))
        return HeadOutput(omega, z_cur, h_cls, d)


def decode_prediction(h_cls: np.ndarray, d: np.ndarray, region: SearchRegion) -> tuple[BoundingBox, float, GridPoint, bool]:
    """Box at the score-map argmax (first in row-major order on ties).

    ``d`` is ``(H, W, 4)``. Returns ``(box, confidence, cell, degenerate)``.
    """
    h_cls = np.asarray(h_cls)
    if h_cls.shape != d.shape[:2]:
        raise ValueError(f"score map {h_cls.shape} and ltrb map {d.shape} disagree")
    k = int(np.argmax(h_cls))
    p = GridPoint(*divmod(k, h_cls.shape[1]))
    box, degenerate = ltrb_decode(d, p, region)
    return box, float(h_cls[p.row, p.col]), p, degenerate
