"""The full trainable network: frame encoder, prompting modules and head."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, config_from_dict, parse_pool
from .encoders import FrameEncoder, FrameEncoderSpec, ToyEmbeddingEncoder
from .head import TrackingHead
from .prompting import PromptGenerator, RelationModule


def encoder_spec(cfg: RunConfig) -> FrameEncoderSpec:
    e = cfg.encoder
    if e.name != "toy":
        raise ValueError(f"unknown frame encoder {e.name!r}; only 'toy' ships with the package")
    return FrameEncoderSpec(name=e.name, input_resolution=e.input_resolution, cell_size=e.cell_size,
                            channels=e.channels, pool_to=parse_pool(e.pool_to), seed=e.seed)


class Network(nn.Module):
    def __init__(self, cfg: RunConfig):
        super().__init__()
        self.cfg = cfg
        spec = encoder_spec(cfg)
        torch.manual_seed(cfg.model.seed)
        h, w, c = spec.output_shape
        self.encoder = FrameEncoder(spec)
        self.pgn = PromptGenerator(c)
        self.rm = RelationModule(c)
        self.head = TrackingHead(c, (h, w), cfg.model.enc_layers, cfg.model.dec_layers)
        self.embedder = ToyEmbeddingEncoder(resolution=cfg.encoder.embed_resolution)

    @property
    def grid(self) -> tuple[int, int]:
        return self.head.grid

    def tracker_parameters(self):
        return list(self.encoder.adapter.parameters()) + list(self.head.parameters())

    def prompt_parameters(self):
        return list(self.pgn.parameters()) + list(self.rm.parameters())

    def state_blocks(self) -> dict[str, np.ndarray]:
        return {k: v.detach().cpu().numpy() for k, v in self.state_dict().items()}

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        m = {"config": self.cfg.to_dict()}
        m.update(meta or {})
        save_checkpoint(path, self.state_blocks(), self.cfg.config_hash(), m)

    @classmethod
    def load(cls, path: str | Path) -> tuple["Network", dict]:
        blocks, chash, meta = load_checkpoint(path)
        cfg = config_from_dict(meta["config"])
        net = cls(cfg)
        state = net.state_dict()
        missing = set(state) - set(blocks)
        if missing:
            raise ValueError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        net.load_state_dict({k: torch.from_numpy(np.asarray(blocks[k])).to(state[k].dtype) for k in state})
        net.eval()
        meta["config_hash"] = chash
        return net, meta
