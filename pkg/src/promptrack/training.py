"""Labels, losses, training-sample assembly and the two-stage schedule."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
import torch

from .config import RunConfig, parse_fractions
from .data import SequenceRecord, generate_synthetic, still_spec, suite_spec
from .datamodel import BoundingBox, SearchRegion, ltrb_encode
from .encoders import images_to_tensor
from .imaging import crop_box, crop_region
from .network import Network

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float = 100.0
    lambda_can: float = 10.0
    lambda_reg: float = 1.0

    def __post_init__(self):
        if min(self.lambda_cls, self.lambda_can, self.lambda_reg) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LabelPair:
    cls: np.ndarray    # (H, W) in [0, 1]
    reg: np.ndarray    # (H, W, 4) ltrb
    mask: np.ndarray   # (H, W) bool, cells inside the box


def make_gaussian_label(box: BoundingBox, region: SearchRegion, shape: tuple[int, int],
                        sigma_factor: float) -> np.ndarray:
    """Gaussian bump centred on the cell nearest to the box centre.

    ``sigma = sigma_factor * min(H, W)`` in cells. A centre outside the
    region gives an all-zero map.
    """
    h, w = shape
    u, v = region.to_normalized(*box.center)
    if not (0 <= u < 1 and 0 <= v < 1):
        return np.zeros(shape)
    r0 = min(int(math.floor(v * h)), h - 1)
    c0 = min(int(math.floor(u * w)), w - 1)
    sigma = sigma_factor * min(h, w)
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return np.exp(-((rr - r0) ** 2 + (cc - c0) ** 2) / (2 * sigma * sigma))


def make_labels(box: BoundingBox, region: SearchRegion, shape: tuple[int, int], sigma_factor: float,
                visible: bool = True) -> LabelPair:
    reg, mask = ltrb_encode(box, region, shape)
    if not visible:
        return LabelPair(np.zeros(shape), reg, np.zeros(shape, dtype=bool))
    return LabelPair(make_gaussian_label(box, region, shape, sigma_factor), reg, mask)


def classification_loss(pred: torch.Tensor, label: torch.Tensor, fg_threshold: float = 0.25) -> torch.Tensor:
    """Hinged squared error: ``s - y`` on foreground, ``max(0, s)`` on background."""
    if pred.shape != label.shape:
        raise ValueError(f"score map {tuple(pred.shape)} vs label {tuple(label.shape)}")
    fg = label >= fg_threshold
    r = torch.where(fg, pred - label, torch.clamp(pred, min=0))
    return (r * r).mean()


def ltrb_giou(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """GIoU between boxes given as ltrb distances from the same anchor; channel dim is 1."""
    pl, pt, pr, pb = pred.unbind(1)
    tl, tt, tr, tb = target.unbind(1)
    area_p = (pl + pr) * (pt + pb)
    area_t = (tl + tr) * (tt + tb)
    iw = torch.clamp(torch.minimum(pl, tl) + torch.minimum(pr, tr), min=0)
    ih = torch.clamp(torch.minimum(pt, tt) + torch.minimum(pb, tb), min=0)
    inter = iw * ih
    union = area_p + area_t - inter
    enclose = (torch.maximum(pl, tl) + torch.maximum(pr, tr)) * (torch.maximum(pt, tt) + torch.maximum(pb, tb))
    return inter / union - (enclose - union) / enclose


def regression_loss(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, int]:
    """Mean ``1 - GIoU`` over masked cells; ``(B, 4, H, W)`` maps, ``(B, H, W)`` mask.

    Returns ``(loss, n_valid)``; with no valid cell the loss is a zero that
    still depends on ``pred``.
    """
    if pred.shape != target.shape:
        raise ValueError(f"ltrb map {tuple(pred.shape)} vs label {tuple(target.shape)}")
    n = int(mask.sum())
    if n == 0:
        return pred.sum() * 0.0, 0
    g = ltrb_giou(pred, torch.where(mask.unsqueeze(1), target, torch.ones_like(target)))
    return (1 - g)[mask].mean(), n


def total_loss(h_cls: torch.Tensor, h_can: torch.Tensor | None, d: torch.Tensor, cls_label: torch.Tensor,
               reg_label: torch.Tensor, mask: torch.Tensor, w: LossWeights,
               fg_threshold: float = 0.25) -> tuple[torch.Tensor, dict[str, float]]:
    l_cls = classification_loss(h_cls, cls_label, fg_threshold)
    l_reg, _ = regression_loss(d, reg_label, mask)
    total = w.lambda_cls * l_cls + w.lambda_reg * l_reg
    parts = {"cls": l_cls.item(), "reg": l_reg.item()}
    if h_can is not None:
        l_can = classification_loss(h_can, cls_label, fg_threshold)
        total = total + w.lambda_can * l_can
        parts["can"] = l_can.item()
    return total, parts


def sample_subsequence(length: int, window: int, rng: np.random.Generator) -> tuple[int, int, int] | None:
    """Two reference indices and one test index, distinct, within one window."""
    if length < 3:
        log.warning("sequence of %d frames is too short to sample from", length)
        return None
    span = min(window, length)
    lo = int(rng.integers(0, length - span + 1))
    a, b, c = rng.choice(span, size=3, replace=False) + lo
    return int(a), int(b), int(c)


# --------------------------------------------------------------------------
# batch assembly


def jittered_region(box: BoundingBox, jitter: float, scale_jitter: float, search_scale: float,
                    resolution: int, rng: np.random.Generator) -> SearchRegion:
    size = math.sqrt(box.w * box.h)
    cx, cy = box.center
    off = (rng.random(2) - 0.5) * jitter * size
    side = search_scale * size * math.exp(rng.normal(0.0, scale_jitter))
    return SearchRegion(cx + off[0], cy + off[1], side, resolution)


def _flip(frame: np.ndarray, box: BoundingBox) -> tuple[np.ndarray, BoundingBox]:
    return frame[:, ::-1], BoundingBox(frame.shape[1] - box.x2, box.y, box.w, box.h)


@dataclass
class Batch:
    ref1: torch.Tensor
    ref2: torch.Tensor
    cur: torch.Tensor
    tem1: torch.Tensor
    tem2: torch.Tensor
    y1: tuple[torch.Tensor, torch.Tensor]
    y2: tuple[torch.Tensor, torch.Tensor]
    label: tuple[torch.Tensor, torch.Tensor, torch.Tensor]   # cls, ltrb, mask of the test frame


class SampleSource:
    """Draws training triples from tracking sequences and multi-object stills."""

    def __init__(self, sequences: list[SequenceRecord], cfg: RunConfig, seed: int,
                 n_stills: int = 400):
        self.sequences = [s for s in sequences if len(s) >= 3]
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self._stills: dict[int, SequenceRecord] = {}
        self.n_stills = n_stills
        self.still_seed = seed + 1

    def _still(self, k: int) -> SequenceRecord:
        if k not in self._stills:
            self._stills[k] = generate_synthetic(still_spec(k, self.still_seed, self.cfg.data.canvas))
        return self._stills[k]

    def _pick(self) -> SequenceRecord:
        if self.n_stills and (not self.sequences or self.rng.random() < self.cfg.train.stills_fraction):
            return self._still(int(self.rng.integers(self.n_stills)))
        return self.sequences[int(self.rng.integers(len(self.sequences)))]

    def sample(self, shape: tuple[int, int]) -> dict:
        t, rng = self.cfg.train, self.rng
        res, scale = self.cfg.encoder.input_resolution, self.cfg.track.search_scale
        while True:
            seq = self._pick()
            idx = sample_subsequence(len(seq), t.window, rng)
            if idx is not None and seq.visible[idx[0]] and seq.visible[idx[1]]:
                break
        flip = rng.random() < t.flip_prob
        gains = 1 + rng.uniform(-t.color_jitter, t.color_jitter, size=3).astype(np.float32)
        out = {}
        for key, i, jit in (("ref1", idx[0], t.ref_jitter), ("ref2", idx[1], t.ref_jitter), ("cur", idx[2], t.cur_jitter)):
            frame, box = seq.frame(i), seq.box(i)
            if flip:
                frame, box = _flip(frame, box)
            region = jittered_region(box, jit, t.scale_jitter, scale, res, rng)
            out[key] = np.clip(crop_region(frame, region) * gains, 0, 1)
            out[key + "_y"] = make_labels(box, region, shape, self.cfg.loss.sigma_factor, bool(seq.visible[i]))
            if key != "cur":
                tem = "tem1" if key == "ref1" else "tem2"
                out[tem] = np.clip(crop_box(frame, box, res) * gains, 0, 1)
        return out

    def batch(self, size: int, shape: tuple[int, int]) -> Batch:
        samples = [self.sample(shape) for _ in range(size)]

        def stack(key):
            return images_to_tensor([s[key] for s in samples])

        def labels(key):
            ys = [s[key] for s in samples]
            cls = torch.from_numpy(np.stack([y.cls for y in ys])).float()
            reg = torch.from_numpy(np.stack([y.reg * y.mask[..., None] for y in ys])).float().permute(0, 3, 1, 2)
            mask = torch.from_numpy(np.stack([y.mask for y in ys]))
            return cls, reg, mask

        y1, y2, yc = labels("ref1_y"), labels("ref2_y"), labels("cur_y")
        yc_reg = torch.from_numpy(np.stack([s["cur_y"].reg for s in samples])).float().permute(0, 3, 1, 2)
        return Batch(stack("ref1"), stack("ref2"), stack("cur"), stack("tem1"), stack("tem2"),
                     y1[:2], y2[:2], (yc[0], yc_reg, yc[2]))


# --------------------------------------------------------------------------
# optimisation


class TrainingDiverged(RuntimeError):
    pass


def forward_batch(net: Network, b: Batch, stage: int):
    """Returns ``(h_cls, h_can, d)``; ``h_can`` is ``None`` in stage 1."""
    n = b.cur.shape[0]
    feats = net.encoder(torch.cat([b.ref1, b.ref2, b.cur] + ([b.tem1, b.tem2] if stage == 2 else [])))
    v_ref1, v_ref2, v_cur = feats[:n], feats[n:2 * n], feats[2 * n:3 * n]
    h_can = None
    if stage == 2:
        v_tem1, v_tem2 = feats[3 * n:4 * n], feats[4 * n:]
        h_can = net.pgn(v_tem1, v_tem2, v_cur)
        v_cur = net.rm(h_can, v_cur)
    out = net.head(v_ref1, b.y1, v_ref2, b.y2, v_cur)
    return out.h_cls, h_can, out.d


def stage_lr_factor(stage: int, epoch: int, epochs: int, cfg: RunConfig) -> float:
    t = cfg.train
    if stage == 1:
        steps = [round(f * epochs) for f in parse_fractions(t.stage1_decay_at)]
        return t.stage1_decay ** sum(epoch >= s for s in steps)
    start = epochs - round(t.stage2_decay_last * epochs)
    return t.stage2_decay if epoch >= start else 1.0


def make_optimizer(net: Network, stage: int, cfg: RunConfig) -> torch.optim.Optimizer:
    t = cfg.train
    if stage == 1:
        groups = [{"params": [p for p in net.tracker_parameters() if p.requires_grad], "lr": t.stage1_lr, "name": "tracker"}]
    else:
        groups = [
            {"params": net.prompt_parameters(), "lr": t.stage2_prompt_lr, "name": "prompt"},
            {"params": [p for p in net.tracker_parameters() if p.requires_grad], "lr": t.stage2_tracker_lr, "name": "tracker"},
        ]
    for g in groups:
        g["base_lr"] = g["lr"]
    return torch.optim.AdamW(groups, weight_decay=t.weight_decay)


def train_stage(net: Network, source: SampleSource, stage: int, cfg: RunConfig,
                log_file=None, checkpoint_path: str | Path | None = None) -> list[dict]:
    """Runs one training stage in place; returns the per-step records."""
    t = cfg.train
    weights = LossWeights(cfg.loss.lambda_cls, cfg.loss.lambda_can if stage == 2 else 0.0, cfg.loss.lambda_reg)
    epochs = t.stage1_epochs if stage == 1 else t.stage2_epochs
    steps_per_epoch = max(1, t.samples_per_epoch // t.batch_size)
    opt = make_optimizer(net, stage, cfg)
    net.train()
    if stage == 1:
        net.pgn.eval()
        net.rm.eval()
    last_good = {k: v.clone() for k, v in net.state_dict().items()}
    records = []
    step = 0
    t0 = time.time()
    for epoch in range(epochs):
        factor = stage_lr_factor(stage, epoch, epochs, cfg)
        for g in opt.param_groups:
            g["lr"] = g["base_lr"] * factor
        for _ in range(steps_per_epoch):
            b = source.batch(t.batch_size, net.grid)
            h_cls, h_can, d = forward_batch(net, b, stage)
            loss, parts = total_loss(h_cls, h_can, d, b.label[0], b.label[1], b.label[2], weights,
                                     cfg.loss.fg_threshold)
            if not torch.isfinite(loss):
                net.load_state_dict(last_good)
                if checkpoint_path is not None:
                    net.save(checkpoint_path, {"stage": stage, "diverged_at": step})
                raise TrainingDiverged(f"non-finite loss at stage {stage} step {step}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            rec = {"stage": stage, "epoch": epoch, "step": step, "loss": loss.item(), **parts,
                   "lr": opt.param_groups[0]["lr"], "elapsed": round(time.time() - t0, 2)}
            records.append(rec)
            if log_file is not None:
                log_file.write(json.dumps(rec) + "\n")
                log_file.flush()
            step += 1
        last_good = {k: v.clone() for k, v in net.state_dict().items()}
        recent = records[-steps_per_epoch:]
        log.info("stage %d epoch %d/%d loss %.4f (%.0fs)", stage, epoch + 1, epochs,
                 np.mean([r["loss"] for r in recent]), time.time() - t0)
    net.eval()
    return records


def training_sequences(cfg: RunConfig) -> list[SequenceRecord]:
    """The synthetic training split: ``plain`` sequences from a seed disjoint from evaluation."""
    seed = cfg.train.seed + 7919
    return [generate_synthetic(suite_spec("plain", i, seed, length=cfg.data.frames, canvas=cfg.data.canvas))
            for i in range(cfg.train.train_sequences)]


def run_training(cfg: RunConfig, sequences: Iterable[SequenceRecord] | None = None, stages=(1, 2),
                 net: Network | None = None, out_dir: str | Path | None = None) -> tuple[Network, list[dict]]:
    """Train the requested stages; stage 2 alone needs a stage-1 network."""
    if 1 not in stages and net is None:
        raise ValueError("stage 2 requires a stage-1 network or checkpoint")
    torch.manual_seed(cfg.train.seed)
    seqs = list(sequences) if sequences is not None else training_sequences(cfg)
    source = SampleSource(seqs, cfg, seed=cfg.train.seed)
    net = net if net is not None else Network(cfg)
    out = Path(out_dir) if out_dir is not None else None
    records = []
    log_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_file = open(out / "train_log.jsonl", "a")
    try:
        for stage in stages:
            ckpt = out / f"stage{stage}.ckpt" if out is not None else None
            records += train_stage(net, source, stage, cfg, log_file, ckpt)
            if ckpt is not None:
                net.save(ckpt, {"stage": stage})
    finally:
        if log_file is not None:
            log_file.close()
    return net, records


def moving_average(values: list[float], window: int = 10) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    c = np.cumsum(np.insert(v, 0, 0.0))
    return (c[window:] - c[:-window]) / window
