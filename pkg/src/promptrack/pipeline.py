"""Online tracking: initialisation, per-frame inference and state updates."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import torch

from .config import RunConfig
from .datamodel import BoundingBox, SearchRegion
from .encoders import cosine, images_to_tensor
from .head import decode_prediction
from .imaging import clip_box_to_frame, crop_region, region_around
from .network import Network
from .prompting import extract_template_feature
from .tpr import CandidateSet, TprConfig, refine
from .training import LabelPair, make_labels


@dataclass(frozen=True)
class Reference:
    features: torch.Tensor      # (1, C, H, W)
    cls: torch.Tensor           # (1, H, W)
    reg: torch.Tensor           # (1, 4, H, W), zero outside the box


@dataclass(frozen=True)
class Template:
    features: torch.Tensor      # (1, C, H, W)
    embedding: np.ndarray       # (C_e,)


@dataclass(frozen=True)
class TrackState:
    ref1: Reference
    ref2: Reference
    tem1: Template
    tem2: Template
    last_box: BoundingBox
    init_size: tuple[float, float]
    last_d: np.ndarray | None = None        # (H, W, 4)
    frame_index: int = 0
    last_ref_update: int = 0


@dataclass
class FrameResult:
    box: BoundingBox
    confidence: float
    region: SearchRegion
    h_can: np.ndarray | None = None
    h_can_refined: np.ndarray | None = None
    h_cls: np.ndarray | None = None
    candidates: CandidateSet | None = None
    degenerate: bool = False


def crop_search_region(frame: np.ndarray, last_box: BoundingBox, search_scale: float,
                       resolution: int) -> tuple[np.ndarray, SearchRegion]:
    region = region_around(last_box, search_scale, resolution, frame.shape)
    return crop_region(frame, region), region


def roi_embedding(frame: np.ndarray, box: BoundingBox, embedder) -> np.ndarray | None:
    clipped = clip_box_to_frame(box, frame.shape)
    if clipped is None:
        return None
    x1, y1 = int(np.floor(clipped.x)), int(np.floor(clipped.y))
    x2, y2 = int(np.ceil(clipped.x2)), int(np.ceil(clipped.y2))
    if x2 - x1 < 2 or y2 - y1 < 2:
        return None
    return embedder.encode(frame[y1:y2, x1:x2])


def _reference(features: torch.Tensor, labels: LabelPair) -> Reference:
    cls = torch.from_numpy(labels.cls).to(features.dtype).unsqueeze(0)
    reg = torch.from_numpy(labels.reg * labels.mask[..., None]).to(features.dtype).permute(2, 0, 1).unsqueeze(0)
    return Reference(features, cls, reg)


class Tracker:
    """Stateless driver; all per-sequence state lives in ``TrackState``."""

    def __init__(self, net: Network, cfg: RunConfig | None = None, use_prompt: bool | None = None,
                 use_tpr: bool | None = None):
        self.net = net.eval()
        self.cfg = cfg or net.cfg
        tc = self.cfg.track
        self.use_prompt = tc.use_prompt if use_prompt is None else use_prompt
        self.use_tpr = (tc.use_tpr if use_tpr is None else use_tpr) and self.use_prompt
        t = self.cfg.tpr
        self.tpr_cfg = TprConfig(t.tau, t.gamma, t.max_candidates)
        self.dtype = net.encoder.adapter.weight.dtype

    @property
    def name(self) -> str:
        if not self.use_prompt:
            return "no_prompt"
        return "refined" if self.use_tpr else "initial"

    @torch.no_grad()
    def _encode(self, patch: np.ndarray) -> torch.Tensor:
        return self.net.encoder(images_to_tensor(patch, self.dtype))

    def _labels(self, box: BoundingBox, region: SearchRegion) -> LabelPair:
        return make_labels(box, region, self.net.grid, self.cfg.loss.sigma_factor)

    @torch.no_grad()
    def initialize(self, frame: np.ndarray, box: BoundingBox) -> TrackState:
        if clip_box_to_frame(box, frame.shape) is None:
            raise ValueError(f"initial box {box} lies outside the frame")
        res = self.cfg.encoder.input_resolution
        patch, region = crop_search_region(frame, box, self.cfg.track.search_scale, res)
        ref = _reference(self._encode(patch), self._labels(box, region))
        emb = roi_embedding(frame, box, self.net.embedder)
        if emb is None:
            raise ValueError(f"initial box {box} is too small to embed")
        tem = Template(extract_template_feature(frame, box, self.net.encoder), emb)
        return TrackState(ref1=ref, ref2=ref, tem1=tem, tem2=tem, last_box=box, init_size=(box.w, box.h))

    @torch.no_grad()
    def step(self, state: TrackState, frame: np.ndarray) -> tuple[FrameResult, TrackState]:
        res = self.cfg.encoder.input_resolution
        patch, region = crop_search_region(frame, state.last_box, self.cfg.track.search_scale, res)
        v_cur = self._encode(patch)
        result = FrameResult(state.last_box, 0.0, region)

        v_in = v_cur
        if self.use_prompt:
            h_can = self.net.pgn(state.tem1.features, state.tem2.features, v_cur)[0].numpy()
            result.h_can = h_can
            prompt = h_can
            if self.use_tpr:
                tem_embs = np.stack([state.tem1.embedding, state.tem2.embedding])
                prompt, result.candidates = refine(h_can, frame, region, state.last_d, tem_embs,
                                                   self.net.embedder, self.tpr_cfg, state.init_size)
            result.h_can_refined = prompt
            v_in = self.net.rm(torch.from_numpy(np.ascontiguousarray(prompt)).unsqueeze(0).to(self.dtype), v_cur)

        out = self.net.head(state.ref1.features, (state.ref1.cls, state.ref1.reg),
                            state.ref2.features, (state.ref2.cls, state.ref2.reg), v_in)
        h_cls = out.h_cls[0].numpy()
        d = out.d[0].permute(1, 2, 0).numpy()
        result.h_cls = h_cls
        box, conf, _, degenerate = decode_prediction(h_cls, d, region)
        fh, fw = frame.shape[:2]
        if degenerate or not np.isfinite(conf):
            box, conf = state.last_box, 0.0
            result.degenerate = True
        else:
            box = box.clamp_to(fw, fh)
        result.box, result.confidence = box, conf

        new = dataclasses.replace(state, last_box=box, last_d=d, frame_index=state.frame_index + 1)
        new = self.update_reference(new, v_cur, conf, box, region)
        new = self.update_template(new, frame, box)
        return result, new

    def track_frame(self, state: TrackState, frame: np.ndarray) -> tuple[BoundingBox, float, TrackState]:
        result, new = self.step(state, frame)
        return result.box, result.confidence, new

    def update_reference(self, state: TrackState, v_cur: torch.Tensor, confidence: float,
                         box: BoundingBox, region: SearchRegion) -> TrackState:
        tc = self.cfg.track
        if confidence < tc.update_threshold or state.frame_index - state.last_ref_update < tc.update_min_gap:
            return state
        ref = _reference(v_cur, self._labels(box, region))
        return dataclasses.replace(state, ref2=ref, last_ref_update=state.frame_index)

    def update_template(self, state: TrackState, frame: np.ndarray, box: BoundingBox) -> TrackState:
        emb = roi_embedding(frame, box, self.net.embedder)
        if emb is None:
            return state
        e1 = state.tem1.embedding
        if cosine(emb, e1) > cosine(state.tem2.embedding, e1):
            feat = extract_template_feature(frame, box, self.net.encoder)
            return dataclasses.replace(state, tem2=Template(feat, emb))
        return state

    def run(self, frames, init_box: BoundingBox, keep_maps: bool = False):
        """Track a whole sequence. Frame 0 reports the initial box with confidence 1."""
        it = iter(frames)
        state = self.initialize(next(it), init_box)
        boxes, confs, extras = [init_box], [1.0], []
        for frame in it:
            result, state = self.step(state, frame)
            boxes.append(result.box)
            confs.append(result.confidence)
            if keep_maps:
                extras.append(result)
        return boxes, confs, extras
