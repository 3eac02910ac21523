"""Test-time prompt refinement.

Peaks of the candidate map are scored by how similar their image crops are
to the two templates in embedding space; confident candidates have their
prompt value set to 1 before relation modelling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datamodel import BoundingBox, GridPoint, SearchRegion, ltrb_decode
from .imaging import clip_box_to_frame


@dataclass(frozen=True)
class TprConfig:
    tau: float = 0.05
    gamma: float = 0.25
    max_candidates: int = 8

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be non-negative")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if self.max_candidates < 1:
            raise ValueError("max_candidates must be at least 1")


@dataclass
class CandidateSet:
    points: list[GridPoint] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)
    boxes: list[BoundingBox] = field(default_factory=list)
    embeddings: np.ndarray | None = None
    importance: list[float] = field(default_factory=list)
    fallback_boxes: bool = False

    def __len__(self):
        return len(self.points)

    def accepted(self, gamma: float) -> list[GridPoint]:
        return [p for p, d in zip(self.points, self.importance) if d > gamma]


def block_maxima(h: np.ndarray) -> list[tuple[float, GridPoint]]:
    """Maximum of every 3x3 block of a stride-3 partition of ``h``.

    Trailing rows/columns that do not fill a whole block form smaller edge
    blocks. Within a block, ties go to the smallest ``(row, col)``.
    """
    h = np.asarray(h, dtype=np.float64)
    rows, cols = h.shape
    nb_r, nb_c = -(-rows // 3), -(-cols // 3)
    padded = np.full((nb_r * 3, nb_c * 3), -np.inf)
    padded[:rows, :cols] = h
    blocks = padded.reshape(nb_r, 3, nb_c, 3).transpose(0, 2, 1, 3).reshape(nb_r, nb_c, 9)
    arg = blocks.argmax(axis=-1)
    out = []
    for br in range(nb_r):
        for bc in range(nb_c):
            k = int(arg[br, bc])
            out.append((float(blocks[br, bc, k]), GridPoint(br * 3 + k // 3, bc * 3 + k % 3)))
    return out


def extract_candidates(h_can: np.ndarray, cfg: TprConfig) -> list[GridPoint]:
    """Local maxima of ``h_can`` scoring at least ``tau``, best first."""
    h_can = np.asarray(h_can)
    if h_can.ndim != 2 or min(h_can.shape) < 3:
        raise ValueError(f"candidate map must be 2-D and at least 3x3, got {h_can.shape}")
    peaks = [(s, p) for s, p in block_maxima(h_can) if s >= cfg.tau]
    peaks.sort(key=lambda sp: (-sp[0], sp[1].row, sp[1].col))
    return [p for _, p in peaks[: cfg.max_candidates]]


def retrieve_candidate_boxes(points: list[GridPoint], last_d: np.ndarray | None, region: SearchRegion,
                             shape: tuple[int, int],
                             fallback_size: tuple[float, float] | None = None) -> tuple[list[BoundingBox], bool]:
    """Boxes for each candidate cell from the previous frame's ltrb map.

    Without a previous map, boxes of ``fallback_size`` are centred on the
    cells and the returned flag is true.
    """
    if last_d is None:
        if fallback_size is None:
            raise ValueError("no previous regression map and no fallback size")
        w, h = fallback_size
        return [BoundingBox.from_center(*region.cell_center(p, shape), w, h) for p in points], True
    return [ltrb_decode(last_d, p, region)[0] for p in points], False


def importance_scores(cand_embs: np.ndarray, tem_embs: np.ndarray) -> np.ndarray:
    """Mean over templates of the softmax (over candidates) of cosine similarity.

    ``cand_embs`` is ``(N, C)`` and ``tem_embs`` is ``(2, C)``, all rows unit
    norm. Returns ``(N,)`` scores summing to 1.
    """
    cand_embs = np.asarray(cand_embs, dtype=np.float64)
    if cand_embs.size == 0:
        return np.zeros(0)
    cos = cand_embs @ np.asarray(tem_embs, dtype=np.float64).T
    z = np.exp(cos - cos.max(axis=0, keepdims=True))
    return (z / z.sum(axis=0, keepdims=True)).mean(axis=1)


def refine_prompt(h_can: np.ndarray, points: list[GridPoint], importance, gamma: float) -> np.ndarray:
    out = np.array(h_can, copy=True)
    for p, d in zip(points, importance):
        if d > gamma:
            out[p.row, p.col] = 1.0
    return out


def refine(h_can: np.ndarray, frame: np.ndarray, region: SearchRegion, last_d: np.ndarray | None,
           tem_embs: np.ndarray, embedder, cfg: TprConfig,
           fallback_size: tuple[float, float] | None = None) -> tuple[np.ndarray, CandidateSet]:
    """Full refinement step: candidates, boxes, embeddings, scores, clamping."""
    points = extract_candidates(h_can, cfg)
    cands = CandidateSet(points=points, scores=[float(h_can[p.row, p.col]) for p in points])
    if not points:
        return np.array(h_can, copy=True), cands
    boxes, fell_back = retrieve_candidate_boxes(points, last_d, region, h_can.shape, fallback_size)
    keep_pts, keep_boxes, embs = [], [], []
    for p, b in zip(points, boxes):
        clipped = clip_box_to_frame(b, frame.shape)
        if clipped is None or clipped.w < 1 or clipped.h < 1:
            continue
        x1, y1 = int(np.floor(clipped.x)), int(np.floor(clipped.y))
        x2, y2 = int(np.ceil(clipped.x2)), int(np.ceil(clipped.y2))
        embs.append(embedder.encode(frame[y1:y2, x1:x2]))
        keep_pts.append(p)
        keep_boxes.append(b)
    cands.points, cands.boxes, cands.fallback_boxes = keep_pts, keep_boxes, fell_back
    cands.scores = [float(h_can[p.row, p.col]) for p in keep_pts]
    if not keep_pts:
        return np.array(h_can, copy=True), cands
    cands.embeddings = np.stack(embs)
    cands.importance = importance_scores(cands.embeddings, tem_embs).tolist()
    return refine_prompt(h_can, keep_pts, cands.importance, cfg.gamma), cands
