"""Tracking datasets: on-disk parsers and the synthetic sequence generator.

Supported layouts (``x,y,w,h`` per line, comma, tab or whitespace separated):

``otb``
    ``<seq>/img/*.{jpg,png}`` and ``<seq>/groundtruth_rect.txt``
``lasot``
    ``<class>/<seq>/img/*.jpg``, ``<seq>/groundtruth.txt``, optional
    ``full_occlusion.txt`` / ``out_of_view.txt`` (one comma-separated line)
``got10k``
    ``<seq>/*.{jpg,png}``, ``<seq>/groundtruth.txt``, optional
    ``absence.label`` (one 0/1 per line)

Any layout may carry ``<seq>/absence.label`` and ``<seq>/attributes.txt``
(comma-separated tags). Synthetic suites are written in the ``otb`` layout.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .datamodel import BoundingBox, iou_xywh

log = logging.getLogger(__name__)

SHAPES = ("rect", "ellipse", "triangle", "diamond", "cross")


@dataclass
class SequenceRecord:
    name: str
    boxes: np.ndarray                      # (N, 4) xywh
    frames: list = field(default_factory=list)   # arrays or paths
    visible: np.ndarray | None = None      # (N,) bool
    attributes: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        if self.visible is None:
            self.visible = np.ones(len(self.boxes), dtype=bool)
        self.visible = np.asarray(self.visible, dtype=bool)
        if len(self.frames) != len(self.boxes):
            raise ValueError(f"{self.name}: {len(self.frames)} frames but {len(self.boxes)} boxes")
        if len(self.visible) != len(self.boxes):
            raise ValueError(f"{self.name}: visibility flags do not match box count")
        if len(self.boxes) and not (self.boxes[0, 2] > 0 and self.boxes[0, 3] > 0):
            raise ValueError(f"{self.name}: first-frame box is invalid")

    def __len__(self):
        return len(self.boxes)

    def frame(self, i: int) -> np.ndarray:
        f = self.frames[i]
        if isinstance(f, np.ndarray):
            return f
        img = cv2.imread(str(f), cv2.IMREAD_COLOR)
        if img is None:
            raise OSError(f"cannot read frame {f}")
        return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)

    def box(self, i: int) -> BoundingBox:
        return BoundingBox.from_array(self.boxes[i])


@dataclass
class LoadError:
    name: str
    message: str


class Dataset(list):
    """A list of ``SequenceRecord`` plus the per-sequence errors met while loading."""

    def __init__(self, records=(), errors=None):
        super().__init__(records)
        self.errors: list[LoadError] = list(errors or [])


_SPLIT = re.compile(r"[,\t ]+")


def parse_boxes(text: str) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = [p for p in _SPLIT.split(line) if p]
        if len(parts) != 4:
            raise ValueError(f"line {lineno}: expected 4 values, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ValueError(f"line {lineno}: non-numeric value in {line!r}") from None
    return np.array(rows, dtype=np.float64).reshape(-1, 4)


def _numeric_key(p: Path):
    nums = re.findall(r"\d+", p.stem)
    return (int(nums[-1]) if nums else -1, p.name)


def _list_images(d: Path) -> list[Path]:
    return sorted((p for p in d.iterdir() if p.suffix.lower() in (".jpg", ".jpeg", ".png")), key=_numeric_key)


def _read_flags(path: Path, n: int) -> np.ndarray | None:
    if not path.exists():
        return None
    vals = [int(float(v)) for v in re.split(r"[,\s]+", path.read_text().strip()) if v]
    if len(vals) != n:
        raise ValueError(f"{path.name}: {len(vals)} flags for {n} frames")
    return np.array(vals, dtype=bool)


def _read_attributes(path: Path) -> list[str]:
    if not path.exists():
        return []
    return [t.strip() for t in path.read_text().replace("\n", ",").split(",") if t.strip()]


def _load_one(name: str, seq_dir: Path, img_dir: Path, gt_file: Path, absent_files: list[Path]) -> SequenceRecord:
    boxes = parse_boxes(gt_file.read_text())
    frames = _list_images(img_dir)
    if len(frames) != len(boxes):
        raise ValueError(f"{len(frames)} frames but {len(boxes)} ground-truth boxes")
    absent = np.zeros(len(boxes), dtype=bool)
    for f in absent_files:
        flags = _read_flags(f, len(boxes))
        if flags is not None:
            absent |= flags
    return SequenceRecord(name=name, boxes=boxes, frames=frames, visible=~absent,
                          attributes=_read_attributes(seq_dir / "attributes.txt"))


def load_dataset(root: str | Path, layout: str = "otb") -> Dataset:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    if layout == "otb":
        seqs = [(d.name, d, d / "img", d / "groundtruth_rect.txt", []) for d in sorted(root.iterdir())
                if (d / "groundtruth_rect.txt").exists()]
    elif layout == "lasot":
        seqs = [(d.name, d, d / "img", d / "groundtruth.txt", [d / "full_occlusion.txt", d / "out_of_view.txt"])
                for cls_dir in sorted(root.iterdir()) if cls_dir.is_dir()
                for d in sorted(cls_dir.iterdir()) if (d / "groundtruth.txt").exists()]
    elif layout == "got10k":
        seqs = [(d.name, d, d, d / "groundtruth.txt", []) for d in sorted(root.iterdir())
                if (d / "groundtruth.txt").exists()]
    else:
        raise ValueError(f"unknown layout {layout!r}")
    out = Dataset()
    for name, seq_dir, img_dir, gt, absent in seqs:
        try:
            out.append(_load_one(name, seq_dir, img_dir, gt, absent + [seq_dir / "absence.label"]))
        except (ValueError, OSError) as exc:
            log.warning("skipping sequence %s: %s", name, exc)
            out.errors.append(LoadError(name, str(exc)))
    return out


def write_sequence(seq: SequenceRecord, root: str | Path) -> Path:
    """Materialise a sequence in the ``otb`` layout."""
    d = Path(root) / seq.name
    (d / "img").mkdir(parents=True, exist_ok=True)
    for i in range(len(seq)):
        cv2.imwrite(str(d / "img" / f"{i + 1:04d}.png"), cv2.cvtColor(seq.frame(i), cv2.COLOR_RGB2BGR))
    (d / "groundtruth_rect.txt").write_text("".join(",".join(f"{v:.4f}" for v in b) + "\n" for b in seq.boxes))
    (d / "absence.label").write_text("".join(f"{int(not v)}\n" for v in seq.visible))
    if seq.attributes:
        (d / "attributes.txt").write_text(",".join(seq.attributes) + "\n")
    return d


# --------------------------------------------------------------------------
# synthetic sequences


@dataclass
class ObjectSpec:
    shape: str
    color: tuple[float, float, float]      # RGB in [0, 1]
    size: tuple[float, float]              # w, h in pixels
    texture_seed: int = 0
    texture_strength: float = 0.25
    start: tuple[float, float] = (0.0, 0.0)   # top-left at frame 0
    velocity: tuple[float, float] = (0.0, 0.0)
    turn_rate: float = 0.0                 # std of per-frame heading change (radians)
    similarity: float = 0.0                # to the target; informational for distractors
    on_top: bool = False                   # drawn above the target

    @classmethod
    def from_json(cls, d: dict) -> "ObjectSpec":
        d = dict(d)
        for key in ("color", "size", "start", "velocity"):
            d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class Occlusion:
    start: int
    duration: int


@dataclass
class SynthSpec:
    name: str
    length: int
    target: ObjectSpec
    distractors: list[ObjectSpec] = field(default_factory=list)
    canvas: tuple[int, int] = (160, 160)   # W, H
    occlusions: list[Occlusion] = field(default_factory=list)
    deform: float = 0.0                    # aspect-ratio oscillation amplitude
    noise: float = 0.02
    seed: int = 0
    attributes: list[str] = field(default_factory=list)
    crossing: list[int] = field(default_factory=list)   # per distractor: frame of path crossing, -1 for free motion

    def validate(self) -> None:
        w, h = self.canvas
        if self.length < 1:
            raise ValueError("sequence length must be positive")
        for o in [self.target] + self.distractors:
            ow, oh = o.size
            if ow <= 1 or oh <= 1:
                raise ValueError(f"object size {o.size} too small")
            amp = 1 + self.deform
            if ow * amp >= w or oh * amp >= h:
                raise ValueError(f"object of size {o.size} does not fit a {w}x{h} canvas")
            if o.shape not in SHAPES:
                raise ValueError(f"unknown shape {o.shape!r}")
        for ev in self.occlusions:
            if ev.start < 1 or ev.duration < 1 or ev.start + ev.duration > self.length:
                raise ValueError(f"occlusion event {ev} outside the sequence (frame 0 must be visible)")
        if len(self.crossing) not in (0, len(self.distractors)):
            raise ValueError("crossing list must have one entry per distractor")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        d["target"] = ObjectSpec.from_json(d["target"])
        d["distractors"] = [ObjectSpec.from_json(o) for o in d["distractors"]]
        d["occlusions"] = [Occlusion(**o) for o in d["occlusions"]]
        d["canvas"] = tuple(d["canvas"])
        return cls(**d)


def _fold(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Reflect positions into ``[lo, hi]`` (a triangle wave)."""
    span = hi - lo
    if span <= 0:
        return np.full_like(x, lo)
    y = np.mod(x - lo, 2 * span)
    return lo + np.where(y > span, 2 * span - y, y)


def _path(obj: ObjectSpec, length: int, canvas: tuple[int, int], rng: np.random.Generator,
          size_max: tuple[float, float]) -> np.ndarray:
    """Top-left positions ``(length, 2)`` of a randomly turning, bouncing object."""
    w, h = canvas
    hi = np.array([w - size_max[0], h - size_max[1]])
    pos = np.zeros((length, 2))
    p = np.array(obj.start, dtype=float)
    v = np.array(obj.velocity, dtype=float)
    for t in range(length):
        pos[t] = p
        if obj.turn_rate > 0:
            a = rng.normal(0.0, obj.turn_rate)
            c, s = math.cos(a), math.sin(a)
            v = np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])
        p = p + v
        for k in range(2):
            if p[k] < 0:
                p[k], v[k] = -p[k], -v[k]
            elif p[k] > hi[k]:
                p[k], v[k] = 2 * hi[k] - p[k], -v[k]
    return pos


def _shape_mask(shape: str, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Membership on normalised box coordinates ``u, v`` in ``[0, 1]``."""
    inside = (u >= 0) & (u < 1) & (v >= 0) & (v < 1)
    if shape == "rect":
        m = inside
    elif shape == "ellipse":
        m = (u - 0.5) ** 2 + (v - 0.5) ** 2 <= 0.25
    elif shape == "triangle":
        m = inside & (np.abs(u - 0.5) <= 0.5 * v + 0.07)
    elif shape == "diamond":
        m = np.abs(u - 0.5) + np.abs(v - 0.5) <= 0.54
    elif shape == "cross":
        m = inside & ((np.abs(u - 0.5) <= 0.2) | (np.abs(v - 0.5) <= 0.2))
    else:
        raise ValueError(f"unknown shape {shape!r}")
    return m & inside


def _background(canvas: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    w, h = canvas
    base = rng.uniform(0.25, 0.6, size=3)
    coarse = base + rng.normal(0, 0.06, size=(5, 5, 3))
    bg = cv2.resize(coarse.astype(np.float32), (w, h), interpolation=cv2.INTER_CUBIC)
    return np.clip(bg, 0, 1)


def _draw(img: np.ndarray, obj: ObjectSpec, box: BoundingBox, phase: float) -> np.ndarray:
    """Paint ``obj`` into ``img`` in place; returns the pixel mask."""
    H, W = img.shape[:2]
    x1, y1 = max(int(math.floor(box.x)), 0), max(int(math.floor(box.y)), 0)
    x2, y2 = min(int(math.ceil(box.x2)), W), min(int(math.ceil(box.y2)), H)
    full = np.zeros((H, W), dtype=bool)
    if x2 <= x1 or y2 <= y1:
        return full
    yy, xx = np.mgrid[y1:y2, x1:x2]
    u = (xx + 0.5 - box.x) / box.w
    v = (yy + 0.5 - box.y) / box.h
    m = _shape_mask(obj.shape, u, v)
    trng = np.random.default_rng(obj.texture_seed)
    freq = trng.uniform(2.0, 4.0)
    angle = trng.uniform(0, math.pi) + phase
    tex = np.sin(2 * math.pi * freq * (u * math.cos(angle) + v * math.sin(angle)))
    col = np.asarray(obj.color)[None, None, :] * (1 + obj.texture_strength * tex[..., None])
    patch = img[y1:y2, x1:x2]
    patch[m] = np.clip(col, 0, 1)[m]
    full[y1:y2, x1:x2] = m
    return full


@dataclass
class RenderedSequence:
    record: SequenceRecord
    distractor_boxes: np.ndarray           # (D, N, 4)


def _layout(spec: SynthSpec):
    """Background, target boxes ``(N, 4)``, distractor boxes ``(D, N, 4)`` and the
    generator positioned where per-frame noise starts."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    W, H = spec.canvas
    bg = _background(spec.canvas, rng)
    amp = 1 + spec.deform
    tw, th = spec.target.size
    t = np.arange(spec.length)
    scale_w = 1 + spec.deform * np.sin(2 * np.pi * t / 40.0)
    scale_h = 1 - spec.deform * np.sin(2 * np.pi * t / 40.0)
    tpos = _path(spec.target, spec.length, spec.canvas, rng, (tw * amp, th * amp))
    tboxes = np.column_stack([tpos, tw * scale_w, th * scale_h])

    crossing = spec.crossing or [-1] * len(spec.distractors)
    dboxes = []
    for obj, tc in zip(spec.distractors, crossing):
        dw, dh = obj.size
        if tc >= 0:
            tcx = tboxes[tc, 0] + tboxes[tc, 2] / 2
            tcy = tboxes[tc, 1] + tboxes[tc, 3] / 2
            c0 = np.array([tcx - dw / 2, tcy - dh / 2])
            raw = c0[None, :] + np.outer(t - tc, obj.velocity)
            pos = np.column_stack([_fold(raw[:, 0], 0, W - dw), _fold(raw[:, 1], 0, H - dh)])
        else:
            pos = _path(obj, spec.length, spec.canvas, rng, (dw, dh))
        dboxes.append(np.column_stack([pos, np.full(spec.length, dw), np.full(spec.length, dh)]))
    dboxes = np.array(dboxes).reshape(len(spec.distractors), spec.length, 4)
    return bg, tboxes, dboxes, rng


def trajectories(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Target and distractor boxes of ``spec`` without rendering any frame."""
    _, tboxes, dboxes, _ = _layout(spec)
    return tboxes, dboxes


def render_synthetic(spec: SynthSpec) -> RenderedSequence:
    bg, tboxes, dboxes, rng = _layout(spec)
    W, H = spec.canvas

    occluded = np.zeros(spec.length, dtype=bool)
    for ev in spec.occlusions:
        occluded[ev.start:ev.start + ev.duration] = True
    occ_color = np.clip(bg.mean(axis=(0, 1)) * 0.6, 0, 1)

    frames = []
    for i in range(spec.length):
        img = bg.copy()
        tb = BoundingBox.from_array(tboxes[i])
        below = [k for k, o in enumerate(spec.distractors) if not o.on_top]
        above = [k for k, o in enumerate(spec.distractors) if o.on_top]
        for k in below:
            _draw(img, spec.distractors[k], BoundingBox.from_array(dboxes[k, i]), 0.0)
        _draw(img, spec.target, tb, spec.deform * math.sin(2 * math.pi * i / 40.0))
        for k in above:
            _draw(img, spec.distractors[k], BoundingBox.from_array(dboxes[k, i]), 0.0)
        if occluded[i]:
            m = 0.35
            x1 = max(int(math.floor(tb.x - m * tb.w)), 0)
            y1 = max(int(math.floor(tb.y - m * tb.h)), 0)
            x2 = min(int(math.ceil(tb.x2 + m * tb.w)), W)
            y2 = min(int(math.ceil(tb.y2 + m * tb.h)), H)
            img[y1:y2, x1:x2] = occ_color
        if spec.noise > 0:
            img = img + rng.normal(0, spec.noise, size=img.shape)
        frames.append(np.clip(np.round(img * 255), 0, 255).astype(np.uint8))

    rec = SequenceRecord(name=spec.name, boxes=tboxes, frames=frames, visible=~occluded,
                         attributes=list(spec.attributes))
    return RenderedSequence(rec, dboxes)


def generate_synthetic(spec: SynthSpec) -> SequenceRecord:
    return render_synthetic(spec).record


# --------------------------------------------------------------------------
# suites

PALETTE = np.array([
    [0.90, 0.15, 0.15], [0.15, 0.75, 0.20], [0.15, 0.30, 0.90], [0.95, 0.85, 0.10],
    [0.85, 0.20, 0.85], [0.10, 0.85, 0.85], [0.95, 0.55, 0.10], [0.95, 0.95, 0.95],
    [0.55, 0.25, 0.10], [0.05, 0.05, 0.05],
])

SUITES = ("plain", "distractor", "occlusion", "deform")


def _random_object(rng: np.random.Generator, canvas: tuple[int, int], size_range=(14, 24),
                   speed_range=(0.8, 2.5)) -> ObjectSpec:
    w = float(rng.uniform(*size_range))
    h = float(np.clip(w * rng.uniform(0.7, 1.4), size_range[0] * 0.7, size_range[1] * 1.3))
    color = PALETTE[rng.integers(len(PALETTE))] * rng.uniform(0.85, 1.0)
    ang = rng.uniform(0, 2 * math.pi)
    speed = rng.uniform(*speed_range)
    margin = 0.3 * max(w, h)
    W, H = canvas
    return ObjectSpec(
        shape=str(rng.choice(SHAPES)), color=tuple(float(c) for c in np.clip(color, 0, 1)), size=(w, h),
        texture_seed=int(rng.integers(1 << 30)), texture_strength=float(rng.uniform(0.1, 0.3)),
        start=(float(rng.uniform(margin, W - 1.5 * w - margin)), float(rng.uniform(margin, H - 1.5 * h - margin))),
        velocity=(speed * math.cos(ang), speed * math.sin(ang)), turn_rate=float(rng.uniform(0.0, 0.15)),
    )


def similar_object(target: ObjectSpec, level: float, rng: np.random.Generator) -> ObjectSpec:
    """A distractor whose appearance approaches the target's as ``level -> 1``.

    Colour is interpolated from a random palette colour towards the target's;
    at ``level >= 0.9`` shape and texture are copied too.
    """
    other = PALETTE[rng.integers(len(PALETTE))]
    color = level * np.asarray(target.color) + (1 - level) * other
    same_shape = level >= 0.9
    shape = target.shape if same_shape else str(rng.choice([s for s in SHAPES if s != target.shape]))
    s = rng.uniform(0.9, 1.1)
    return ObjectSpec(
        shape=shape, color=tuple(float(c) for c in np.clip(color, 0, 1)),
        size=(target.size[0] * s, target.size[1] * s),
        texture_seed=target.texture_seed if same_shape else int(rng.integers(1 << 30)),
        texture_strength=target.texture_strength, similarity=float(level),
    )


def _add_crossing_distractor(spec: SynthSpec, rng: np.random.Generator, levels: tuple[float, float],
                             attempts: int = 200) -> bool:
    """Append a similar object whose straight path crosses the target's centre.

    Candidates that start near the target or travel alongside it for more than
    a quarter of the sequence are redrawn, so each encounter is a genuine
    crossing rather than a shared start; clips under 30 frames only need the
    distant start. Returns False if no draw qualifies.
    """
    n = spec.length
    tw, th = spec.target.size
    for _ in range(attempts):
        d = similar_object(spec.target, float(rng.uniform(*levels)), rng)
        ang = rng.uniform(0, 2 * math.pi)
        # short clips need faster distractors to arrive from a distance
        speed = rng.uniform(1.0, 2.5) * max(1.0, 30 / n)
        d.velocity = (speed * math.cos(ang), speed * math.sin(ang))
        d.on_top = bool(rng.random() < 0.3)
        trial = SynthSpec(**{**spec.__dict__, "distractors": spec.distractors + [d],
                             "crossing": spec.crossing + [int(rng.integers(int(0.3 * n), int(0.7 * n) + 1))]})
        tboxes, dboxes = trajectories(trial)
        overlap = iou_xywh(tboxes, dboxes[-1])
        gap = np.hypot(*((tboxes[0, :2] + tboxes[0, 2:] / 2) - (dboxes[-1, 0, :2] + dboxes[-1, 0, 2:] / 2)))
        if overlap[0] == 0 and gap >= 1.5 * max(tw, th) and (overlap > 0).sum() <= (n // 4 if n >= 30 else n):
            spec.distractors, spec.crossing = trial.distractors, trial.crossing
            return True
    return False


def suite_spec(kind: str, index: int, seed: int, length: int = 60, canvas: int = 160,
               distractor_levels: tuple[float, float] = (0.5, 0.8)) -> SynthSpec:
    if kind not in SUITES:
        raise ValueError(f"unknown suite {kind!r}")
    if length < 1:
        raise ValueError(f"suite sequences need at least one frame, got {length}")
    rng = np.random.default_rng([seed, SUITES.index(kind), index])
    cv = (canvas, canvas)
    for _ in range(20):
        target = _random_object(rng, cv)
        spec = SynthSpec(name=f"{kind}_{index:03d}", length=length, target=target, canvas=cv,
                         noise=float(rng.uniform(0.0, 0.03)), seed=int(rng.integers(1 << 30)), attributes=[kind])
        if kind != "distractor":
            break
        # some target paths admit no clean crossing; those targets are redrawn
        for _ in range(int(rng.integers(1, 4))):
            _add_crossing_distractor(spec, rng, distractor_levels)
        if spec.distractors:
            break
    else:
        raise ValueError(f"{kind}_{index:03d}: could not place a crossing distractor")
    if kind == "distractor":
        spec.attributes.append("similar_object")
    elif kind == "occlusion":
        n = int(rng.integers(1, 3))
        starts = sorted(rng.choice(np.arange(5, length - 12), size=n, replace=False))
        last_end = 0
        for s in starts:
            s = max(int(s), last_end + 2)
            dur = int(rng.integers(3, 9))
            if s + dur > length:
                break
            spec.occlusions.append(Occlusion(s, dur))
            last_end = s + dur
        spec.attributes.append("full_occlusion")
    elif kind == "deform":
        spec.deform = float(rng.uniform(0.15, 0.3))
        spec.attributes.append("deformation")
    elif kind != "plain":
        raise ValueError(f"unknown suite {kind!r}")
    return spec


def still_spec(index: int, seed: int, canvas: int = 160, n_objects: tuple[int, int] = (2, 5)) -> SynthSpec:
    """Short multi-object clip standing in for a still image with pseudo-motion."""
    rng = np.random.default_rng([seed, 7, index])
    cv = (canvas, canvas)
    target = _random_object(rng, cv, speed_range=(2.0, 5.0))
    spec = SynthSpec(name=f"still_{index:04d}", length=3, target=target, canvas=cv,
                     noise=float(rng.uniform(0.0, 0.03)), seed=int(rng.integers(1 << 30)), attributes=["still"])
    for _ in range(int(rng.integers(*n_objects))):
        if rng.random() < 0.5:
            d = similar_object(target, float(rng.uniform(0.3, 1.0)), rng)
            tw, th = target.size
            d.start = (float(rng.uniform(0, canvas - d.size[0])), float(rng.uniform(0, canvas - d.size[1])))
            d.velocity = tuple(float(v) for v in rng.normal(0, 2.0, size=2))
        else:
            d = _random_object(rng, cv, speed_range=(0.5, 3.0))
        d.on_top = bool(rng.random() < 0.2)
        spec.distractors.append(d)
    return spec


def make_suites(seed: int = 2024, sequences: int = 20, length: int = 60, canvas: int = 160,
                kinds=SUITES) -> dict[str, list[SynthSpec]]:
    """Suite manifests; every spec is fully determined by ``seed``."""
    return {k: [suite_spec(k, i, seed, length, canvas) for i in range(sequences)] for k in kinds}


def write_suite(specs: list[SynthSpec], root: str | Path) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for s in specs:
        write_sequence(generate_synthetic(s), root)
    (root / "manifest.json").write_text(json.dumps([s.to_json() for s in specs], indent=1))
    lines = [f"{s.name}: {','.join(s.attributes)}" for s in specs]
    (root / "attributes.txt").write_text("\n".join(lines) + "\n")
    return root
