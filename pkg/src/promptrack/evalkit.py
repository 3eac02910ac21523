"""One-pass evaluation: per-frame overlap/centre errors, threshold curves and reports.

Scoring conventions
-------------------
* Frame 0 is the initialisation frame and is never scored.
* Frames whose target is absent are skipped, unless the tracker reports a
  box there with confidence above ``absent_conf_threshold``; such frames are
  scored as complete failures (IoU 0, infinite centre error).
* Success, precision, normalised precision and OP are pooled over all
  scored frames of all sequences (frame-weighted). AO and SR are computed
  per sequence and then averaged over sequences.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .datamodel import iou_xywh

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Thresholds:
    success_points: int = 101
    precision_max: float = 50.0
    precision_points: int = 51
    norm_precision_max: float = 0.5
    norm_precision_points: int = 51
    absent_conf_threshold: float = 0.5

    @property
    def success(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.success_points)

    @property
    def precision(self) -> np.ndarray:
        return np.linspace(0.0, self.precision_max, self.precision_points)

    @property
    def norm_precision(self) -> np.ndarray:
        return np.linspace(0.0, self.norm_precision_max, self.norm_precision_points)

    @classmethod
    def from_config(cls, ev) -> "Thresholds":
        return cls(ev.success_points, ev.precision_max, ev.precision_points, ev.norm_precision_max,
                   ev.norm_precision_points, ev.absent_conf_threshold)


@dataclass
class SequenceResult:
    name: str
    pred: np.ndarray                    # (N, 4) xywh
    gt: np.ndarray                      # (N, 4) xywh
    visible: np.ndarray | None = None   # (N,) bool
    confidence: np.ndarray | None = None
    attributes: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.pred = np.asarray(self.pred, dtype=np.float64).reshape(-1, 4)
        self.gt = np.asarray(self.gt, dtype=np.float64).reshape(-1, 4)
        n = len(self.gt)
        if len(self.pred) != n:
            raise ValueError(f"{self.name}: {len(self.pred)} predictions for {n} ground-truth frames")
        self.visible = np.ones(n, bool) if self.visible is None else np.asarray(self.visible, bool)
        if self.confidence is not None:
            self.confidence = np.asarray(self.confidence, dtype=np.float64)
            if len(self.confidence) != n:
                raise ValueError(f"{self.name}: confidence length {len(self.confidence)} != {n}")
        if len(self.visible) != n:
            raise ValueError(f"{self.name}: visibility length {len(self.visible)} != {n}")


@dataclass
class FrameScores:
    """Per scored frame: IoU, centre distance (px) and size-normalised centre distance."""

    iou: np.ndarray
    dist: np.ndarray
    norm_dist: np.ndarray        # NaN where the ground truth has zero size
    excluded: int = 0            # absent frames skipped
    zero_size: int = 0           # frames whose ground truth has no area

    @property
    def n(self) -> int:
        return len(self.iou)

    @staticmethod
    def concat(parts: Sequence["FrameScores"]) -> "FrameScores":
        if not parts:
            return FrameScores(np.zeros(0), np.zeros(0), np.zeros(0))
        return FrameScores(np.concatenate([p.iou for p in parts]), np.concatenate([p.dist for p in parts]),
                           np.concatenate([p.norm_dist for p in parts]), sum(p.excluded for p in parts),
                           sum(p.zero_size for p in parts))


def _centers(b: np.ndarray) -> np.ndarray:
    return b[:, :2] + b[:, 2:] / 2


def frame_scores(res: SequenceResult, th: Thresholds = Thresholds()) -> FrameScores:
    pred, gt = res.pred[1:], res.gt[1:]
    vis = res.visible[1:]
    conf = None if res.confidence is None else res.confidence[1:]
    valid_gt = np.isfinite(gt).all(axis=1) & (gt[:, 2] > 0) & (gt[:, 3] > 0)
    # zero-size ground truth is how absent targets are usually annotated
    absent = ~vis | ~valid_gt
    failed = absent & (conf > th.absent_conf_threshold) if conf is not None else np.zeros(len(gt), bool)
    keep = ~absent | failed

    iou = np.zeros(len(gt))
    if (~absent).any():
        iou[~absent] = iou_xywh(pred[~absent], gt[~absent])
    delta = _centers(pred) - _centers(gt)
    dist = np.hypot(delta[:, 0], delta[:, 1])
    nd = np.full(len(gt), np.nan)
    nd[valid_gt] = np.hypot(delta[valid_gt, 0] / gt[valid_gt, 2], delta[valid_gt, 1] / gt[valid_gt, 3])
    dist[failed] = np.inf
    nd[failed] = np.inf
    zero = int((~valid_gt).sum())
    return FrameScores(iou[keep], dist[keep], nd[keep], excluded=int((~keep).sum()), zero_size=zero)


# --------------------------------------------------------------------------
# curves


def success_curve(iou: np.ndarray, th: Thresholds = Thresholds()) -> np.ndarray:
    """Fraction of frames with IoU strictly above each threshold."""
    iou = np.asarray(iou, dtype=np.float64)
    if iou.size == 0:
        return np.zeros(th.success_points)
    return (iou[None, :] > th.success[:, None]).mean(axis=1)


def precision_curve(dist: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Fraction of frames with distance at most each threshold (NaN frames dropped)."""
    d = np.asarray(dist, dtype=np.float64)
    d = d[~np.isnan(d)]
    if d.size == 0:
        return np.zeros(len(grid))
    return (d[None, :] <= grid[:, None]).mean(axis=1)


def success_auc(iou: np.ndarray, th: Thresholds = Thresholds()) -> float:
    """Discrete area under the success curve over the threshold grid.

    With the default 101-point grid a perfect result scores 100/101, since
    no IoU is strictly above 1.
    """
    return float(success_curve(iou, th).mean())


def mean_iou(iou: np.ndarray) -> float:
    """Continuous counterpart of ``success_auc`` (integral of the curve over [0, 1])."""
    iou = np.asarray(iou, dtype=np.float64)
    return float(iou.mean()) if iou.size else 0.0


def precision_auc(dist: np.ndarray, th: Thresholds = Thresholds()) -> float:
    return float(precision_curve(dist, th.precision).mean())


def precision_at(dist: np.ndarray, pixels: float = 20.0) -> float:
    d = np.asarray(dist, dtype=np.float64)
    return float((d <= pixels).mean()) if d.size else 0.0


def normalized_precision_auc(norm_dist: np.ndarray, th: Thresholds = Thresholds()) -> float:
    return float(precision_curve(norm_dist, th.norm_precision).mean())


def op_scores(iou: np.ndarray) -> tuple[float, float]:
    iou = np.asarray(iou, dtype=np.float64)
    if iou.size == 0:
        return 0.0, 0.0
    return float((iou > 0.5).mean()), float((iou > 0.75).mean())


def got10k_scores(per_sequence_iou: Sequence[np.ndarray]) -> tuple[float, float, float]:
    """``(AO, SR0.50, SR0.75)``: per-sequence means averaged over sequences."""
    seqs = [np.asarray(s, dtype=np.float64) for s in per_sequence_iou if len(s)]
    if not seqs:
        return 0.0, 0.0, 0.0
    ao = np.mean([s.mean() for s in seqs])
    sr50 = np.mean([(s > 0.5).mean() for s in seqs])
    sr75 = np.mean([(s > 0.75).mean() for s in seqs])
    return float(ao), float(sr50), float(sr75)


# --------------------------------------------------------------------------
# reports


@dataclass
class MetricReport:
    success_auc: float
    mean_iou: float
    precision_auc: float
    precision_20: float
    norm_precision_auc: float
    op50: float
    op75: float
    ao: float
    sr50: float
    sr75: float
    n_sequences: int
    n_frames: int
    excluded_frames: int = 0
    zero_size_frames: int = 0
    config_hash: str = ""
    curves: dict[str, list[float]] = field(default_factory=dict, repr=False)

    METRICS = ("success_auc", "mean_iou", "precision_auc", "precision_20", "norm_precision_auc",
               "op50", "op75", "ao", "sr50", "sr75")

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.METRICS}

    def to_text(self) -> str:
        lines = [f"config_hash = {self.config_hash or '-'}", f"sequences = {self.n_sequences}",
                 f"frames = {self.n_frames}", f"excluded_frames = {self.excluded_frames}",
                 f"zero_size_frames = {self.zero_size_frames}"]
        lines += [f"{k} = {v:.6f}" for k, v in self.values().items()]
        return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def build_report(results: Sequence[SequenceResult], th: Thresholds = Thresholds(),
                 config_hash: str = "") -> MetricReport:
    per = [frame_scores(r, th) for r in results]
    pooled = FrameScores.concat(per)
    op50, op75 = op_scores(pooled.iou)
    ao, sr50, sr75 = got10k_scores([p.iou for p in per])
    return MetricReport(
        success_auc=success_auc(pooled.iou, th), mean_iou=mean_iou(pooled.iou),
        precision_auc=precision_auc(pooled.dist, th), precision_20=precision_at(pooled.dist),
        norm_precision_auc=normalized_precision_auc(pooled.norm_dist, th),
        op50=op50, op75=op75, ao=ao, sr50=sr50, sr75=sr75,
        n_sequences=len(results), n_frames=pooled.n, excluded_frames=pooled.excluded,
        zero_size_frames=pooled.zero_size, config_hash=config_hash,
        curves={"success": success_curve(pooled.iou, th).tolist(),
                "precision": precision_curve(pooled.dist, th.precision).tolist(),
                "norm_precision": precision_curve(pooled.norm_dist, th.norm_precision).tolist()})


# --------------------------------------------------------------------------
# result files


def write_results(directory: str | Path, name: str, boxes: np.ndarray, confidence: np.ndarray | None = None) -> Path:
    """``<name>.txt`` with one ``x,y,w,h`` line per frame, plus ``<name>_confidence.txt``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    path = d / f"{name}.txt"
    path.write_text("".join(f"{x:.4f},{y:.4f},{w:.4f},{h:.4f}\n" for x, y, w, h in np.asarray(boxes)))
    if confidence is not None:
        (d / f"{name}_confidence.txt").write_text("".join(f"{c:.6f}\n" for c in confidence))
    return path


def write_run_info(directory: str | Path, config_hash: str, **extra) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "run_info.json").write_text(json.dumps({"config_hash": config_hash, **extra}, indent=2, sort_keys=True))


def read_run_info(directory: str | Path) -> dict:
    p = Path(directory) / "run_info.json"
    return json.loads(p.read_text()) if p.exists() else {}


def read_results(directory: str | Path, name: str) -> tuple[np.ndarray, np.ndarray | None]:
    from .data import parse_boxes
    d = Path(directory)
    boxes = parse_boxes((d / f"{name}.txt").read_text())
    cpath = d / f"{name}_confidence.txt"
    conf = None
    if cpath.exists():
        conf = np.array([float(t) for t in cpath.read_text().split()], dtype=np.float64)
    return boxes, conf


@dataclass
class SequenceError:
    name: str
    message: str


@dataclass
class OpeOutcome:
    report: MetricReport
    results: list[SequenceResult]
    errors: list[SequenceError]


def run_ope(source, dataset: Iterable, th: Thresholds = Thresholds(), config_hash: str = "",
            output_dir: str | Path | None = None) -> OpeOutcome:
    """One-pass evaluation of a live tracker or of a directory of result files.

    ``source`` is either an object with ``run(frames, init_box)`` returning
    ``(boxes, confidences, extras)``, or a path to result files. Problems with
    one sequence are recorded and evaluation carries on.
    """
    from .datamodel import BoundingBox
    results, errors = [], []
    from_files = isinstance(source, (str, Path))
    for seq in dataset:
        gt = np.asarray(seq.boxes, dtype=np.float64)
        try:
            if from_files:
                pred, conf = read_results(source, seq.name)
            else:
                frames = (seq.frame(i) for i in range(len(seq)))
                boxes, confs, _ = source.run(frames, BoundingBox.from_array(gt[0]))
                pred = np.array([b.as_array() for b in boxes])
                conf = np.asarray(confs, dtype=np.float64)
                if output_dir is not None:
                    write_results(output_dir, seq.name, pred, conf)
            results.append(SequenceResult(seq.name, pred, gt, seq.visible, conf, list(seq.attributes)))
        except (OSError, ValueError) as exc:
            log.warning("sequence %s: %s", seq.name, exc)
            errors.append(SequenceError(seq.name, str(exc)))
    return OpeOutcome(build_report(results, th, config_hash), results, errors)


# --------------------------------------------------------------------------
# attribute analysis


def read_attribute_file(path: str | Path) -> dict[str, list[str]]:
    """Lines of ``sequence: tag1, tag2``; blank lines and ``#`` comments ignored."""
    tags = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        name, _, rest = line.partition(":")
        tags[name.strip()] = [t.strip() for t in rest.replace(",", " ").split() if t.strip()]
    return tags


@dataclass
class AttributeReport:
    reports: dict[str, MetricReport]
    rows: list[tuple[str, str, float]]

    def to_table(self) -> str:
        return "attribute\tmetric\tvalue\n" + "".join(f"{a}\t{m}\t{v:.6f}\n" for a, m, v in self.rows)


def attribute_report(results: Sequence[SequenceResult], tags: Mapping[str, Sequence[str]] | None = None,
                     th: Thresholds = Thresholds(), known: Iterable[str] | None = None,
                     config_hash: str = "") -> AttributeReport:
    """Metrics recomputed on the subset of sequences carrying each attribute.

    ``tags`` maps sequence names to attribute lists (default: each result's
    own ``attributes``). With ``known`` given, other tags are warned about and
    skipped. Attributes matching no sequence produce no row.
    """
    known = set(known) if known is not None else None
    by_attr: dict[str, list[SequenceResult]] = {}
    for r in results:
        for t in (tags.get(r.name, []) if tags is not None else r.attributes):
            if known is not None and t not in known:
                log.warning("unknown attribute %r on %s skipped", t, r.name)
                continue
            by_attr.setdefault(t, []).append(r)
    reports, rows = {}, []
    for attr in sorted(by_attr):
        rep = build_report(by_attr[attr], th, config_hash)
        if rep.n_frames == 0:
            continue
        reports[attr] = rep
        rows += [(attr, k, v) for k, v in rep.values().items()]
    return AttributeReport(reports, rows)


def render_radar(report: AttributeReport, path: str | Path, metric: str = "success_auc") -> bool:
    """Static radar chart of one metric across attributes; False if matplotlib is unavailable."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return False
    attrs = list(report.reports)
    if len(attrs) < 3:
        return False
    vals = [report.reports[a].values()[metric] for a in attrs]
    ang = np.linspace(0, 2 * math.pi, len(attrs), endpoint=False).tolist()
    fig = plt.figure(figsize=(5, 5))
    ax = fig.add_subplot(111, polar=True)
    ax.plot(ang + ang[:1], vals + vals[:1])
    ax.fill(ang + ang[:1], vals + vals[:1], alpha=0.2)
    ax.set_xticks(ang)
    ax.set_xticklabels(attrs)
    ax.set_ylim(0, 1)
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    return True


def report_dict(rep: MetricReport) -> dict:
    d = asdict(rep)
    d.pop("curves")
    return d
