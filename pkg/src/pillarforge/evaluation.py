"""Detection evaluation with greedy matching and 40-point interpolated AP.

BEV and 3D metrics match by the corresponding IoU. AOS matches in BEV
and weights each true positive by ``(1 + cos dyaw) / 2``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .augment import DatasetStats
from .errors import EvaluationError, ValidationError
from .geometry import pairwise_bev_iou, pairwise_iou_3d

METRICS = ("BEV", "3D", "AOS")
_RECALL_EPS = 1e-12


@dataclass(frozen=True)
class EvalConfig:
    metric: str = "3D"
    iou_threshold: float = 0.5
    recall_positions: int = 40
    score_threshold: float = 0.1
    categories: tuple = ()

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValidationError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValidationError("iou_threshold must lie in (0, 1]")
        if self.recall_positions < 1:
            raise ValidationError("recall_positions must be >= 1")
        object.__setattr__(self, "categories", tuple(self.categories))


@dataclass(frozen=True)
class CategoryResult:
    ap: float | None
    precision_curve: list
    recall_curve: list
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class EvalReport:
    config: EvalConfig
    per_category: dict = field(default_factory=dict)
    m_ap: float | None = None

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "m_ap": self.m_ap,
            "per_category": {k: asdict(v) for k, v in self.per_category.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass(frozen=True)
class FrameMatch:
    """Per-prediction outcome in the input order of the predictions."""

    is_tp: np.ndarray
    gt_index: np.ndarray
    fn: int


def _iou_matrix(pred_boxes, gt_boxes, metric: str) -> np.ndarray:
    fn = pairwise_iou_3d if metric == "3D" else pairwise_bev_iou
    return fn(pred_boxes, gt_boxes)


def match_frame(preds, gts, iou_fn: str = "BEV", threshold: float = 0.5) -> FrameMatch:
    """Greedy matching in descending score order (lower index first on ties).

    Each prediction claims the free ground truth of highest IoU (lowest
    index on ties) when that IoU reaches ``threshold``.
    """
    preds, gts = list(preds), list(gts)
    is_tp = np.zeros(len(preds), dtype=bool)
    gt_index = np.full(len(preds), -1, dtype=np.int64)
    if preds and gts:
        iou = _iou_matrix([p.box for p in preds], [_box(g) for g in gts], iou_fn)
        free = np.ones(len(gts), dtype=bool)
        for i in sorted(range(len(preds)), key=lambda k: -preds[k].score):
            row = np.where(free, iou[i], -1.0)
            j = int(np.argmax(row))
            if row[j] >= threshold:
                free[j] = False
                is_tp[i] = True
                gt_index[i] = j
    return FrameMatch(is_tp, gt_index, len(gts) - int(is_tp.sum()))


def _box(obj):
    return getattr(obj, "box", obj)


def pr_curve(scores, is_tp, n_gt: int, similarity=None):
    """Recall, precision (and AOS precision) after each distinct score threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    tp = np.cumsum(np.asarray(is_tp, dtype=np.float64)[order])
    count = np.arange(1, len(order) + 1)
    s = scores[order]
    last = np.flatnonzero(np.append(s[1:] != s[:-1], True)) if len(s) else np.zeros(0, dtype=np.int64)
    recall = tp[last] / n_gt
    precision = tp[last] / count[last]
    aos = None
    if similarity is not None:
        aos = np.cumsum(np.asarray(similarity, dtype=np.float64)[order])[last] / count[last]
    return recall, precision, aos


def _interpolated(recall, precision, n_positions: int) -> float:
    total = 0.0
    for r in range(1, n_positions + 1):
        reach = precision[recall >= r / n_positions - _RECALL_EPS]
        total += float(reach.max()) if reach.size else 0.0
    return total / n_positions


def average_precision_40(scores, is_tp, n_gt: int, n_positions: int = 40, similarity=None):
    """Interpolated AP sampled at ``n_positions`` recall levels.

    With ``similarity`` given, returns the orientation-weighted variant.
    Returns ``None`` when there is no ground truth.
    """
    if n_gt <= 0:
        return None
    if len(scores) == 0:
        return 0.0
    recall, precision, aos = pr_curve(scores, is_tp, n_gt, similarity)
    return _interpolated(recall, aos if similarity is not None else precision, n_positions)


def _orientation_similarity(pred_yaw: float, gt_yaw: float) -> float:
    return (1.0 + math.cos(pred_yaw - gt_yaw)) / 2.0


def evaluate(preds: dict, gts: dict, config: EvalConfig = EvalConfig()) -> EvalReport:
    """Per-category AP over a dataset.

    ``preds`` maps frame id to detections; ``gts`` maps frame id to
    annotations (frames missing from ``preds`` contribute only false
    negatives).
    """
    stray = sorted(set(preds) - set(gts))
    if stray:
        raise EvaluationError(f"predictions for unknown frame(s): {', '.join(map(str, stray))}")
    cats = config.categories or tuple(sorted({a.category for anns in gts.values() for a in anns}))
    metric = "BEV" if config.metric == "AOS" else config.metric
    results = {}
    for cat in cats:
        scores, flags, sims = [], [], []
        n_gt = fp_total = 0
        for fid in sorted(gts):
            g = [a for a in gts[fid] if a.category == cat]
            p = [d for d in preds.get(fid, []) if d.category == cat and d.score >= config.score_threshold]
            n_gt += len(g)
            m = match_frame(p, g, metric, config.iou_threshold)
            for k, d in enumerate(p):
                scores.append(d.score)
                flags.append(bool(m.is_tp[k]))
                sims.append(_orientation_similarity(d.box.yaw, g[m.gt_index[k]].box.yaw) if m.is_tp[k] else 0.0)
            fp_total += len(p) - int(m.is_tp.sum())
        tp_total = int(sum(flags))
        if n_gt == 0:
            results[cat] = CategoryResult(None, [], [], tp_total, fp_total, 0)
            continue
        aos = config.metric == "AOS"
        ap = average_precision_40(scores, flags, n_gt, config.recall_positions, sims if aos else None)
        recall, precision, aos_prec = pr_curve(scores, flags, n_gt, sims if aos else None)
        curve = aos_prec if aos else precision
        results[cat] = CategoryResult(ap, [float(v) for v in curve], [float(v) for v in recall],
                                      tp_total, fp_total, n_gt - tp_total)
    aps = [r.ap for r in results.values() if r.ap is not None]
    return EvalReport(config, results, float(np.mean(aps)) if aps else None)


def format_reports(reports: dict) -> str:
    """Plain-text table: one row per category, one column per named report."""
    names = list(reports)
    cats = sorted({c for r in reports.values() for c in r.per_category})
    width = max([len("Category"), len("mAP")] + [len(c) for c in cats])
    cols = [max(len(n), 7) for n in names]
    lines = ["  ".join(["Category".ljust(width)] + [n.rjust(w) for n, w in zip(names, cols)])]

    def cell(v, w):
        return ("-" if v is None else f"{100 * v:.2f}").rjust(w)

    for c in cats:
        row = [reports[n].per_category.get(c) for n in names]
        lines.append("  ".join([c.ljust(width)] + [cell(r.ap if r else None, w) for r, w in zip(row, cols)]))
    lines.append("  ".join(["mAP".ljust(width)] + [cell(reports[n].m_ap, w) for n, w in zip(names, cols)]))
    return "\n".join(lines)


def dataset_report(source: DatasetStats, target: DatasetStats) -> dict:
    """Target/source ratios of frame density and per-category object density."""

    def ratio(t, s):
        return t / s if s else None

    cats = sorted(set(source.mean_points_per_object) | set(target.mean_points_per_object))
    return {
        "frame_points_ratio": ratio(target.mean_points_per_frame, source.mean_points_per_frame),
        "object_points_ratio": {
            c: ratio(target.mean_points_per_object.get(c, 0.0), source.mean_points_per_object.get(c, 0.0))
            for c in cats
        },
        "source": asdict(source),
        "target": asdict(target),
    }


def format_dataset_report(report: dict) -> str:
    def fmt(v):
        return "-" if v is None else f"{v:.4f}"

    lines = [f"{'quantity':<24}{'target/source':>14}", f"{'points per frame':<24}{fmt(report['frame_points_ratio']):>14}"]
    for c, v in report["object_points_ratio"].items():
        lines.append(f"{'points per ' + c:<24}{fmt(v):>14}")
    return "\n".join(lines)
