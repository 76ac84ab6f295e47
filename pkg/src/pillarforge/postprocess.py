"""Detection post-processing: confidence rectification, direction decoding, DI-NMS."""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SchemaError, ValidationError
from .geometry import pairwise_bev_iou, pairwise_iou_3d
from .model import Box3D, Detection, normalize_yaw


@dataclass(frozen=True)
class NmsParams:
    iou_threshold: float = 0.2
    score_threshold: float = 0.1
    beta: float = 0.5
    tau_near: float = 4.0
    d_ref: float = 40.0
    origin: tuple = field(default=(0.0, 0.0))
    use_3d: bool = False

    def __post_init__(self):
        for name in ("iou_threshold", "score_threshold", "beta"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"NmsParams.{name} must lie in [0, 1]")
        if self.tau_near < 0 or self.d_ref <= 0:
            raise ValidationError("tau_near must be >= 0 and d_ref > 0")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin)[:2])

    def tau(self, dist: float) -> float:
        return self.tau_near * math.exp(-dist / self.d_ref)


def rectify_confidence(score, iou_pred, beta: float = 0.5):
    """``score**(1-beta) * iou_pred**beta``; ``0**0`` counts as 1. Works on arrays."""
    s, i = np.asarray(score, dtype=np.float64), np.asarray(iou_pred, dtype=np.float64)
    if np.any((s < 0) | (s > 1) | (i < 0) | (i > 1)) or not 0.0 <= beta <= 1.0:
        raise ValidationError("score, iou_pred and beta must lie in [0, 1]")
    out = np.power(s, 1.0 - beta) * np.power(i, beta)
    return float(out) if out.ndim == 0 else out


def rectify_detections(dets, beta: float = 0.5) -> list:
    return [Detection(d.box, d.category, rectify_confidence(d.score, d.iou_pred, beta), d.iou_pred,
                      d.direction_front) for d in dets]


def _is_front(yaw: float) -> bool:
    return -math.pi / 2 < yaw <= math.pi / 2


def decode_direction(box: Box3D, direction_front: bool) -> Box3D:
    """Flip the heading by pi when the direction bin disagrees with the yaw half-plane."""
    if _is_front(box.yaw) == bool(direction_front):
        return box
    return box.replace(yaw=box.yaw + math.pi)


def _merge(members, weights, top: Detection) -> Detection:
    w = np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    arr = np.array([d.box.as_array() for d in members])
    cx, cy, cz, l, wd, h = w @ arr[:, :6]
    two = 2.0 * arr[:, 6]
    theta = 0.5 * math.atan2(float(w @ np.sin(two)), float(w @ np.cos(two)))
    # axis average is ambiguous by pi; keep the heading closest to the top box
    alt = normalize_yaw(theta + math.pi)
    if abs(normalize_yaw(alt - top.box.yaw)) < abs(normalize_yaw(theta - top.box.yaw)):
        theta = alt
    box = Box3D(cx, cy, cz, l, wd, h, theta)
    return Detection(box, top.category, max(d.score for d in members), top.iou_pred, top.direction_front)


def _nms_pass(dets: list, params: NmsParams):
    """One clustering sweep. Returns ``(outputs, changed)``."""
    iou_fn = pairwise_iou_3d if params.use_3d else pairwise_bev_iou
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    by_cat: dict = {}
    for i in order:
        by_cat.setdefault(dets[i].category, []).append(i)
    out, changed = [], False
    for idxs in by_cat.values():
        iou = iou_fn([dets[i].box for i in idxs], [dets[i].box for i in idxs])
        alive = np.ones(len(idxs), dtype=bool)
        for a in range(len(idxs)):
            if not alive[a]:
                continue
            members = np.flatnonzero(alive & (iou[a] >= params.iou_threshold))
            members = np.union1d(members, [a])
            alive[members] = False
            top = dets[idxs[a]]
            if len(members) == 1:
                out.append(top)
                continue
            changed = True
            dist = math.hypot(top.box.cx - params.origin[0], top.box.cy - params.origin[1])
            tau = params.tau(dist)
            weights = [1.0 if m == a else iou[a, m] ** tau for m in members]
            out.append(_merge([dets[idxs[m]] for m in members], weights, top))
    return out, changed


def di_nms(detections, params: NmsParams = NmsParams()) -> list:
    """Distance-variant IoU-weighted NMS.

    Each cluster (top-scoring box plus same-category boxes at or above the
    IoU threshold) collapses into one weighted-average box. Member weight
    is ``iou(member, top) ** tau(dist)`` with ``dist`` the top box's range
    from ``params.origin``, so near clusters follow the best-aligned boxes
    and far clusters average almost uniformly. Sweeps repeat until no
    cluster merges, so outputs are pairwise below the threshold and a
    second call is a no-op.
    """
    dets = [d for d in detections if d.score >= params.score_threshold]
    changed = True
    while changed and len(dets) > 1:
        dets, changed = _nms_pass(dets, params)
    return sorted(dets, key=lambda d: -d.score)


# ------------------------------------------------------------- JSON lines


def detection_to_dict(frame_id: str, det: Detection) -> dict:
    return {
        "frame_id": frame_id,
        "category": det.category,
        "score": det.score,
        "iou_pred": det.iou_pred,
        "direction_front": det.direction_front,
        "box": [float(v) for v in det.box.as_array()],
    }


def detection_from_dict(doc: dict, where: str = "$") -> tuple:
    for key in ("frame_id", "category", "score", "box"):
        if key not in doc:
            raise SchemaError(f"{where}.{key}")
    box = doc["box"]
    if len(box) != 7:
        raise ValidationError(f"{where}.box must have 7 values")
    det = Detection(Box3D.from_array(box), doc["category"], doc["score"], doc.get("iou_pred", 1.0),
                    doc.get("direction_front", True))
    return doc["frame_id"], det


def write_detections(path, by_frame) -> None:
    """Write ``{frame_id: [Detection, ...]}`` as JSON lines, frames in sorted order."""
    lines = [json.dumps(detection_to_dict(fid, d)) for fid in sorted(by_frame) for d in by_frame[fid]]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_detections(path) -> "OrderedDict[str, list]":
    out: OrderedDict = OrderedDict()
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}:{n}: invalid JSON ({exc.msg})") from exc
        fid, det = detection_from_dict(doc, f"line {n}")
        out.setdefault(fid, []).append(det)
    return out
