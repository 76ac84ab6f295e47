"""Student/teacher loss terms with analytic gradients, plus the EMA update."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ValidationError
from .geometry import _z_overlap, bev_intersection, bev_intersection_grad, iou_3d, pairwise_bev_iou
from .model import Box3D, normalize_yaw

P_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    omega1: float = 1.0
    omega2: float = 0.2
    mu_t: float = 1.0
    gamma_o: float = 1.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not math.isfinite(v) or v < 0:
                raise ValidationError(f"LossWeights.{name} must be finite and >= 0")


@dataclass(frozen=True)
class LossBreakdown:
    cls: float
    od_iou: float
    dir: float
    consist: float
    total: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _clamp(p: float) -> float:
    return min(1.0 - P_EPS, max(P_EPS, float(p)))


# ------------------------------------------------------------------ focal


def focal_loss(p: float, is_positive: bool, alpha: float = 0.25, gamma: float = 2.0) -> float:
    p = _clamp(p)
    if is_positive:
        return -alpha * (1.0 - p) ** gamma * math.log(p)
    return -(1.0 - alpha) * p**gamma * math.log(1.0 - p)


def focal_loss_grad(p: float, is_positive: bool, alpha: float = 0.25, gamma: float = 2.0) -> float:
    """dL/dp evaluated at the clamped probability."""
    p = _clamp(p)
    if is_positive:
        q = 1.0 - p
        tail = gamma * q ** (gamma - 1.0) * math.log(p) if gamma else 0.0
        return alpha * (tail - q**gamma / p)
    head = gamma * p ** (gamma - 1.0) * math.log(1.0 - p) if gamma else 0.0
    return -(1.0 - alpha) * (head - p**gamma / (1.0 - p))


# -------------------------------------------------------------- direction


def direction_loss(p_front: float, front_target: bool) -> float:
    p = _clamp(p_front)
    return -math.log(p) if front_target else -math.log(1.0 - p)


def direction_loss_grad(p_front: float, front_target: bool) -> float:
    p = _clamp(p_front)
    return -1.0 / p if front_target else 1.0 / (1.0 - p)


# ----------------------------------------------------------------- OD-IoU


def _enclosing(pred: Box3D, gt: Box3D):
    """Per-axis extremes of both boxes' corners and which box attains them."""
    ca, cb = pred.corners(), gt.corners()
    lo_a, hi_a, lo_b, hi_b = ca.min(0), ca.max(0), cb.min(0), cb.max(0)
    return np.minimum(lo_a, lo_b), np.maximum(hi_a, hi_b), lo_a < lo_b, hi_a > hi_b


def od_iou_loss(pred: Box3D, gt: Box3D, gamma_o: float = 1.0) -> float:
    """``1 - IoU3d + |c_p - c_g|^2 / diag^2 + gamma_o (1 - |cos dyaw|)``.

    ``diag`` spans the axis-aligned box around both boxes' corners.
    """
    if pred == gt:
        return 0.0
    lo, hi, _, _ = _enclosing(pred, gt)
    diag2 = float(np.sum((hi - lo) ** 2))
    rho2 = float(np.sum((pred.center - gt.center) ** 2))
    orient = 1.0 - abs(math.cos(pred.yaw - gt.yaw))
    return max(0.0, 1.0 - iou_3d(pred, gt) + rho2 / diag2 + gamma_o * orient)


def od_iou_loss_grad_center(pred: Box3D, gt: Box3D) -> np.ndarray:
    """d(od_iou_loss)/d(pred.cx, pred.cy, pred.cz); the orientation term has none."""
    area = bev_intersection(pred, gt)
    zo = _z_overlap(pred, gt)
    g_iou = np.zeros(3)
    if zo > 0.0 and area > 0.0:
        inter = area * zo
        union = pred.volume + gt.volume - inter
        d_inter = np.zeros(3)
        d_inter[:2] = bev_intersection_grad(pred, gt) * zo
        top = (pred.cz + 0.5 * pred.h < gt.cz + 0.5 * gt.h)
        bot = (pred.cz - 0.5 * pred.h > gt.cz - 0.5 * gt.h)
        d_inter[2] = area * (float(top) - float(bot))
        g_iou = d_inter * (pred.volume + gt.volume) / union**2

    lo, hi, lo_pred, hi_pred = _enclosing(pred, gt)
    ext = hi - lo
    diag2 = float(np.sum(ext**2))
    d_diag2 = 2.0 * ext * (hi_pred.astype(float) - lo_pred.astype(float))
    delta = pred.center - gt.center
    rho2 = float(np.sum(delta**2))
    g_dist = (2.0 * delta * diag2 - rho2 * d_diag2) / diag2**2
    return -g_iou + g_dist


# ------------------------------------------------------------ consistency


def smooth_l1(x, delta: float = 1.0):
    a = np.abs(np.asarray(x, dtype=np.float64))
    return np.where(a < delta, 0.5 * a**2 / delta, a - 0.5 * delta)


def match_greedy(student, teacher, match_iou: float) -> list:
    """``(teacher_index, student_index)`` pairs, teacher visited by descending score."""
    if not student or not teacher:
        return []
    iou = pairwise_bev_iou([d.box for d in teacher], [d.box for d in student])
    used = np.zeros(len(student), dtype=bool)
    pairs = []
    for t in sorted(range(len(teacher)), key=lambda i: -teacher[i].score):
        row = np.where(used, -1.0, iou[t])
        s = int(np.argmax(row))
        if row[s] >= match_iou:
            used[s] = True
            pairs.append((t, s))
    return pairs


def consistency_loss(student, teacher, match_iou: float = 0.3, delta: float = 1.0) -> float:
    """Mean over matched pairs of smooth-L1 box residuals plus smooth-L1 score gap."""
    if not 0.0 < match_iou <= 1.0:
        raise ValidationError("match_iou must lie in (0, 1]")
    student, teacher = list(student), list(teacher)
    pairs = match_greedy(student, teacher, match_iou)
    if not pairs:
        return 0.0
    total = 0.0
    for t, s in pairs:
        diff = student[s].box.as_array() - teacher[t].box.as_array()
        diff[6] = normalize_yaw(diff[6])
        total += float(smooth_l1(diff, delta).sum()) + float(smooth_l1(student[s].score - teacher[t].score, delta))
    return total / len(pairs)


# ------------------------------------------------------------------ total


def student_total_loss(cls: float, od: float, direction: float, consist: float,
                       w: LossWeights = LossWeights()) -> LossBreakdown:
    if min(cls, od, direction, consist) < 0:
        raise ValidationError("loss components must be >= 0")
    total = cls + w.omega1 * od + w.omega2 * direction + w.mu_t * consist
    return LossBreakdown(cls, od, direction, consist, total)


def ema_update(teacher, student, alpha: float) -> np.ndarray:
    t = np.asarray(teacher, dtype=np.float64)
    s = np.asarray(student, dtype=np.float64)
    if t.shape != s.shape:
        raise ValidationError(f"parameter shapes differ: {t.shape} vs {s.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError("alpha must lie in [0, 1]")
    if alpha == 1.0:
        return t.copy()
    if alpha == 0.0:
        return s.copy()
    return alpha * t + (1.0 - alpha) * s
