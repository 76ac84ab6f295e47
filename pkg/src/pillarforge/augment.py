"""Training-time and domain-adaptation augmentation.

Global similarity transforms, shape-aware per-object augmentation,
dataset statistics and source-to-target matching by object upsampling
and background dropout, and per-class box-size normalization.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .geometry import assign_points_to_boxes, farthest_point_sampling, points_in_box
from .model import Annotation, Box3D, Frame, PointCloud

log = logging.getLogger(__name__)

UPSAMPLE_JITTER = 0.01
# faces of a box in pyramid order: +x, -x, +y, -y, +z, -z
N_PYRAMIDS = 6
# boundary slack so points on a box face (e.g. corners) stay with their object
_BOX_EPS = 1e-9


@dataclass(frozen=True)
class DatasetStats:
    frame_count: int
    mean_points_per_frame: float
    mean_points_per_object: dict = field(default_factory=dict)
    object_count: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DatasetStats":
        return cls(**json.loads(text))


@dataclass(frozen=True)
class MatchPlan:
    object_upsample_factor: dict = field(default_factory=dict)
    background_dropout_rate: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.background_dropout_rate <= 1.0:
            raise ValidationError("background_dropout_rate must lie in [0, 1]")
        if any(f < 1.0 for f in self.object_upsample_factor.values()):
            raise ValidationError("upsample factors must be >= 1")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MatchPlan":
        return cls(**json.loads(text))


@dataclass(frozen=True)
class ClassSizeTable:
    mean_dims: dict = field(default_factory=dict)

    def __post_init__(self):
        dims = {k: tuple(float(x) for x in v) for k, v in self.mean_dims.items()}
        for k, v in dims.items():
            if len(v) != 3 or min(v) <= 0:
                raise ValidationError(f"class size for {k} must be three positive numbers")
        object.__setattr__(self, "mean_dims", dims)

    def to_json(self) -> str:
        return json.dumps({"mean_dims": {k: list(v) for k, v in self.mean_dims.items()}}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ClassSizeTable":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path) -> "ClassSizeTable":
        return cls.from_json(Path(path).read_text())


def _frame_like(frame: Frame, xyz, intensity, annotations=None, provenance=None) -> Frame:
    cloud = PointCloud(xyz, intensity, frame.cloud.frame_id, frame.cloud.sensor_origin)
    anns = frame.annotations if annotations is None else annotations
    return Frame(cloud, anns, frame.timestamp, provenance)


# ----------------------------------------------------------------- global


def global_transform(frame: Frame, rotation: float = 0.0, flip_y: bool = False, scale: float = 1.0) -> Frame:
    """Rotate about z, optionally mirror ``y -> -y``, then scale about the origin."""
    if scale <= 0:
        raise ValidationError("scale must be positive")
    c, s = math.cos(rotation), math.sin(rotation)

    def tf(xyz):
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        out = np.column_stack([c * xyz[:, 0] - s * xyz[:, 1], s * xyz[:, 0] + c * xyz[:, 1], xyz[:, 2]])
        if flip_y:
            out[:, 1] = -out[:, 1]
        return out * scale

    anns = []
    for a in frame.annotations:
        b = a.box
        (cx, cy, cz), = tf([b.center])
        yaw = b.yaw + rotation
        if flip_y:
            yaw = -yaw
        anns.append(Annotation(Box3D(cx, cy, cz, b.l * scale, b.w * scale, b.h * scale, yaw), a.category, a.object_id))
    origin = tuple(tf([frame.cloud.sensor_origin])[0])
    cloud = PointCloud(tf(frame.cloud.xyz), frame.cloud.intensity, frame.cloud.frame_id, origin)
    return Frame(cloud, tuple(anns), frame.timestamp, frame.provenance)


def random_global_transform(frame: Frame, seed: int, rotation_range=(-math.pi / 4, math.pi / 4),
                            flip_prob: float = 0.5, scale_range=(0.95, 1.05)):
    """Draw rotation, flip and scale from ``seed`` and apply them. Returns ``(frame, params)``."""
    rng = np.random.default_rng(seed)
    params = {
        "rotation": float(rng.uniform(*rotation_range)),
        "flip_y": bool(rng.random() < flip_prob),
        "scale": float(rng.uniform(*scale_range)),
    }
    return global_transform(frame, **params), params


# ------------------------------------------------------------ shape-aware


def pyramid_index(local: np.ndarray, box: Box3D) -> np.ndarray:
    """Which of the six center-apex pyramids each box-frame point falls in.

    Normalizing by the half-extents turns the box into a cube; a point
    belongs to the face whose normalized coordinate dominates (ties go to
    the lower face index).
    """
    half = 0.5 * np.array([box.l, box.w, box.h])
    u = np.asarray(local, dtype=np.float64).reshape(-1, 3) / half
    faces = np.column_stack([u[:, 0], -u[:, 0], u[:, 1], -u[:, 1], u[:, 2], -u[:, 2]])
    return np.argmax(faces, axis=1)


def _object_groups(frame: Frame):
    owner = assign_points_to_boxes(frame.cloud.xyz, frame.boxes, _BOX_EPS)
    return owner, [np.flatnonzero(owner == k) for k in range(len(frame.annotations))]


def _rebuild(frame: Frame, owner, replaced: dict) -> Frame:
    """Drop the original points of replaced objects and append their new points."""
    if not replaced:
        return frame
    keep = ~np.isin(owner, list(replaced))
    xyz = [frame.cloud.xyz[keep]]
    inten = [frame.cloud.intensity[keep]]
    prov = [frame.provenance[keep]] if frame.provenance is not None else None
    for k in sorted(replaced):
        new_xyz, new_int = replaced[k]
        xyz.append(new_xyz)
        inten.append(new_int)
        if prov is not None:
            prov.append(np.full(len(new_xyz), k, dtype=np.int64))
    return _frame_like(frame, np.vstack(xyz), np.concatenate(inten),
                       provenance=np.concatenate(prov) if prov is not None else None)


def shape_aware_augment(frame: Frame, p_dropout: float = 0.25, p_swap: float = 0.1, p_sparsify: float = 0.1,
                        seed: int = 0) -> Frame:
    """Per-object pyramid dropout, pyramid swap and FPS sparsification.

    Each annotated object is split into six pyramids (apex at the box
    center, one per face). Independently per object:

    * dropout removes every point of one random pyramid;
    * swap replaces one random pyramid's points with the same pyramid of
      another object of the same category, carried over through
      normalized box-frame coordinates (skipped when no partner exists);
    * sparsify keeps half of the points by farthest point sampling.

    Points outside all boxes are never modified.
    """
    for p in (p_dropout, p_swap, p_sparsify):
        if not 0.0 <= p <= 1.0:
            raise ValidationError("probabilities must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    owner, groups = _object_groups(frame)
    anns = frame.annotations
    half = [0.5 * np.array([a.box.l, a.box.w, a.box.h]) for a in anns]
    orig_local = [a.box.to_local(frame.cloud.xyz[g]) for a, g in zip(anns, groups)]
    orig_face = [pyramid_index(loc, a.box) for loc, a in zip(orig_local, anns)]

    replaced = {}
    for k, ann in enumerate(anns):
        draws = rng.random(4)
        drop_face, swap_face = int(rng.integers(N_PYRAMIDS)), int(rng.integers(N_PYRAMIDS))
        local = orig_local[k]
        inten = frame.cloud.intensity[groups[k]]
        face = orig_face[k]
        changed = False
        if draws[0] < p_dropout and len(local):
            keep = face != drop_face
            local, inten, face = local[keep], inten[keep], face[keep]
            changed = True
        if draws[1] < p_swap:
            partners = [j for j, b in enumerate(anns) if j != k and b.category == ann.category]
            if partners:
                j = partners[int(draws[2] * len(partners))]
                keep = face != swap_face
                take = orig_face[j] == swap_face
                carried = orig_local[j][take] / half[j] * half[k]
                local = np.vstack([local[keep], carried])
                inten = np.concatenate([inten[keep], frame.cloud.intensity[groups[j]][take]])
                face = np.concatenate([face[keep], np.full(len(carried), swap_face)])
                changed = True
        if draws[3] < p_sparsify and len(local) >= 2:
            sel = np.sort(farthest_point_sampling(local, len(local) // 2, 0))
            local, inten, face = local[sel], inten[sel], face[sel]
            changed = True
        if changed:
            replaced[k] = (ann.box.to_world(local), inten)
    return _rebuild(frame, owner, replaced)


# -------------------------------------------------------- domain matching


def compute_stats(frames) -> DatasetStats:
    """Mean points per frame and, per category, mean points inside each box."""
    frames = list(frames)
    if not frames:
        raise ValidationError("compute_stats needs at least one frame")
    totals, counts = {}, {}
    for fr in frames:
        for ann in fr.annotations:
            n = len(points_in_box(fr.cloud, ann.box, 0.0))
            totals[ann.category] = totals.get(ann.category, 0) + n
            counts[ann.category] = counts.get(ann.category, 0) + 1
    return DatasetStats(
        frame_count=len(frames),
        mean_points_per_frame=float(np.mean([len(fr.cloud) for fr in frames])),
        mean_points_per_object={c: totals[c] / counts[c] for c in sorted(counts)},
        object_count={c: counts[c] for c in sorted(counts)},
    )


def match_domains(source: DatasetStats, target: DatasetStats) -> MatchPlan:
    """Upsampling factors and background dropout that move ``source`` toward ``target``."""
    factors = {}
    for cat, t_mean in target.mean_points_per_object.items():
        s_mean = source.mean_points_per_object.get(cat, 0.0)
        if s_mean <= 0:
            if target.object_count.get(cat, 0):
                log.warning("category %s missing from source statistics; no upsampling factor", cat)
            continue
        factors[cat] = max(1.0, t_mean / s_mean)
    rate = 0.0
    if source.mean_points_per_frame > 0:
        rate = 1.0 - target.mean_points_per_frame / source.mean_points_per_frame
    return MatchPlan(factors, float(min(1.0, max(0.0, rate))))


def upsample_object_points(frame: Frame, factors: dict, seed: int = 0, jitter: float = UPSAMPLE_JITTER) -> Frame:
    """Grow each object's point count to ``round(factor * n)``.

    New points are midpoints of random distinct pairs of the object's
    points plus ``N(0, jitter^2)`` per axis, clamped into the box. Their
    intensity is the pair mean. Objects with fewer than two points are
    skipped with a warning.
    """
    if any(f < 1.0 for f in factors.values()):
        raise ValidationError("upsample factors must be >= 1")
    rng = np.random.default_rng(seed)
    owner, groups = _object_groups(frame)
    new_xyz, new_int, new_prov = [], [], []
    skipped = 0
    for k, ann in enumerate(frame.annotations):
        f = factors.get(ann.category)
        if f is None:
            continue
        idx = groups[k]
        n = len(idx)
        m = int(math.floor(f * n + 0.5)) - n
        if m <= 0:
            continue
        if n < 2:
            skipped += 1
            continue
        i = rng.integers(n, size=m)
        j = (i + rng.integers(1, n, size=m)) % n
        pts = frame.cloud.xyz[idx]
        mid = 0.5 * (pts[i] + pts[j]) + rng.normal(0.0, jitter, size=(m, 3))
        box = ann.box
        half = 0.5 * np.array([box.l, box.w, box.h])
        loc = np.clip(box.to_local(mid), -half, half)
        new_xyz.append(box.to_world(loc))
        inten = frame.cloud.intensity[idx]
        new_int.append(0.5 * (inten[i] + inten[j]))
        new_prov.append(np.full(m, k, dtype=np.int64))
    if skipped:
        log.warning("frame %s: %d object(s) with < 2 points not upsampled", frame.frame_id, skipped)
    if not new_xyz:
        return frame
    prov = None
    if frame.provenance is not None:
        prov = np.concatenate([frame.provenance] + new_prov)
    return _frame_like(frame, np.vstack([frame.cloud.xyz] + new_xyz),
                       np.concatenate([frame.cloud.intensity] + new_int), provenance=prov)


def background_mask(frame: Frame) -> np.ndarray:
    """Background points: provenance ``-1`` when recorded, else outside every box."""
    if frame.provenance is not None:
        return frame.provenance < 0
    owner = assign_points_to_boxes(frame.cloud.xyz, frame.boxes, 0.0)
    return owner < 0


def dropout_background(frame: Frame, rate: float, seed: int = 0) -> Frame:
    """Drop background points independently with probability ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise ValidationError("dropout rate must lie in [0, 1]")
    if rate == 0.0:
        return frame
    bg = background_mask(frame)
    drop = bg & (np.random.default_rng(seed).random(len(bg)) < rate)
    keep = np.flatnonzero(~drop)
    prov = frame.provenance[keep] if frame.provenance is not None else None
    return _frame_like(frame, frame.cloud.xyz[keep], frame.cloud.intensity[keep], provenance=prov)


def apply_match_plan(frame: Frame, plan: MatchPlan, seed: int = 0) -> Frame:
    """Upsample object points, then drop background points, per ``plan``."""
    ss = np.random.SeedSequence(seed)
    s_up, s_drop = (int(c.generate_state(1)[0]) for c in ss.spawn(2))
    out = upsample_object_points(frame, plan.object_upsample_factor, seed=s_up)
    return dropout_background(out, plan.background_dropout_rate, seed=s_drop)


# ---------------------------------------------------------- normalization


def class_size_table(frames) -> ClassSizeTable:
    sums, counts = {}, {}
    for fr in frames:
        for a in fr.annotations:
            s = sums.setdefault(a.category, np.zeros(3))
            s += (a.box.l, a.box.w, a.box.h)
            counts[a.category] = counts.get(a.category, 0) + 1
    return ClassSizeTable({c: tuple(sums[c] / counts[c]) for c in sorted(sums)})


def normalize_box_sizes(frames, table="from-data"):
    """Resize every box to its category's mean size and stretch its points along.

    Points inside each original box are scaled about the box center in the
    box frame by ``(l'/l, w'/w, h'/h)``; center and yaw stay fixed. Returns
    ``(frames, table)``.

    Raises:
        ValidationError: a category is missing from a provided table.
    """
    frames = list(frames)
    if not frames:
        raise ValidationError("normalize_box_sizes needs at least one frame")
    if isinstance(table, str):
        if table != "from-data":
            raise ValidationError(f"unknown table mode {table!r}")
        table = class_size_table(frames)
    out = []
    for fr in frames:
        owner, groups = _object_groups(fr)
        xyz = fr.cloud.xyz.copy()
        anns = []
        for k, a in enumerate(fr.annotations):
            if a.category not in table.mean_dims:
                raise ValidationError(f"category {a.category!r} missing from class size table")
            l, w, h = table.mean_dims[a.category]
            box = a.box
            if (l, w, h) == (box.l, box.w, box.h):
                anns.append(a)
                continue
            idx = groups[k]
            if len(idx):
                loc = box.to_local(fr.cloud.xyz[idx]) * np.array([l / box.l, w / box.w, h / box.h])
                xyz[idx] = box.to_world(loc)
            anns.append(Annotation(box.replace(l=l, w=w, h=h), a.category, a.object_id))
        out.append(_frame_like(fr, xyz, fr.cloud.intensity, tuple(anns), fr.provenance))
    return out, table
