"""Semi-synthetic frame composition.

Simulated object points are cut out of a synthetic frame, seated on the
ground of a real background scan, and merged with it after clearing the
background inside and beneath each object.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import CoverageError, ValidationError
from .geometry import HeightProfile, assign_points_to_boxes
from .model import Annotation, Frame, PointCloud

log = logging.getLogger(__name__)

DEFAULT_CLEARANCE = 0.05


@dataclass(frozen=True)
class NoiseSpec:
    """Radial Gaussian noise ``N(mu, sigma^2)`` applied to a fraction of points."""

    sigma: float = 0.1
    mu: float = 0.0
    apply_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValidationError("sigma must be non-negative")
        if not 0.0 <= self.apply_fraction <= 1.0:
            raise ValidationError("apply_fraction must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class ObjectPointSet:
    annotation: Annotation
    xyz: np.ndarray
    intensity: np.ndarray

    def __len__(self):
        return len(self.xyz)


def gaussian_pdf(z, mu=0.0, sigma=1.0):
    """Normal density with the usual negative exponent."""
    return np.exp(-((np.asarray(z) - mu) ** 2) / (2.0 * sigma**2)) / (sigma * math.sqrt(2.0 * math.pi))


def add_raycast_noise(cloud: PointCloud, spec: NoiseSpec) -> PointCloud:
    """Displace a seeded subset of points along their sensor rays.

    ``ceil(apply_fraction * n)`` points are drawn without replacement; each
    moves by ``mu + sigma * g`` (``g`` standard normal) along the unit
    vector from ``cloud.sensor_origin`` to the point. Points sitting on the
    origin have no ray and stay put.
    """
    n = len(cloud)
    m = int(math.ceil(spec.apply_fraction * n - 1e-12)) if n else 0
    if m == 0 or (spec.sigma == 0.0 and spec.mu == 0.0):
        return cloud
    rng = np.random.default_rng(spec.seed)
    idx = np.sort(rng.choice(n, m, replace=False))
    shift = spec.mu + spec.sigma * rng.standard_normal(m)
    origin = np.asarray(cloud.sensor_origin)
    ray = cloud.xyz[idx] - origin
    length = np.linalg.norm(ray, axis=1)
    ok = length > 0
    xyz = cloud.xyz.copy()
    xyz[idx[ok]] += ray[ok] / length[ok, None] * shift[ok, None]
    return cloud.with_arrays(xyz, cloud.intensity)


def dropout_mask(n: int, rate: float, seed: int) -> np.ndarray:
    if not 0.0 <= rate <= 1.0:
        raise ValidationError("dropout rate must lie in [0, 1]")
    return np.random.default_rng(seed).random(n) >= rate


def dropout_points(cloud: PointCloud, rate: float, seed: int) -> PointCloud:
    """Drop each point independently with probability ``rate``; survivors are untouched."""
    return cloud.take(np.flatnonzero(dropout_mask(len(cloud), rate, seed)))


def extract_object_points(frame: Frame, margin: float = DEFAULT_CLEARANCE) -> list:
    """One :class:`ObjectPointSet` per annotation.

    Points inside several (margin-grown) boxes go to the nearest box
    center, earlier annotation on ties. Empty sets are kept and counted
    in a warning.
    """
    owner = assign_points_to_boxes(frame.cloud.xyz, frame.boxes, margin)
    out = []
    for k, ann in enumerate(frame.annotations):
        idx = np.flatnonzero(owner == k)
        out.append(ObjectPointSet(ann, frame.cloud.xyz[idx], frame.cloud.intensity[idx]))
    empty = sum(1 for s in out if len(s) == 0)
    if empty:
        log.warning("frame %s: %d annotation(s) without points", frame.frame_id, empty)
    return out


def _check_footprints(boxes, profile: HeightProfile):
    for k, box in enumerate(boxes):
        fp = box.footprint()
        if not np.all(profile.covers(fp[:, 0], fp[:, 1])):
            raise CoverageError(f"box {k} at ({box.cx:.2f}, {box.cy:.2f}) lies outside the height profile")


def clearance_mask(xyz, boxes, profile: HeightProfile, clearance: float = DEFAULT_CLEARANCE) -> np.ndarray:
    """True for points to remove: inside a box, or under it down to the ground.

    Rule (a): within ``clearance`` of the box volume. Rule (b): inside the
    footprint (grown by ``clearance``), below the box bottom and at or above
    ``ground z - clearance`` where ground z comes from ``profile`` at the
    point's own x-y.
    """
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    remove = np.zeros(len(xyz), dtype=bool)
    for box in boxes:
        loc = box.to_local(xyz)
        in_fp = (np.abs(loc[:, 0]) <= 0.5 * box.l + clearance) & (np.abs(loc[:, 1]) <= 0.5 * box.w + clearance)
        if not in_fp.any():
            continue
        inside = in_fp & (np.abs(loc[:, 2]) <= 0.5 * box.h + clearance)
        cand = np.flatnonzero(in_fp & ~inside & (loc[:, 2] < 0))
        below = np.zeros(len(xyz), dtype=bool)
        if len(cand):
            px, py = xyz[cand, 0], xyz[cand, 1]
            cov = profile.covers(px, py)
            ground = np.full(len(cand), -np.inf)
            ground[cov] = profile.z_at(px[cov], py[cov]) if cov.any() else ground[cov]
            zc = xyz[cand, 2]
            below[cand] = (zc < box.bottom) & (zc >= ground - clearance)
        remove |= inside | below
    return remove


def clear_insertion_region(background: PointCloud, boxes, profile: HeightProfile,
                           clearance: float = DEFAULT_CLEARANCE) -> PointCloud:
    """Remove background points inside or beneath the given boxes.

    Raises:
        CoverageError: a box footprint reaches outside ``profile``.
    """
    boxes = list(boxes)
    _check_footprints(boxes, profile)
    return background.take(np.flatnonzero(~clearance_mask(background.xyz, boxes, profile, clearance)))


def place_objects(objects, profile: HeightProfile) -> list:
    """Translate each object vertically so its box bottom rests on the ground.

    The shift is ``ground(cx, cy) + h/2 - cz`` using the profile cell that
    contains the box center; x, y and yaw are unchanged.
    """
    out = []
    for obj in objects:
        box = obj.annotation.box
        if not bool(profile.covers(box.cx, box.cy)):
            raise CoverageError(f"object {obj.annotation.object_id} center outside the height profile")
        dz = profile.z_at(box.cx, box.cy) + 0.5 * box.h - box.cz
        new_box = box.replace(cz=box.cz + dz)
        xyz = obj.xyz.copy()
        xyz[:, 2] += dz
        ann = Annotation(new_box, obj.annotation.category, obj.annotation.object_id)
        out.append(ObjectPointSet(ann, xyz, obj.intensity.copy()))
    return out


@dataclass(frozen=True, eq=False)
class Composition:
    """Result of :func:`compose_frame` with bookkeeping for manifests."""

    frame: Frame
    removed_background: int
    dropped_background: int
    noised_background: int
    empty_objects: int


def compose(background: PointCloud, synthetic: Frame, profile: HeightProfile, noise: NoiseSpec,
            dropout_rate: float = 0.0, clearance: float = DEFAULT_CLEARANCE, seed: int = 0) -> Composition:
    """Build a semi-synthetic frame and report what happened to the background.

    Steps: extract object points, seat them on the profile, clear the
    background inside and under the seated boxes, drop out then noise the
    background, cull any background point the noise pushed into a box,
    and append the object points. The output cloud keeps the background's
    frame settings but takes the synthetic frame's id.
    """
    objects = extract_object_points(synthetic, margin=clearance)
    placed = place_objects(objects, profile)
    boxes = [o.annotation.box for o in placed]

    bg = clear_insertion_region(background, boxes, profile, clearance)
    removed = len(background) - len(bg)

    keep = dropout_mask(len(bg), dropout_rate, seed)
    bg = bg.take(np.flatnonzero(keep))
    dropped = int((~keep).sum())
    n_noised = int(math.ceil(noise.apply_fraction * len(bg) - 1e-12)) if len(bg) else 0
    bg = add_raycast_noise(bg, noise)
    if n_noised and boxes:
        inside = np.zeros(len(bg), dtype=bool)
        for box in boxes:
            loc = box.to_local(bg.xyz)
            inside |= (
                (np.abs(loc[:, 0]) <= 0.5 * box.l + clearance)
                & (np.abs(loc[:, 1]) <= 0.5 * box.w + clearance)
                & (np.abs(loc[:, 2]) <= 0.5 * box.h + clearance)
            )
        bg = bg.take(np.flatnonzero(~inside))

    xyz = [bg.xyz] + [o.xyz for o in placed]
    inten = [bg.intensity] + [o.intensity for o in placed]
    prov = [np.full(len(bg), -1, dtype=np.int64)] + [np.full(len(o), k, dtype=np.int64) for k, o in enumerate(placed)]
    cloud = PointCloud(np.vstack(xyz), np.concatenate(inten), synthetic.frame_id, background.sensor_origin)
    frame = Frame(cloud, tuple(o.annotation for o in placed), synthetic.timestamp, np.concatenate(prov))
    return Composition(
        frame=frame,
        removed_background=removed,
        dropped_background=dropped,
        noised_background=n_noised,
        empty_objects=sum(1 for o in placed if len(o) == 0),
    )


def compose_frame(background: PointCloud, synthetic: Frame, profile: HeightProfile, noise: NoiseSpec,
                  dropout_rate: float = 0.0, clearance: float = DEFAULT_CLEARANCE, seed: int = 0) -> Frame:
    """Semi-synthetic frame with per-point provenance (see :func:`compose`)."""
    return compose(background, synthetic, profile, noise, dropout_rate, clearance, seed).frame
