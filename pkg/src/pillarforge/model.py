"""Domain value types shared by every stage of the pipeline.

Conventions: right-handed frame, z up, yaw counter-clockwise about +z
measured from +x. A box's bottom face sits at ``cz - h / 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ValidationError

CATEGORIES = ("Car", "Van", "Truck", "Bus", "Pedestrian", "Bicycle", "Motorbike", "Trailer", "Other")


def normalize_yaw(yaw: float) -> float:
    """Map an angle into (-pi, pi] without changing the rotation it represents."""
    r = math.remainder(float(yaw), 2.0 * math.pi)
    if r <= -math.pi:
        r += 2.0 * math.pi
    return r


def _frozen_array(values, dtype=np.float64, shape=None) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Point:
    x: float
    y: float
    z: float
    intensity: float = 0.0


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An ordered set of points stored column-wise.

    ``xyz`` is an ``(N, 3)`` float64 array and ``intensity`` an ``(N,)``
    array in [0, 1]. Both are read-only; derive new clouds with
    :meth:`with_arrays` or :meth:`take`.
    """

    xyz: np.ndarray
    intensity: np.ndarray
    frame_id: str = "frame"
    sensor_origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        xyz = _frozen_array(self.xyz, shape=(-1, 3))
        inten = _frozen_array(self.intensity, shape=(-1,))
        if len(inten) != len(xyz):
            raise ValidationError(f"intensity length {len(inten)} != point count {len(xyz)}")
        if not self.frame_id:
            raise ValidationError("frame_id must be non-empty")
        if not np.all(np.isfinite(xyz)):
            raise ValidationError("point coordinates must be finite")
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "intensity", inten)
        object.__setattr__(self, "sensor_origin", tuple(float(v) for v in self.sensor_origin))

    @classmethod
    def empty(cls, frame_id="frame", sensor_origin=(0.0, 0.0, 0.0)) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0), frame_id, sensor_origin)

    @classmethod
    def from_points(cls, points: Iterable[Point], frame_id="frame", sensor_origin=(0.0, 0.0, 0.0)):
        pts = list(points)
        xyz = np.array([[p.x, p.y, p.z] for p in pts], dtype=np.float64).reshape(-1, 3)
        inten = np.array([p.intensity for p in pts], dtype=np.float64)
        return cls(xyz, inten, frame_id, sensor_origin)

    def __len__(self) -> int:
        return len(self.xyz)

    def __getitem__(self, i: int) -> Point:
        x, y, z = self.xyz[i]
        return Point(float(x), float(y), float(z), float(self.intensity[i]))

    def __iter__(self) -> Iterator[Point]:
        for i in range(len(self)):
            yield self[i]

    @property
    def points(self) -> tuple:
        return tuple(self)

    def with_arrays(self, xyz, intensity) -> "PointCloud":
        return PointCloud(xyz, intensity, self.frame_id, self.sensor_origin)

    def take(self, indices) -> "PointCloud":
        indices = np.asarray(indices)
        return self.with_arrays(self.xyz[indices], self.intensity[indices])

    def equals(self, other: "PointCloud", atol: float = 0.0) -> bool:
        if len(self) != len(other) or self.frame_id != other.frame_id:
            return False
        if atol == 0.0:
            return bool(np.array_equal(self.xyz, other.xyz) and np.array_equal(self.intensity, other.intensity))
        return bool(
            np.allclose(self.xyz, other.xyz, rtol=0, atol=atol)
            and np.allclose(self.intensity, other.intensity, rtol=0, atol=atol)
        )


@dataclass(frozen=True)
class Box3D:
    """Oriented cuboid. ``l`` runs along the heading, ``yaw`` in (-pi, pi]."""

    cx: float
    cy: float
    cz: float
    l: float
    w: float
    h: float
    yaw: float = 0.0

    def __post_init__(self):
        for name in ("cx", "cy", "cz", "l", "w", "h", "yaw"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValidationError(f"Box3D.{name} must be finite, got {v}")
            object.__setattr__(self, name, v)
        if self.l <= 0 or self.w <= 0 or self.h <= 0:
            raise ValidationError(f"Box3D extents must be positive, got ({self.l}, {self.w}, {self.h})")
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Box3D":
        cx, cy, cz, l, w, h, yaw = (float(v) for v in values)
        return cls(cx, cy, cz, l, w, h, yaw)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz, self.l, self.w, self.h, self.yaw])

    def bev(self) -> tuple:
        """``(cx, cy, l, w, yaw)``, the footprint parameters used by the BEV kernels."""
        return (self.cx, self.cy, self.l, self.w, self.yaw)

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz])

    @property
    def bottom(self) -> float:
        return self.cz - 0.5 * self.h

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    def footprint(self) -> np.ndarray:
        """Four BEV corners, counter-clockwise, shape ``(4, 2)``."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = 0.5 * self.l, 0.5 * self.w
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.cx, self.cy])

    def corners(self) -> np.ndarray:
        """Eight 3D corners, bottom face first, shape ``(8, 3)``."""
        fp = self.footprint()
        lo = np.column_stack([fp, np.full(4, self.cz - 0.5 * self.h)])
        hi = np.column_stack([fp, np.full(4, self.cz + 0.5 * self.h)])
        return np.vstack([lo, hi])

    def to_local(self, xyz: np.ndarray) -> np.ndarray:
        """World coordinates to the box frame (origin at center, x along heading)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        d = np.asarray(xyz, dtype=np.float64).reshape(-1, 3) - self.center
        out = np.empty_like(d)
        out[:, 0] = c * d[:, 0] + s * d[:, 1]
        out[:, 1] = -s * d[:, 0] + c * d[:, 1]
        out[:, 2] = d[:, 2]
        return out

    def to_world(self, local: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        p = np.asarray(local, dtype=np.float64).reshape(-1, 3)
        out = np.empty_like(p)
        out[:, 0] = c * p[:, 0] - s * p[:, 1] + self.cx
        out[:, 1] = s * p[:, 0] + c * p[:, 1] + self.cy
        out[:, 2] = p[:, 2] + self.cz
        return out

    def replace(self, **changes) -> "Box3D":
        return replace(self, **changes)


@dataclass(frozen=True)
class Annotation:
    box: Box3D
    category: str
    object_id: str

    def __post_init__(self):
        if not self.category:
            raise ValidationError("annotation category must be non-empty")


@dataclass(frozen=True, eq=False)
class Frame:
    """A point cloud with its labels.

    ``provenance``, when present, has one entry per point: ``-1`` for
    background points, otherwise the index of the annotation the point was
    inserted for.
    """

    cloud: PointCloud
    annotations: tuple = ()
    timestamp: float | None = None
    provenance: np.ndarray | None = None

    def __post_init__(self):
        anns = tuple(self.annotations)
        ids = [a.object_id for a in anns]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate object_id in frame {self.cloud.frame_id}")
        object.__setattr__(self, "annotations", anns)
        if self.provenance is not None:
            prov = _frozen_array(self.provenance, dtype=np.int64, shape=(-1,))
            if len(prov) != len(self.cloud):
                raise ValidationError("provenance length must equal point count")
            object.__setattr__(self, "provenance", prov)

    @property
    def frame_id(self) -> str:
        return self.cloud.frame_id

    @property
    def boxes(self) -> list:
        return [a.box for a in self.annotations]


@dataclass(frozen=True)
class Detection:
    box: Box3D
    category: str
    score: float
    iou_pred: float = 1.0
    direction_front: bool = True

    def __post_init__(self):
        for name in ("score", "iou_pred"):
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"Detection.{name} must lie in [0, 1], got {v}")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "direction_front", bool(self.direction_front))


@dataclass(frozen=True)
class SensorSpec:
    """Simulated Ouster OS1-64 (gen. 2) characteristics."""

    channels: int = 64
    range_m: float = 120.0
    points_per_second: int = 2_621_480
    rotation_rate_hz: float = 20.0
    vfov_deg: float = 45.0
    hfov_deg: float = 360.0
    noise_sigma: float = 0.1
    dropoff_rate: float = 0.1
    origin: tuple = field(default=(0.0, 0.0, 0.0))

    def __post_init__(self):
        for name in ("channels", "range_m", "points_per_second", "rotation_rate_hz", "vfov_deg", "hfov_deg"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"SensorSpec.{name} must be positive")
        if self.noise_sigma < 0:
            raise ValidationError("SensorSpec.noise_sigma must be non-negative")
        if not 0.0 <= self.dropoff_rate <= 1.0:
            raise ValidationError("SensorSpec.dropoff_rate must lie in [0, 1]")
