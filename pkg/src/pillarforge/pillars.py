"""Pillarization: decorated P x N x 9 tensors and pseudo-image scatter maps."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import PillarforgeError, ValidationError
from .geometry import farthest_point_sampling
from .model import PointCloud

N_FEATURES = 9
_HEADER = struct.Struct("<5i")


@dataclass(frozen=True)
class PillarConfig:
    """Grid definition. ``range`` is ``(x_min, x_max, y_min, y_max, z_min, z_max)``."""

    range: tuple
    voxel_size: tuple = (0.2, 0.2, 6.0)
    max_points_per_pillar: int = 40
    max_pillars: int = 20_000

    def __post_init__(self):
        rng = tuple(float(v) for v in self.range)
        vox = tuple(float(v) for v in self.voxel_size)
        if len(rng) != 6 or len(vox) != 3:
            raise ValidationError("range needs 6 values and voxel_size 3")
        if not all(math.isfinite(v) for v in rng + vox):
            raise ValidationError("range and voxel_size must be finite")
        x0, x1, y0, y1, z0, z1 = rng
        if not (x1 > x0 and y1 > y0 and z1 > z0):
            raise ValidationError("range maxima must exceed minima")
        if min(vox) <= 0:
            raise ValidationError("voxel sizes must be positive")
        if abs(vox[2] - (z1 - z0)) > 1e-9:
            raise ValidationError(f"voxel z size {vox[2]} must equal the z range {z1 - z0}")
        if self.max_points_per_pillar < 1 or self.max_pillars < 1:
            raise ValidationError("pillar caps must be positive")
        object.__setattr__(self, "range", rng)
        object.__setattr__(self, "voxel_size", vox)

    @classmethod
    def for_range(cls, range, vx=0.2, vy=0.2, **kw) -> "PillarConfig":
        """Config whose z voxel spans the whole z range."""
        return cls(range, (vx, vy, float(range[5]) - float(range[4])), **kw)

    @property
    def grid_shape(self):
        """``(H, W)`` of the pseudo-image."""
        x0, x1, y0, y1, _, _ = self.range
        vx, vy, _ = self.voxel_size
        return math.ceil((y1 - y0) / vy - 1e-9), math.ceil((x1 - x0) / vx - 1e-9)

    def to_dict(self) -> dict:
        return {
            "range": list(self.range),
            "voxel_size": list(self.voxel_size),
            "max_points_per_pillar": self.max_points_per_pillar,
            "max_pillars": self.max_pillars,
        }


@dataclass(frozen=True, eq=False)
class PillarTensor:
    """Pillars sorted by ``(iy, ix)``.

    ``coords[p] = (ix, iy)``; ``point_indices`` holds the original cloud
    index of every retained point (``-1`` on padding rows).
    """

    features: np.ndarray
    coords: np.ndarray
    num_points: np.ndarray
    config: PillarConfig
    point_indices: np.ndarray | None = None

    def __len__(self):
        return len(self.coords)

    @property
    def grid_shape(self):
        return self.config.grid_shape

    def to_bytes(self) -> bytes:
        h, w = self.grid_shape
        p, n = self.features.shape[:2]
        return b"".join([
            _HEADER.pack(p, n, N_FEATURES, h, w),
            np.ascontiguousarray(self.coords, dtype="<i4").tobytes(),
            np.ascontiguousarray(self.num_points, dtype="<i4").tobytes(),
            np.ascontiguousarray(self.features, dtype="<f4").tobytes(),
        ])

    def write(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())


@dataclass(frozen=True, eq=False)
class PillarBlob:
    """Contents of a serialized tensor (features in float32)."""

    features: np.ndarray
    coords: np.ndarray
    num_points: np.ndarray
    height: int
    width: int


def read_pillar_blob(path_or_bytes) -> PillarBlob:
    data = path_or_bytes if isinstance(path_or_bytes, (bytes, bytearray)) else Path(path_or_bytes).read_bytes()
    if len(data) < _HEADER.size:
        raise PillarforgeError("pillar blob shorter than its header")
    p, n, c, h, w = _HEADER.unpack_from(data)
    want = _HEADER.size + 4 * (2 * p + p + p * n * c)
    if len(data) != want or min(p, n, c, h, w) < 0:
        raise PillarforgeError(f"pillar blob size {len(data)} does not match header (expected {want})")
    off = _HEADER.size
    coords = np.frombuffer(data, "<i4", 2 * p, off).reshape(p, 2).astype(np.int64)
    off += 8 * p
    num = np.frombuffer(data, "<i4", p, off).astype(np.int64)
    off += 4 * p
    feats = np.frombuffer(data, "<f4", p * n * c, off).reshape(p, n, c).copy()
    return PillarBlob(feats, coords, num, h, w)


def _empty(config: PillarConfig) -> PillarTensor:
    n = config.max_points_per_pillar
    return PillarTensor(np.zeros((0, n, N_FEATURES)), np.zeros((0, 2), dtype=np.int64),
                        np.zeros(0, dtype=np.int64), config, np.zeros((0, n), dtype=np.int64))


def pillarize(cloud: PointCloud, config: PillarConfig, seed: int = 0) -> PillarTensor:
    """Bucket in-range points into pillars and decorate them.

    A point is in range when ``x_min <= x < x_max``, ``y_min <= y < y_max``
    and ``z_min <= z <= z_max``. Oversized pillars are thinned by farthest
    point sampling from their lowest-index point; retained points keep
    their original order. If more than ``max_pillars`` pillars are
    occupied, the most populated survive (lower ``(iy, ix)`` on ties).

    ``seed`` is accepted for interface symmetry; the result does not
    depend on it.
    """
    del seed
    x0, x1, y0, y1, z0, z1 = config.range
    vx, vy, _ = config.voxel_size
    h, w = config.grid_shape
    cap = config.max_points_per_pillar

    xyz = cloud.xyz
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    keep = np.flatnonzero((x >= x0) & (x < x1) & (y >= y0) & (y < y1) & (z >= z0) & (z <= z1))
    if len(keep) == 0:
        return _empty(config)

    ix = np.minimum(np.floor((x[keep] - x0) / vx).astype(np.int64), w - 1)
    iy = np.minimum(np.floor((y[keep] - y0) / vy).astype(np.int64), h - 1)
    key = iy * w + ix
    order = np.argsort(key, kind="stable")  # groups by cell, original order within
    cells, starts, counts = np.unique(key[order], return_index=True, return_counts=True)

    members_sorted = keep[order]
    gid = np.repeat(np.arange(len(cells)), counts)
    rank = np.arange(len(order)) - starts[gid]
    chosen = np.arange(len(cells))
    if len(cells) > config.max_pillars:
        # densest first; cells are ascending so a stable sort breaks ties by lower (iy, ix)
        chosen = np.sort(np.argsort(-counts, kind="stable")[: config.max_pillars])
    new_id = np.full(len(cells), -1, dtype=np.int64)
    new_id[chosen] = np.arange(len(chosen))
    cells, starts, counts = cells[chosen], starts[chosen], counts[chosen]

    p = len(cells)
    idx = np.full((p, cap), -1, dtype=np.int64)
    num = np.minimum(counts, cap)
    pid = new_id[gid]
    direct = (pid >= 0) & (rank < cap)
    direct &= counts[np.maximum(pid, 0)] <= cap
    idx[pid[direct], rank[direct]] = members_sorted[direct]
    for k in np.flatnonzero(counts > cap):
        members = members_sorted[starts[k]: starts[k] + counts[k]]
        sel = np.sort(farthest_point_sampling(xyz[members], cap, 0))
        idx[k] = members[sel]

    valid = idx >= 0
    flat = idx[valid]
    pts = xyz[flat]
    prow = np.nonzero(valid)[0]
    means = np.stack([np.bincount(prow, pts[:, a], minlength=p) for a in range(3)], axis=1) / num[:, None]
    cix, ciy = cells % w, cells // w
    centers = np.column_stack([x0 + (cix + 0.5) * vx, y0 + (ciy + 0.5) * vy])

    feats = np.zeros((p, cap, N_FEATURES))
    feats[valid, 0:3] = pts
    feats[valid, 3] = cloud.intensity[flat]
    feats[valid, 4:7] = pts - means[prow]
    feats[valid, 7:9] = pts[:, :2] - centers[prow]
    return PillarTensor(feats, np.column_stack([cix, ciy]), num, config, idx)


@dataclass(frozen=True, eq=False)
class PseudoImageIndex:
    """Placement of each pillar in the ``H x W`` pseudo-image as ``(iy, ix)``."""

    height: int
    width: int
    mapping: np.ndarray

    def coords(self) -> np.ndarray:
        """Back to ``(ix, iy)`` pillar coordinates."""
        return self.mapping[:, ::-1].copy()

    def scatter(self, pillar_features) -> np.ndarray:
        """Place per-pillar vectors ``(P, C)`` into a zero ``(C, H, W)`` image."""
        f = np.asarray(pillar_features, dtype=np.float64)
        if f.ndim != 2 or len(f) != len(self.mapping):
            raise ValidationError("pillar_features must have shape (P, C)")
        img = np.zeros((f.shape[1], self.height, self.width))
        img[:, self.mapping[:, 0], self.mapping[:, 1]] = f.T
        return img


def scatter_indices(tensor: PillarTensor) -> PseudoImageIndex:
    h, w = tensor.grid_shape
    coords = np.asarray(tensor.coords, dtype=np.int64).reshape(-1, 2)
    return PseudoImageIndex(h, w, coords[:, ::-1].copy())
