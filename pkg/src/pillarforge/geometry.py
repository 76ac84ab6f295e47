"""Rotated-box and point-set geometry.

IoU of yaw-rotated boxes, point-in-box queries, RANSAC ground-plane
fitting, ground height profiles and farthest point sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from ._pykernels import clip_rects
from .errors import CoverageError, FitError, ProfileError, ValidationError
from .model import Box3D, PointCloud


@dataclass(frozen=True, eq=False)
class GroundPlane:
    """Plane ``normal . p + d = 0`` with ``normal[2] > 0``."""

    normal: np.ndarray
    d: float
    inlier_count: int
    threshold: float

    def distance(self, xyz) -> np.ndarray:
        """Signed distance of each point (positive above the ground)."""
        return np.asarray(xyz, dtype=np.float64).reshape(-1, 3) @ self.normal + self.d

    def height_at(self, x, y):
        nx, ny, nz = self.normal
        return -(nx * np.asarray(x) + ny * np.asarray(y) + self.d) / nz


@dataclass(frozen=True, eq=False)
class HeightProfile:
    """Ground elevation on a regular x-y grid.

    ``grid[ix, iy]`` is the ground z of the cell spanning
    ``origin_xy + (ix, iy) * cell_size`` to one cell further. ``valid``
    marks cells that held ground points before hole filling.
    """

    origin_xy: tuple
    cell_size: float
    grid: np.ndarray
    valid: np.ndarray

    @property
    def shape(self):
        return self.grid.shape

    @property
    def extent(self):
        """``(x_min, x_max, y_min, y_max)`` covered by the grid."""
        x0, y0 = self.origin_xy
        nx, ny = self.grid.shape
        return (x0, x0 + nx * self.cell_size, y0, y0 + ny * self.cell_size)

    def cell_index(self, x, y):
        x0, y0 = self.origin_xy
        ix = np.floor((np.asarray(x, dtype=np.float64) - x0) / self.cell_size).astype(np.int64)
        iy = np.floor((np.asarray(y, dtype=np.float64) - y0) / self.cell_size).astype(np.int64)
        return ix, iy

    def covers(self, x, y):
        ix, iy = self.cell_index(x, y)
        nx, ny = self.grid.shape
        return (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)

    def z_at(self, x, y):
        """Ground z of the cell containing each ``(x, y)``.

        Raises:
            CoverageError: a query falls outside the grid.
        """
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if not np.all(self.covers(x, y)):
            raise CoverageError(f"query outside height profile extent {self.extent}")
        ix, iy = self.cell_index(x, y)
        out = self.grid[ix, iy]
        return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------- IoU


def bev_intersection(a: Box3D, b: Box3D) -> float:
    return kernels.rect_inter_area(a.bev(), b.bev())


def bev_iou(a: Box3D, b: Box3D) -> float:
    """Intersection over union of the two footprints in the x-y plane."""
    inter = bev_intersection(a, b)
    union = a.l * a.w + b.l * b.w - inter
    return min(1.0, max(0.0, inter / union))


def _z_overlap(a: Box3D, b: Box3D) -> float:
    return max(0.0, min(a.cz + 0.5 * a.h, b.cz + 0.5 * b.h) - max(a.cz - 0.5 * a.h, b.cz - 0.5 * b.h))


def iou_3d(a: Box3D, b: Box3D) -> float:
    zo = _z_overlap(a, b)
    if zo <= 0.0:
        return 0.0
    inter = bev_intersection(a, b) * zo
    union = a.volume + b.volume - inter
    return min(1.0, max(0.0, inter / union))


def _box_rows(boxes):
    if len(boxes) == 0:
        return np.zeros((0, 7))
    return np.array([b.as_array() for b in boxes], dtype=np.float64)


def pairwise_bev_iou(boxes_a, boxes_b) -> np.ndarray:
    """``(n, m)`` BEV IoU matrix between two box lists."""
    A, B = _box_rows(boxes_a), _box_rows(boxes_b)
    inter = kernels.pairwise_inter_area(A[:, [0, 1, 3, 4, 6]], B[:, [0, 1, 3, 4, 6]])
    union = (A[:, 3] * A[:, 4])[:, None] + (B[:, 3] * B[:, 4])[None, :] - inter
    return np.clip(inter / union, 0.0, 1.0) if inter.size else inter


def pairwise_iou_3d(boxes_a, boxes_b) -> np.ndarray:
    A, B = _box_rows(boxes_a), _box_rows(boxes_b)
    inter = kernels.pairwise_inter_area(A[:, [0, 1, 3, 4, 6]], B[:, [0, 1, 3, 4, 6]])
    if not inter.size:
        return inter
    top = np.minimum((A[:, 2] + 0.5 * A[:, 5])[:, None], (B[:, 2] + 0.5 * B[:, 5])[None, :])
    bot = np.maximum((A[:, 2] - 0.5 * A[:, 5])[:, None], (B[:, 2] - 0.5 * B[:, 5])[None, :])
    vol = inter * np.maximum(0.0, top - bot)
    union = (A[:, 3] * A[:, 4] * A[:, 5])[:, None] + (B[:, 3] * B[:, 4] * B[:, 5])[None, :] - vol
    return np.clip(vol / union, 0.0, 1.0)


def bev_intersection_grad(a: Box3D, b: Box3D) -> np.ndarray:
    """d(footprint intersection area)/d(a.cx, a.cy).

    Translating ``a`` sweeps only the intersection edges that lie on
    ``a``'s boundary; each contributes its length times its outward normal.
    """
    poly, labels = clip_rects(a.bev(), b.bev())
    g = np.zeros(2)
    for k in range(len(poly)):
        if labels[k] != "a":
            continue
        x1, y1 = poly[k - 1]
        x2, y2 = poly[k]
        g[0] += y2 - y1
        g[1] -= x2 - x1
    return g


# ----------------------------------------------------------------- points


def points_in_box(cloud, box: Box3D, margin: float = 0.0) -> np.ndarray:
    """Indices of points inside ``box`` grown by ``margin`` on every face.

    ``cloud`` may be a :class:`PointCloud` or an ``(N, 3)`` array.
    """
    if margin < 0:
        raise ValidationError("margin must be non-negative")
    xyz = cloud.xyz if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    return np.flatnonzero(_in_box_mask(xyz, box, margin))


def _in_box_mask(xyz, box: Box3D, margin: float) -> np.ndarray:
    loc = box.to_local(xyz)
    return (
        (np.abs(loc[:, 0]) <= 0.5 * box.l + margin)
        & (np.abs(loc[:, 1]) <= 0.5 * box.w + margin)
        & (np.abs(loc[:, 2]) <= 0.5 * box.h + margin)
    )


def assign_points_to_boxes(xyz, boxes, margin: float = 0.0) -> np.ndarray:
    """Owner box index per point, ``-1`` if in none.

    A point inside several boxes goes to the one with the nearest center;
    ties go to the earlier box.
    """
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    owner = np.full(len(xyz), -1, dtype=np.int64)
    best = np.full(len(xyz), np.inf)
    for k, box in enumerate(boxes):
        idx = np.flatnonzero(_in_box_mask(xyz, box, margin))
        if not len(idx):
            continue
        d = np.sum((xyz[idx] - box.center) ** 2, axis=1)
        closer = d < best[idx]
        owner[idx[closer]] = k
        best[idx[closer]] = d[closer]
    return owner


# ----------------------------------------------------------------- RANSAC


def _fit_tls(pts):
    centroid = pts.mean(axis=0)
    scatter = (pts - centroid).T @ (pts - centroid)
    _, vecs = np.linalg.eigh(scatter)
    normal = vecs[:, 0]
    return _canonical(normal, -float(normal @ centroid))


def _canonical(normal, d):
    normal = np.asarray(normal, dtype=np.float64)
    norm = np.linalg.norm(normal)
    normal, d = normal / norm, d / norm
    nz = normal[2]
    flip = nz < 0 or (nz == 0 and (normal[0] < 0 or (normal[0] == 0 and normal[1] < 0)))
    if flip:
        normal, d = -normal, -d
    return normal, d


def ransac_plane(cloud, iterations: int = 1000, threshold: float = 0.1, seed: int = 0,
                 refine_rounds: int = 3) -> GroundPlane:
    """Fit the dominant plane with RANSAC plus total-least-squares refinement.

    Each iteration draws three distinct points; the hypothesis with the
    most inliers (distance <= ``threshold``, earliest on ties) is refined by
    fitting a plane through the centroid of its inliers along the smallest
    eigenvector of their scatter. Refinement is repeated on the new inlier
    set and kept only while it does not lose inliers.

    Raises:
        FitError: fewer than three points, or every sample was degenerate.
    """
    xyz = cloud.xyz if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    n = len(xyz)
    if n < 3:
        raise FitError(f"need at least 3 points, got {n}")
    if iterations < 1 or threshold <= 0:
        raise ValidationError("iterations must be >= 1 and threshold > 0")

    rng = np.random.default_rng(seed)
    samples = np.array([rng.choice(n, 3, replace=False) for _ in range(iterations)])
    p0, p1, p2 = xyz[samples[:, 0]], xyz[samples[:, 1]], xyz[samples[:, 2]]
    normals = np.cross(p1 - p0, p2 - p0)
    norms = np.linalg.norm(normals, axis=1)
    scale = np.maximum(np.linalg.norm(p1 - p0, axis=1) * np.linalg.norm(p2 - p0, axis=1), 1e-300)
    ok = norms > 1e-12 * scale
    if not ok.any():
        raise FitError("all RANSAC samples were degenerate (collinear points)")
    normals[ok] /= norms[ok, None]
    ds = -np.einsum("ij,ij->i", normals, p0)

    best_count, best = -1, None
    chunk = max(1, 4_000_000 // max(n, 1))
    valid_idx = np.flatnonzero(ok)
    for start in range(0, len(valid_idx), chunk):
        sel = valid_idx[start:start + chunk]
        counts = (np.abs(xyz @ normals[sel].T + ds[sel]) <= threshold).sum(axis=0)
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count, best = int(counts[k]), sel[k]

    normal, d = _canonical(normals[best], ds[best])
    count = best_count
    for _ in range(refine_rounds):
        inliers = np.abs(xyz @ normal + d) <= threshold
        if inliers.sum() < 3:
            break
        cand_n, cand_d = _fit_tls(xyz[inliers])
        cand_count = int((np.abs(xyz @ cand_n + cand_d) <= threshold).sum())
        if cand_count < count:
            break
        normal, d, count = cand_n, cand_d, cand_count
    return GroundPlane(normal=normal, d=float(d), inlier_count=count, threshold=float(threshold))


# ---------------------------------------------------------- height profile


def build_height_profile(cloud, plane: GroundPlane, cell_size: float = 1.0, band: float = 0.2,
                         extent=None) -> HeightProfile:
    """Grid of ground elevations from the points near ``plane``.

    Each cell takes the median z of the points within ``band`` of the plane
    that fall into it. Empty cells copy the nearest populated cell (grid
    distance; ties to the lexicographically lower ``(ix, iy)``).

    Cells are aligned to multiples of ``cell_size``. The grid spans
    ``extent = (x_min, x_max, y_min, y_max)`` if given, otherwise the x-y
    bounds of the whole cloud.

    Raises:
        ProfileError: no point lies within ``band`` of the plane.
    """
    if cell_size <= 0 or band <= 0:
        raise ValidationError("cell_size and band must be positive")
    xyz = cloud.xyz if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    ground = xyz[np.abs(plane.distance(xyz)) <= band]
    if not len(ground):
        raise ProfileError("no points within the ground band")

    if extent is None:
        extent = (xyz[:, 0].min(), xyz[:, 0].max(), xyz[:, 1].min(), xyz[:, 1].max())
    x_min, x_max, y_min, y_max = extent
    x0 = math.floor(x_min / cell_size) * cell_size
    y0 = math.floor(y_min / cell_size) * cell_size
    nx = max(1, int(math.floor((x_max - x0) / cell_size)) + 1)
    ny = max(1, int(math.floor((y_max - y0) / cell_size)) + 1)

    ix = np.floor((ground[:, 0] - x0) / cell_size).astype(np.int64)
    iy = np.floor((ground[:, 1] - y0) / cell_size).astype(np.int64)
    inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
    ix, iy, gz = ix[inside], iy[inside], ground[inside, 2]
    if not len(gz):
        raise ProfileError("no ground points inside the requested extent")

    grid = np.zeros((nx, ny))
    valid = np.zeros((nx, ny), dtype=bool)
    flat = ix * ny + iy
    order = np.lexsort((gz, flat))
    flat, gz = flat[order], gz[order]
    cells, starts, counts = np.unique(flat, return_index=True, return_counts=True)
    for cell, s, c in zip(cells, starts, counts):
        grid.flat[cell] = np.median(gz[s:s + c])
    valid.flat[cells] = True

    empty = np.argwhere(~valid)
    if len(empty):
        filled = np.argwhere(valid)
        tree = cKDTree(filled)
        k = min(8, len(filled))
        while True:
            dist, idx = tree.query(empty, k=k)
            dist = dist.reshape(len(empty), -1)
            idx = idx.reshape(len(empty), -1)
            # exact ties are detectable because squared grid distances are integers
            if k >= len(filled) or np.all(dist[:, -1] > dist[:, 0] + 1e-9):
                break
            k = min(len(filled), 2 * k)
        for row, (drow, irow) in enumerate(zip(dist, idx)):
            ties = irow[np.abs(drow - drow[0]) <= 1e-9]
            src = min(tuple(filled[t]) for t in ties)
            grid[tuple(empty[row])] = grid[src]
    grid.setflags(write=False)
    valid.setflags(write=False)
    return HeightProfile(origin_xy=(float(x0), float(y0)), cell_size=float(cell_size), grid=grid, valid=valid)


# -------------------------------------------------------------------- FPS


def farthest_point_sampling(points, k: int, start_index: int = 0) -> np.ndarray:
    """Greedy max-min subset of ``k`` point indices.

    The first pick is ``start_index``; every later pick is the point
    farthest from those already chosen, ties to the lowest index.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if not 0 <= k <= n:
        raise ValidationError(f"k={k} must lie in [0, {n}]")
    if k and not 0 <= start_index < n:
        raise ValidationError(f"start_index {start_index} out of range for {n} points")
    return kernels.fps(pts, int(k), int(start_index))
