"""On-disk fixture datasets for CLI and end-to-end tests."""

import json
import math

import numpy as np

from pillarforge.dataset import save_frame
from pillarforge.model import Annotation, Box3D, Frame, PointCloud
from pillarforge.pcdio import save_pcd

SENSOR = (0.0, 0.0, 5.0)


def background_cloud(rng, frame_id, n_ground=15_000, extent=30.0, slope=0.02):
    xy = rng.uniform(-extent, extent, (n_ground, 2))
    ground = np.column_stack([xy, slope * xy[:, 0] + rng.normal(0, 0.01, n_ground)])
    pole_xy = rng.uniform(-extent, extent, (40, 2))
    poles = np.repeat(pole_xy, 25, axis=0)
    poles = np.column_stack([poles, np.tile(np.linspace(0.1, 4.0, 25), 40) + slope * poles[:, 0]])
    xyz = np.vstack([ground, poles])
    return PointCloud(xyz, rng.uniform(0, 1, len(xyz)), frame_id, SENSOR)


def synthetic_frame(rng, frame_id, n_objects=3):
    anns, pts = [], []
    slots = rng.permutation(9)[:n_objects]
    for k, slot in enumerate(slots):
        cx, cy = -16 + 16 * (slot % 3), -16 + 16 * (slot // 3)
        cx, cy = cx + rng.uniform(-2, 2), cy + rng.uniform(-2, 2)
        cat = "Car" if k % 3 else "Pedestrian"
        l, w, h = (4.2, 1.8, 1.5) if cat == "Car" else (0.8, 0.8, 1.8)
        box = Box3D(cx, cy, rng.uniform(0.5, 2.0), l, w, h, rng.uniform(-math.pi, math.pi))
        loc = rng.uniform(-0.45, 0.45, (int(rng.integers(60, 150)), 3)) * [l, w, h]
        pts.append(box.to_world(loc))
        anns.append(Annotation(box, cat, f"{frame_id}_{k}"))
    xyz = np.vstack(pts)
    return Frame(PointCloud(xyz, rng.uniform(0, 1, len(xyz)), frame_id, SENSOR), tuple(anns))


def write_generate_inputs(root, n_frames=10, n_backgrounds=3, seed=0):
    rng = np.random.default_rng(seed)
    bg_dir, syn_dir = root / "background", root / "synthetic"
    bg_dir.mkdir()
    syn_dir.mkdir()
    for b in range(n_backgrounds):
        save_pcd(background_cloud(rng, f"bg{b}"), bg_dir / f"bg{b}.pcd", double=True)
    for f in range(n_frames):
        save_frame(synthetic_frame(rng, f"{f:06d}"), syn_dir, double=True)
    return bg_dir, syn_dir


def write_config(path, **sections):
    doc = {
        "seed": 7,
        "pillars": {"range": [-32.0, 32.0, -32.0, 32.0, -3.0, 3.0]},
    }
    doc.update(sections)
    path.write_text(json.dumps(doc))
    return path
