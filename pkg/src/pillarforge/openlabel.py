"""OpenLABEL cuboid labels and simulator-export conversion.

Cuboids are encoded as ten numbers ``x, y, z, qx, qy, qz, qw, sx, sy, sz``.
Only the z-rotation of the quaternion is kept on read.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from pathlib import Path
from typing import Mapping

from .errors import SchemaError, UnknownClassError, ValidationError
from .model import CATEGORIES, Annotation, Box3D

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0.0"
QUAT_NORM_TOL = 1e-3
TILT_WARN_RAD = 1e-2

DEFAULT_CLASS_TABLE = {
    "car": "Car",
    "van": "Van",
    "truck": "Truck",
    "bus": "Bus",
    "pedestrian": "Pedestrian",
    "walker": "Pedestrian",
    "person": "Pedestrian",
    "bicycle": "Bicycle",
    "cyclist": "Bicycle",
    "bike": "Bicycle",
    "motorbike": "Motorbike",
    "motorcycle": "Motorbike",
    "trailer": "Trailer",
    "other": "Other",
}


def yaw_from_quaternion(qx, qy, qz, qw):
    """Return ``(yaw, tilt)`` where tilt is the roll/pitch magnitude in radians."""
    yaw = math.atan2(2.0 * (qw * qz + qx * qy), 1.0 - 2.0 * (qy * qy + qz * qz))
    sinp = max(-1.0, min(1.0, 2.0 * (qw * qy - qz * qx)))
    pitch = math.asin(sinp)
    roll = math.atan2(2.0 * (qw * qx + qy * qz), 1.0 - 2.0 * (qx * qx + qy * qy))
    return yaw, math.hypot(roll, pitch)


def quaternion_from_yaw(yaw):
    return (0.0, 0.0, math.sin(0.5 * yaw), math.cos(0.5 * yaw))


def _require(node, key, path):
    if not isinstance(node, Mapping) or key not in node:
        raise SchemaError(f"{path}.{key}" if path else key)
    return node[key]


def parse_openlabel(document) -> dict:
    """Decode an OpenLABEL document into ``{frame_id: [Annotation, ...]}``.

    ``document`` may be JSON text or an already-decoded mapping.

    Raises:
        SchemaError: a required key is missing; the message names its JSON path.
        ValidationError: a cuboid quaternion deviates from unit norm by more
            than 1e-3, or a cuboid value list is malformed.
    """
    doc = json.loads(document) if isinstance(document, (str, bytes)) else document
    root = _require(doc, "openlabel", "")
    frames = _require(root, "frames", "openlabel")
    objects = _require(root, "objects", "openlabel")

    out = {}
    for frame_id, frame in frames.items():
        fpath = f"openlabel.frames.{frame_id}"
        anns = []
        for oid, obj in (frame or {}).get("objects", {}).items():
            opath = f"{fpath}.objects.{oid}"
            data = _require(obj, "object_data", opath)
            cuboids = _require(data, "cuboid", f"{opath}.object_data")
            if not cuboids:
                raise SchemaError(f"{opath}.object_data.cuboid", "empty cuboid list")
            val = _require(cuboids[0], "val", f"{opath}.object_data.cuboid[0]")
            if len(val) != 10:
                raise ValidationError(f"{opath}: cuboid val must have 10 numbers, got {len(val)}")
            x, y, z, qx, qy, qz, qw, sx, sy, sz = (float(v) for v in val)
            norm = math.sqrt(qx * qx + qy * qy + qz * qz + qw * qw)
            if abs(norm - 1.0) > QUAT_NORM_TOL:
                raise ValidationError(f"{opath}: quaternion norm {norm:.6f} is not unit")
            yaw, tilt = yaw_from_quaternion(qx / norm, qy / norm, qz / norm, qw / norm)
            if tilt > TILT_WARN_RAD:
                log.warning("%s: roll/pitch of %.4f rad discarded", opath, tilt)
            meta = _require(objects, oid, "openlabel.objects")
            category = _require(meta, "type", f"openlabel.objects.{oid}")
            anns.append(Annotation(Box3D(x, y, z, sx, sy, sz, yaw), str(category), str(oid)))
        out[str(frame_id)] = anns
    return out


def openlabel_document(frames: Mapping[str, list]) -> dict:
    objects = {}
    out_frames = {}
    for frame_id, anns in frames.items():
        fobjs = {}
        for ann in anns:
            b = ann.box
            qx, qy, qz, qw = quaternion_from_yaw(b.yaw)
            fobjs[ann.object_id] = {
                "object_data": {
                    "cuboid": [{"name": "shape3D", "val": [b.cx, b.cy, b.cz, qx, qy, qz, qw, b.l, b.w, b.h]}]
                }
            }
            objects.setdefault(ann.object_id, {"name": ann.object_id, "type": ann.category})
        out_frames[str(frame_id)] = {"objects": fobjs}
    return {"openlabel": {"metadata": {"schema_version": SCHEMA_VERSION}, "frames": out_frames, "objects": objects}}


def write_openlabel(frames: Mapping[str, list], path) -> None:
    """Write annotations as an OpenLABEL document with z-axis quaternions.

    An object id must keep one category across frames; the first seen wins.
    """
    text = json.dumps(openlabel_document(frames), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n")


def read_openlabel(path) -> dict:
    return parse_openlabel(Path(path).read_text())


def load_class_table(path) -> dict:
    """Load a ``{simulator_name: category}`` JSON table; keys are matched case-insensitively."""
    table = json.loads(Path(path).read_text())
    bad = [v for v in table.values() if v not in CATEGORIES]
    if bad:
        raise ValidationError(f"class table maps to unknown categories: {sorted(set(bad))}")
    return {k.lower(): v for k, v in table.items()}


def convert_sim_labels(sim_export, half_extents=True, class_table=None, strict=False, report=None) -> dict:
    """Convert a simulator pose export to ``{frame_id: [Annotation, ...]}``.

    Expected layout::

        {"frames": [{"frame_id": "000", "objects": [
            {"id": "7", "class": "vehicle.car", "position": [x, y, z],
             "yaw": 0.1, "extent": [ex, ey, ez]}]}]}

    ``extent`` is doubled when ``half_extents`` is set (CARLA convention).
    Class names resolve through ``class_table``; the full name is tried
    first, then its last dotted component. Unknown classes raise in strict
    mode, otherwise become ``Other`` and are tallied into ``report`` (a
    ``Counter``) when given.
    """
    doc = json.loads(sim_export) if isinstance(sim_export, (str, bytes)) else sim_export
    table = {k.lower(): v for k, v in (class_table or DEFAULT_CLASS_TABLE).items()}
    for cat in CATEGORIES:
        table.setdefault(cat.lower(), cat)
    frames = _require(doc, "frames", "")
    unknown = Counter()
    out = {}
    scale = 2.0 if half_extents else 1.0
    for i, fr in enumerate(frames):
        fpath = f"frames[{i}]"
        frame_id = str(_require(fr, "frame_id", fpath))
        anns = []
        for j, rec in enumerate(_require(fr, "objects", fpath)):
            rpath = f"{fpath}.objects[{j}]"
            raw_cls = str(_require(rec, "class", rpath))
            key = raw_cls.lower()
            category = table.get(key) or table.get(key.rsplit(".", 1)[-1])
            if category is None:
                unknown[raw_cls] += 1
                category = "Other"
            x, y, z = (float(v) for v in _require(rec, "position", rpath))
            ex, ey, ez = (scale * float(v) for v in _require(rec, "extent", rpath))
            yaw = float(_require(rec, "yaw", rpath))
            anns.append(Annotation(Box3D(x, y, z, ex, ey, ez, yaw), category, str(_require(rec, "id", rpath))))
        out[frame_id] = anns
    if unknown:
        if strict:
            raise UnknownClassError(unknown)
        log.warning("mapped %d object(s) with unknown classes to Other: %s", sum(unknown.values()), dict(unknown))
    if report is not None:
        report.update(unknown)
    return out
