"""Frame directories: ``<id>.pcd`` clouds with optional ``<id>.json`` labels.

Per-point provenance of semi-synthetic frames is stored next to them as
``<id>.provenance.npy``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import PillarforgeError
from .model import Frame
from .openlabel import read_openlabel, write_openlabel
from .pcdio import load_pcd, save_pcd

MANIFEST = "manifest.json"


def frame_ids(directory) -> list:
    d = Path(directory)
    if not d.is_dir():
        raise PillarforgeError(f"not a directory: {d}")
    return sorted(p.stem for p in d.glob("*.pcd"))


def label_paths(directory) -> list:
    """OpenLABEL files in ``directory`` (everything ``*.json`` but the manifest)."""
    return sorted(p for p in Path(directory).glob("*.json") if p.name != MANIFEST)


def load_labels(directory) -> dict:
    """Merge every OpenLABEL file of a directory into ``{frame_id: [Annotation]}``."""
    out = {}
    for p in label_paths(directory):
        for fid, anns in read_openlabel(p).items():
            if fid in out:
                raise PillarforgeError(f"frame {fid} labelled twice ({p.name})")
            out[fid] = anns
    return out


def load_frame(directory, frame_id: str, require_labels: bool = False) -> Frame:
    d = Path(directory)
    cloud = load_pcd(d / f"{frame_id}.pcd")
    anns = ()
    label = d / f"{frame_id}.json"
    if label.exists():
        doc = read_openlabel(label)
        if frame_id in doc:
            anns = tuple(doc[frame_id])
        elif len(doc) == 1:
            anns = tuple(next(iter(doc.values())))
        else:
            raise PillarforgeError(f"{label}: no frame {frame_id!r} among {sorted(doc)}")
    elif require_labels:
        raise PillarforgeError(f"missing labels {label}")
    prov = None
    prov_path = d / f"{frame_id}.provenance.npy"
    if prov_path.exists():
        prov = np.load(prov_path)
    return Frame(cloud, anns, None, prov)


def load_dataset(directory, require_labels: bool = False) -> list:
    return [load_frame(directory, fid, require_labels) for fid in frame_ids(directory)]


def save_frame(frame: Frame, directory, double: bool = False) -> list:
    """Write cloud, labels and provenance; returns the written paths."""
    d = Path(directory)
    fid = frame.frame_id
    paths = [d / f"{fid}.pcd", d / f"{fid}.json"]
    save_pcd(frame.cloud, paths[0], binary=True, double=double)
    write_openlabel({fid: list(frame.annotations)}, paths[1])
    if frame.provenance is not None:
        paths.append(d / f"{fid}.provenance.npy")
        np.save(paths[-1], np.ascontiguousarray(frame.provenance, dtype="<i8"), allow_pickle=False)
    return paths
