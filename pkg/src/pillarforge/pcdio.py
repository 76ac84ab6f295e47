"""Reading and writing PCD v0.7 point-cloud files (ascii and binary)."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import PCDFormatError, PCDTruncationError
from .model import PointCloud

_HEADER_KEYS = ("VERSION", "FIELDS", "SIZE", "TYPE", "COUNT", "WIDTH", "HEIGHT", "VIEWPOINT", "POINTS", "DATA")
_NUMPY_TYPES = {
    ("F", 4): "<f4",
    ("F", 8): "<f8",
    ("I", 1): "<i1",
    ("I", 2): "<i2",
    ("I", 4): "<i4",
    ("I", 8): "<i8",
    ("U", 1): "<u1",
    ("U", 2): "<u2",
    ("U", 4): "<u4",
    ("U", 8): "<u8",
}


def _parse_header(raw: bytes, path):
    header = {}
    offset = 0
    lineno = 0
    while True:
        end = raw.find(b"\n", offset)
        if end < 0:
            raise PCDFormatError("header ended before DATA line", line=lineno + 1, path=path)
        lineno += 1
        line = raw[offset:end].decode("ascii", errors="replace").strip()
        offset = end + 1
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        key = key.upper()
        if key not in _HEADER_KEYS:
            raise PCDFormatError(f"unknown header key {key!r}", line=lineno, path=path)
        header[key] = (rest.split(), lineno)
        if key == "DATA":
            return header, offset, lineno


def _header_ints(header, key, path, default=None):
    if key not in header:
        if default is not None:
            return default
        raise PCDFormatError(f"missing {key} header", path=path)
    vals, lineno = header[key]
    try:
        return [int(v) for v in vals]
    except ValueError:
        raise PCDFormatError(f"{key} values must be integers", line=lineno, path=path) from None


def load_pcd(path) -> PointCloud:
    """Load a PCD file.

    Fields ``x y z`` are required; ``intensity`` is optional and defaults
    to 0. Integer-typed intensity is scaled into [0, 1] by the maximum of
    its declared type; float intensity is clipped into [0, 1].

    Raises:
        PCDFormatError: malformed header, with the offending line number.
        PCDTruncationError: fewer records than ``POINTS`` declares.
    """
    path = Path(path)
    raw = path.read_bytes()
    header, data_offset, data_line = _parse_header(raw, path)

    fields, fields_line = header.get("FIELDS", (None, None))
    if not fields:
        raise PCDFormatError("missing FIELDS header", path=path)
    n_fields = len(fields)
    sizes = _header_ints(header, "SIZE", path)
    types, types_line = header.get("TYPE", (None, None))
    if types is None:
        raise PCDFormatError("missing TYPE header", path=path)
    counts = _header_ints(header, "COUNT", path, default=[1] * n_fields)
    if not (len(sizes) == len(types) == len(counts) == n_fields):
        raise PCDFormatError("FIELDS/SIZE/TYPE/COUNT lengths differ", line=fields_line, path=path)
    for name in ("x", "y", "z"):
        if name not in fields:
            raise PCDFormatError(f"required field {name!r} missing", line=fields_line, path=path)

    dtype_fields = []
    for i, (name, size, typ, count) in enumerate(zip(fields, sizes, types, counts)):
        key = (typ.upper(), size)
        if key not in _NUMPY_TYPES:
            raise PCDFormatError(f"unsupported TYPE/SIZE {typ}/{size}", line=types_line, path=path)
        label = name if name != "_" else f"_pad{i}"
        dtype_fields.append((label, _NUMPY_TYPES[key], (count,)) if count > 1 else (label, _NUMPY_TYPES[key]))
    dtype = np.dtype(dtype_fields)

    width = _header_ints(header, "WIDTH", path, default=[0])[0]
    height = _header_ints(header, "HEIGHT", path, default=[1])[0]
    n_points = _header_ints(header, "POINTS", path, default=[width * height])[0]
    viewpoint = header.get("VIEWPOINT", (["0", "0", "0", "1", "0", "0", "0"], None))[0]
    try:
        origin = tuple(float(v) for v in viewpoint[:3])
    except ValueError:
        raise PCDFormatError("VIEWPOINT must be numeric", line=header["VIEWPOINT"][1], path=path) from None

    mode = header["DATA"][0][0].lower() if header["DATA"][0] else ""
    if mode == "binary":
        available = (len(raw) - data_offset) // dtype.itemsize
        if available < n_points:
            raise PCDTruncationError(f"POINTS declares {n_points} records, found {available}", path=path)
        records = np.frombuffer(raw, dtype=dtype, count=n_points, offset=data_offset)
    elif mode == "ascii":
        text_lines = raw[data_offset:].decode("ascii", errors="replace").splitlines()
        rows = []
        n_cols = sum(counts)
        for k, line in enumerate(text_lines):
            line = line.strip()
            if not line:
                continue
            if len(rows) == n_points:
                raise PCDFormatError("more data rows than POINTS declares", line=data_line + k + 1, path=path)
            parts = line.split()
            if len(parts) != n_cols:
                raise PCDFormatError(f"expected {n_cols} values, got {len(parts)}", line=data_line + k + 1, path=path)
            rows.append(parts)
        if len(rows) < n_points:
            raise PCDTruncationError(f"POINTS declares {n_points} records, found {len(rows)}", path=path)
        records = np.zeros(n_points, dtype=dtype)
        col = 0
        table = np.array(rows, dtype=object).reshape(n_points, n_cols)
        for (label, *_), count in zip(dtype_fields, counts):
            chunk = table[:, col:col + count].astype(np.float64)
            records[label] = chunk if count > 1 else chunk[:, 0]
            col += count
    else:
        raise PCDFormatError(f"unsupported DATA mode {mode!r}", line=header["DATA"][1], path=path)

    xyz = np.column_stack([records[a].astype(np.float64) for a in ("x", "y", "z")]).reshape(-1, 3)
    if "intensity" in fields:
        idx = fields.index("intensity")
        inten = records["intensity"].astype(np.float64)
        typ = types[idx].upper()
        if typ in ("U", "I"):
            inten = inten / float(np.iinfo(np.dtype(_NUMPY_TYPES[(typ, sizes[idx])])).max)
        inten = np.clip(inten, 0.0, 1.0)
    else:
        inten = np.zeros(len(xyz))
    return PointCloud(xyz, inten, frame_id=path.stem or "frame", sensor_origin=origin)


def save_pcd(cloud: PointCloud, path, binary: bool = True, double: bool = False) -> None:
    """Write ``cloud`` as PCD v0.7 with fields ``x y z intensity``.

    Binary output stores little-endian 4-byte floats unless ``double`` is
    set. Ascii output always stores full float64 precision, so it
    round-trips exactly.
    """
    path = Path(path)
    wide = double or not binary
    size = 8 if wide else 4
    n = len(cloud)
    ox, oy, oz = cloud.sensor_origin
    header = (
        "# .PCD v0.7 - Point Cloud Data file format\n"
        "VERSION 0.7\n"
        "FIELDS x y z intensity\n"
        f"SIZE {size} {size} {size} {size}\n"
        "TYPE F F F F\n"
        "COUNT 1 1 1 1\n"
        f"WIDTH {n}\n"
        "HEIGHT 1\n"
        f"VIEWPOINT {ox:.17g} {oy:.17g} {oz:.17g} 1 0 0 0\n"
        f"POINTS {n}\n"
        f"DATA {'binary' if binary else 'ascii'}\n"
    )
    data = np.column_stack([cloud.xyz, cloud.intensity]) if n else np.zeros((0, 4))
    try:
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            if binary:
                fh.write(np.ascontiguousarray(data, dtype="<f8" if wide else "<f4").tobytes())
            else:
                for row in data:
                    fh.write((" ".join(f"{v:.17g}" for v in row) + "\n").encode("ascii"))
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write PCD: {exc.strerror}", os.fspath(path)) from exc
