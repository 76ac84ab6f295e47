import json
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pillarforge.errors import PCDFormatError, PCDTruncationError, SchemaError, UnknownClassError, ValidationError
from pillarforge.model import Annotation, Box3D, Detection, Frame, PointCloud, SensorSpec, normalize_yaw
from pillarforge.openlabel import convert_sim_labels, parse_openlabel, read_openlabel, write_openlabel
from pillarforge.pcdio import load_pcd, save_pcd


def _ascii_pcd(rows, declared):
    header = (
        "VERSION 0.7\nFIELDS x y z intensity\nSIZE 4 4 4 4\nTYPE F F F F\nCOUNT 1 1 1 1\n"
        f"WIDTH {declared}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS {declared}\nDATA ascii\n"
    )
    return header + "".join(r + "\n" for r in rows)


# ----------------------------------------------------------------- types


@given(st.floats(min_value=-1e4, max_value=1e4, allow_nan=False))
def test_yaw_normalization_same_rotation(yaw):
    y = normalize_yaw(yaw)
    assert -math.pi < y <= math.pi
    assert abs(math.cos(y) - math.cos(yaw)) < 1e-12
    assert abs(math.sin(y) - math.sin(yaw)) < 1e-12


def test_yaw_minus_pi_maps_to_pi():
    assert normalize_yaw(-math.pi) == pytest.approx(math.pi)
    assert Box3D(0, 0, 0, 1, 1, 1, -math.pi).yaw > 0


def test_box_rejects_nonpositive_extent():
    with pytest.raises(ValidationError):
        Box3D(0, 0, 0, 0.0, 1, 1)


def test_detection_score_range():
    with pytest.raises(ValidationError):
        Detection(Box3D(0, 0, 0, 1, 1, 1), "Car", 1.5)


def test_frame_rejects_duplicate_ids():
    box = Box3D(0, 0, 0, 1, 1, 1)
    with pytest.raises(ValidationError):
        Frame(PointCloud.empty(), (Annotation(box, "Car", "a"), Annotation(box, "Car", "a")))


def test_sensor_defaults():
    s = SensorSpec()
    assert (s.channels, s.range_m, s.points_per_second, s.rotation_rate_hz) == (64, 120.0, 2_621_480, 20.0)
    assert (s.vfov_deg, s.hfov_deg, s.noise_sigma, s.dropoff_rate) == (45.0, 360.0, 0.1, 0.1)


def test_box_local_world_roundtrip(rng):
    box = Box3D(1, 2, 3, 4, 2, 1.5, 0.7)
    p = rng.normal(size=(20, 3))
    np.testing.assert_allclose(box.to_world(box.to_local(p)), p, atol=1e-12)


# ------------------------------------------------------------------- PCD


def test_load_single_ascii_point(tmp_path):
    path = tmp_path / "one.pcd"
    path.write_text(_ascii_pcd(["1.0 2.0 3.0 0.5"], 1))
    cloud = load_pcd(path)
    assert len(cloud) == 1
    assert cloud[0].x == 1.0 and cloud[0].y == 2.0 and cloud[0].z == 3.0 and cloud[0].intensity == 0.5


def test_truncated_ascii_raises(tmp_path):
    path = tmp_path / "short.pcd"
    path.write_text(_ascii_pcd(["1 2 3 0"], 2))
    with pytest.raises(PCDTruncationError):
        load_pcd(path)


def test_truncated_binary_raises(tmp_path, rng):
    path = tmp_path / "b.pcd"
    save_pcd(PointCloud(rng.normal(size=(5, 3)), np.zeros(5)), path, binary=True)
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises(PCDTruncationError):
        load_pcd(path)


def test_malformed_header_reports_line(tmp_path):
    path = tmp_path / "bad.pcd"
    path.write_text("VERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nBOGUS 1\nDATA ascii\n")
    with pytest.raises(PCDFormatError) as exc:
        load_pcd(path)
    assert exc.value.line == 4


def test_missing_intensity_is_zero(tmp_path):
    path = tmp_path / "xyz.pcd"
    path.write_text(
        "VERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\nWIDTH 2\nHEIGHT 1\n"
        "POINTS 2\nDATA ascii\n1 2 3\n4 5 6\n"
    )
    cloud = load_pcd(path)
    np.testing.assert_array_equal(cloud.intensity, [0.0, 0.0])


def test_integer_intensity_scaled(tmp_path):
    path = tmp_path / "u8.pcd"
    path.write_text(
        "VERSION 0.7\nFIELDS x y z intensity\nSIZE 4 4 4 1\nTYPE F F F U\nCOUNT 1 1 1 1\nWIDTH 2\n"
        "HEIGHT 1\nPOINTS 2\nDATA ascii\n0 0 0 255\n0 0 0 51\n"
    )
    np.testing.assert_allclose(load_pcd(path).intensity, [1.0, 0.2])


def test_empty_cloud_roundtrip(tmp_path):
    path = tmp_path / "empty.pcd"
    save_pcd(PointCloud.empty("empty"), path, binary=False)
    assert "POINTS 0" in path.read_text()
    assert len(load_pcd(path)) == 0


def test_binary_roundtrip_exact(tmp_path, rng):
    # 4-byte storage: values representable in float32 must survive bit-exactly
    xyz = rng.uniform(-100, 100, size=(1000, 3)).astype(np.float32).astype(np.float64)
    inten = rng.uniform(0, 1, 1000).astype(np.float32).astype(np.float64)
    cloud = PointCloud(xyz, inten, "rt", (1.0, 2.0, 3.0))
    save_pcd(cloud, tmp_path / "rt.pcd", binary=True)
    back = load_pcd(tmp_path / "rt.pcd")
    assert back.equals(cloud)
    assert back.sensor_origin == (1.0, 2.0, 3.0)


def test_binary_double_roundtrip_exact(tmp_path, rng):
    cloud = PointCloud(rng.normal(size=(100, 3)) * 1e3, rng.uniform(0, 1, 100), "rt")
    save_pcd(cloud, tmp_path / "rt.pcd", binary=True, double=True)
    assert load_pcd(tmp_path / "rt.pcd").equals(cloud)


def test_ascii_roundtrip(tmp_path, rng):
    cloud = PointCloud(rng.uniform(-100, 100, size=(1000, 3)), rng.uniform(0, 1, 1000), "rt")
    save_pcd(cloud, tmp_path / "rt.pcd", binary=False)
    back = load_pcd(tmp_path / "rt.pcd")
    assert back.equals(cloud, atol=1e-6)


def test_save_unwritable_path_names_path(tmp_path):
    target = tmp_path / "missing_dir" / "x.pcd"
    with pytest.raises(OSError) as exc:
        save_pcd(PointCloud.empty(), target)
    assert "x.pcd" in str(exc.value)


# -------------------------------------------------------------- OpenLABEL


def _doc(val, otype="Car"):
    return json.dumps({
        "openlabel": {
            "metadata": {"schema_version": "1.0.0"},
            "frames": {"0": {"objects": {"o1": {"object_data": {"cuboid": [{"name": "c", "val": val}]}}}}},
            "objects": {"o1": {"name": "o1", "type": otype}},
        }
    })


def test_identity_quaternion():
    ann = parse_openlabel(_doc([0, 0, 1, 0, 0, 0, 1, 4, 2, 1.5]))["0"][0]
    assert ann.box == Box3D(0, 0, 1, 4, 2, 1.5, 0.0)
    assert ann.category == "Car" and ann.object_id == "o1"


def test_z_rotation_quaternion():
    s = math.sin(math.pi / 4)
    ann = parse_openlabel(_doc([0, 0, 1, 0, 0, s, math.cos(math.pi / 4), 4, 2, 1.5]))["0"][0]
    assert ann.box.yaw == pytest.approx(math.pi / 2, abs=1e-12)


def test_non_unit_quaternion_rejected():
    with pytest.raises(ValidationError):
        parse_openlabel(_doc([0, 0, 1, 0, 0, 0, 1.01, 4, 2, 1.5]))


def test_missing_key_names_path():
    doc = json.loads(_doc([0, 0, 1, 0, 0, 0, 1, 4, 2, 1.5]))
    del doc["openlabel"]["frames"]["0"]["objects"]["o1"]["object_data"]["cuboid"][0]["val"]
    with pytest.raises(SchemaError) as exc:
        parse_openlabel(json.dumps(doc))
    assert "openlabel.frames.0.objects.o1.object_data.cuboid[0].val" in str(exc.value)
    with pytest.raises(SchemaError):
        parse_openlabel("{}")


def test_tilted_quaternion_warns(caplog):
    # small roll about x: projected to yaw, warning emitted
    q = (math.sin(0.05), 0.0, 0.0, math.cos(0.05))
    anns = parse_openlabel(_doc([0, 0, 1, *q, 4, 2, 1.5]))
    assert anns["0"][0].box.yaw == pytest.approx(0.0, abs=1e-12)
    assert "roll/pitch" in caplog.text


def test_write_empty(tmp_path):
    write_openlabel({}, tmp_path / "e.json")
    doc = json.loads((tmp_path / "e.json").read_text())
    assert doc["openlabel"]["frames"] == {}


def test_write_single_car(tmp_path):
    ann = Annotation(Box3D(1, 2, 0.5, 4, 2, 1.5, 1.0), "Car", "car-1")
    write_openlabel({"7": [ann]}, tmp_path / "c.json")
    doc = json.loads((tmp_path / "c.json").read_text())
    val = doc["openlabel"]["frames"]["7"]["objects"]["car-1"]["object_data"]["cuboid"][0]["val"]
    assert len(val) == 10
    assert abs(math.sqrt(sum(v * v for v in val[3:7])) - 1.0) < 1e-12


def test_openlabel_roundtrip_random(tmp_path, rng):
    cats = ["Car", "Van", "Bus", "Pedestrian", "Motorbike"]
    frames = {}
    for f in range(5):
        frames[str(f)] = [
            Annotation(
                Box3D(*rng.uniform(-50, 50, 3), *rng.uniform(0.3, 10, 3), rng.uniform(-10, 10)),
                cats[int(rng.integers(len(cats)))] if f == 0 else "Car",
                f"obj{f}_{k}",
            )
            for k in range(10)
        ]
    write_openlabel(frames, tmp_path / "rt.json")
    back = read_openlabel(tmp_path / "rt.json")
    assert back.keys() == frames.keys()
    for fid in frames:
        for a, b in zip(frames[fid], back[fid]):
            assert a.category == b.category and a.object_id == b.object_id
            np.testing.assert_allclose(a.box.as_array()[:6], b.box.as_array()[:6], atol=1e-9)
            dy = math.remainder(a.box.yaw - b.box.yaw, 2 * math.pi)
            assert abs(dy) < 1e-9


# ------------------------------------------------------------- conversion


def _sim_export(n_frames=1, cls="vehicle.car"):
    return {
        "frames": [
            {
                "frame_id": f"{i:03d}",
                "objects": [{"id": "1", "class": cls, "position": [1, 2, 0], "yaw": 0.0, "extent": [2, 1, 0.75]}],
            }
            for i in range(n_frames)
        ]
    }


def test_convert_doubles_half_extents():
    out = convert_sim_labels(json.dumps(_sim_export()))
    assert out["000"][0].box == Box3D(1, 2, 0, 4, 2, 1.5, 0)
    assert out["000"][0].category == "Car"
    full = convert_sim_labels(_sim_export(), half_extents=False)
    assert full["000"][0].box.l == 2.0


def test_convert_unknown_strict():
    with pytest.raises(UnknownClassError) as exc:
        convert_sim_labels(_sim_export(cls="scooter"), strict=True)
    assert "scooter" in str(exc.value)


def test_convert_unknown_lenient_counts():
    report = Counter()
    out = convert_sim_labels(_sim_export(2, cls="scooter"), report=report)
    assert out["000"][0].category == "Other"
    assert report["scooter"] == 2


def test_convert_custom_table():
    out = convert_sim_labels(_sim_export(cls="sedan"), class_table={"sedan": "Car"})
    assert out["000"][0].category == "Car"


def test_convert_roundtrips_through_openlabel(tmp_path, rng):
    export = {"frames": []}
    for i in range(10):
        objs = [
            {"id": str(k), "class": ["car", "walker", "bus"][k % 3], "position": list(rng.uniform(-30, 30, 3)),
             "yaw": float(rng.uniform(-3, 3)), "extent": list(rng.uniform(0.3, 3, 3))}
            for k in range(4)
        ]
        export["frames"].append({"frame_id": str(i), "objects": objs})
    frames = convert_sim_labels(export)
    write_openlabel(frames, tmp_path / "conv.json")
    back = read_openlabel(tmp_path / "conv.json")
    for fid, anns in frames.items():
        for a, b in zip(anns, back[fid]):
            np.testing.assert_allclose(a.box.as_array()[:6], b.box.as_array()[:6], atol=1e-9)
            assert abs(math.remainder(a.box.yaw - b.box.yaw, 2 * math.pi)) < 1e-9
            assert a.category == b.category
