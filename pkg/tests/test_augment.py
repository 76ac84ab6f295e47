import math

import numpy as np
import pytest
from scipy.spatial import ConvexHull

from pillarforge.augment import (
    ClassSizeTable,
    DatasetStats,
    MatchPlan,
    apply_match_plan,
    compute_stats,
    global_transform,
    match_domains,
    normalize_box_sizes,
    random_global_transform,
    shape_aware_augment,
    upsample_object_points,
)
from pillarforge.errors import ValidationError
from pillarforge.geometry import points_in_box
from pillarforge.model import Annotation, Box3D, Frame, PointCloud

from conftest import cloud_from, points_in_local_box


def _frame(boxes, counts, rng, n_bg=0, cats=None, frame_id="f"):
    anns, pts = [], []
    for k, (box, n) in enumerate(zip(boxes, counts)):
        anns.append(Annotation(box, (cats or ["Car"] * len(boxes))[k], f"o{k}"))
        pts.append(points_in_local_box(rng, box, n, fill=0.95))
    if n_bg:
        bg = rng.uniform(-60, 60, (n_bg, 3))
        bg[:, 2] = rng.uniform(-3, -2, n_bg)  # below every test box
        pts.append(bg)
    xyz = np.vstack(pts) if pts else np.zeros((0, 3))
    return Frame(PointCloud(xyz, rng.uniform(0, 1, len(xyz)), frame_id), tuple(anns))


def _rows(a):
    return sorted(map(tuple, np.asarray(a)))


# ----------------------------------------------------------- global transform


def test_global_identity(car_frame):
    out = global_transform(car_frame, 0.0, False, 1.0)
    np.testing.assert_array_equal(out.cloud.xyz, car_frame.cloud.xyz)
    assert out.boxes == car_frame.boxes


def test_global_flip(rng):
    fr = _frame([Box3D(3, 2, 0, 4, 2, 1.5, math.pi / 4)], [5], rng)
    out = global_transform(fr, 0.0, True, 1.0)
    assert out.boxes[0].yaw == pytest.approx(-math.pi / 4)
    assert out.boxes[0].cy == -2
    np.testing.assert_array_equal(out.cloud.xyz[:, 1], -fr.cloud.xyz[:, 1])


def test_global_scale(car_frame):
    out = global_transform(car_frame, 0.7, False, 2.0)
    a, b = car_frame.cloud.xyz[:20], out.cloud.xyz[:20]
    d0 = np.linalg.norm(a[:, None] - a[None], axis=2)
    d1 = np.linalg.norm(b[:, None] - b[None], axis=2)
    np.testing.assert_allclose(d1, 2 * d0, atol=1e-12)
    assert out.boxes[0].volume == pytest.approx(8 * car_frame.boxes[0].volume)


def test_global_rotation_round_trip(car_frame):
    phi = 2.3
    back = global_transform(global_transform(car_frame, phi), -phi)
    np.testing.assert_allclose(back.cloud.xyz, car_frame.cloud.xyz, atol=1e-9)
    np.testing.assert_allclose(back.boxes[0].as_array(), car_frame.boxes[0].as_array(), atol=1e-9)


def test_global_transform_keeps_points_in_boxes(car_frame):
    out = global_transform(car_frame, 1.1, True, 1.3)
    assert len(points_in_box(out.cloud, out.boxes[0], 1e-9)) == 50


def test_global_bad_scale(car_frame):
    with pytest.raises(ValidationError):
        global_transform(car_frame, 0.0, False, 0.0)


def test_random_global_deterministic(car_frame):
    a, pa = random_global_transform(car_frame, 3)
    b, pb = random_global_transform(car_frame, 3)
    assert pa == pb
    assert a.cloud.xyz.tobytes() == b.cloud.xyz.tobytes()


# ----------------------------------------------------------- shape-aware


def _pyramid_oracle(local, box):
    """Face index from explicit dominance tests on normalized coordinates."""
    u = local / (0.5 * np.array([box.l, box.w, box.h]))
    out = np.empty(len(u), dtype=int)
    for i, (x, y, z) in enumerate(u):
        ax, ay, az = abs(x), abs(y), abs(z)
        if ax >= ay and ax >= az:
            out[i] = 0 if x >= 0 else 1
        elif ay >= az:
            out[i] = 2 if y >= 0 else 3
        else:
            out[i] = 4 if z >= 0 else 5
    return out


def test_shape_aware_zero_is_identity(rng):
    fr = _frame([Box3D(0, 0, 0, 4, 2, 1.5), Box3D(10, 0, 0, 4, 2, 1.5)], [30, 30], rng, n_bg=50)
    out = shape_aware_augment(fr, 0.0, 0.0, 0.0, seed=5)
    np.testing.assert_array_equal(out.cloud.xyz, fr.cloud.xyz)


def test_shape_aware_dropout_removes_one_pyramid(rng):
    box = Box3D(1, 2, 0, 4, 2, 1.5, 0.3)
    fr = _frame([box], [60], rng, n_bg=20)
    obj = fr.cloud.xyz[:60]
    face = _pyramid_oracle(box.to_local(obj), box)
    out = shape_aware_augment(fr, 1.0, 0.0, 0.0, seed=11)
    kept = out.cloud.xyz[points_in_box(out.cloud, box, 0.0)]
    matches = [f for f in range(6) if (face == f).any() and (face != f).sum() == len(kept)
               and np.allclose(_rows(kept), _rows(obj[face != f]), atol=1e-12)]
    assert len(matches) == 1


def test_shape_aware_sparsify_half(rng):
    box = Box3D(0, 0, 0, 4, 2, 1.5)
    fr = _frame([box], [40], rng)
    out = shape_aware_augment(fr, 0.0, 0.0, 1.0, seed=0)
    assert len(out.cloud) == 20
    originals = {tuple(np.round(r, 9)) for r in fr.cloud.xyz}
    assert all(tuple(np.round(r, 9)) in originals for r in out.cloud.xyz)


def test_shape_aware_background_untouched(rng):
    boxes = [Box3D(0, 0, 0, 4, 2, 1.5), Box3D(8, 0, 0, 4, 2, 1.5, 1.0), Box3D(-8, 3, 0, 0.8, 0.8, 1.8)]
    fr = _frame(boxes, [40, 40, 20], rng, n_bg=200, cats=["Car", "Car", "Pedestrian"])
    out = shape_aware_augment(fr, 0.5, 0.5, 0.5, seed=2)
    outside = np.ones(len(out.cloud), dtype=bool)
    for box in boxes:
        outside[points_in_box(out.cloud, box, 0.0)] = False
    np.testing.assert_array_equal(out.cloud.xyz[outside], fr.cloud.xyz[100:])


def test_shape_aware_swap_without_partner_is_skipped(rng):
    fr = _frame([Box3D(0, 0, 0, 4, 2, 1.5)], [30], rng)
    out = shape_aware_augment(fr, 0.0, 1.0, 0.0, seed=1)
    np.testing.assert_array_equal(out.cloud.xyz, fr.cloud.xyz)


def test_shape_aware_swap_stays_inside(rng):
    a, b = Box3D(0, 0, 0, 4, 2, 1.5), Box3D(10, 0, 0, 3, 1.5, 1.2, 0.7)
    fr = _frame([a, b], [60, 60], rng)
    out = shape_aware_augment(fr, 0.0, 1.0, 0.0, seed=4)
    n_in = len(points_in_box(out.cloud, a, 1e-9)) + len(points_in_box(out.cloud, b, 1e-9))
    assert n_in == len(out.cloud)


def test_shape_aware_deterministic(rng):
    fr = _frame([Box3D(0, 0, 0, 4, 2, 1.5), Box3D(8, 0, 0, 4, 2, 1.5)], [40, 40], rng, n_bg=30)
    a = shape_aware_augment(fr, 0.5, 0.5, 0.5, seed=9)
    b = shape_aware_augment(fr, 0.5, 0.5, 0.5, seed=9)
    assert a.cloud.xyz.tobytes() == b.cloud.xyz.tobytes()


def test_shape_aware_bad_probability(car_frame):
    with pytest.raises(ValidationError):
        shape_aware_augment(car_frame, 1.5, 0.0, 0.0)


# ------------------------------------------------------------ statistics


def test_compute_stats_means(rng):
    f1 = _frame([Box3D(0, 0, 0, 4, 2, 1.5)], [10], rng, n_bg=90)
    f2 = _frame([Box3D(0, 0, 0, 4, 2, 1.5)], [30], rng, n_bg=170)
    st = compute_stats([f1, f2])
    assert st.mean_points_per_frame == 150
    assert st.mean_points_per_object == {"Car": 20}
    assert st.object_count == {"Car": 2}
    assert DatasetStats.from_json(st.to_json()) == st


def test_compute_stats_empty():
    with pytest.raises(ValidationError):
        compute_stats([])


def test_match_identity():
    st = DatasetStats(3, 1000.0, {"Car": 50.0}, {"Car": 4})
    plan = match_domains(st, st)
    assert plan.object_upsample_factor == {"Car": 1.0}
    assert plan.background_dropout_rate == 0.0


def test_match_reference_ratios():
    src = DatasetStats(1, 2720.0, {"Car": 100.0}, {"Car": 1})
    tgt = DatasetStats(1, 1000.0, {"Car": 183.0}, {"Car": 1})
    plan = match_domains(src, tgt)
    assert plan.object_upsample_factor["Car"] == pytest.approx(1.83)
    assert plan.background_dropout_rate == pytest.approx(1 - 1 / 2.72)
    assert MatchPlan.from_json(plan.to_json()) == plan


def test_match_missing_category_warns(caplog):
    src = DatasetStats(1, 100.0, {"Car": 10.0}, {"Car": 1})
    tgt = DatasetStats(1, 100.0, {"Car": 10.0, "Truck": 50.0}, {"Car": 1, "Truck": 2})
    plan = match_domains(src, tgt)
    assert "Truck" not in plan.object_upsample_factor
    assert "Truck" in caplog.text


def test_match_plan_validation():
    with pytest.raises(ValidationError):
        MatchPlan({"Car": 0.5}, 0.1)
    with pytest.raises(ValidationError):
        MatchPlan({}, 1.2)


# ------------------------------------------------------------- upsampling


def test_upsample_factor_one_identity(car_frame):
    assert upsample_object_points(car_frame, {"Car": 1.0}, seed=0) is car_frame


def test_upsample_doubles_inside_box(rng):
    box = Box3D(2, 1, 0.5, 4, 2, 1.5, 0.4)
    fr = _frame([box], [10], rng, n_bg=15)
    out = upsample_object_points(fr, {"Car": 2.0}, seed=3)
    assert len(points_in_box(out.cloud, box, 1e-9)) == 20
    np.testing.assert_array_equal(out.cloud.xyz[:25], fr.cloud.xyz)


def test_upsample_near_hull(rng):
    box = Box3D(0, 0, 0, 4, 2, 1.5)
    obj = points_in_local_box(rng, box, 12, fill=0.6)
    fr = Frame(cloud_from(obj), (Annotation(box, "Car", "c"),))
    out = upsample_object_points(fr, {"Car": 3.0}, seed=8)
    hull = ConvexHull(obj)
    added = out.cloud.xyz[12:]
    assert len(added) == 24
    dist = added @ hull.equations[:, :3].T + hull.equations[:, 3]
    assert np.all(dist <= 3 * 0.01)


def test_upsample_skips_tiny(caplog):
    box = Box3D(0, 0, 0, 4, 2, 1.5)
    fr = Frame(cloud_from([[0, 0, 0]]), (Annotation(box, "Car", "c"),))
    assert len(upsample_object_points(fr, {"Car": 3.0}).cloud) == 1
    assert "not upsampled" in caplog.text


def test_match_then_apply_within_five_percent(rng):
    boxes = [Box3D(0, 0, 0, 4, 2, 1.5), Box3D(12, 5, 0, 4, 2, 1.5, 0.5)]
    source = [_frame(boxes, [40, 60], rng, n_bg=20_000, frame_id=f"s{i}") for i in range(4)]
    target = [_frame(boxes, [90, 100], rng, n_bg=8_000, frame_id=f"t{i}") for i in range(4)]
    s, t = compute_stats(source), compute_stats(target)
    plan = match_domains(s, t)
    out = [apply_match_plan(f, plan, seed=i) for i, f in enumerate(source)]
    got = compute_stats(out)
    for cat, want in t.mean_points_per_object.items():
        assert abs(got.mean_points_per_object[cat] - want) <= 0.05 * want
    assert abs(got.mean_points_per_frame - t.mean_points_per_frame) <= 0.05 * t.mean_points_per_frame


# ---------------------------------------------------------- normalization


def test_normalize_single_is_identity(car_frame):
    out, table = normalize_box_sizes([car_frame])
    assert table.mean_dims["Car"] == (4.0, 2.0, 1.5)
    np.testing.assert_array_equal(out[0].cloud.xyz, car_frame.cloud.xyz)


def test_normalize_mean_and_corner(rng):
    a, b = Box3D(0, 0, 0, 4, 2, 1.5), Box3D(10, 0, 0, 4.4, 1.8, 1.5, 0.6)
    corner = b.corners()[0]
    fr = Frame(cloud_from(np.vstack([points_in_local_box(rng, a, 5), corner])),
               (Annotation(a, "Car", "a"), Annotation(b, "Car", "b")))
    out, table = normalize_box_sizes([fr])
    assert table.mean_dims["Car"] == pytest.approx((4.2, 1.9, 1.5))
    for box in out[0].boxes:
        assert (box.l, box.w, box.h) == pytest.approx((4.2, 1.9, 1.5))
    new_b = out[0].boxes[1]
    assert (new_b.cx, new_b.cy, new_b.yaw) == (b.cx, b.cy, b.yaw)
    np.testing.assert_allclose(out[0].cloud.xyz[5], new_b.corners()[0], atol=1e-12)


def test_normalize_idempotent(rng):
    boxes = [Box3D(0, 0, 0, 4, 2, 1.5), Box3D(10, 0, 0, 4.4, 1.8, 1.6, 0.6)]
    fr = _frame(boxes, [20, 20], rng, n_bg=10)
    once, table = normalize_box_sizes([fr])
    twice, _ = normalize_box_sizes(once, table)
    np.testing.assert_array_equal(once[0].cloud.xyz, twice[0].cloud.xyz)
    assert once[0].boxes == twice[0].boxes


def test_normalize_missing_category(car_frame):
    with pytest.raises(ValidationError, match="Car"):
        normalize_box_sizes([car_frame], ClassSizeTable({"Pedestrian": (0.8, 0.8, 1.8)}))


def test_class_size_table_json():
    t = ClassSizeTable({"Car": [4, 2, 1.5]})
    assert ClassSizeTable.from_json(t.to_json()) == t
    with pytest.raises(ValidationError):
        ClassSizeTable({"Car": (4, 0, 1)})
