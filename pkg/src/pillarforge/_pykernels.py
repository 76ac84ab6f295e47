"""Pure-Python kernels. Reference implementation and fallback for ``_ckernels``."""

import math

import numpy as np

MERGE_EPS = 1e-9


def rect_corners(cx, cy, l, w, yaw):
    """Counter-clockwise footprint corners as a list of ``(x, y)``."""
    c, s = math.cos(yaw), math.sin(yaw)
    hl, hw = 0.5 * l, 0.5 * w
    out = []
    for u, v in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
        out.append((cx + c * u - s * v, cy + s * u + c * v))
    return out


def _merge_close(poly, labels):
    if not poly:
        return poly, labels
    keep_p, keep_l = [], []
    for p, lab in zip(poly, labels):
        if keep_p and abs(p[0] - keep_p[-1][0]) < MERGE_EPS and abs(p[1] - keep_p[-1][1]) < MERGE_EPS:
            continue
        keep_p.append(p)
        keep_l.append(lab)
    while len(keep_p) > 1 and abs(keep_p[0][0] - keep_p[-1][0]) < MERGE_EPS and abs(keep_p[0][1] - keep_p[-1][1]) < MERGE_EPS:
        keep_p.pop()
        # the dropped duplicate carried the label of the edge arriving at vertex 0
        keep_l[0] = keep_l.pop()
    return keep_p, keep_l


def clip_rects(a, b):
    """Intersect footprint ``a`` with footprint ``b`` (each ``(cx, cy, l, w, yaw)``).

    Returns ``(vertices, labels)``: the counter-clockwise intersection
    polygon and, per vertex, ``"a"`` or ``"b"`` naming whose boundary the
    edge arriving at that vertex lies on.
    """
    poly = rect_corners(*a)
    labels = ["a"] * 4
    clip = rect_corners(*b)
    for i in range(4):
        if len(poly) < 3:
            return [], []
        x1, y1 = clip[i]
        x2, y2 = clip[(i + 1) % 4]
        ex, ey = x2 - x1, y2 - y1
        side = [ex * (p[1] - y1) - ey * (p[0] - x1) for p in poly]
        out_p, out_l = [], []
        n = len(poly)
        for j in range(n):
            s_idx = j - 1
            S, E = poly[s_idx], poly[j]
            ds, de = side[s_idx], side[j]
            lab = labels[j]
            if de >= 0.0:
                if ds < 0.0:
                    t = ds / (ds - de)
                    out_p.append((S[0] + t * (E[0] - S[0]), S[1] + t * (E[1] - S[1])))
                    out_l.append("b")
                out_p.append(E)
                out_l.append(lab)
            elif ds >= 0.0:
                t = ds / (ds - de)
                out_p.append((S[0] + t * (E[0] - S[0]), S[1] + t * (E[1] - S[1])))
                out_l.append(lab)
        poly, labels = _merge_close(out_p, out_l)
    if len(poly) < 3:
        return [], []
    return poly, labels


def polygon_area(poly):
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x1, y1 = poly[i - 1]
        x2, y2 = poly[i]
        acc += x1 * y2 - x2 * y1
    return 0.5 * abs(acc)


def rect_inter_area(a, b):
    """Area of the intersection of two rotated rectangles."""
    dx, dy = a[0] - b[0], a[1] - b[1]
    reach = 0.5 * (math.hypot(a[2], a[3]) + math.hypot(b[2], b[3]))
    if dx * dx + dy * dy > reach * reach:
        return 0.0
    poly, _ = clip_rects(a, b)
    return polygon_area(poly)


def pairwise_inter_area(boxes_a, boxes_b):
    """``(n, m)`` matrix of BEV intersection areas for ``(n, 5)`` and ``(m, 5)`` footprints."""
    boxes_a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 5)
    boxes_b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 5)
    out = np.zeros((len(boxes_a), len(boxes_b)))
    rows_b = [tuple(r) for r in boxes_b.tolist()]
    for i, ra in enumerate(boxes_a.tolist()):
        for j, rb in enumerate(rows_b):
            out[i, j] = rect_inter_area(ra, rb)
    return out


def fps(points, k, start):
    """Greedy max-min sampling of ``k`` indices, ties to the lowest index."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    out = np.empty(k, dtype=np.int64)
    if k == 0:
        return out
    mind = np.full(n, np.inf)
    cur = start
    for i in range(k):
        out[i] = cur
        d = pts - pts[cur]
        d = d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]
        np.minimum(mind, d, out=mind)
        mind[cur] = -1.0
        if i + 1 < k:
            cur = int(np.argmax(mind))
    return out
