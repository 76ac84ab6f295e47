# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: rotated-rectangle intersection and farthest point sampling.

Mirrors ``_pykernels`` exactly (same clipping order, same merge epsilon,
same tie-breaking) so either backend gives identical results.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, fabs, INFINITY

cnp.import_array()

cdef enum:
    MAXV = 32
cdef double MERGE_EPS = 1e-9


cdef inline void _corners(double cx, double cy, double l, double w, double yaw,
                          double* xs, double* ys) noexcept nogil:
    cdef double c = cos(yaw), s = sin(yaw)
    cdef double hl = 0.5 * l, hw = 0.5 * w
    cdef double us[4]
    cdef double vs[4]
    us[0] = hl; vs[0] = hw
    us[1] = -hl; vs[1] = hw
    us[2] = -hl; vs[2] = -hw
    us[3] = hl; vs[3] = -hw
    cdef int i
    for i in range(4):
        xs[i] = cx + c * us[i] - s * vs[i]
        ys[i] = cy + s * us[i] + c * vs[i]


cdef double _inter_area(const double* a, const double* b) noexcept nogil:
    cdef double dx = a[0] - b[0], dy = a[1] - b[1]
    cdef double reach = 0.5 * (sqrt(a[2] * a[2] + a[3] * a[3]) + sqrt(b[2] * b[2] + b[3] * b[3]))
    if dx * dx + dy * dy > reach * reach:
        return 0.0

    cdef double px[MAXV]
    cdef double py[MAXV]
    cdef double qx[MAXV]
    cdef double qy[MAXV]
    cdef double side[MAXV]
    cdef double cxs[4]
    cdef double cys[4]
    cdef int n = 4, m, i, j, s_idx
    cdef double x1, y1, ex, ey, ds, de, t, ix, iy, acc

    _corners(a[0], a[1], a[2], a[3], a[4], px, py)
    _corners(b[0], b[1], b[2], b[3], b[4], cxs, cys)

    for i in range(4):
        if n < 3:
            return 0.0
        x1 = cxs[i]; y1 = cys[i]
        ex = cxs[(i + 1) % 4] - x1
        ey = cys[(i + 1) % 4] - y1
        for j in range(n):
            side[j] = ex * (py[j] - y1) - ey * (px[j] - x1)
        m = 0
        for j in range(n):
            s_idx = j - 1 if j > 0 else n - 1
            ds = side[s_idx]
            de = side[j]
            if de >= 0.0:
                if ds < 0.0:
                    t = ds / (ds - de)
                    ix = px[s_idx] + t * (px[j] - px[s_idx])
                    iy = py[s_idx] + t * (py[j] - py[s_idx])
                    if m == 0 or fabs(ix - qx[m - 1]) >= MERGE_EPS or fabs(iy - qy[m - 1]) >= MERGE_EPS:
                        qx[m] = ix; qy[m] = iy; m += 1
                if m == 0 or fabs(px[j] - qx[m - 1]) >= MERGE_EPS or fabs(py[j] - qy[m - 1]) >= MERGE_EPS:
                    qx[m] = px[j]; qy[m] = py[j]; m += 1
            elif ds >= 0.0:
                t = ds / (ds - de)
                ix = px[s_idx] + t * (px[j] - px[s_idx])
                iy = py[s_idx] + t * (py[j] - py[s_idx])
                if m == 0 or fabs(ix - qx[m - 1]) >= MERGE_EPS or fabs(iy - qy[m - 1]) >= MERGE_EPS:
                    qx[m] = ix; qy[m] = iy; m += 1
        while m > 1 and fabs(qx[0] - qx[m - 1]) < MERGE_EPS and fabs(qy[0] - qy[m - 1]) < MERGE_EPS:
            m -= 1
        n = m
        for j in range(n):
            px[j] = qx[j]; py[j] = qy[j]

    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        j = i - 1 if i > 0 else n - 1
        acc += px[j] * py[i] - px[i] * py[j]
    return 0.5 * fabs(acc)


def rect_inter_area(a, b):
    """Area of the intersection of two ``(cx, cy, l, w, yaw)`` rectangles."""
    cdef double ab[5]
    cdef double bb[5]
    cdef int i
    for i in range(5):
        ab[i] = a[i]
        bb[i] = b[i]
    return _inter_area(ab, bb)


def pairwise_inter_area(boxes_a, boxes_b):
    """``(n, m)`` matrix of BEV intersection areas."""
    cdef double[:, ::1] A = np.ascontiguousarray(boxes_a, dtype=np.float64).reshape(-1, 5)
    cdef double[:, ::1] B = np.ascontiguousarray(boxes_b, dtype=np.float64).reshape(-1, 5)
    cdef Py_ssize_t n = A.shape[0], m = B.shape[0], i, j
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(m):
                o[i, j] = _inter_area(&A[i, 0], &B[j, 0])
    return out


def fps(points, Py_ssize_t k, Py_ssize_t start):
    """Greedy max-min sampling of ``k`` indices, ties to the lowest index."""
    cdef double[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t n = P.shape[0], i, j, cur = start, best
    out = np.empty(k, dtype=np.int64)
    if k == 0:
        return out
    cdef cnp.int64_t[::1] o = out
    mind_arr = np.full(n, INFINITY, dtype=np.float64)
    cdef double[::1] mind = mind_arr
    cdef double d, dx, dy, dz, bestd
    with nogil:
        for i in range(k):
            o[i] = cur
            bestd = -INFINITY
            best = 0
            for j in range(n):
                dx = P[j, 0] - P[cur, 0]
                dy = P[j, 1] - P[cur, 1]
                dz = P[j, 2] - P[cur, 2]
                d = dx * dx + dy * dy + dz * dz
                if d < mind[j]:
                    mind[j] = d
                if j == cur:
                    mind[j] = -1.0
                if mind[j] > bestd:
                    bestd = mind[j]
                    best = j
            cur = best
    return out
