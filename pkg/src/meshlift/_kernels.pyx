# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for the data generator.

Arithmetic is written in the same order as ``_fallback.py`` so that both
backends produce identical floating-point results.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor, ceil, fabs

cnp.import_array()


def rasterize(double[:, ::1] px, double[::1] z, long long[:, ::1] tris, int H, int W):
    """Z-buffered triangle rasterization with perspective-correct barycentrics.

    Returns ``(tri_id (H, W) int64, bary (H, W, 3), depth (H, W))``; background
    pixels have ``tri_id == -1`` and ``depth == inf``.
    """
    tri_arr = np.full((H, W), -1, dtype=np.int64)
    bary_arr = np.zeros((H, W, 3), dtype=np.float64)
    depth_arr = np.full((H, W), np.inf, dtype=np.float64)
    cdef long long[:, ::1] tri_id = tri_arr
    cdef double[:, :, ::1] bary = bary_arr
    cdef double[:, ::1] depth = depth_arr
    cdef Py_ssize_t t, r, c, r0, r1, c0, c1
    cdef long long i0, i1, i2
    cdef double x0, y0, x1, y1, x2, y2, area, w0, w1, w2, l0, l1, l2
    cdef double q0, q1, q2, qs, Z, fx, fy
    for t in range(tris.shape[0]):
        i0 = tris[t, 0]
        i1 = tris[t, 1]
        i2 = tris[t, 2]
        x0 = px[i0, 0]
        y0 = px[i0, 1]
        x1 = px[i1, 0]
        y1 = px[i1, 1]
        x2 = px[i2, 0]
        y2 = px[i2, 1]
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area == 0.0:
            continue
        c0 = <Py_ssize_t>max(ceil(min(x0, min(x1, x2))), 0.0)
        c1 = <Py_ssize_t>min(floor(max(x0, max(x1, x2))), W - 1.0)
        r0 = <Py_ssize_t>max(ceil(min(y0, min(y1, y2))), 0.0)
        r1 = <Py_ssize_t>min(floor(max(y0, max(y1, y2))), H - 1.0)
        for r in range(r0, r1 + 1):
            fy = <double>r
            for c in range(c0, c1 + 1):
                fx = <double>c
                w0 = (x2 - x1) * (fy - y1) - (y2 - y1) * (fx - x1)
                w1 = (x0 - x2) * (fy - y2) - (y0 - y2) * (fx - x2)
                w2 = (x1 - x0) * (fy - y0) - (y1 - y0) * (fx - x0)
                l0 = w0 / area
                l1 = w1 / area
                l2 = w2 / area
                if l0 < 0.0 or l1 < 0.0 or l2 < 0.0:
                    continue
                q0 = l0 / z[i0]
                q1 = l1 / z[i1]
                q2 = l2 / z[i2]
                qs = q0 + q1 + q2
                Z = 1.0 / qs
                if Z < depth[r, c]:
                    depth[r, c] = Z
                    tri_id[r, c] = t
                    bary[r, c, 0] = q0 * Z
                    bary[r, c, 1] = q1 * Z
                    bary[r, c, 2] = q2 * Z
    return tri_arr, bary_arr, depth_arr


def integrate_cloth(double[:, ::1] x, double[:, ::1] v, long long[:, ::1] springs,
                    double[::1] rest, double[::1] ks, double kd, double[::1] inv_mass,
                    double[::1] gravity, double damping, double[:, :, ::1] ext,
                    double dt, double max_disp, double limit, int snapshot_every):
    """Semi-implicit Euler mass-spring steps, updating ``x`` and ``v`` in place.

    ``ext`` holds one external force field per step, ``(steps, n, 3)``.
    Returns ``(status, snapshots)``; status 0 ok, 1 unstable step, 2 diverged.
    """
    cdef Py_ssize_t steps = ext.shape[0]
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t ns = springs.shape[0]
    cdef Py_ssize_t s, k, a, b, d, step
    cdef double dx, dy, dz, l, ux, uy, uz, dvx, dvy, dvz, fs, acc, keep, disp, mx
    f_arr = np.zeros((n, 3), dtype=np.float64)
    cdef double[:, ::1] f = f_arr
    cdef int nsnap = 0
    if snapshot_every > 0:
        nsnap = <int>(steps // snapshot_every)
    snaps_arr = np.zeros((nsnap, n, 3), dtype=np.float64)
    cdef double[:, :, ::1] snaps = snaps_arr
    cdef int isnap = 0
    keep = 1.0 - damping * dt
    for step in range(steps):
        for k in range(n):
            f[k, 0] = 0.0
            f[k, 1] = 0.0
            f[k, 2] = 0.0
        for s in range(ns):
            a = springs[s, 0]
            b = springs[s, 1]
            dx = x[a, 0] - x[b, 0]
            dy = x[a, 1] - x[b, 1]
            dz = x[a, 2] - x[b, 2]
            l = sqrt(dx * dx + dy * dy + dz * dz)
            ux = dx / l
            uy = dy / l
            uz = dz / l
            dvx = v[a, 0] - v[b, 0]
            dvy = v[a, 1] - v[b, 1]
            dvz = v[a, 2] - v[b, 2]
            fs = ks[s] * (l - rest[s]) + kd * (ux * dvx + uy * dvy + uz * dvz)
            f[a, 0] = f[a, 0] + (-(fs * ux))
            f[a, 1] = f[a, 1] + (-(fs * uy))
            f[a, 2] = f[a, 2] + (-(fs * uz))
            f[b, 0] = f[b, 0] + fs * ux
            f[b, 1] = f[b, 1] + fs * uy
            f[b, 2] = f[b, 2] + fs * uz
        mx = 0.0
        for k in range(n):
            if inv_mass[k] == 0.0:
                continue
            for d in range(3):
                acc = (f[k, d] + ext[step, k, d]) * inv_mass[k] + gravity[d]
                v[k, d] = v[k, d] + dt * acc
                v[k, d] = v[k, d] * keep
                x[k, d] = x[k, d] + dt * v[k, d]
                if fabs(x[k, d]) > limit:
                    return 2, snaps_arr
            disp = dt * sqrt(v[k, 0] * v[k, 0] + v[k, 1] * v[k, 1] + v[k, 2] * v[k, 2])
            if disp > mx:
                mx = disp
        if mx > max_disp:
            return 1, snaps_arr
        if snapshot_every > 0 and (step + 1) % snapshot_every == 0 and isnap < nsnap:
            for k in range(n):
                for d in range(3):
                    snaps[isnap, k, d] = x[k, d]
            isnap += 1
    return 0, snaps_arr
