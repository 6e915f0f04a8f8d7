"""Pure-NumPy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures, same floating-point operation order.
"""
from __future__ import annotations

import numpy as np


def rasterize(px, z, tris, H, W):
    px = np.ascontiguousarray(px, dtype=np.float64)
    z = np.ascontiguousarray(z, dtype=np.float64)
    tri_id = np.full((H, W), -1, dtype=np.int64)
    bary = np.zeros((H, W, 3))
    depth = np.full((H, W), np.inf)
    for t, (i0, i1, i2) in enumerate(np.asarray(tris, dtype=np.int64)):
        x0, y0 = px[i0]
        x1, y1 = px[i1]
        x2, y2 = px[i2]
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area == 0.0:
            continue
        c0 = int(max(np.ceil(min(x0, x1, x2)), 0.0))
        c1 = int(min(np.floor(max(x0, x1, x2)), W - 1.0))
        r0 = int(max(np.ceil(min(y0, y1, y2)), 0.0))
        r1 = int(min(np.floor(max(y0, y1, y2)), H - 1.0))
        if c1 < c0 or r1 < r0:
            continue
        fy, fx = np.meshgrid(np.arange(r0, r1 + 1, dtype=np.float64),
                             np.arange(c0, c1 + 1, dtype=np.float64), indexing="ij")
        l0 = ((x2 - x1) * (fy - y1) - (y2 - y1) * (fx - x1)) / area
        l1 = ((x0 - x2) * (fy - y2) - (y0 - y2) * (fx - x2)) / area
        l2 = ((x1 - x0) * (fy - y0) - (y1 - y0) * (fx - x0)) / area
        q0 = l0 / z[i0]
        q1 = l1 / z[i1]
        q2 = l2 / z[i2]
        Z = 1.0 / (q0 + q1 + q2)
        win = depth[r0:r1 + 1, c0:c1 + 1]
        hit = (l0 >= 0) & (l1 >= 0) & (l2 >= 0) & (Z < win)
        if not hit.any():
            continue
        win[hit] = Z[hit]
        tri_id[r0:r1 + 1, c0:c1 + 1][hit] = t
        b = bary[r0:r1 + 1, c0:c1 + 1]
        b[hit, 0] = (q0 * Z)[hit]
        b[hit, 1] = (q1 * Z)[hit]
        b[hit, 2] = (q2 * Z)[hit]
    return tri_id, bary, depth


def integrate_cloth(x, v, springs, rest, ks, kd, inv_mass, gravity, damping, ext,
                    dt, max_disp, limit, snapshot_every):
    steps, n = ext.shape[0], x.shape[0]
    a, b = springs[:, 0], springs[:, 1]
    scatter = np.stack([a, b], axis=1).reshape(-1)
    free = inv_mass != 0.0
    im = inv_mass[free][:, None]
    keep = 1.0 - damping * dt
    nsnap = steps // snapshot_every if snapshot_every > 0 else 0
    snaps = np.zeros((nsnap, n, 3))
    isnap = 0
    for step in range(steps):
        d = x[a] - x[b]
        dx, dy, dz = d[:, 0], d[:, 1], d[:, 2]
        length = np.sqrt(dx * dx + dy * dy + dz * dz)
        ux, uy, uz = dx / length, dy / length, dz / length
        dv = v[a] - v[b]
        fs = ks * (length - rest) + kd * (ux * dv[:, 0] + uy * dv[:, 1] + uz * dv[:, 2])
        fu = np.stack([fs * ux, fs * uy, fs * uz], axis=1)
        vals = np.stack([-fu, fu], axis=1).reshape(-1, 3)
        f = np.zeros((n, 3))
        np.add.at(f, scatter, vals)
        acc = (f[free] + ext[step][free]) * im + gravity
        vf = (v[free] + dt * acc) * keep
        v[free] = vf
        x[free] = x[free] + dt * vf
        if np.any(np.abs(x[free]) > limit):
            return 2, snaps
        disp = dt * np.sqrt(vf[:, 0] * vf[:, 0] + vf[:, 1] * vf[:, 1] + vf[:, 2] * vf[:, 2])
        if disp.size and disp.max() > max_disp:
            return 1, snaps
        if snapshot_every > 0 and (step + 1) % snapshot_every == 0 and isnap < nsnap:
            snaps[isnap] = x
            isnap += 1
    return 0, snaps
