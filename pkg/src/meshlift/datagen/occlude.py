"""Gray rectangular occluders."""
from __future__ import annotations

import numpy as np

GRAY = 0.5
FRACTION_RANGE = (0.05, 0.40)


def occluder_rects(count: int, seed: int, bbox: tuple[int, int, int, int],
                   fraction_range=FRACTION_RANGE, max_tries: int = 500):
    """Rectangles ``(r0, r1, c0, c1)`` (inclusive-exclusive) inside ``bbox``.

    ``bbox`` is ``(r0, r1, c0, c1)``.  Sizes are resampled until the union
    covers a fraction of the box inside ``fraction_range``.
    """
    if count <= 0:
        return [], 0.0
    r0, r1, c0, c1 = bbox
    bh, bw = max(r1 - r0, 1), max(c1 - c0, 1)
    rng = np.random.default_rng(seed)
    lo, hi = fraction_range
    scale = 1.0 / np.sqrt(count)
    for _ in range(max_tries):
        mask = np.zeros((bh, bw), dtype=bool)
        rects = []
        for _ in range(count):
            h = max(1, int(round(rng.uniform(0.2, 0.6) * scale * bh)))
            w = max(1, int(round(rng.uniform(0.2, 0.6) * scale * bw)))
            y = int(rng.integers(0, bh - h + 1))
            x = int(rng.integers(0, bw - w + 1))
            mask[y:y + h, x:x + w] = True
            rects.append((r0 + y, r0 + y + h, c0 + x, c0 + x + w))
        frac = float(mask.mean())
        if lo <= frac <= hi:
            return rects, frac
    # deterministic fallback: one centred patch covering ~20% of the box
    h = max(1, int(round(np.sqrt(0.2) * bh)))
    w = max(1, int(round(0.2 * bh * bw / h)))
    w = min(w, bw)
    y, x = (bh - h) // 2, (bw - w) // 2
    return [(r0 + y, r0 + y + h, c0 + x, c0 + x + w)], h * w / (bh * bw)


def add_occluders(image: np.ndarray, count: int, seed: int, bbox=None, gray: float = GRAY,
                  fraction_range=FRACTION_RANGE) -> np.ndarray:
    """Paint ``count`` gray rectangles over ``image`` (a copy is returned)."""
    out = np.array(image, dtype=np.float64, copy=True)
    if count <= 0:
        return out
    if bbox is None:
        bbox = (0, out.shape[0], 0, out.shape[1])
    rects, _ = occluder_rects(count, seed, bbox, fraction_range)
    for a, b, c, d in rects:
        out[a:b, c:d, :] = gray
    return out


def mask_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return 0, mask.shape[0], 0, mask.shape[1]
    return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1
