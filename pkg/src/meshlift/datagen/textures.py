"""Procedural surface textures."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

KINDS = ("checker", "stripes", "noise-rich", "plain")


def _colors(rng, k):
    # keep colours away from pure black so shading stays visible
    return rng.uniform(0.15, 1.0, (k, 3))


def make_texture(kind: str, seed: int, size: int = 64) -> np.ndarray:
    """Deterministic ``(size, size, 3)`` texture in [0, 1] for ``(kind, seed)``."""
    rng = np.random.default_rng([seed, KINDS.index(kind) if kind in KINDS else 99])
    if kind == "plain":
        return np.broadcast_to(_colors(rng, 1)[0], (size, size, 3)).copy()
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if kind == "checker":
        period = int(rng.integers(4, 17))
        phase = rng.integers(0, period, size=2)
        a, b = _colors(rng, 2)
        cell = (((xx + phase[0]) // period) + ((yy + phase[1]) // period)) % 2
        return np.where(cell[..., None] == 0, a, b)
    if kind == "stripes":
        period = rng.uniform(5.0, 16.0)
        angle = rng.uniform(0, np.pi)
        cols = _colors(rng, int(rng.integers(2, 4)))
        t = (np.cos(angle) * xx + np.sin(angle) * yy) / period
        band = np.floor(t).astype(np.int64) % len(cols)
        return cols[band]
    if kind == "noise-rich":
        out = np.zeros((size, size, 3))
        for octave, weight in ((4, 1.0), (8, 0.6), (16, 0.35)):
            coarse = rng.uniform(0, 1, (octave, octave, 3))
            out += weight * ndimage.zoom(coarse, (size / octave, size / octave, 1), order=1,
                                         mode="grid-wrap", grid_mode=True)
        out -= out.min(axis=(0, 1))
        out /= np.maximum(out.max(axis=(0, 1)), 1e-12)
        return 0.1 + 0.9 * out
    raise ValueError(f"unknown texture kind {kind!r}")


def texture_spec(texture_id: int, base_seed: int, plain: bool = False) -> tuple[str, int]:
    """Map a texture id to ``(kind, seed)``; non-plain ids cycle through the patterned kinds."""
    if plain:
        return "plain", base_seed * 100_003 + texture_id
    kind = KINDS[texture_id % 3]
    return kind, base_seed * 100_003 + texture_id


def sample_bilinear(tex: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Bilinear lookup; ``uv`` in [0, 1]^2 (u across columns), shape ``(..., 2)``."""
    h, w = tex.shape[:2]
    x = np.clip(uv[..., 0], 0.0, 1.0) * (w - 1)
    y = np.clip(uv[..., 1], 0.0, 1.0) * (h - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    top = tex[y0, x0] * (1 - fx) + tex[y0, x1] * fx
    bot = tex[y1, x0] * (1 - fx) + tex[y1, x1] * fx
    return top * (1 - fy) + bot * fy
