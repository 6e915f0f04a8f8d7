"""Flips, rigid re-renders, and pixel-level colour jitter."""
from __future__ import annotations

import numpy as np

from ..geometry import Camera, MeshGrid3D, project
from .occlude import add_occluders, mask_bbox
from .scene import MARGIN, Sample, _fits, quantize, render_sample, rotation


def _flip_meta(meta: dict, axis: str, cam: Camera) -> dict:
    meta = dict(meta)
    flips = "".join(sorted(set(meta.get("flips", "")) ^ {axis}))  # net flip state
    if flips:
        meta["flips"] = flips
    else:
        meta.pop("flips", None)
    if "bbox" in meta:
        r0, r1, c0, c1 = meta["bbox"]
        if axis == "h":
            meta["bbox"] = [r0, r1, cam.width - c1, cam.width - c0]
        else:
            meta["bbox"] = [cam.height - r1, cam.height - r0, c0, c1]
    return meta


def flip_h(sample: Sample) -> Sample:
    """Mirror left-right: negate x, reverse grid columns, reflect the principal point."""
    cam = sample.camera
    g = sample.mesh3d.grid[:, ::-1].copy()
    g[..., 0] = -g[..., 0]
    X = MeshGrid3D(g.reshape(-1, 3))
    cam2 = Camera(cam.fu, cam.fv, (cam.width - 1) - cam.uc, cam.vc, cam.width, cam.height)
    img = sample.image[:, ::-1].copy()
    return Sample(img, X, project(cam2, X), cam2, _flip_meta(sample.metadata, "h", cam))


def flip_v(sample: Sample) -> Sample:
    """Mirror top-bottom: negate y, reverse grid rows, reflect the principal point."""
    cam = sample.camera
    g = sample.mesh3d.grid[::-1].copy()
    g[..., 1] = -g[..., 1]
    X = MeshGrid3D(g.reshape(-1, 3))
    cam2 = Camera(cam.fu, cam.fv, cam.uc, (cam.height - 1) - cam.vc, cam.width, cam.height)
    img = sample.image[::-1].copy()
    return Sample(img, X, project(cam2, X), cam2, _flip_meta(sample.metadata, "v", cam))


def flip_hv(sample: Sample) -> Sample:
    return flip_v(flip_h(sample))


def rigid_variant(sample: Sample, rng: np.random.Generator, max_angle: float = 0.35,
                  max_tries: int = 50) -> Sample:
    """Rotate/translate the 3D mesh and re-render it from the stored scene description."""
    cam = sample.camera
    P = sample.mesh3d.vertices
    c = P.mean(axis=0)
    depth = float(c[2])
    for attempt in range(max_tries):
        shrink = 1.0 - attempt / max_tries
        R = rotation(*(rng.uniform(-max_angle, max_angle, 3) * shrink))
        t = rng.uniform(-0.1, 0.1, 3) * depth * shrink
        Q = (P - c) @ R.T + c + t
        if _fits(Q, cam.fu, cam, MARGIN):
            break
    else:
        Q = P.copy()
    X = MeshGrid3D(Q)
    meta = dict(sample.metadata)
    meta["rigid"] = meta.get("rigid", 0) + 1
    img, mask = render_sample(X, cam, meta, meta.get("supersample", 2))
    img = quantize(img)
    meta["bbox"] = list(mask_bbox(mask))
    if meta.get("occluders", 0):
        img = add_occluders(img, meta["occluders"], meta["occluder_seed"], tuple(meta["bbox"]))
    return Sample(img, X, project(cam, X), cam, meta)


def _hue_rotate(img: np.ndarray, angle: float) -> np.ndarray:
    # rotation about the grey axis in RGB space
    k = np.ones(3) / np.sqrt(3.0)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    R = np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)
    return img @ R.T


def color_jitter(image: np.ndarray, rng: np.random.Generator, hue: float = 0.08,
                 saturation: float = 0.3, contrast: float = 0.3, brightness: float = 0.1) -> np.ndarray:
    """Random hue, saturation, contrast and brightness changes; output clipped to [0, 1]."""
    img = _hue_rotate(np.asarray(image, dtype=np.float64), rng.uniform(-hue, hue) * 2 * np.pi)
    gray = img.mean(axis=-1, keepdims=True)
    img = gray + (img - gray) * rng.uniform(1 - saturation, 1 + saturation)
    mean = img.mean()
    img = mean + (img - mean) * rng.uniform(1 - contrast, 1 + contrast)
    img = img + rng.uniform(-brightness, brightness)
    return np.clip(img, 0.0, 1.0)


def jitter_sample(sample: Sample, rng: np.random.Generator, **kw) -> Sample:
    return Sample(color_jitter(sample.image, rng, **kw), sample.mesh3d, sample.mesh2d,
                  sample.camera, dict(sample.metadata, jitter=True))


def augment(sample: Sample, seed: int, rigid: int = 3) -> list[Sample]:
    """The three flips plus ``rigid`` re-rendered rigid-motion variants."""
    rng = np.random.default_rng(seed)
    out = [flip_h(sample), flip_v(sample), flip_hv(sample)]
    out += [rigid_variant(sample, rng) for _ in range(rigid)]
    return out


__all__ = ["flip_h", "flip_v", "flip_hv", "rigid_variant", "color_jitter", "jitter_sample",
           "augment"]
