"""2D detection branch: staged belief-map regressors and soft-argmax readout.

Belief maps are stored as ``(B, H, W, Nv)`` tensors: one spatial
probability map per mesh vertex over the feature grid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .geometry import Camera, MeshGrid2D
from .layers import Conv, Layer, ResBlock
from .tensorcore import Tensor


@dataclass
class BeliefMapStack:
    stage: int
    maps: Tensor

    @property
    def num_vertices(self) -> int:
        return self.maps.shape[-1]


# ---------------------------------------------------------------------------
# spatial softmax


def _softmax_f(x):
    if x.ndim != 4:
        raise tc.ShapeError("spatial_softmax", "expected (B,H,W,Nv)", x.shape)
    m = x.max(axis=(1, 2), keepdims=True)
    e = np.exp(x - m)
    s = e / e.sum(axis=(1, 2), keepdims=True)
    return s, s


def _softmax_b(g, s):
    return (s * (g - (g * s).sum(axis=(1, 2), keepdims=True)),)


def _softmax_sample(rng):
    return [rng.normal(0, 1, (2, 4, 5, 3))], {}


tc.defop("spatial_softmax", _softmax_f, _softmax_b, sample=_softmax_sample, tol=1e-5)


def normalize(raw: Tensor, stage: int = 1) -> BeliefMapStack:
    """Per-vertex spatial softmax so every map sums to one."""
    return BeliefMapStack(stage, tc.apply("spatial_softmax", raw))


# ---------------------------------------------------------------------------
# soft-argmax: (B, H, W, Nv) -> (B, Nv, 2) image pixels


def grid_to_pixel(g, scale):
    """Feature-cell coordinate -> input-image pixel (cell centres align)."""
    return (np.asarray(g) + 0.5) * scale - 0.5


def pixel_to_grid(p, scale):
    return (np.asarray(p) + 0.5) / scale - 0.5


def _softargmax_f(B, su=1.0, sv=1.0):
    if B.ndim != 4:
        raise tc.ShapeError("soft_argmax", "expected (B,H,W,Nv)", B.shape)
    _, H, W, _ = B.shape
    cols = np.arange(W, dtype=np.float64)
    rows = np.arange(H, dtype=np.float64)
    S = B.sum(axis=(1, 2))
    u = np.einsum("bhwn,w->bn", B, cols) / S
    v = np.einsum("bhwn,h->bn", B, rows) / S
    out = np.stack([grid_to_pixel(u, su), grid_to_pixel(v, sv)], axis=-1)
    return out, (S, u, v, H, W)


def _softargmax_b(g, ctx, su=1.0, sv=1.0):
    S, u, v, H, W = ctx
    gu = g[..., 0] * su / S
    gv = g[..., 1] * sv / S
    cols = np.arange(W, dtype=np.float64)
    rows = np.arange(H, dtype=np.float64)
    gB = (gu[:, None, None, :] * (cols[None, None, :, None] - u[:, None, None, :])
          + gv[:, None, None, :] * (rows[None, :, None, None] - v[:, None, None, :]))
    return (gB,)


def _softargmax_sample(rng):
    B = rng.uniform(0.05, 1.0, (2, 5, 4, 3))
    B /= B.sum(axis=(1, 2), keepdims=True)
    return [B], {"su": 4.0, "sv": 4.0}


tc.defop("soft_argmax", _softargmax_f, _softargmax_b, sample=_softargmax_sample, tol=1e-5)


def soft_argmax_t(B: Tensor, scale_u: float, scale_v: float) -> Tensor:
    return tc.apply("soft_argmax", B, su=float(scale_u), sv=float(scale_v))


def soft_argmax(B: BeliefMapStack, camera: Camera) -> MeshGrid2D:
    """Expected vertex locations of a single-sample stack, in image pixels."""
    _, H, W, _ = B.maps.shape
    out = soft_argmax_t(B.maps, camera.width / W, camera.height / H)
    return MeshGrid2D(out.data[0])


# ---------------------------------------------------------------------------
# ground-truth heatmaps


def gt_heatmaps(U_star: np.ndarray, H: int, W: int, sigma: float, scale_u: float,
                scale_v: float | None = None) -> np.ndarray:
    """Normalized Gaussian targets for ``(B, Nv, 2)`` pixel positions -> ``(B, H, W, Nv)``.

    Centres outside the grid are clipped to its border before evaluation.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    scale_v = scale_u if scale_v is None else scale_v
    U_star = np.asarray(U_star, dtype=np.float64)
    cu = np.clip(pixel_to_grid(U_star[..., 0], scale_u), 0, W - 1)
    cv = np.clip(pixel_to_grid(U_star[..., 1], scale_v), 0, H - 1)
    cols = np.arange(W, dtype=np.float64)
    rows = np.arange(H, dtype=np.float64)
    du = (cols[None, None, :, None] - cu[:, None, None, :]) ** 2
    dv = (rows[None, :, None, None] - cv[:, None, None, :]) ** 2
    g = np.exp(-(du + dv) / (2.0 * sigma * sigma))
    return g / g.sum(axis=(1, 2), keepdims=True)


def gt_heatmap(U_star: MeshGrid2D, H: int, W: int, sigma: float = 1.5,
               scale: float = 1.0) -> BeliefMapStack:
    maps = gt_heatmaps(U_star.vertices[None], H, W, sigma, scale)
    return BeliefMapStack(0, Tensor(maps))


# ---------------------------------------------------------------------------
# stage regressors


class StageRegressor(Layer):
    """Two residual blocks followed by two convolutions, emitting Nv maps."""

    def __init__(self, stage: int, feat_channels: int, num_vertices: int, width: int = 32):
        self.stage = stage
        self.feat_channels = feat_channels
        self.num_vertices = num_vertices
        cin = feat_channels + (num_vertices if stage > 1 else 0)
        self.in_channels = cin
        p = f"phi{stage}"
        self.res1 = ResBlock(f"{p}.res1", cin, width)
        self.res2 = ResBlock(f"{p}.res2", width, width, dilation=2)
        self.conv1 = Conv(f"{p}.conv1", width, width, k=3)
        self.conv2 = Conv(f"{p}.conv2", width, num_vertices, k=1, gain=0.5)

    def children(self):
        return [self.res1, self.res2, self.conv1, self.conv2]

    def __call__(self, P, x):
        h = self.res2(P, self.res1(P, x))
        h = self.conv1(P, tc.leaky_relu(h))
        return self.conv2(P, tc.leaky_relu(h))


def run_stage(reg: StageRegressor, P: dict[str, Tensor], features: Tensor,
              prev: BeliefMapStack | None) -> BeliefMapStack:
    if (prev is None) != (reg.stage == 1):
        raise ValueError("previous belief maps are required exactly when stage > 1")
    x = features
    if prev is not None:
        if prev.maps.shape[:3] != features.shape[:3]:
            raise tc.ShapeError("run_stage", "feature and belief-map grids differ",
                                (features.shape, prev.maps.shape))
        # maps enter at O(1) scale (x H*W); equivalent to rescaling the first conv weights
        H, W = features.shape[1:3]
        x = tc.concat([features, prev.maps * float(H * W)], axis=3)
    return normalize(reg(P, x), stage=reg.stage)
