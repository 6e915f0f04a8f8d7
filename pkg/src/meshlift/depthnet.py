"""Depth branch: belief-weighted feature pooling and the per-vertex depth regressor."""
from __future__ import annotations

import numpy as np

from . import tensorcore as tc
from .layers import Conv, Layer, ResBlock
from .tensorcore import Tensor


def _condition_f(B, F):
    if B.ndim != 4 or F.ndim != 4 or B.shape[:3] != F.shape[:3]:
        raise tc.ShapeError("condition", "belief maps and features must share (B,H,W)",
                            (B.shape, F.shape))
    b, H, W, n = B.shape
    Bm = B.reshape(b, H * W, n)
    Fm = F.reshape(b, H * W, F.shape[3])
    V = np.swapaxes(Bm, 1, 2) @ Fm  # (b, n, c)
    return V, (Bm, Fm, B.shape, F.shape)


def _condition_b(g, ctx):
    Bm, Fm, bshape, fshape = ctx
    gB = Fm @ np.swapaxes(g, 1, 2)  # (b, HW, n)
    gF = Bm @ g  # (b, HW, c)
    return gB.reshape(bshape), gF.reshape(fshape)


def _condition_sample(rng):
    B = rng.uniform(0.05, 1.0, (2, 4, 3, 4))
    B /= B.sum(axis=(1, 2), keepdims=True)
    return [B, rng.normal(0, 1, (2, 4, 3, 3))], {}


tc.defop("condition", _condition_f, _condition_b, sample=_condition_sample, tol=1e-5)


def condition(B: Tensor, features: Tensor) -> Tensor:
    """``V[b, j, k, c] = sum_{h,w} B[b, h, w, i] * F[b, h, w, c]`` with ``i = j*N + k``.

    Returns a ``(B, N, N, C)`` tensor.
    """
    V = tc.apply("condition", B, features)
    b, n, c = V.shape
    N = int(round(np.sqrt(n)))
    if N * N != n:
        raise tc.ShapeError("condition", "vertex count is not a square grid", (n,))
    return V.reshape(b, N, N, c)


class DepthRegressor(Layer):
    """Residual conv stack over the ``N x N x C`` conditioned features -> 1 channel."""

    def __init__(self, feat_channels: int, width: int = 64):
        self.res1 = ResBlock("omega.res1", feat_channels, width)
        self.res2 = ResBlock("omega.res2", width, width)
        self.conv1 = Conv("omega.conv1", width, width, k=3)
        self.conv2 = Conv("omega.conv2", width, 1, k=1, gain=0.1)

    def children(self):
        return [self.res1, self.res2, self.conv1, self.conv2]

    def __call__(self, P, V):
        h = self.res2(P, self.res1(P, V))
        h = self.conv1(P, tc.leaky_relu(h))
        return self.conv2(P, tc.leaky_relu(h))


def depths_from_raw(raw: Tensor, z_min: float) -> Tensor:
    """``(B, N, N, 1)`` raw regressor output -> ``(B, Nv)`` strictly positive depths."""
    b = raw.shape[0]
    flat = raw.reshape(b, raw.size // b)
    # one ulp above z_min: softplus underflows to 0 for very negative inputs
    return tc.softplus(flat) + float(np.nextafter(z_min, np.inf))


def predict_depth(reg: DepthRegressor, P: dict[str, Tensor], V: Tensor, z_min: float = 0.1) -> Tensor:
    return depths_from_raw(reg(P, V), z_min)
