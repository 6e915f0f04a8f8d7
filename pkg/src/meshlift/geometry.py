"""Pinhole camera, grid meshes, and the differentiable lifting layer.

Pixel convention: ``(u, v) = (column, row)`` with the origin at the centre
of the top-left pixel.  All 3D coordinates are in the camera frame
(x right, y down, z forward).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .tensorcore import Tensor


@dataclass(frozen=True)
class Camera:
    fu: float
    fv: float
    uc: float
    vc: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fu > 0 and self.fv > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.uc < self.width and 0 <= self.vc < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def centered(cls, focal: float, width: int, height: int | None = None) -> "Camera":
        height = width if height is None else height
        return cls(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    def as_array(self) -> np.ndarray:
        return np.array([self.fu, self.fv, self.uc, self.vc])


@dataclass(frozen=True)
class MeshGrid3D:
    """``N x N`` grid of camera-frame vertices, stored as an ``(N*N, 3)`` array."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        n = _grid_side(v, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh coordinates must be finite")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "_n", n)

    @property
    def N(self) -> int:
        return self._n

    @property
    def grid(self) -> np.ndarray:
        return self.vertices.reshape(self.N, self.N, 3)


@dataclass(frozen=True)
class MeshGrid2D:
    """``N x N`` grid of pixel positions, stored as an ``(N*N, 2)`` array."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        n = _grid_side(v, 2)
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh coordinates must be finite")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "_n", n)

    @property
    def N(self) -> int:
        return self._n


def _grid_side(v: np.ndarray, dim: int) -> int:
    if v.ndim != 2 or v.shape[1] != dim:
        raise ValueError(f"expected an (N*N, {dim}) array, got {v.shape}")
    n = int(round(np.sqrt(v.shape[0])))
    if n * n != v.shape[0] or n < 2:
        raise ValueError(f"vertex count {v.shape[0]} is not a square grid with N >= 2")
    return n


def grid_index(i: int, N: int) -> tuple[int, int]:
    """Row-major vertex index -> (row, col) on the ``N x N`` grid."""
    if not 0 <= i < N * N:
        raise IndexError(f"vertex index {i} out of range for N={N}")
    return i // N, i % N


def grid_triangles(N: int) -> np.ndarray:
    """The ``2 (N-1)^2`` triangles of the grid as vertex-index triples."""
    tris = []
    for j in range(N - 1):
        for k in range(N - 1):
            a, b, c, d = j * N + k, j * N + k + 1, (j + 1) * N + k, (j + 1) * N + k + 1
            tris.append((a, b, c))
            tris.append((b, d, c))
    return np.array(tris, dtype=np.int64)


def project(camera: Camera, X: MeshGrid3D) -> MeshGrid2D:
    v = X.vertices
    if np.any(v[:, 2] <= 0):
        raise ValueError("vertex behind camera (z <= 0)")
    u = camera.fu * v[:, 0] / v[:, 2] + camera.uc
    w = camera.fv * v[:, 1] / v[:, 2] + camera.vc
    return MeshGrid2D(np.stack([u, w], axis=1))


def lift(camera: Camera, U: MeshGrid2D, z) -> MeshGrid3D:
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.shape[0] != U.vertices.shape[0]:
        raise ValueError("one depth per vertex required")
    out = lift_t(Tensor(U.vertices[None]), Tensor(z[None]), camera.as_array()[None])
    return MeshGrid3D(out.data[0])


# ---------------------------------------------------------------------------
# differentiable layer: U (B, Nv, 2), z (B, Nv), cams (B, 4) -> X (B, Nv, 3)


def _lift_f(U, z, cams):
    if U.ndim != 3 or U.shape[2] != 2 or z.shape != U.shape[:2] or cams.shape != (U.shape[0], 4):
        raise tc.ShapeError("lift", "expected U (B,Nv,2), z (B,Nv), cams (B,4)",
                            (U.shape, z.shape, np.shape(cams)))
    if np.any(z <= 0):
        raise ValueError("lift: depths must be positive")
    fu, fv, uc, vc = (cams[:, k:k + 1] for k in range(4))
    nu = (U[..., 0] - uc) / fu
    nv = (U[..., 1] - vc) / fv
    X = np.stack([z * nu, z * nv, z], axis=-1)
    return X, (z, nu, nv, fu, fv)


def _lift_b(g, ctx, cams):
    z, nu, nv, fu, fv = ctx
    gU = np.stack([g[..., 0] * z / fu, g[..., 1] * z / fv], axis=-1)
    gz = g[..., 0] * nu + g[..., 1] * nv + g[..., 2]
    return gU, gz


def _lift_sample(rng):
    B, nv = 2, 4
    U = rng.uniform(0, 64, (B, nv, 2))
    z = rng.uniform(0.5, 3.0, (B, nv))
    cams = np.tile([80.0, 90.0, 31.5, 30.0], (B, 1))
    return [U, z], {"cams": cams}


tc.defop("lift", _lift_f, _lift_b, sample=_lift_sample, tol=1e-5)


def lift_t(U: Tensor, z: Tensor, cams: np.ndarray) -> Tensor:
    return tc.apply("lift", U, z, cams=np.asarray(cams, dtype=np.float64))
