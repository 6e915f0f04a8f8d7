"""Lambertian point-light rendering of textured grid meshes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..geometry import Camera, MeshGrid3D, grid_triangles
from .textures import sample_bilinear

BACKGROUND = 0.2


@dataclass(frozen=True)
class Light:
    position: tuple[float, float, float]  # camera frame
    intensity: float = 1.0  # radiance at unit distance
    ambient: float = 0.2
    diffuse: float = 0.8

    def to_dict(self) -> dict:
        return {"position": list(self.position), "intensity": self.intensity,
                "ambient": self.ambient, "diffuse": self.diffuse}

    @classmethod
    def from_dict(cls, d: dict) -> "Light":
        return cls(tuple(d["position"]), d["intensity"], d["ambient"], d["diffuse"])


def vertex_normals(grid: np.ndarray) -> np.ndarray:
    """Unit normals of an ``(N, N, 3)`` grid from central differences."""
    gu = np.gradient(grid, axis=1)
    gv = np.gradient(grid, axis=0)
    n = np.cross(gu, gv)
    return n / np.maximum(np.linalg.norm(n, axis=-1, keepdims=True), 1e-12)


def rasterize_mesh(mesh: MeshGrid3D, camera: Camera, scale: int = 1):
    """Run the triangle kernel; returns ``(tri_id, bary, depth, triangles)``."""
    v = mesh.vertices
    px = np.empty((v.shape[0], 2))
    px[:, 0] = (camera.fu * v[:, 0] / v[:, 2] + camera.uc + 0.5) * scale - 0.5
    px[:, 1] = (camera.fv * v[:, 1] / v[:, 2] + camera.vc + 0.5) * scale - 0.5
    tris = grid_triangles(mesh.N)
    tri_id, bary, depth = kernels.rasterize(np.ascontiguousarray(px), np.ascontiguousarray(v[:, 2]),
                                            tris, camera.height * scale, camera.width * scale)
    return tri_id, bary, depth, tris


def render(mesh: MeshGrid3D, camera: Camera, texture: np.ndarray, light: Light,
           material_albedo: float = 1.0, supersample: int = 1, background: float = BACKGROUND,
           return_mask: bool = False):
    """Render an ``(H, W, 3)`` image in [0, 1].

    Shading per pixel is ``albedo * tex * (ambient + diffuse * max(0, n.l) * I / d^2)``
    with two-sided normals, clamped to [0, 1].
    """
    s = int(supersample)
    tri_id, bary, _, tris = rasterize_mesh(mesh, camera, s)
    H, W = tri_id.shape
    img = np.full((H, W, 3), float(background))
    hit = tri_id >= 0
    if hit.any():
        N = mesh.N
        corners = tris[tri_id[hit]]  # (P, 3)
        b = bary[hit]  # (P, 3)
        X = mesh.vertices
        P = np.einsum("pk,pkd->pd", b, X[corners])
        normals = vertex_normals(mesh.grid).reshape(-1, 3)
        n = np.einsum("pk,pkd->pd", b, normals[corners])
        n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)
        facing = np.einsum("pd,pd->p", n, -P)
        n[facing < 0] *= -1.0
        jj, kk = np.divmod(np.arange(N * N), N)
        uv_v = np.stack([kk / (N - 1), jj / (N - 1)], axis=1)
        uv = np.einsum("pk,pkd->pd", b, uv_v[corners])
        tex = sample_bilinear(texture, uv)
        L = np.asarray(light.position, dtype=np.float64) - P
        dist2 = np.einsum("pd,pd->p", L, L)
        lam = np.maximum(0.0, np.einsum("pd,pd->p", n, L) / np.sqrt(dist2))
        shade = light.ambient + light.diffuse * lam * light.intensity / dist2
        img[hit] = np.clip(material_albedo * tex * shade[:, None], 0.0, 1.0)
    if s > 1:
        img = img.reshape(H // s, s, W // s, s, 3).mean(axis=(1, 3))
        hit = hit.reshape(H // s, s, W // s, s).any(axis=(1, 3))
    return (img, hit) if return_mask else img
