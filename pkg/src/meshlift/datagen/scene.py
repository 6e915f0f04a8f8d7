"""Scene sampling: cloth sequences, camera placement, lighting, and the Sample record."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..geometry import Camera, MeshGrid2D, MeshGrid3D, project
from . import cloth as cl
from .render import Light, render
from .textures import make_texture

NUM_MESHES = 40
MARGIN = 0.05


@dataclass
class Sample:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    mesh3d: MeshGrid3D
    mesh2d: MeshGrid2D
    camera: Camera
    metadata: dict = field(default_factory=dict)

    def check(self, tol: float = 1e-9) -> None:
        if np.any(self.mesh3d.vertices[:, 2] <= 0):
            raise ValueError("sample has a vertex behind the camera")
        d = np.abs(project(self.camera, self.mesh3d).vertices - self.mesh2d.vertices).max()
        if d > tol:
            raise ValueError(f"stored 2D mesh deviates from projection by {d:g} px")


def mesh_dims(mesh_id: int) -> tuple[float, float]:
    """Width and height of catalogue mesh ``mesh_id`` (40 aspect/size combinations)."""
    aspect = 0.5 * 4.0 ** ((mesh_id % 8) / 7.0)  # 0.5 .. 2.0
    size = 0.8 + 0.1 * (mesh_id // 8)  # 0.8 .. 1.2
    return size * np.sqrt(aspect), size / np.sqrt(aspect)


def rotation(yaw: float, pitch: float, roll: float) -> np.ndarray:
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    Rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def _fits(P, f, cam: Camera, margin: float) -> bool:
    if np.any(P[:, 2] <= 1e-3):
        return False
    u = f * P[:, 0] / P[:, 2] + cam.uc
    v = f * P[:, 1] / P[:, 2] + cam.vc
    mu, mv = margin * cam.width, margin * cam.height
    return (u.min() >= mu and u.max() <= cam.width - 1 - mu
            and v.min() >= mv and v.max() <= cam.height - 1 - mv)


def place_in_camera(world: np.ndarray, cam: Camera, rng: np.random.Generator,
                    max_angles=(0.45, 0.25, 0.17), zoom=(1.0, 1.3)) -> np.ndarray:
    """Random small rotation and distance keeping the mesh in frame with margin."""
    c = world.mean(axis=0)
    R = rotation(*(rng.uniform(-a, a) for a in max_angles)) @ np.diag([1.0, -1.0, -1.0])
    P0 = (world - c) @ R.T
    lo = -P0[:, 2].min() + 0.05
    hi = lo + 200.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _fits(P0 + [0, 0, mid], cam.fu, cam, MARGIN):
            hi = mid
        else:
            lo = mid
    d = hi * rng.uniform(*zoom)
    P = P0 + [0.0, 0.0, d]
    for shrink in (1.0, 0.5, 0.25, 0.0):
        t = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0]) * shrink * 0.15 * d
        if _fits(P + t, cam.fu, cam, MARGIN):
            return P + t
    return P


def sample_light(P: np.ndarray, rng: np.random.Generator) -> Light:
    c = P.mean(axis=0)
    size = np.ptp(P[:, :2], axis=0).max()
    offset = size * np.array([rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.0), -rng.uniform(0.8, 2.0)])
    pos = c + offset
    intensity = float((offset ** 2).sum() * rng.uniform(0.8, 1.2))
    return Light(tuple(float(x) for x in pos), intensity,
                 float(rng.uniform(0.1, 0.3)), float(rng.uniform(0.6, 0.9)))


def sample_cloth(N: int, rng: np.random.Generator) -> tuple[cl.ClothState, dict]:
    mesh_id = int(rng.integers(NUM_MESHES))
    width, height = mesh_dims(mesh_id)
    material = int(rng.integers(4))
    npins = int(rng.integers(2, 5))
    while True:
        pins = np.sort(rng.choice(N, size=min(npins, N), replace=False))
        if pins[-1] - pins[0] >= N // 2:
            break
    theta = rng.uniform(-0.6, 0.6)
    wind = cl.Wind(strength=float(rng.uniform(0.0, 8.0)),
                   direction=(float(np.sin(theta)), 0.15, float(np.cos(theta))),
                   frequency=float(rng.uniform(0.5, 2.5)), phase=float(rng.uniform(0, 2 * np.pi)),
                   ripple=float(rng.uniform(0.2, 0.8)),
                   wavenumber=(float(rng.uniform(1, 5)), float(rng.uniform(1, 5))),
                   noise=float(rng.uniform(0.0, 3.0)))
    state = cl.make_cloth(N, width, height, material, pins=tuple(int(p) for p in pins), wind=wind)
    meta = {"mesh_id": mesh_id, "material_id": material, "pins": [int(p) for p in pins]}
    return state, meta


def simulate_sequence(N: int, frames: int, seed, warmup: int = 1000, every: int = 150,
                      dt: float = 1e-3) -> tuple[list[np.ndarray], dict, cl.ClothState]:
    """World-frame snapshots of one seeded cloth simulation."""
    rng = np.random.default_rng(seed)
    state, meta = sample_cloth(N, rng)
    k = cl.substeps(N)
    cl.step_cloth(state, warmup * k, dt / k, seed=int(rng.integers(2**31)))
    snaps = cl.step_cloth(state, frames * every * k, dt / k, seed=int(rng.integers(2**31)),
                          snapshot_every=every * k)
    return [s.copy() for s in snaps], meta, state


def render_sample(mesh: MeshGrid3D, cam: Camera, meta: dict, supersample: int = 2) -> tuple[np.ndarray, np.ndarray]:
    tex = make_texture(meta["texture_kind"], meta["texture_seed"], meta.get("texture_size", 64))
    light = Light.from_dict(meta["light"])
    return render(mesh, cam, tex, light, meta["albedo"], supersample=supersample, return_mask=True)


def quantize(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def blur_contours(image: np.ndarray, mask: np.ndarray, sigma: float = 1.0, band: int = 2) -> np.ndarray:
    """Gaussian-blur a band of pixels around the silhouette."""
    ring = ndimage.binary_dilation(mask, iterations=band) & ~ndimage.binary_erosion(mask, iterations=band)
    blurred = ndimage.gaussian_filter(image, sigma=(sigma, sigma, 0))
    out = image.copy()
    out[ring] = blurred[ring]
    return out


def jitter_boundary(mesh: MeshGrid3D, cam: Camera, rng: np.random.Generator, px: float) -> MeshGrid3D:
    """Move boundary vertices parallel to the image plane by ~``px`` pixels."""
    N = mesh.N
    g = mesh.grid.copy()
    edge = np.zeros((N, N), dtype=bool)
    edge[0, :] = edge[-1, :] = edge[:, 0] = edge[:, -1] = True
    z = g[..., 2]
    g[..., 0] += np.where(edge, rng.normal(0, px, (N, N)) * z / cam.fu, 0.0)
    g[..., 1] += np.where(edge, rng.normal(0, px, (N, N)) * z / cam.fv, 0.0)
    return MeshGrid3D(g.reshape(-1, 3))


def make_sample(world: np.ndarray, cam: Camera, meta: dict, rng: np.random.Generator,
                supersample: int = 2, contour_noise_px: float = 0.0) -> Sample:
    P = place_in_camera(world, cam, rng)
    mesh = MeshGrid3D(P)
    light = sample_light(P, rng)
    meta = dict(meta)
    meta["light"] = light.to_dict()
    meta["albedo"] = cl.ALBEDO[meta["material_id"]]
    meta["supersample"] = supersample
    if contour_noise_px > 0:
        img, mask = render_sample(jitter_boundary(mesh, cam, rng, contour_noise_px), cam, meta, supersample)
        img = blur_contours(img, mask)
        meta["blurred_contours"] = True
    else:
        img, mask = render_sample(mesh, cam, meta, supersample)
    from .occlude import mask_bbox
    meta["bbox"] = list(mask_bbox(mask))
    return Sample(quantize(img), mesh, project(cam, mesh), cam, meta)
