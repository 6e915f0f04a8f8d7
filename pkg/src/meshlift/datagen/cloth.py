"""Mass-spring cloth hanging from pins and pushed by wind.

World frame: y up, gravity along -y, the cloth starts flat in the z = 0
plane with row 0 at the top.  Integration is semi-implicit (symplectic)
Euler; the inner loop lives in :mod:`meshlift.kernels`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..geometry import MeshGrid3D

# (structural, shear, bend) spring stiffness per material, N/m
MATERIALS = (
    (4000.0, 1000.0, 200.0),
    (2000.0, 500.0, 80.0),
    (1000.0, 250.0, 30.0),
    (500.0, 120.0, 10.0),
)
ALBEDO = (0.95, 0.85, 0.9, 0.8)
GRAVITY = 9.81


class SimulationError(RuntimeError):
    pass


@dataclass
class Wind:
    """Wind acceleration field; see :meth:`field`."""

    strength: float = 0.0
    direction: tuple[float, float, float] = (0.0, 0.0, 1.0)
    frequency: float = 1.5  # Hz of the gust oscillation
    phase: float = 0.0
    ripple: float = 0.5  # spatial modulation amplitude
    wavenumber: tuple[float, float] = (3.0, 2.0)
    noise: float = 0.0

    def field(self, rest: np.ndarray, steps: int, dt: float, t0: float,
              rng: np.random.Generator) -> np.ndarray:
        """Per-step per-vertex acceleration, ``(steps, n, 3)``."""
        n = rest.shape[0]
        if self.strength == 0.0 and self.noise == 0.0:
            return np.zeros((steps, n, 3))
        t = t0 + dt * np.arange(steps)
        omega = 2 * np.pi * self.frequency
        gust = 0.6 + 0.4 * np.sin(omega * t + self.phase)
        kx, ky = self.wavenumber
        spatial = 1.0 + self.ripple * np.sin(kx * rest[None, :, 0] + ky * rest[None, :, 1]
                                             + 0.7 * omega * t[:, None])
        d = np.asarray(self.direction, dtype=np.float64)
        d = d / np.linalg.norm(d)
        acc = self.strength * (gust[:, None] * spatial)[..., None] * d
        if self.noise > 0:
            # smooth gusts: random walk low-passed over ~50 steps
            kick = rng.normal(0, self.noise, (steps, 3))
            kernel = np.ones(50) / 50.0
            smooth = np.stack([np.convolve(kick[:, k], kernel, mode="same") for k in range(3)], axis=1)
            acc = acc + smooth[:, None, :] * np.sqrt(50.0)
        return acc


@dataclass
class ClothState:
    N: int
    positions: np.ndarray
    velocities: np.ndarray
    pins: tuple[int, ...]
    springs: np.ndarray  # (S, 2) int64
    rest: np.ndarray  # (S,)
    stiffness: np.ndarray  # (S,)
    kinds: np.ndarray  # (S,) 0 structural, 1 shear, 2 bend
    material: tuple[float, float, float]
    mass: float = 1.0  # total
    spring_damping: float = 2.0
    damping: float = 0.8  # velocity damping, 1/s
    gravity: float = GRAVITY
    wind: Wind = field(default_factory=Wind)
    time: float = 0.0
    width: float = 1.0
    height: float = 1.0

    @property
    def edge_length(self) -> float:
        return float(self.rest[self.kinds == 0].min())

    @property
    def inv_mass(self) -> np.ndarray:
        im = np.full(self.N * self.N, self.N * self.N / self.mass)
        im[list(self.pins)] = 0.0
        return im

    def copy(self) -> "ClothState":
        return ClothState(self.N, self.positions.copy(), self.velocities.copy(), self.pins,
                          self.springs, self.rest, self.stiffness, self.kinds, self.material,
                          self.mass, self.spring_damping, self.damping, self.gravity,
                          self.wind, self.time, self.width, self.height)

    def kinetic_energy(self) -> float:
        m = self.mass / (self.N * self.N)
        return 0.5 * m * float((self.velocities ** 2).sum())

    def potential_energy(self) -> float:
        d = self.positions[self.springs[:, 0]] - self.positions[self.springs[:, 1]]
        stretch = np.sqrt((d * d).sum(axis=1)) - self.rest
        m = self.mass / (self.N * self.N)
        grav = m * self.gravity * float(self.positions[:, 1].sum())
        return 0.5 * float((self.stiffness * stretch ** 2).sum()) + grav


def grid_springs(N: int) -> tuple[np.ndarray, np.ndarray]:
    pairs, kinds = [], []
    idx = lambda j, k: j * N + k  # noqa: E731
    for j in range(N):
        for k in range(N):
            if k + 1 < N:
                pairs.append((idx(j, k), idx(j, k + 1))); kinds.append(0)
            if j + 1 < N:
                pairs.append((idx(j, k), idx(j + 1, k))); kinds.append(0)
            if j + 1 < N and k + 1 < N:
                pairs.append((idx(j, k), idx(j + 1, k + 1))); kinds.append(1)
            if j + 1 < N and k > 0:
                pairs.append((idx(j, k), idx(j + 1, k - 1))); kinds.append(1)
            if k + 2 < N:
                pairs.append((idx(j, k), idx(j, k + 2))); kinds.append(2)
            if j + 2 < N:
                pairs.append((idx(j, k), idx(j + 2, k))); kinds.append(2)
    return np.array(pairs, dtype=np.int64), np.array(kinds, dtype=np.int64)


def flat_grid(N: int, width: float, height: float) -> np.ndarray:
    xs = np.linspace(-width / 2, width / 2, N)
    ys = np.linspace(height / 2, -height / 2, N)
    X, Y = np.meshgrid(xs, ys)
    return np.stack([X.ravel(), Y.ravel(), np.zeros(N * N)], axis=1)


def make_cloth(N: int, width: float = 1.0, height: float = 1.0, material: int = 0,
               pins=(), wind: Wind | None = None, **kw) -> ClothState:
    pos = flat_grid(N, width, height)
    springs, kinds = grid_springs(N)
    d = pos[springs[:, 0]] - pos[springs[:, 1]]
    rest = np.sqrt((d * d).sum(axis=1))
    mat = MATERIALS[material]
    ks = np.array([mat[k] for k in kinds])
    if any(not 0 <= p < N * N for p in pins) or len(set(pins)) > 4:
        raise ValueError("up to 4 distinct pin indices inside the grid")
    return ClothState(N, pos, np.zeros_like(pos), tuple(int(p) for p in pins), springs, rest, ks,
                      kinds, mat, wind=wind or Wind(), width=width, height=height, **kw)


def substeps(N: int) -> int:
    """Integration substeps per nominal ``dt`` for an ``N x N`` cloth.

    Vertex mass falls as 1/N^2 at fixed total mass and stiffness, so the
    stable step shrinks roughly as 1/N; the defaults are tuned at N = 5.
    """
    return max(1, -(-(N - 1) // 4))


def step_cloth(state: ClothState, steps: int, dt: float = 1e-3, seed: int = 0,
               snapshot_every: int = 0, backend=None) -> np.ndarray:
    """Advance ``state`` in place; returns snapshots (possibly empty)."""
    rng = np.random.default_rng(seed)
    rest_pos = flat_grid(state.N, state.width, state.height)
    ext = state.wind.field(rest_pos, steps, dt, state.time, rng)
    ext = np.ascontiguousarray(ext * (state.mass / (state.N * state.N)))
    size = max(state.width, state.height)
    impl = backend or kernels.get_backend()
    status, snaps = impl.integrate_cloth(
        state.positions, state.velocities, state.springs, state.rest, state.stiffness,
        float(state.spring_damping), state.inv_mass,
        np.array([0.0, -state.gravity, 0.0]), float(state.damping), ext, float(dt),
        0.05 * state.edge_length, 100.0 * size, int(snapshot_every))
    if status == 1:
        raise SimulationError("unstable step: displacement exceeded 5% of the edge length")
    if status == 2:
        raise SimulationError("simulation diverged")
    state.time += steps * dt
    return snaps


def world_to_camera(points: np.ndarray, distance: float) -> np.ndarray:
    """Frontal view: camera on the +z side looking toward -z, image y pointing down."""
    out = np.empty_like(points)
    out[:, 0] = points[:, 0]
    out[:, 1] = -points[:, 1]
    out[:, 2] = distance - points[:, 2]
    return out


def simulate_cloth(init: ClothState, steps: int, dt: float = 1e-3, seed: int = 0,
                   distance: float = 2.5) -> MeshGrid3D:
    """Run ``steps`` of integration on a copy of ``init``; frontal camera-frame mesh."""
    state = init.copy()
    step_cloth(state, steps, dt, seed)
    cam = world_to_camera(state.positions, distance)
    if np.any(cam[:, 2] <= 0):
        raise SimulationError("cloth crossed the camera plane")
    return MeshGrid3D(cam)


def edge_distortion(positions: np.ndarray, state: ClothState) -> float:
    """Mean ``|len / rest - 1|`` over structural springs."""
    s = state.springs[state.kinds == 0]
    d = positions[s[:, 0]] - positions[s[:, 1]]
    ln = np.sqrt((d * d).sum(axis=1))
    return float(np.abs(ln / state.rest[state.kinds == 0] - 1).mean())
