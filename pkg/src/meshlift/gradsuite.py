"""Finite-difference checks over every registered op plus composite pipelines."""
from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .detect2d import StageRegressor, run_stage, soft_argmax_t
from .geometry import Camera, MeshGrid3D, project
from .model import MeshNet, ModelConfig, forward, loss, targets
from .procrustes import eig_sym4, err_align_t, quat_matrix, normalize_shape
from .tensorcore import Tensor

# keep modules that register ops imported
from . import depthnet, geometry, procrustes  # noqa: F401

COMPOSITE_TOL = {"err_align": 1e-4, "stage_chain": 1e-3, "model_loss": 1e-3}


@dataclass
class CheckRow:
    name: str
    kind: str  # "op" or "composite"
    tol: float
    error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.tol)


def _well_separated_pair(rng: np.random.Generator, nv: int = 25, gap: float = 1e-3):
    while True:
        A = rng.normal(size=(nv, 3)) * [1.0, 0.7, 0.4]
        B = A + 0.2 * rng.normal(size=(nv, 3))
        lam = eig_sym4(quat_matrix(normalize_shape(A), normalize_shape(B)))[0]
        if lam[0] - lam[1] > gap:
            return A, B


def check_err_align(rng: np.random.Generator) -> float:
    A, B = _well_separated_pair(rng)
    Bt = Tensor(B[None])
    return tc.grad_check(lambda x: err_align_t(x, Bt).sum(), A[None])


def check_stage_chain(rng: np.random.Generator, H: int = 16, C: int = 4, nv: int = 4) -> float:
    regs = [StageRegressor(t, C, nv, width=4) for t in (1, 2, 3)]
    params = {}
    for r in regs:
        params.update(r.init_params(rng))
    P = {k: Tensor(v) for k, v in params.items()}
    F0 = rng.normal(size=(1, H, H, C))
    proj = Tensor(rng.uniform(-1, 1, (1, nv, 2)))

    def f(F):
        prev = None
        for r in regs:
            prev = run_stage(r, P, F, prev)
        return (soft_argmax_t(prev.maps, 4.0, 4.0) * proj).sum()
    return tc.grad_check(f, F0)


def toy_problem(rng: np.random.Generator):
    """A 3x3-mesh, 16x16-image model with one random sample."""
    cfg = ModelConfig(N=3, C=8, H_o=16, W_o=16, stage_width=8, depth_width=8, seed=int(rng.integers(1 << 30)))
    net = MeshNet(cfg)
    cam = Camera.centered(24.0, 16)
    g = np.stack(np.meshgrid(np.linspace(-0.4, 0.4, 3), np.linspace(-0.4, 0.4, 3)), -1).reshape(-1, 2)
    X = np.column_stack([g, 2.0 + 0.1 * rng.normal(size=9)]) + 0.03 * rng.normal(size=(9, 3))
    U = project(cam, MeshGrid3D(X)).vertices
    image = rng.uniform(0, 1, (1, 16, 16, 3))
    return net, image, cam.as_array()[None], X[None], U[None]


TOY_PARAMS = ("psi.c1.b", "psi.c4.b", "phi1.conv2.b", "phi3.conv2.w", "phi2.res1.c1.b",
              "omega.conv2.w", "omega.res1.c1.b")


def check_model_loss(rng: np.random.Generator, names=TOY_PARAMS) -> float:
    net, image, cams, X, U = toy_problem(rng)
    Bs = targets(net.cfg, U)
    worst = 0.0
    for name in names:
        def f(p, name=name):
            P = net.tensors()
            P[name] = p
            out = forward(net, image, cams, P)
            return loss(out.X, X, out.stacks, Bs, net.cfg.gamma)[0]
        worst = max(worst, tc.grad_check(f, net.params[name]))
    return worst


COMPOSITES = {"err_align": check_err_align, "stage_chain": check_stage_chain,
              "model_loss": check_model_loss}


def run_suite(seed: int = 0, corrupt: str | None = None, factor: float = 1.5) -> list[CheckRow]:
    """All registered ops then the composite checks; ``corrupt`` scales one op's VJP."""
    ctx = tc.corrupt_vjp(corrupt, factor) if corrupt else contextlib.nullcontext()
    rows = []
    with ctx:
        for name in sorted(tc.OPS):
            op = tc.OPS[name]
            rng = np.random.default_rng([seed, sum(name.encode())])
            t0 = time.perf_counter()
            err = tc.check_op(name, rng)
            rows.append(CheckRow(name, "op", op.tol, err, time.perf_counter() - t0))
        for name, fn in COMPOSITES.items():
            rng = np.random.default_rng([seed, 1000 + sum(name.encode())])
            t0 = time.perf_counter()
            err = fn(rng)
            rows.append(CheckRow(name, "composite", COMPOSITE_TOL[name], err, time.perf_counter() - t0))
    return rows


def format_table(rows: list[CheckRow]) -> str:
    w = max(len(r.name) for r in rows)
    lines = [f"{'op':<{w}}  {'kind':<9}  {'tol':>7}  {'max_rel_err':>11}  status"]
    for r in rows:
        lines.append(f"{r.name:<{w}}  {r.kind:<9}  {r.tol:7.0e}  {r.error:11.3e}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    n_fail = sum(not r.passed for r in rows)
    lines.append(f"{len(rows) - n_fail}/{len(rows)} passed")
    return "\n".join(lines)
