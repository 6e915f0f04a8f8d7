"""Full pipeline: features -> belief maps -> soft-argmax / conditioned depth -> lifting.

Training runs in up to three phases:

* phase 0: feature extractor and stage regressors on the heatmap term
  (needed because the feature extractor here is trained from scratch),
* phase 1: stage regressors only, heatmap term,
* phase 2: stage regressors and depth regressor on the full loss.

The checkpoint format is little endian::

    b"MLCK" u32 version
    u32 len + utf-8 config text          (key = value, see meshlift.config)
    u32 len + utf-8 state text           (phase, epoch, ...)
    u64 adam step
    u32 block count, then per block:
        u16 name length, name, u8 rank, u32 dims[rank], f64 payload
"""
from __future__ import annotations

import csv
import io
import logging
import math
import os
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensorcore as tc
from .datagen.augment import color_jitter, flip_h, flip_v
from .datagen.scene import Sample
from .depthnet import DepthRegressor, condition, predict_depth
from .detect2d import BeliefMapStack, StageRegressor, gt_heatmaps, run_stage, soft_argmax_t
from .geometry import lift_t
from .layers import Conv, Layer
from .procrustes import aligned_vertex_error, err_align_t, l2_shape_loss_t
from .tensorcore import Tensor

log = logging.getLogger(__name__)

CSV_HEADER = ["epoch", "stage", "loss", "loss_align", "loss_heatmap", "err2d_px", "err3d_aligned"]
MAGIC = b"MLCK"
VERSION = 1


@dataclass
class ModelConfig:
    N: int = 5
    T_max: int = 3
    gamma: float = 5e-3
    sigma: float = 1.5  # heatmap width in feature cells
    C: int = 32
    H_o: int = 64
    W_o: int = 64
    downscale: int = 4
    z_min: float = 0.1
    stage_width: int = 32
    depth_width: int = 64
    lr: float = 2e-4
    decay: float = 0.95
    decay_every: int = 2
    weight_decay: float = 4e-5
    batch_size: int = 3
    seed: int = 0
    loss_3d: str = "align"  # or "l2"
    epochs0: int = 20
    epochs1: int = 0
    epochs2: int = 40
    patience: int = 10
    train_psi: bool = False  # keep updating the feature extractor after phase 0
    jitter: bool = True
    flip: bool = True
    max_train: int = 0  # >0 truncates the training set

    def validate(self) -> None:
        for name in ("N", "T_max", "C", "H_o", "W_o", "batch_size", "stage_width", "depth_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.N < 2:
            raise ValueError("N must be at least 2")
        if self.downscale not in (2, 4):
            raise ValueError("downscale must be 2 or 4")
        if self.H_o % self.downscale or self.W_o % self.downscale:
            raise ValueError("image size must be divisible by the downscale factor")
        if not (self.gamma >= 0 and self.sigma > 0 and self.z_min > 0 and self.lr > 0):
            raise ValueError("gamma >= 0, sigma, z_min and lr > 0 required")
        if not 0 < self.decay <= 1 or self.decay_every < 1:
            raise ValueError("decay in (0, 1], decay_every >= 1")
        if self.loss_3d not in ("align", "l2"):
            raise ValueError("loss_3d must be 'align' or 'l2'")

    @property
    def grid(self) -> tuple[int, int]:
        return self.H_o // self.downscale, self.W_o // self.downscale

    @property
    def num_vertices(self) -> int:
        return self.N * self.N


class FeatureExtractor(Layer):
    """Four 3x3 convolutions; the first two downsample."""

    def __init__(self, C: int = 32, downscale: int = 4):
        s2 = 2 if downscale == 4 else 1
        self.convs = [Conv("psi.c1", 3, C // 2, stride=2), Conv("psi.c2", C // 2, C, stride=s2),
                      Conv("psi.c3", C, C), Conv("psi.c4", C, C)]

    def children(self):
        return list(self.convs)

    def __call__(self, P, x):
        h = self.convs[0](P, x)
        for c in self.convs[1:]:
            h = c(P, tc.leaky_relu(h))
        return h


@dataclass
class Output:
    X: Tensor  # (B, Nv, 3)
    U: Tensor  # (B, Nv, 2)
    z: Tensor | None
    stacks: list[BeliefMapStack]
    features: Tensor


class MeshNet:
    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray] | None = None):
        cfg.validate()
        self.cfg = cfg
        self.psi = FeatureExtractor(cfg.C, cfg.downscale)
        self.phis = [StageRegressor(t, cfg.C, cfg.num_vertices, cfg.stage_width)
                     for t in range(1, cfg.T_max + 1)]
        self.omega = DepthRegressor(cfg.C, cfg.depth_width)
        if params is None:
            rng = np.random.default_rng([cfg.seed, 7])
            params = {}
            for layer in (self.psi, *self.phis, self.omega):
                params.update(layer.init_params(rng))
        expected = set(self.param_names())
        if set(params) != expected:
            raise ValueError(f"parameter set mismatch: {sorted(set(params) ^ expected)[:5]}")
        self.params = params

    def param_names(self) -> list[str]:
        names = []
        for layer in (self.psi, *self.phis, self.omega):
            names += layer.param_names()
        return names

    def group(self, *prefixes: str) -> list[str]:
        return [n for n in self.params if n.split(".")[0].rstrip("0123456789") in prefixes]

    def tensors(self, trainable=()) -> dict[str, Tensor]:
        tr = set(trainable)
        return {k: Tensor(v, requires_grad=k in tr, name=k) for k, v in self.params.items()}

    def num_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))


def run_stages(model: MeshNet, P, F: Tensor) -> list[BeliefMapStack]:
    stacks: list[BeliefMapStack] = []
    for reg in model.phis:
        stacks.append(run_stage(reg, P, F, stacks[-1] if stacks else None))
    return stacks


def _check_inputs(cfg: ModelConfig, images: np.ndarray, cams: np.ndarray):
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    cams = np.asarray(cams, dtype=np.float64).reshape(-1, 4)
    if images.shape[1:] != (cfg.H_o, cfg.W_o, 3):
        raise tc.ShapeError("forward", f"image must be {cfg.H_o}x{cfg.W_o}x3", images.shape)
    if cams.shape[0] != images.shape[0]:
        raise tc.ShapeError("forward", "one camera row per image", (images.shape, cams.shape))
    return images, cams


def forward(model: MeshNet, images: np.ndarray, cams: np.ndarray, P=None,
            with_depth: bool = True) -> Output:
    """Batched forward pass; ``images`` (B, H_o, W_o, 3) in [0, 1], ``cams`` (B, 4)."""
    cfg = model.cfg
    images, cams = _check_inputs(cfg, images, cams)
    P = model.tensors() if P is None else P
    F = model.psi(P, Tensor(images - 0.5))
    stacks = run_stages(model, P, F)
    B = stacks[-1].maps
    H, W = cfg.grid
    U = soft_argmax_t(B, cfg.W_o / W, cfg.H_o / H)
    if not with_depth:
        return Output(None, U, None, stacks, F)
    V = condition(B, F)
    z = predict_depth(model.omega, P, V, cfg.z_min)
    X = lift_t(U, z, cams)
    return Output(X, U, z, stacks, F)


def heatmap_term(stacks: list[BeliefMapStack], B_star: np.ndarray) -> Tensor:
    """``sum_t ||B^t - B*||^2`` per sample, ``(B,)``."""
    target = Tensor(B_star)
    total = None
    for s in stacks:
        d = s.maps - target
        e = (d * d).sum(axis=(1, 2, 3))
        total = e if total is None else total + e
    return total


def loss(X: Tensor, X_star, stacks: list[BeliefMapStack], B_star: np.ndarray, gamma: float,
         kind: str = "align") -> tuple[Tensor, Tensor, Tensor]:
    """Batch-mean ``err_align + gamma * sum_t ||B^t - B*||^2``; returns (total, align, heat)."""
    Xs = X_star if isinstance(X_star, Tensor) else Tensor(np.asarray(X_star, dtype=np.float64))
    shape = err_align_t(X, Xs) if kind == "align" else l2_shape_loss_t(X, Xs)
    align = shape.mean()
    heat = heatmap_term(stacks, B_star).mean()
    return align + heat * float(gamma), align, heat


def targets(cfg: ModelConfig, U_star: np.ndarray) -> np.ndarray:
    H, W = cfg.grid
    return gt_heatmaps(U_star, H, W, cfg.sigma, cfg.W_o / W, cfg.H_o / H)


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, wd: float = 0.0, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """In-place Adam update with decoupled multiplicative weight decay."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p = params[name]
        if wd:
            p *= 1.0 - lr * wd
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------- checkpoints


def _pack_block(name: str, arr: np.ndarray) -> bytes:
    nb = name.encode()
    arr = np.asarray(arr, dtype="<f8")
    head = struct.pack(f"<H{len(nb)}sB{arr.ndim}I", len(nb), nb, arr.ndim, *arr.shape)
    return head + arr.tobytes()


def _text(s: str) -> bytes:
    b = s.encode()
    return struct.pack("<I", len(b)) + b


def encode_checkpoint(model: MeshNet, adam: AdamState | None = None, state: dict | None = None) -> bytes:
    from .config import dump_section

    adam = adam or AdamState()
    state_txt = "".join(f"{k} = {v}\n" for k, v in sorted((state or {}).items()))
    blocks = [_pack_block(k, v) for k, v in model.params.items()]
    blocks += [_pack_block("adam.m:" + k, v) for k, v in adam.m.items()]
    blocks += [_pack_block("adam.v:" + k, v) for k, v in adam.v.items()]
    return b"".join([MAGIC, struct.pack("<I", VERSION), _text(dump_section("model", model.cfg)),
                     _text(state_txt), struct.pack("<QI", adam.step, len(blocks)), *blocks])


def decode_checkpoint(buf: bytes) -> tuple["MeshNet", AdamState, dict]:
    from .config import parse

    if buf[:4] != MAGIC:
        raise ValueError("not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 8
    texts = []
    for _ in range(2):
        (n,) = struct.unpack_from("<I", buf, off)
        texts.append(buf[off + 4:off + 4 + n].decode())
        off += 4 + n
    cfg = ModelConfig(**parse(texts[0]).get("model", {}))
    state = {}
    for line in texts[1].splitlines():
        k, v = (s.strip() for s in line.split("=", 1))
        state[k] = v
    step, count = struct.unpack_from("<QI", buf, off)
    off += 12
    params, adam = {}, AdamState(step=step)
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + ln].decode()
        off += ln
        (rank,) = struct.unpack_from("<B", buf, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(buf, "<f8", n, off).reshape(dims).astype(np.float64)
        off += 8 * n
        if name.startswith("adam.m:"):
            adam.m[name[7:]] = arr
        elif name.startswith("adam.v:"):
            adam.v[name[7:]] = arr
        else:
            params[name] = arr
    if off != len(buf):
        raise ValueError("trailing bytes in checkpoint")
    if state.get("arch") == "baseline":
        from .baseline import DirectRegressor
        return DirectRegressor(cfg, params), adam, state
    return MeshNet(cfg, params), adam, state


def save_checkpoint(path, model: MeshNet, adam: AdamState | None = None, state: dict | None = None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(encode_checkpoint(model, adam, state))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[MeshNet, AdamState, dict]:
    return decode_checkpoint(Path(path).read_bytes())


# ---------------------------------------------------------------- evaluation helpers


def predict(model: MeshNet, images: np.ndarray, cams: np.ndarray, batch: int = 25):
    """Numpy ``(X, U)`` for a stack of images, without recording."""
    Xs, Us = [], []
    with tc.no_grad():
        for i in range(0, len(images), batch):
            out = forward(model, images[i:i + batch], cams[i:i + batch])
            Xs.append(out.X.data)
            Us.append(out.U.data)
    return np.concatenate(Xs), np.concatenate(Us)


def validate(model: MeshNet, data: dict[str, np.ndarray], batch: int = 25) -> dict[str, float]:
    cfg = model.cfg
    tot = {"loss": 0.0, "loss_align": 0.0, "loss_heatmap": 0.0, "err2d_px": 0.0, "err3d_aligned": 0.0}
    n = len(data["images"])
    with tc.no_grad():
        for i in range(0, n, batch):
            sl = slice(i, i + batch)
            out = forward(model, data["images"][sl], data["cams"][sl])
            Bs = targets(cfg, data["U"][sl])
            k = len(data["images"][sl])
            total, align, heat = loss(out.X, data["X"][sl], out.stacks, Bs, cfg.gamma, cfg.loss_3d)
            tot["loss"] += total.item() * k
            tot["loss_align"] += align.item() * k
            tot["loss_heatmap"] += heat.item() * k
            d2 = np.sqrt(((out.U.data - data["U"][sl]) ** 2).sum(-1)).mean(-1)
            tot["err2d_px"] += float(d2.sum())
            tot["err3d_aligned"] += sum(aligned_vertex_error(x, xs) for x, xs in zip(out.X.data, data["X"][sl]))
    return {k: v / n for k, v in tot.items()}


# ---------------------------------------------------------------- training


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, last_good: MeshNet, checkpoint: Path | None = None):
        super().__init__(message)
        self.last_good = last_good
        self.checkpoint = checkpoint


@dataclass
class TrainResult:
    model: MeshNet
    metrics: list[dict]
    checkpoint: Path | None
    seconds: float


def as_arrays(samples: list[Sample]) -> dict[str, np.ndarray]:
    return {
        "images": np.stack([s.image for s in samples]),
        "X": np.stack([s.mesh3d.vertices for s in samples]),
        "U": np.stack([s.mesh2d.vertices for s in samples]),
        "cams": np.stack([s.camera.as_array() for s in samples]),
    }


def online_augment(cfg: ModelConfig, samples: list[Sample], rng: np.random.Generator) -> list[Sample]:
    out = []
    for s in samples:
        if cfg.flip:
            r = rng.integers(4)
            if r & 1:
                s = flip_h(s)
            if r & 2:
                s = flip_v(s)
        if cfg.jitter:
            s = Sample(color_jitter(s.image, rng), s.mesh3d, s.mesh2d, s.camera, s.metadata)
        out.append(s)
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def phase_plan(cfg: ModelConfig) -> list[tuple[int, int, tuple[str, ...]]]:
    """(phase, epochs, trainable groups) in execution order."""
    extra = ("psi",) if cfg.train_psi else ()
    plan = [(0, cfg.epochs0, ("psi", "phi")), (1, cfg.epochs1, ("phi",) + extra),
            (2, cfg.epochs2, ("phi", "omega") + extra)]
    return [p for p in plan if p[1] > 0]


def train_step(model: MeshNet, batch: dict[str, np.ndarray], names: list[str], phase: int,
               adam: AdamState, lr: float) -> tuple[float, float, float]:
    cfg = model.cfg
    P = model.tensors(names)
    with tc.Tape() as tape:
        out = forward(model, batch["images"], batch["cams"], P, with_depth=phase == 2)
        Bs = targets(cfg, batch["U"])
        if phase == 2:
            total, align, heat = loss(out.X, batch["X"], out.stacks, Bs, cfg.gamma, cfg.loss_3d)
        else:
            heat = heatmap_term(out.stacks, Bs).mean()
            total, align = heat, None
    value = total.item()
    if not math.isfinite(value):
        raise FloatingPointError("non-finite loss")
    g = tc.backward(tape, total)
    grads = {n: g[P[n]] for n in names}
    adam_step(model.params, grads, adam, lr, cfg.weight_decay)
    return value, (align.item() if align is not None else float("nan")), heat.item()


def train(cfg: ModelConfig, train_samples: list[Sample], val_samples: list[Sample],
          out_dir=None, model: MeshNet | None = None, phases=None,
          progress: bool = False) -> TrainResult:
    """Run the phase schedule with early stopping; writes ``metrics.csv``/``checkpoint.bin``."""
    if not train_samples or not val_samples:
        raise ValueError("training and validation sets must be non-empty")
    cfg.validate()
    if cfg.max_train:
        train_samples = train_samples[:cfg.max_train]
    model = model or MeshNet(cfg)
    val = as_arrays(val_samples)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.bin" if out is not None else None
    rows: list[dict] = []
    t0 = time.perf_counter()
    epoch_no = 0
    plan = phase_plan(cfg) if phases is None else phases
    for phase, epochs, groups in plan:
        names = model.group(*groups)
        adam = AdamState()
        best, best_params, stale = math.inf, None, 0
        for ep in range(epochs):
            lr = cfg.lr * cfg.decay ** (ep // cfg.decay_every)
            rng = np.random.default_rng([cfg.seed, phase, ep])
            order = rng.permutation(len(train_samples))
            tr_loss, nb = 0.0, 0
            for b0 in range(0, len(order), cfg.batch_size):
                idx = order[b0:b0 + cfg.batch_size]
                batch = as_arrays(online_augment(cfg, [train_samples[i] for i in idx], rng))
                snapshot = {k: v.copy() for k, v in model.params.items()}
                try:
                    value, _, _ = train_step(model, batch, names, phase, adam, lr)
                except FloatingPointError:
                    good = MeshNet(cfg, snapshot)
                    if ckpt is not None:
                        save_checkpoint(ckpt, good, None, {"phase": phase, "epoch": epoch_no, "diverged": 1})
                    raise TrainingDiverged(f"loss diverged in phase {phase} epoch {ep}", good, ckpt)
                tr_loss += value
                nb += 1
            m = validate(model, val)
            key = m["loss"] if phase == 2 else m["loss_heatmap"]
            row = {"epoch": epoch_no, "stage": phase, **m}
            rows.append(row)
            epoch_no += 1
            if progress:
                log.info("phase %d epoch %d train %.5g val %s", phase, ep, tr_loss / max(nb, 1),
                         {k: round(v, 5) for k, v in m.items()})
            if key < best:
                best, stale = key, 0
                best_params = {k: v.copy() for k, v in model.params.items()}
            else:
                stale += 1
            if out is not None:
                write_metrics(out / "metrics.csv", rows)
                save_checkpoint(ckpt, model, adam, {"phase": phase, "epoch": epoch_no})
            if stale >= cfg.patience:
                log.info("early stop in phase %d after epoch %d", phase, ep)
                break
        if best_params is not None:
            model.params = best_params
    if out is not None:
        save_checkpoint(ckpt, model, None, {"phase": "done", "epoch": epoch_no})
    return TrainResult(model, rows, ckpt, time.perf_counter() - t0)


def metrics_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r["epoch"], r["stage"]] + [_fmt(r[k]) for k in CSV_HEADER[2:]])
    return buf.getvalue()


def write_metrics(path, rows: list[dict]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(metrics_csv(rows))
    os.replace(tmp, path)


__all__ = ["ModelConfig", "MeshNet", "FeatureExtractor", "Output", "forward", "loss",
           "heatmap_term", "targets", "AdamState", "adam_step", "save_checkpoint",
           "load_checkpoint", "encode_checkpoint", "decode_checkpoint", "predict", "validate",
           "train", "TrainResult", "TrainingDiverged", "CSV_HEADER"]
