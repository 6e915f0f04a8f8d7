"""Direct-regression baseline: image -> conv stack -> 3*N*N coordinates.

Uses the same feature extractor as :class:`~meshlift.model.MeshNet` and a
parameter count within a few percent of it, so the comparison isolates the
effect of the belief-map / depth / lifting structure.
"""
from __future__ import annotations

import logging
import math
import time
from pathlib import Path

import numpy as np

from . import tensorcore as tc
from .datagen.scene import Sample
from .layers import Conv, Dense, Layer, ResBlock
from .model import (AdamState, FeatureExtractor, ModelConfig, TrainResult, adam_step,
                    as_arrays, online_augment, save_checkpoint, write_metrics)
from .procrustes import aligned_vertex_error, err_align_t
from .tensorcore import Tensor

log = logging.getLogger(__name__)


def _half(n: int) -> int:
    # output size of a stride-2, pad-1, 3x3 convolution
    return (n + 1) // 2


class RegressionHead(Layer):
    def __init__(self, C: int, num_vertices: int, width: int = 64, hidden: int = 128, cells: int = 16):
        self.res1 = ResBlock("reg.res1", C, width)
        self.down1 = Conv("reg.down1", width, width, stride=2)
        self.res2 = ResBlock("reg.res2", width, width)
        self.down2 = Conv("reg.down2", width, width, stride=2)
        self.fc1 = Dense("reg.fc1", cells * width, hidden)
        self.fc2 = Dense("reg.fc2", hidden, 3 * num_vertices, gain=0.1)

    def children(self):
        return [self.res1, self.down1, self.res2, self.down2, self.fc1, self.fc2]

    def __call__(self, P, F):
        h = self.down1(P, tc.leaky_relu(self.res1(P, F)))
        h = self.down2(P, tc.leaky_relu(self.res2(P, h)))
        b = h.shape[0]
        h = tc.leaky_relu(self.fc1(P, h.reshape(b, h.size // b)))
        return self.fc2(P, h)


class DirectRegressor:
    """Baseline network; predicted shapes are only meaningful up to a similarity."""

    arch = "baseline"

    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray] | None = None):
        cfg.validate()
        self.cfg = cfg
        H, W = cfg.grid
        self.psi = FeatureExtractor(cfg.C, cfg.downscale)
        cells = _half(_half(H)) * _half(_half(W))
        self.head = RegressionHead(cfg.C, cfg.num_vertices, cells=cells)
        if params is None:
            rng = np.random.default_rng([cfg.seed, 11])
            params = {**self.psi.init_params(rng), **self.head.init_params(rng)}
        expected = set(self.psi.param_names()) | set(self.head.param_names())
        if set(params) != expected:
            raise ValueError("parameter set mismatch for the baseline")
        self.params = params

    def tensors(self, trainable=()) -> dict[str, Tensor]:
        tr = set(trainable)
        return {k: Tensor(v, requires_grad=k in tr, name=k) for k, v in self.params.items()}

    def num_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def forward(self, images: np.ndarray, P=None) -> Tensor:
        P = self.tensors() if P is None else P
        images = np.asarray(images, dtype=np.float64)
        F = self.psi(P, Tensor(images - 0.5))
        out = self.head(P, F)
        return out.reshape(out.shape[0], self.cfg.num_vertices, 3)


def predict(model: DirectRegressor, images: np.ndarray, batch: int = 25) -> np.ndarray:
    with tc.no_grad():
        return np.concatenate([model.forward(images[i:i + batch]).data
                               for i in range(0, len(images), batch)])


def validate(model: DirectRegressor, data: dict[str, np.ndarray]) -> dict[str, float]:
    X = predict(model, data["images"])
    with tc.no_grad():
        align = err_align_t(Tensor(X), Tensor(data["X"])).data
    err3d = float(np.mean([aligned_vertex_error(x, xs) for x, xs in zip(X, data["X"])]))
    a = float(align.mean())
    return {"loss": a, "loss_align": a, "loss_heatmap": 0.0, "err2d_px": float("nan"),
            "err3d_aligned": err3d}


def train_baseline(cfg: ModelConfig, train_samples: list[Sample], val_samples: list[Sample],
                   out_dir=None, epochs: int | None = None, progress: bool = False) -> TrainResult:
    """All parameters trained jointly on the alignment loss, with early stopping."""
    if cfg.max_train:
        train_samples = train_samples[:cfg.max_train]
    model = DirectRegressor(cfg)
    names = list(model.params)
    epochs = cfg.epochs0 + cfg.epochs1 + cfg.epochs2 if epochs is None else epochs
    val = as_arrays(val_samples)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    adam = AdamState()
    rows, best, best_params, stale = [], math.inf, None, 0
    t0 = time.perf_counter()
    for ep in range(epochs):
        lr = cfg.lr * cfg.decay ** (ep // cfg.decay_every)
        rng = np.random.default_rng([cfg.seed, 99, ep])
        order = rng.permutation(len(train_samples))
        for b0 in range(0, len(order), cfg.batch_size):
            batch = as_arrays(online_augment(cfg, [train_samples[i] for i in order[b0:b0 + cfg.batch_size]], rng))
            P = model.tensors(names)
            with tc.Tape() as tape:
                total = err_align_t(model.forward(batch["images"], P), Tensor(batch["X"])).mean()
            if not math.isfinite(total.item()):
                raise FloatingPointError("baseline loss diverged")
            g = tc.backward(tape, total)
            adam_step(model.params, {n: g[P[n]] for n in names}, adam, lr, cfg.weight_decay)
        m = validate(model, val)
        rows.append({"epoch": ep, "stage": 2, **m})
        if progress:
            log.info("baseline epoch %d val %s", ep, {k: round(v, 5) for k, v in m.items()})
        if m["loss"] < best:
            best, stale, best_params = m["loss"], 0, {k: v.copy() for k, v in model.params.items()}
        else:
            stale += 1
        if out is not None:
            write_metrics(out / "metrics.csv", rows)
        if stale >= cfg.patience:
            break
    if best_params is not None:
        model.params = best_params
    ckpt = None
    if out is not None:
        ckpt = out / "checkpoint.bin"
        save_checkpoint(ckpt, model, None, {"arch": "baseline", "epoch": len(rows)})
    return TrainResult(model, rows, ckpt, time.perf_counter() - t0)
