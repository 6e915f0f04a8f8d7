"""Evaluation: Procrustes-aligned 3D error, 2D pixel error, timing."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensorcore as tc
from .datagen.scene import Sample
from .procrustes import aligned_vertex_error

EVAL_HEADER = ["index", "split", "sequence", "frame", "texture_id", "occluded",
               "err3d_aligned", "err2d_px", "ms"]

# (images (B,H,W,3), cams (B,4)) -> (X (B,Nv,3), U (B,Nv,2) or None)
Predictor = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray | None]]


@dataclass
class EvalReport:
    split: str
    rows: list[dict] = field(default_factory=list)

    def _col(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows], dtype=np.float64)

    @property
    def mean(self) -> float:
        return float(self._col("err3d_aligned").mean())

    @property
    def median(self) -> float:
        return float(np.median(self._col("err3d_aligned")))

    @property
    def std(self) -> float:
        return float(self._col("err3d_aligned").std())

    @property
    def err2d(self) -> float:
        return float(self._col("err2d_px").mean())

    @property
    def ms_per_sample(self) -> float:
        return float(self._col("ms").mean())

    def summary(self) -> dict:
        return {"split": self.split, "count": len(self.rows), "err3d_mean": self.mean,
                "err3d_median": self.median, "err3d_std": self.std, "err2d_mean": self.err2d,
                "ms_per_sample": self.ms_per_sample}

    def summary_text(self) -> str:
        s = self.summary()
        return (f"split {s['split']}: n={s['count']} 3D aligned error mean {s['err3d_mean']:.5f} "
                f"median {s['err3d_median']:.5f} std {s['err3d_std']:.5f}; "
                f"2D error {s['err2d_mean']:.3f} px; {s['ms_per_sample']:.2f} ms/sample")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(EVAL_HEADER)
        for r in self.rows:
            w.writerow([r[k] if not isinstance(r[k], float) else repr(r[k]) for k in EVAL_HEADER])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, split: str | None = None) -> "EvalReport":
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames != EVAL_HEADER:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        rows = []
        for r in reader:
            rows.append({"index": int(r["index"]), "split": r["split"],
                         "sequence": int(r["sequence"]), "frame": int(r["frame"]),
                         "texture_id": int(r["texture_id"]), "occluded": r["occluded"] == "True",
                         "err3d_aligned": float(r["err3d_aligned"]), "err2d_px": float(r["err2d_px"]),
                         "ms": float(r["ms"])})
        return cls(split or (rows[0]["split"] if rows else ""), rows)


def err2d(U: np.ndarray, U_star: np.ndarray) -> float:
    """Mean per-vertex pixel distance."""
    return float(np.sqrt(((np.asarray(U) - U_star) ** 2).sum(-1)).mean())


def evaluate(predictor: Predictor, samples: list[Sample], split: str = "") -> EvalReport:
    """Run ``predictor`` one sample at a time so the timing is per sample."""
    rep = EvalReport(split)
    for i, s in enumerate(samples):
        t0 = time.perf_counter()
        X, U = predictor(s.image[None], s.camera.as_array()[None])
        ms = 1000.0 * (time.perf_counter() - t0)
        if X.shape[1] != s.mesh3d.vertices.shape[0]:
            raise ValueError(f"mesh size mismatch: model {X.shape[1]} vs data {s.mesh3d.vertices.shape[0]}")
        m = s.metadata
        rep.rows.append({
            "index": i, "split": split, "sequence": int(m.get("sequence", -1)),
            "frame": int(m.get("frame", -1)), "texture_id": int(m.get("texture_id", -1)),
            "occluded": bool(m.get("occluded", False)),
            "err3d_aligned": aligned_vertex_error(X[0], s.mesh3d.vertices),
            "err2d_px": err2d(U[0], s.mesh2d.vertices) if U is not None else math.nan,
            "ms": ms,
        })
    return rep


def model_predictor(model) -> Predictor:
    """Wrap a MeshNet or DirectRegressor."""
    from .model import MeshNet, forward

    if isinstance(model, MeshNet):
        def run(images, cams):
            with tc.no_grad():
                out = forward(model, images, cams)
            return out.X.data, out.U.data
        return run

    def run_baseline(images, cams):
        with tc.no_grad():
            return model.forward(images).data, None
    return run_baseline


def ground_truth_predictor(samples: list[Sample]) -> Predictor:
    """Returns the stored ground truth in order; for self-checks."""
    it = iter(samples)

    def run(images, cams):
        s = next(it)
        return s.mesh3d.vertices[None], s.mesh2d.vertices[None]
    return run


def evaluate_model(model, samples: list[Sample], split: str = "") -> EvalReport:
    return evaluate(model_predictor(model), samples, split)


def write_report(report: EvalReport, out_dir, plot: bool = False) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / f"eval_{report.split}.csv", "summary": out / f"eval_{report.split}.txt"}
    paths["csv"].write_text(report.to_csv())
    paths["summary"].write_text(report.summary_text() + "\n")
    if plot:
        paths["plot"] = plot_errors(report, out / f"eval_{report.split}.png")
    return paths


def plot_errors(report: EvalReport, path) -> Path:
    """Per-sample error curve (sorted by sequence, frame)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = sorted(report.rows, key=lambda r: (r["sequence"], r["frame"]))
    fig, ax = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    ax[0].plot([r["err3d_aligned"] for r in rows], lw=1)
    ax[0].set_ylabel("3D aligned error")
    ax[1].plot([r["err2d_px"] for r in rows], lw=1, color="tab:orange")
    ax[1].set_ylabel("2D error (px)")
    ax[1].set_xlabel("sample")
    fig.suptitle(report.split)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)
