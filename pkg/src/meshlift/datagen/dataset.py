"""Dataset generation and the on-disk format.

Layout of a dataset directory::

    manifest.json          splits, counts, seeds, camera, texture pools
    <split>.bin            packed sample records (see below)
    <split>.meta.jsonl     one JSON metadata object per record

Record file (little endian)::

    b"MLDS" u32 version u32 count
    repeated:
      b"SMPL" f64[4] (fu, fv, uc, vc) i32 width i32 height u32 N
      f64[N*N*3] X*   f64[N*N*2] U*   u32 H u32 W   u8[H*W*3] RGB

Images are quantized to 8 bits at generation time, so ``load -> save``
reproduces the file byte for byte.
"""
from __future__ import annotations

import json
import logging
import os
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ..geometry import Camera, MeshGrid2D, MeshGrid3D
from .augment import augment
from .occlude import add_occluders
from .scene import Sample, make_sample, simulate_sequence
from .textures import texture_spec

log = logging.getLogger(__name__)

MAGIC = b"MLDS"
RECORD = b"SMPL"
VERSION = 1

# split name -> (texture pool, occluded)
CONDITIONS = {
    "test_known": ("train", False),
    "test_new": ("new", False),
    "test_plain": ("plain", False),
}
SPLIT_CODES = {"train": 1, "val": 2, "test_known": 3, "test_new": 4, "test_plain": 5}
# the test conditions share geometry (shape, pose, light) and differ only in texture
GEOMETRY_CODES = {"train": 1, "val": 2, "test_known": 3, "test_new": 3, "test_plain": 3}


@dataclass
class GenConfig:
    image_size: int = 64
    N: int = 5
    seed: int = 0
    train: int = 2000
    val: int = 200
    test_known: int = 200
    test_new: int = 200
    test_plain: int = 200
    occluded: bool = True  # emit *_occ twins of every test split and train_occ
    train_textures: int = 24
    new_textures: int = 12
    frames_per_sequence: int = 4
    warmup_steps: int = 1000
    frame_interval: int = 150
    dt: float = 1e-3
    focal_factor: float = 1.6  # focal length in units of the image width
    supersample: int = 2
    max_occluders: int = 5
    augment: bool = False  # expand train with flips and rigid variants (count stays fixed)
    contour_noise_px: float = 0.0  # >0 turns on the blurred-contour corruption

    def validate(self) -> None:
        if self.image_size < 8 or self.N < 2:
            raise ValueError("image_size >= 8 and N >= 2 required")
        for name in ("train", "val", "test_known", "test_new", "test_plain"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.train_textures < 1 or self.new_textures < 1:
            raise ValueError("texture pools must be non-empty")
        if self.frames_per_sequence < 1 or self.supersample < 1:
            raise ValueError("frames_per_sequence and supersample must be >= 1")

    def camera(self) -> Camera:
        return Camera.centered(self.focal_factor * self.image_size, self.image_size)

    def texture_pool(self, pool: str) -> list[int]:
        if pool == "train":
            return list(range(self.train_textures))
        if pool == "new":
            return list(range(self.train_textures, self.train_textures + self.new_textures))
        return list(range(self.train_textures + self.new_textures,
                          self.train_textures + self.new_textures + 1000))

    def splits(self) -> dict[str, tuple[str, int]]:
        out = {"train": ("train", self.train), "val": ("train", self.val)}
        for name, (pool, _) in CONDITIONS.items():
            out[name] = (pool, getattr(self, name))
        return out

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def _seed(cfg: GenConfig, split: str, *idx: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.seed, SPLIT_CODES[split], *idx])


def _geometry_seed(cfg: GenConfig, split: str, *idx: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.seed, GEOMETRY_CODES[split], *idx])


def generate_split(cfg: GenConfig, split: str) -> list[Sample]:
    """Clean samples of one split, deterministic in ``(cfg.seed, split)``."""
    pool_name, count = cfg.splits()[split]
    pool = cfg.texture_pool(pool_name)
    cam = cfg.camera()
    n_base = count
    if split == "train" and cfg.augment:
        n_base = -(-count // 7)
    out: list[Sample] = []
    seq = 0
    while len(out) < n_base:
        frames, meta0, _ = simulate_sequence(cfg.N, cfg.frames_per_sequence,
                                             _geometry_seed(cfg, split, seq),
                                             warmup=cfg.warmup_steps, every=cfg.frame_interval,
                                             dt=cfg.dt)
        for f, world in enumerate(frames):
            if len(out) >= n_base:
                break
            tex_rng = np.random.default_rng(_seed(cfg, split, seq, f))
            tid = int(pool[tex_rng.integers(len(pool))])
            kind, tseed = texture_spec(tid, cfg.seed, plain=(pool_name == "plain"))
            meta = dict(meta0, split=split, sequence=seq, frame=f, texture_id=tid,
                        texture_kind=kind, texture_seed=int(tseed), occluded=False, occluders=0,
                        seed=[cfg.seed, GEOMETRY_CODES[split], seq, f])
            rng = np.random.default_rng(_geometry_seed(cfg, split, seq, f))
            out.append(make_sample(world, cam, meta, rng, cfg.supersample, cfg.contour_noise_px))
        seq += 1
    if split == "train" and cfg.augment:
        expanded = []
        for i, s in enumerate(out):
            expanded.append(s)
            expanded.extend(augment(s, int(_seed(cfg, split, 10**6, i).generate_state(1)[0])))
        out = expanded[:count]
    return out


def occlude_split(cfg: GenConfig, samples: list[Sample], split: str) -> list[Sample]:
    """Gray-patched copies; 1..max_occluders rectangles per sample inside its bounding box."""
    out = []
    for i, s in enumerate(samples):
        rng = np.random.default_rng(_geometry_seed(cfg, split, 2**20, i))
        count = int(rng.integers(1, cfg.max_occluders + 1))
        oseed = int(rng.integers(2**31))
        img = add_occluders(s.image, count, oseed, tuple(s.metadata["bbox"]))
        meta = dict(s.metadata, occluded=True, occluders=count, occluder_seed=oseed,
                    split=split + "_occ")
        out.append(Sample(img, s.mesh3d, s.mesh2d, s.camera, meta))
    return out


def generate_dataset(cfg: GenConfig, out_dir: str | os.PathLike, splits=None) -> dict:
    """Generate every split into ``out_dir``; returns the manifest."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = list(splits) if splits is not None else list(cfg.splits())
    counts = {}
    for name in names:
        log.info("generating split %s", name)
        samples = generate_split(cfg, name)
        save_samples(out / f"{name}.bin", samples)
        counts[name] = len(samples)
        if cfg.occluded and name != "val":
            occ = occlude_split(cfg, samples, name)
            save_samples(out / f"{name}_occ.bin", occ)
            counts[name + "_occ"] = len(occ)
    manifest = build_manifest(cfg, counts)
    _write_atomic(out / "manifest.json", (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return manifest


def build_manifest(cfg: GenConfig, counts: dict[str, int]) -> dict:
    cam = cfg.camera()
    train_ids = cfg.texture_pool("train")
    new_ids = cfg.texture_pool("new")
    if set(train_ids) & set(new_ids):
        raise AssertionError("train and new-texture pools overlap")
    return {
        "format": "MLDS",
        "version": VERSION,
        "config": asdict(cfg),
        "camera": {"fu": cam.fu, "fv": cam.fv, "uc": cam.uc, "vc": cam.vc,
                   "width": cam.width, "height": cam.height},
        "splits": {k: {"count": v, "file": f"{k}.bin",
                       "condition": CONDITIONS.get(k.removesuffix("_occ"), ("train", False))[0],
                       "occluded": k.endswith("_occ")} for k, v in counts.items()},
        "texture_pools": {"train": train_ids, "new": new_ids},
    }


def read_manifest(path: str | os.PathLike) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    return json.loads(p.read_text())


# ---------------------------------------------------------------- binary io

def encode_samples(samples: list[Sample]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(samples))]
    for s in samples:
        c = s.camera
        H, W = s.image.shape[:2]
        rgb = np.round(np.clip(s.image, 0, 1) * 255.0).astype(np.uint8)
        parts += [RECORD, struct.pack("<4d2iI", c.fu, c.fv, c.uc, c.vc, c.width, c.height, s.mesh3d.N),
                  s.mesh3d.vertices.astype("<f8").tobytes(), s.mesh2d.vertices.astype("<f8").tobytes(),
                  struct.pack("<II", H, W), rgb.tobytes()]
    return b"".join(parts)


def decode_samples(buf: bytes, metas: list[dict] | None = None) -> list[Sample]:
    if buf[:4] != MAGIC:
        raise ValueError("not a dataset file (bad magic)")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    off = 12
    out = []
    for i in range(count):
        if buf[off:off + 4] != RECORD:
            raise ValueError(f"corrupt record {i}")
        off += 4
        fu, fv, uc, vc, w, h, N = struct.unpack_from("<4d2iI", buf, off)
        off += struct.calcsize("<4d2iI")
        nv = N * N
        X = np.frombuffer(buf, "<f8", nv * 3, off).reshape(nv, 3).astype(np.float64)
        off += nv * 24
        U = np.frombuffer(buf, "<f8", nv * 2, off).reshape(nv, 2).astype(np.float64)
        off += nv * 16
        H, W = struct.unpack_from("<II", buf, off)
        off += 8
        rgb = np.frombuffer(buf, np.uint8, H * W * 3, off).reshape(H, W, 3)
        off += H * W * 3
        meta = metas[i] if metas is not None else {}
        out.append(Sample(rgb / 255.0, MeshGrid3D(X), MeshGrid2D(U), Camera(fu, fv, uc, vc, w, h), meta))
    if off != len(buf):
        raise ValueError("trailing bytes after last record")
    return out


def _write_atomic(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def save_samples(path: str | os.PathLike, samples: list[Sample]) -> None:
    path = Path(path)
    _write_atomic(path, encode_samples(samples))
    lines = "".join(json.dumps(s.metadata, sort_keys=True) + "\n" for s in samples)
    _write_atomic(path.with_suffix(".meta.jsonl"), lines.encode())


def load_samples(path: str | os.PathLike) -> list[Sample]:
    path = Path(path)
    meta_path = path.with_suffix(".meta.jsonl")
    metas = None
    if meta_path.exists():
        metas = [json.loads(line) for line in meta_path.read_text().splitlines() if line]
    return decode_samples(path.read_bytes(), metas)


def load_split(root: str | os.PathLike, split: str) -> list[Sample]:
    return load_samples(Path(root) / f"{split}.bin")


def stack(samples: list[Sample]) -> dict[str, np.ndarray]:
    """Batch arrays: images (B,H,W,3), X (B,Nv,3), U (B,Nv,2), cams (B,4)."""
    return {
        "images": np.stack([s.image for s in samples]),
        "X": np.stack([s.mesh3d.vertices for s in samples]),
        "U": np.stack([s.mesh2d.vertices for s in samples]),
        "cams": np.stack([s.camera.as_array() for s in samples]),
    }


__all__ = ["GenConfig", "Sample", "generate_split", "generate_dataset", "occlude_split",
           "save_samples", "load_samples", "load_split", "read_manifest", "stack",
           "encode_samples", "decode_samples"]
