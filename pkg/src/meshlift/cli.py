"""``meshlift`` command line: gen, train, eval, infer, gradcheck.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("meshlift")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, out_required: bool = False) -> None:
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--seed", type=int, help="overrides the seed in the config")
    p.add_argument("--out", type=Path, required=out_required, help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a [model] field (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="meshlift", description="Monocular mesh reconstruction toolkit")
    sub = parser.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate the synthetic dataset")
    _common(p)
    p.add_argument("--dry-run", action="store_true", help="validate the config and print counts")
    p.add_argument("--splits", help="comma separated subset of splits")

    p = sub.add_parser("train", help="train a model")
    _common(p, out_required=True)
    p.add_argument("--data", type=Path, required=True, help="dataset directory")
    p.add_argument("--splits", default="train", help="training splits, comma separated")
    p.add_argument("--val-split", default="val")
    p.add_argument("--arch", choices=("meshnet", "baseline"), default="meshnet")
    p.add_argument("--init", type=Path, help="start from this checkpoint")

    p = sub.add_parser("eval", help="evaluate a checkpoint on dataset splits")
    _common(p, out_required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", default="test_known", help="comma separated splits")
    p.add_argument("--plot", action="store_true", help="write per-sample error plots")

    p = sub.add_parser("infer", help="reconstruct one image")
    _common(p, out_required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--image", type=Path, help="RGB image file")
    src.add_argument("--sample", type=int, help="index into --data/--split instead of an image")
    p.add_argument("--data", type=Path)
    p.add_argument("--split", default="test_known")
    cam = p.add_mutually_exclusive_group()
    cam.add_argument("--camera", help="fu,fv,uc,vc in pixels of the given image")
    cam.add_argument("--camera-file", type=Path, help="text file with fu fv uc vc")
    p.add_argument("--overlay", action="store_true", help="also write a wireframe overlay PNG")
    p.add_argument("--overlay-scale", type=int, default=4)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    _common(p)
    p.add_argument("--corrupt", metavar="OP", help="debug: scale this op's VJP by 1.5")
    return parser


def _model_overrides(cfg, items: list[str]):
    from . import config as C

    for item in items:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        setattr(cfg, k, C._coerce(type(cfg), k, v))
    return cfg


def _load_configs(args):
    from . import config as C

    try:
        gen, model = C.load(args.config, args.seed)
        _model_overrides(model, args.set)
    except C.ConfigError as exc:
        raise UsageError(str(exc)) from exc
    return gen, model


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    from .datagen.dataset import generate_dataset

    gen, model = _load_configs(args)
    try:
        gen.validate()
        if args.config is not None and args.dry_run:
            model.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    splits = args.splits.split(",") if args.splits else None
    if splits:
        unknown = set(splits) - set(gen.splits())
        if unknown:
            raise UsageError(f"unknown splits {sorted(unknown)}")
    counts = {k: v for k, (_, v) in gen.splits().items() if splits is None or k in splits}
    if args.dry_run:
        print(json.dumps({"valid": True, "image_size": gen.image_size, "N": gen.N,
                          "counts": counts, "occluded": gen.occluded}, sort_keys=True))
        return 0
    if args.out is None:
        raise UsageError("gen needs --out unless --dry-run is given")
    manifest = generate_dataset(gen, args.out, splits)
    print(json.dumps({k: v["count"] for k, v in manifest["splits"].items()}, sort_keys=True))
    return 0


def _load_splits(root: Path, names: list[str]):
    from .datagen.dataset import load_split

    out = []
    for n in names:
        out.extend(load_split(root, n))
    return out


def _json_num(x):
    # the baseline has no 2D output; keep the printed line strict JSON
    return None if x is None or not np.isfinite(x) else x


def cmd_train(args) -> int:
    from . import config as C
    from .baseline import train_baseline
    from .model import MeshNet, load_checkpoint, train

    _, cfg = _load_configs(args)
    train_set = _load_splits(args.data, args.splits.split(","))
    val_set = _load_splits(args.data, [args.val_split])
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.txt").write_text(C.dump_section("model", cfg))
    if args.arch == "baseline":
        res = train_baseline(cfg, train_set, val_set, args.out, progress=args.verbose)
    else:
        init = None
        if args.init is not None:
            loaded, _, _ = load_checkpoint(args.init)
            init = MeshNet(cfg, loaded.params)
        res = train(cfg, train_set, val_set, args.out, model=init, progress=args.verbose)
    last = res.metrics[-1] if res.metrics else {}
    print(json.dumps({"epochs": len(res.metrics), "checkpoint": str(res.checkpoint),
                      "seconds": round(res.seconds, 1),
                      "final": {k: _json_num(last.get(k)) for k in ("loss", "err2d_px", "err3d_aligned")}}))
    return 0


def _check_compat(model, manifest: dict) -> None:
    gcfg = manifest["config"]
    if gcfg["N"] != model.cfg.N:
        raise ValueError(f"mesh size mismatch: checkpoint N={model.cfg.N}, dataset N={gcfg['N']}")
    if gcfg["image_size"] != model.cfg.H_o or gcfg["image_size"] != model.cfg.W_o:
        raise ValueError("image size mismatch between checkpoint and dataset")


def cmd_eval(args) -> int:
    from .datagen.dataset import load_split, read_manifest
    from .evaluate import evaluate_model, write_report
    from .model import load_checkpoint

    model, _, _ = load_checkpoint(args.checkpoint)
    _check_compat(model, read_manifest(args.data))
    summaries = []
    for split in args.split.split(","):
        rep = evaluate_model(model, load_split(args.data, split), split)
        write_report(rep, args.out, plot=args.plot)
        print(rep.summary_text())
        summaries.append(rep.summary())
    (args.out / "eval_summary.json").write_text(json.dumps(summaries, indent=2, sort_keys=True) + "\n")
    return 0


def _read_camera(args, in_w: int, in_h: int, cfg):
    from .geometry import Camera

    if args.camera:
        vals = [float(x) for x in args.camera.split(",")]
    elif args.camera_file:
        vals = [float(x) for x in args.camera_file.read_text().split()]
    else:
        raise UsageError("infer on an image file needs --camera or --camera-file")
    if len(vals) != 4:
        raise UsageError("camera needs exactly four numbers: fu fv uc vc")
    sx, sy = cfg.W_o / in_w, cfg.H_o / in_h
    fu, fv, uc, vc = vals
    # pixel-centre convention: p' = (p + 0.5) * s - 0.5
    return Camera(fu * sx, fv * sy, (uc + 0.5) * sx - 0.5, (vc + 0.5) * sy - 0.5, cfg.W_o, cfg.H_o)


def write_mesh(path: Path, X: np.ndarray, N: int) -> None:
    lines = [f"# meshlift mesh N={N} vertices={N * N} (x y z, camera frame)"]
    lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in X]
    path.write_text("\n".join(lines) + "\n")


def draw_overlay(image: np.ndarray, U: np.ndarray, N: int, scale: int = 4):
    """Wireframe of the projected mesh over an upscaled copy of ``image``; returns a PIL image."""
    from PIL import Image, ImageDraw

    H, W = image.shape[:2]
    im = Image.fromarray(np.round(np.clip(image, 0, 1) * 255).astype(np.uint8))
    im = im.resize((W * scale, H * scale), Image.NEAREST)
    draw = ImageDraw.Draw(im)
    P = (U + 0.5) * scale - 0.5
    grid = P.reshape(N, N, 2)
    for j in range(N):
        for k in range(N):
            if k + 1 < N:
                draw.line([tuple(grid[j, k]), tuple(grid[j, k + 1])], fill=(255, 220, 0), width=1)
            if j + 1 < N:
                draw.line([tuple(grid[j, k]), tuple(grid[j + 1, k])], fill=(255, 220, 0), width=1)
    for u, v in P:
        draw.ellipse([u - 1.5, v - 1.5, u + 1.5, v + 1.5], outline=(255, 40, 40))
    return im


def overlay_points(U: np.ndarray, scale: int) -> np.ndarray:
    """Overlay-canvas coordinates of the drawn vertices."""
    return (np.asarray(U) + 0.5) * scale - 0.5


def cmd_infer(args) -> int:
    from .datagen.dataset import load_split
    from .evaluate import err2d, model_predictor
    from .model import load_checkpoint
    from .procrustes import aligned_vertex_error

    model, _, _ = load_checkpoint(args.checkpoint)
    cfg = model.cfg
    gt = None
    if args.sample is not None:
        if args.data is None:
            raise UsageError("--sample needs --data")
        samples = load_split(args.data, args.split)
        if not 0 <= args.sample < len(samples):
            raise UsageError(f"--sample out of range (split has {len(samples)})")
        gt = samples[args.sample]
        image, cam = gt.image, gt.camera
    else:
        from PIL import Image, UnidentifiedImageError

        try:
            pil = Image.open(args.image).convert("RGB")
        except (OSError, UnidentifiedImageError) as exc:
            raise ValueError(f"cannot read image {args.image}: {exc}") from exc
        cam = _read_camera(args, pil.width, pil.height, cfg)
        if pil.size != (cfg.W_o, cfg.H_o):
            pil = pil.resize((cfg.W_o, cfg.H_o), Image.BILINEAR)
        image = np.asarray(pil, dtype=np.float64) / 255.0
    X, U = model_predictor(model)(image[None], cam.as_array()[None])
    args.out.mkdir(parents=True, exist_ok=True)
    write_mesh(args.out / "mesh.txt", X[0], cfg.N)
    result = {"mesh": str(args.out / "mesh.txt")}
    if args.overlay:
        if U is None:
            raise ValueError("overlay needs a model with 2D outputs")
        draw_overlay(image, U[0], cfg.N, args.overlay_scale).save(args.out / "overlay.png")
        result["overlay"] = str(args.out / "overlay.png")
    if gt is not None:
        result["err3d_aligned"] = aligned_vertex_error(X[0], gt.mesh3d.vertices)
        if U is not None:
            result["err2d_px"] = err2d(U[0], gt.mesh2d.vertices)
    np.savetxt(args.out / "uv.txt", U[0] if U is not None else np.zeros((0, 2)), fmt="%.17g")
    print(json.dumps(result, sort_keys=True))
    return 0


def cmd_gradcheck(args) -> int:
    from . import tensorcore as tc
    from .gradsuite import format_table, run_suite

    if args.corrupt and args.corrupt not in tc.OPS:
        raise UsageError(f"unknown op {args.corrupt!r}")
    rows = run_suite(seed=args.seed or 0, corrupt=args.corrupt)
    table = format_table(rows)
    print(table)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "gradcheck.txt").write_text(table + "\n")
    return 0 if all(r.passed for r in rows) else 2


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.cmd](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"meshlift {args.cmd}: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"meshlift {args.cmd}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
