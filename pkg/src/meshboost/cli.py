"""``meshboost`` command-line entry point.

Exit codes: 0 success, 2 bad input or config, 3 model mismatch,
4 numerical failure.  Diagnostics go to stderr; ``--json`` prints the
command's report as JSON on stdout.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .body import TemplateResolution, synthetic_textured_body
from .dataset import HoleConfig, make_partial
from .inpaint import (
    InpaintArch,
    InpaintDataConfig,
    InpaintDivergedError,
    InpaintTrainConfig,
    LossWeights,
    train_inpainter,
)
from .mesh import TexturedMesh, save_obj, write_png
from .nn import WeightsFormatError
from .parallel import single_threaded_blas, thread_count
from .render import CAMERAS, render
from .shape import (
    ShapeArch,
    ShapeDatasetConfig,
    ShapeTrainConfig,
    TrainingDivergedError,
    train_shape_model,
)

COMMANDS = ("complete", "transfer", "mask", "inpaint", "pipeline", "synth", "render", "train-shape", "train-inpaint")


# ---------------------------------------------------------------------------
# config helpers

def _read_json(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise pl.InputError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise pl.InputError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise pl.InputError(f"config {path} must hold a JSON object")
    return data


def _build(cls, data: dict, where: str, **nested):
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise pl.InputError(f"unknown keys in {where}: {sorted(unknown)}")
    for key, sub in nested.items():
        if key in data:
            data[key] = _build(sub, data[key], f"{where}.{key}")
    for key, value in data.items():
        if isinstance(value, list):
            data[key] = tuple(value)
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise pl.InputError(f"invalid {where}: {exc}") from None


@dataclasses.dataclass
class SynthConfig:
    seed: int = 0
    n_train: int = 4
    n_val: int = 2
    n_eval: int = 4
    atlas_size: int = 512
    resolution: tuple = (16, 12)
    holes: HoleConfig = dataclasses.field(default_factory=lambda: HoleConfig(min_missing=0.3))


# ---------------------------------------------------------------------------
# commands

def cmd_complete(args):
    cfg = pl.load_config(args.config, args.seed)
    return pl.stage_complete(args.partial, args.out, cfg)


def cmd_transfer(args):
    cfg = pl.load_config(args.config, args.seed)
    return pl.stage_transfer(args.source, args.target, args.out, cfg)


def cmd_mask(args):
    cfg = pl.load_config(args.config, args.seed)
    return pl.stage_mask(args.atlas, args.target, args.out, cfg)


def cmd_inpaint(args):
    cfg = pl.load_config(args.config, args.seed)
    return pl.stage_inpaint(args.atlas, args.mask, args.background, args.out, cfg)


def cmd_pipeline(args):
    cfg = pl.load_config(args.config, args.seed)
    return pl.stage_pipeline(args.partial, args.out, cfg)


def cmd_synth(args):
    cfg = _build(SynthConfig, _read_json(args.config), "synth config", holes=HoleConfig)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if min(cfg.n_train, cfg.n_val, cfg.n_eval) < 0:
        raise pl.InputError("split sizes must be non-negative")
    res = TemplateResolution(*cfg.resolution)
    root = Path(args.out)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise pl.InputError(f"cannot create output directory {root}: {exc}") from None
    manifest = {"seed": cfg.seed, "splits": {}}
    case_seed = cfg.seed * 100000
    for split, count in (("train", cfg.n_train), ("val", cfg.n_val), ("eval", cfg.n_eval)):
        entries = []
        for k in range(count):
            case_seed += 1
            rng = np.random.default_rng(case_seed)
            complete = synthetic_textured_body(rng, cfg.atlas_size, res)
            try:
                case = make_partial(complete, case_seed, cfg.holes)
            except ValueError as exc:
                raise pl.InputError(f"hole config: {exc}") from None
            case_dir = root / split / f"case_{k:04d}"
            case_dir.mkdir(parents=True, exist_ok=True)
            save_obj(case.partial, case_dir / "partial.obj")
            entry = {"id": f"{split}/case_{k:04d}", "seed": case_seed,
                     "partial": f"{split}/case_{k:04d}/partial.obj",
                     "missing_area_fraction": round(case.missing_fraction, 6)}
            if split != "eval":
                save_obj(complete, case_dir / "complete.obj")
                entry["complete"] = f"{split}/case_{k:04d}/complete.obj"
            entries.append(entry)
        manifest["splits"][split] = entries
    pl.write_report(root / "manifest.json", manifest)
    return {"command": "synth", "sizes": {k: len(v) for k, v in manifest["splits"].items()}}


def cmd_render(args):
    if args.camera not in CAMERAS:
        raise pl.InputError(f"unknown camera {args.camera!r}; choose from {sorted(CAMERAS)}")
    if args.size < 1:
        raise pl.InputError("--size must be positive")
    tm = pl.read_obj(args.mesh)
    if tm.atlas is not None and tm.mesh.corner_uvs is None:
        raise pl.InputError(f"{args.mesh}: textured mesh has no UVs")
    image = render(tm.mesh, tm.atlas, args.camera, args.size)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_png(out, image)
    return {"command": "render", "camera": args.camera, "size": args.size, "textured": tm.atlas is not None}


def _train_outputs(out: Path):
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise pl.InputError(f"cannot create output directory {out}: {exc}") from None
    return out / "model.w3b", out / "checkpoint.w3b"


def _check_resume(path):
    if path is not None and not Path(path).is_file():
        raise pl.InputError(f"checkpoint not found: {path}")


def cmd_train_shape(args):
    raw = _read_json(args.config)
    unknown = set(raw) - {"data", "train"}
    if unknown:
        raise pl.InputError(f"unknown keys in shape training config: {sorted(unknown)}")
    data_cfg = _build(ShapeDatasetConfig, raw.get("data"), "data")
    train = dict(raw.get("train") or {})
    cfg = _build(ShapeTrainConfig, train, "train", arch=ShapeArch)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    _check_resume(args.resume)
    model_path, ckpt = _train_outputs(Path(args.out))
    try:
        model, history = train_shape_model(data_cfg, cfg, ckpt, args.resume)
    except TrainingDivergedError as exc:
        ckpt_note = (f"last good checkpoint: {exc.checkpoint}" if exc.checkpoint and Path(exc.checkpoint).is_file()
                     else "no checkpoint was written")
        raise pl.NumericalFailure(f"{exc}; {ckpt_note}") from None
    except WeightsFormatError as exc:
        raise pl.ModelError(f"{args.resume}: {exc}") from None
    model.save(model_path)
    history.write_csv(Path(args.out) / "training.csv")
    summary = {"command": "train-shape", "epochs": len(history.epochs), "tau_train": model.tau_train,
               "final_train_mse": history.train_mse[-1] if history.train_mse else None,
               "model": "model.w3b", "checkpoint": "checkpoint.w3b"}
    pl.write_report(Path(args.out) / "summary.json", summary)
    return summary


def cmd_train_inpaint(args):
    raw = _read_json(args.config)
    unknown = set(raw) - {"data", "train"}
    if unknown:
        raise pl.InputError(f"unknown keys in inpainting training config: {sorted(unknown)}")
    data_cfg = _build(InpaintDataConfig, raw.get("data"), "data")
    cfg = _build(InpaintTrainConfig, raw.get("train"), "train", arch=InpaintArch, loss=LossWeights)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if data_cfg.size % 2 ** cfg.arch.stages:
        raise pl.InputError(f"image size {data_cfg.size} must be divisible by {2 ** cfg.arch.stages}")
    _check_resume(args.resume)
    model_path, ckpt = _train_outputs(Path(args.out))
    try:
        net, history = train_inpainter(data_cfg, cfg, checkpoint_path=ckpt, resume_from=args.resume)
    except InpaintDivergedError as exc:
        raise pl.NumericalFailure(str(exc)) from None
    except WeightsFormatError as exc:
        raise pl.ModelError(f"{args.resume}: {exc}") from None
    net.save(model_path)
    history.write_csv(Path(args.out) / "training.csv")
    summary = {"command": "train-inpaint", "strategy": cfg.strategy, "iterations": len(history.rows),
               "use_background": cfg.use_background,
               "tau_train": history.losses[-1] if history.rows else None,
               "model": "model.w3b", "checkpoint": "checkpoint.w3b"}
    pl.write_report(Path(args.out) / "summary.json", summary)
    return summary


HANDLERS = {
    "complete": cmd_complete, "transfer": cmd_transfer, "mask": cmd_mask, "inpaint": cmd_inpaint,
    "pipeline": cmd_pipeline, "synth": cmd_synth, "render": cmd_render,
    "train-shape": cmd_train_shape, "train-inpaint": cmd_train_inpaint,
}


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--json", action="store_true", help="print the report as JSON on stdout")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="meshboost", description="Textured partial body completion.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("complete", parents=[common], help="complete a partial mesh")
    p.add_argument("partial")
    p.add_argument("-o", "--out", required=True, help="output directory")

    p = sub.add_parser("transfer", parents=[common], help="transfer a texture onto a completed mesh")
    p.add_argument("source", help="partial textured OBJ")
    p.add_argument("target", help="completed OBJ with template UVs")
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("mask", parents=[common], help="derive the missing and background masks")
    p.add_argument("atlas", help="transferred atlas PNG")
    p.add_argument("target", help="completed OBJ with template UVs")
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("inpaint", parents=[common], help="fill missing texels of an atlas")
    p.add_argument("atlas")
    p.add_argument("--mask", required=True, help="M.png (0 = missing)")
    p.add_argument("--background", required=True, help="M_b.png (0 = background)")
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("pipeline", parents=[common], help="run all stages on a partial textured OBJ")
    p.add_argument("partial")
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("-o", "--out", required=True)

    p = sub.add_parser("render", parents=[common], help="render a PNG preview")
    p.add_argument("mesh")
    p.add_argument("-o", "--out", required=True, help="output PNG")
    p.add_argument("--camera", default="front", help=f"one of {', '.join(CAMERAS)}")
    p.add_argument("--size", type=int, default=512)

    for name in ("train-shape", "train-inpaint"):
        p = sub.add_parser(name, parents=[common], help=f"train the {name[6:]} model")
        p.add_argument("-o", "--out", required=True, help="output directory")
        p.add_argument("--resume", help="checkpoint to resume from")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        try:
            thread_count()
        except ValueError as exc:
            raise pl.InputError(str(exc)) from None
        with single_threaded_blas():
            report = HANDLERS[args.command](args)
    except (pl.InputError, pl.ModelError, pl.NumericalFailure) as exc:
        print(f"meshboost {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        print(f"meshboost {args.command}: done", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
