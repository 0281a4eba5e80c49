"""File-level pipeline stages: complete, transfer, mask, inpaint, and their chaining.

Every stage validates and loads all of its inputs before it creates the
output directory, so a failed validation leaves nothing behind.  Reports
hold no timings or absolute paths, which keeps output trees byte-identical
between runs.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .mesh import (
    Mesh,
    MissingTextureError,
    ObjParseError,
    TexturedMesh,
    compute_vertex_normals,
    load_obj,
    rasterize_background_mask,
    read_mask_png,
    read_png_rgb,
    save_obj,
    write_mask_png,
    write_png,
)
from .metrics import directed_chamfer, sample_surface
from .nn import WeightsFormatError
from .shape import NumericalError, RefineConfig, ShapeModel, complete_shape, refine_latent
from .inpaint import InpaintDivergedError, InpaintNet, inpaint_atlas
from .texture import TransferConfig, apply_masks_to_image, derive_masks, transfer_texture
from .mesh import TextureAtlas


class InputError(Exception):
    exit_code = 2


class ModelError(Exception):
    exit_code = 3


class NumericalFailure(Exception):
    exit_code = 4


def bundled_model(name: str) -> Path:
    return Path(str(resources.files("meshboost") / "data" / name))


@dataclass
class InpaintStageConfig:
    max_passes: int = 32
    theta_black: float = 0.0


@dataclass
class PipelineConfig:
    seed: int = 0
    shape_model: str | None = None
    inpaint_model: str | None = None
    n_input_points: int = 2048
    eval_samples: int = 8192
    refine: RefineConfig = field(default_factory=RefineConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)
    inpaint: InpaintStageConfig = field(default_factory=InpaintStageConfig)

    @classmethod
    def from_dict(cls, data: dict, base: Path | None = None) -> "PipelineConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        try:
            refine = RefineConfig(**data.pop("refine", {}))
            transfer = TransferConfig(**data.pop("transfer", {}))
            inpaint = InpaintStageConfig(**data.pop("inpaint", {}))
            cfg = cls(refine=refine, transfer=transfer, inpaint=inpaint, **data)
        except (TypeError, ValueError) as exc:
            raise InputError(f"invalid config: {exc}") from None
        for key in ("shape_model", "inpaint_model"):
            value = getattr(cfg, key)
            if value is not None and base is not None and not Path(value).is_absolute():
                setattr(cfg, key, str(base / value))
        cfg.refine = dataclasses.replace(cfg.refine, seed=cfg.seed)
        return cfg

    def with_seed(self, seed: int) -> "PipelineConfig":
        return dataclasses.replace(self, seed=seed, refine=dataclasses.replace(self.refine, seed=seed))


def load_config(path, seed: int | None = None) -> PipelineConfig:
    if path is None:
        cfg = PipelineConfig()
    else:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise InputError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"config {path} is not valid JSON: {exc}") from None
        cfg = PipelineConfig.from_dict(data, path.parent)
    return cfg.with_seed(seed) if seed is not None else cfg


# ---------------------------------------------------------------------------
# loading helpers with exit-code mapping

def read_obj(path, need_texture=False) -> TexturedMesh:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"input file not found: {path}")
    try:
        tm = load_obj(path)
    except ObjParseError as exc:
        raise InputError(f"{path}: line {exc.line}: {exc}") from None
    except (MissingTextureError, ValueError, OSError) as exc:
        raise InputError(f"{path}: {exc}") from None
    if tm.mesh.n_faces == 0:
        raise InputError(f"{path}: mesh has no faces")
    if need_texture and tm.atlas is None:
        raise InputError(f"{path}: a textured mesh (mtllib + map_Kd) is required")
    return tm


def read_image(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"image not found: {path}")
    try:
        return read_png_rgb(path)
    except OSError as exc:
        raise InputError(f"{path}: {exc}") from None


def read_mask(path, shape) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"mask not found: {path}")
    try:
        m = read_mask_png(path)
    except OSError as exc:
        raise InputError(f"{path}: {exc}") from None
    if m.shape != tuple(shape):
        raise InputError(f"{path}: mask is {m.shape}, expected {tuple(shape)}")
    return m


def load_shape_model(path) -> ShapeModel:
    path = Path(path) if path is not None else bundled_model("shape_toy.w3b")
    if not path.is_file():
        raise InputError(f"shape model not found: {path}")
    try:
        return ShapeModel.load(path)
    except (WeightsFormatError, ValueError, KeyError) as exc:
        raise ModelError(f"{path}: {exc}") from None


def load_inpaint_model(path) -> InpaintNet:
    path = Path(path) if path is not None else bundled_model("inpaint_toy.w3b")
    if not path.is_file():
        raise InputError(f"inpainting model not found: {path}")
    try:
        return InpaintNet.load(path)
    except (WeightsFormatError, ValueError, KeyError) as exc:
        raise ModelError(f"{path}: {exc}") from None


def write_report(path, report: dict):
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def _prepare(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc}") from None
    return out


# ---------------------------------------------------------------------------
# stages

def stage_complete(partial_path, out_dir, cfg: PipelineConfig) -> dict:
    partial = read_obj(partial_path)
    model = load_shape_model(cfg.shape_model)
    out = _prepare(out_dir)
    try:
        _, z0 = complete_shape(model, partial.mesh, cfg.n_input_points, cfg.seed)
        result = refine_latent(model, partial.mesh, z0, cfg.refine)
    except NumericalError as exc:
        raise NumericalFailure(str(exc)) from None
    mesh = result.mesh
    save_obj(TexturedMesh(mesh), out / "completed.obj")
    np.save(out / "latent.npy", result.z)
    target = sample_surface(partial.mesh, cfg.eval_samples, cfg.seed)
    initial = model.decode(z0, model.hires_template if cfg.refine.use_hires else model.template)
    report = {
        "stage": "complete",
        "objective": cfg.refine.objective,
        "initial_objective": result.initial_objective,
        "refined_objective": result.objective,
        "initial_directed_chamfer": directed_chamfer(target, sample_surface(initial, cfg.eval_samples, cfg.seed + 1)),
        "refined_directed_chamfer": directed_chamfer(target, sample_surface(mesh, cfg.eval_samples, cfg.seed + 1)),
        "iterations": len(result.history) - 1,
        "n_vertices": mesh.n_vertices,
        "n_faces": mesh.n_faces,
    }
    write_report(out / "report.json", report)
    return report


def _completed_target(path) -> Mesh:
    tm = read_obj(path)
    if tm.mesh.corner_uvs is None:
        raise InputError(f"{path}: completed mesh needs template UVs")
    return compute_vertex_normals(tm.mesh)


def stage_transfer(source_path, target_path, out_dir, cfg: PipelineConfig) -> dict:
    source = read_obj(source_path, need_texture=True)
    target = _completed_target(target_path)
    out = _prepare(out_dir)
    atlas = transfer_texture(source, target, cfg.transfer)
    write_png(out / "transferred.png", atlas.image)
    Mb = rasterize_background_mask(target, cfg.transfer.width, cfg.transfer.height)
    black = int(((atlas.image.max(axis=-1) == 0) & (Mb == 1)).sum())
    report = {"stage": "transfer", "foreground_texels": int(Mb.sum()), "black_foreground_texels": black}
    write_report(out / "report.json", report)
    return report


def stage_mask(atlas_path, target_path, out_dir, cfg: PipelineConfig) -> dict:
    image = read_image(atlas_path)
    target = _completed_target(target_path)
    out = _prepare(out_dir)
    h, w = image.shape[:2]
    Mb = rasterize_background_mask(target, w, h)
    masks = derive_masks(TextureAtlas(image), Mb, cfg.inpaint.theta_black)
    write_mask_png(out / "M.png", masks.M)
    write_mask_png(out / "M_b.png", masks.M_b)
    write_png(out / "masked.png", apply_masks_to_image(TextureAtlas(image), masks))
    report = {"stage": "mask", "missing_texels": masks.missing_count, "foreground_texels": int(Mb.sum())}
    write_report(out / "report.json", report)
    return report


def stage_inpaint(atlas_path, mask_path, background_path, out_dir, cfg: PipelineConfig) -> dict:
    image = read_image(atlas_path)
    M = read_mask(mask_path, image.shape[:2])
    Mb = read_mask(background_path, image.shape[:2])
    net = load_inpaint_model(cfg.inpaint_model)
    stages = net.arch.stages
    if image.shape[0] % 2 ** stages or image.shape[1] % 2 ** stages:
        raise InputError(f"atlas size {image.shape[:2]} must be divisible by {2 ** stages}")
    out = _prepare(out_dir)
    missing = int(((M == 0) & (Mb == 1)).sum())
    try:
        result, passes, fallback = inpaint_atlas(net, TextureAtlas(image), M, Mb, cfg.inpaint.max_passes)
    except InpaintDivergedError as exc:
        raise NumericalFailure(str(exc)) from None
    if not np.all(np.isfinite(result.image)):
        raise NumericalFailure("inpainting produced non-finite values")
    write_png(out / "inpainted.png", result.image)
    report = {"stage": "inpaint", "missing_texels": missing, "passes": passes, "fallback_texels": fallback}
    write_report(out / "report.json", report)
    return report


def stage_pipeline(partial_path, out_dir, cfg: PipelineConfig) -> dict:
    """complete -> transfer -> mask -> inpaint, each through its own files."""
    read_obj(partial_path, need_texture=True)
    load_shape_model(cfg.shape_model)
    net = load_inpaint_model(cfg.inpaint_model)
    step = 2 ** net.arch.stages
    if cfg.transfer.height % step or cfg.transfer.width % step:
        raise InputError(f"atlas size {cfg.transfer.height}x{cfg.transfer.width} must be divisible by {step}")
    out = _prepare(out_dir)
    reports = {}
    reports["complete"] = stage_complete(partial_path, out / "complete", cfg)
    completed = out / "complete" / "completed.obj"
    reports["transfer"] = stage_transfer(partial_path, completed, out / "transfer", cfg)
    reports["mask"] = stage_mask(out / "transfer" / "transferred.png", completed, out / "mask", cfg)
    reports["inpaint"] = stage_inpaint(out / "transfer" / "transferred.png", out / "mask" / "M.png",
                                       out / "mask" / "M_b.png", out / "inpaint", cfg)
    final = out / "final"
    final.mkdir(exist_ok=True)
    mesh = read_obj(completed).mesh
    atlas = TextureAtlas(read_image(out / "inpaint" / "inpainted.png"))
    save_obj(TexturedMesh(mesh, atlas), final / "textured.obj")
    report = {"stage": "pipeline", "seed": cfg.seed, "stages": reports}
    write_report(out / "report.json", report)
    return report
