"""Template-deforming encoder/decoder for shape completion and latent refinement.

The encoder is a PointNet-style shared MLP, max-pooled over points and
followed by two dense layers.  The decoder concatenates the latent code to
every template vertex and maps each row through a shared MLP to a 3D offset
that is added to the template vertex.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .body import (
    POSE_SAMPLE_RANGE,
    SHAPE_SAMPLE_RANGE,
    TemplateResolution,
    generate_synthetic_body,
    part_vertex_labels,
    sample_body_params,
    subdivide,
)
from .mesh import Mesh, barycentric_points, sample_barycentric
from .metrics import sample_surface
from .nn import NetworkWeights, Optimizer, load_weights, save_weights
from .nn.layers import dense_backward, dense_forward, max_pool_points, max_pool_points_backward
from .spatial import PointIndex

log = logging.getLogger(__name__)

SHAPE_MODEL_KIND = "meshboost.shape_model"


class NumericalError(RuntimeError):
    """Non-finite objective or loss; training or refinement aborted."""


@dataclass
class ShapeArch:
    n_z: int = 128
    encoder: tuple = (3, 32, 64, 128)
    decoder: tuple = (3 + 128, 128, 64, 32, 3)
    template_segments: int = 16
    template_rings: int = 12

    def __post_init__(self):
        self.encoder = tuple(self.encoder)
        self.decoder = tuple(self.decoder)
        if self.encoder[0] != 3 or self.encoder[-1] != self.n_z:
            raise ValueError("encoder must map 3 -> n_z")
        if self.decoder[0] != 3 + self.n_z or self.decoder[-1] != 3:
            raise ValueError("decoder must map 3 + n_z -> 3")

    @classmethod
    def full_size(cls) -> "ShapeArch":
        # the decoder width 513 is kept as published
        return cls(n_z=1024, encoder=(3, 64, 128, 1024), decoder=(3 + 1024, 513, 256, 128, 3))

    def descriptor(self) -> dict:
        return {
            "kind": SHAPE_MODEL_KIND,
            "n_z": self.n_z,
            "encoder": list(self.encoder),
            "dense": [self.n_z, self.n_z],
            "decoder": list(self.decoder),
            "template": [self.template_segments, self.template_rings],
        }


class ShapeModel:
    """Encoder/decoder weights plus the template meshes they act on."""

    def __init__(self, arch: ShapeArch, params: dict, tau_train: float | None = None):
        self.arch = arch
        self.params = params
        self.tau_train = tau_train
        res = TemplateResolution(arch.template_segments, arch.template_rings)
        self.resolution = res
        self.template = generate_synthetic_body(None, None, res)
        self._hires = None

    # -- construction / persistence
    @classmethod
    def initialize(cls, arch: ShapeArch, seed: int) -> "ShapeModel":
        rng = np.random.default_rng(seed)
        params = {}
        enc = arch.encoder
        for k, (a, b) in enumerate(zip(enc[:-1], enc[1:])):
            _init_dense(params, f"enc.{k}", a, b, rng)
        _init_dense(params, "fc.0", arch.n_z, arch.n_z, rng)
        _init_dense(params, "fc.1", arch.n_z, arch.n_z, rng)
        dec = arch.decoder
        for k, (a, b) in enumerate(zip(dec[:-1], dec[1:])):
            _init_dense(params, f"dec.{k}", a, b, rng)
        # start from the identity deformation
        last = len(dec) - 2
        params[f"dec.{last}.W"] *= np.float32(0.01)
        return cls(arch, params)

    def to_weights(self) -> NetworkWeights:
        desc = self.arch.descriptor()
        if self.tau_train is not None:
            desc["tau_train"] = float(self.tau_train)
        return NetworkWeights(desc, dict(self.params))

    @classmethod
    def from_weights(cls, weights: NetworkWeights) -> "ShapeModel":
        d = weights.descriptor
        if d.get("kind") != SHAPE_MODEL_KIND:
            raise ValueError(f"not a shape model: kind={d.get('kind')!r}")
        seg, rings = d["template"]
        arch = ShapeArch(d["n_z"], tuple(d["encoder"]), tuple(d["decoder"]), seg, rings)
        params = {k: v for k, v in weights.tensors.items() if not k.startswith("opt/")}
        expected = set(cls.initialize(arch, 0).params)
        if set(params) != expected:
            raise ValueError("weight tensors do not match the architecture descriptor")
        return cls(arch, params, d.get("tau_train"))

    def save(self, path):
        save_weights(self.to_weights(), path)

    @classmethod
    def load(cls, path, expect: dict | None = None) -> "ShapeModel":
        return cls.from_weights(load_weights(path, expect))

    @property
    def n_z(self) -> int:
        return self.arch.n_z

    @property
    def hires_template(self) -> Mesh:
        if self._hires is None:
            self._hires = subdivide(self.template)
        return self._hires

    # -- encoder
    def _encode(self, points, keep=False):
        x = np.asarray(points, np.float64)
        if x.ndim != 2 or x.shape[1] != 3 or len(x) == 0:
            raise ValueError("encoder needs a non-empty [n, 3] point array")
        p = self.params
        n_enc = len(self.arch.encoder) - 1
        cache = []
        h = x
        for k in range(n_enc):
            W, b = p[f"enc.{k}.W"], p[f"enc.{k}.b"]
            pre = dense_forward(h, W, b)
            cache.append((h, W, pre))
            h = np.maximum(pre, 0.0)
        pooled, arg = max_pool_points(h)
        g0 = pooled[None]
        pre1 = dense_forward(g0, p["fc.0.W"], p["fc.0.b"])
        h1 = np.maximum(pre1, 0.0)
        z = dense_forward(h1, p["fc.1.W"], p["fc.1.b"])[0]
        if keep:
            return z, (cache, arg, len(h), g0, pre1, h1)
        return z

    def _encode_backward(self, enc_cache, dz, grads):
        cache, arg, n, g0, pre1, h1 = enc_cache
        p = self.params
        dh1, dW, db = dense_backward(h1, p["fc.1.W"], dz[None])
        _acc(grads, "fc.1", dW, db)
        dpre1 = dh1 * (pre1 > 0)
        dg0, dW, db = dense_backward(g0, p["fc.0.W"], dpre1)
        _acc(grads, "fc.0", dW, db)
        dh = max_pool_points_backward(arg, n, dg0[0])
        for k in reversed(range(len(cache))):
            h_in, W, pre = cache[k]
            dpre = dh * (pre > 0)
            dh, dW, db = dense_backward(h_in, W, dpre)
            _acc(grads, f"enc.{k}", dW, db)

    def encode(self, points) -> np.ndarray:
        """Latent code of a point set (permutation invariant)."""
        return self._encode(points)

    # -- decoder
    def _decode(self, z, vertices, keep=False, base=None):
        """Deformed vertex positions; the first layer is split as V @ W_v + z @ W_z."""
        z = np.asarray(z, np.float64).reshape(-1)
        if z.shape[0] != self.n_z:
            raise ValueError(f"latent code has length {z.shape[0]}, model expects {self.n_z}")
        p = self.params
        n_dec = len(self.arch.decoder) - 1
        W0 = np.asarray(p["dec.0.W"], np.float64)
        if base is None:
            base = vertices @ W0[:3] + p["dec.0.b"]
        pre = base + z @ W0[3:]
        cache = [pre]
        h = np.maximum(pre, 0.0)
        for k in range(1, n_dec):
            W, b = p[f"dec.{k}.W"], p[f"dec.{k}.b"]
            out = dense_forward(h, W, b)
            cache.append((h, W, out))
            h = np.maximum(out, 0.0) if k < n_dec - 1 else out
        positions = vertices + h
        if keep:
            return positions, (z, vertices, cache)
        return positions

    def _decode_backward(self, dec_cache, dpos, grads=None):
        """Backprop through the decoder; returns dL/dz. Parameter grads go to ``grads``."""
        z, vertices, cache = dec_cache
        n_dec = len(self.arch.decoder) - 1
        dh = dpos
        for k in reversed(range(1, n_dec)):
            h_in, W, out = cache[k]
            if k < n_dec - 1:
                dh = dh * (out > 0)
            dh, dW, db = dense_backward(h_in, W, dh)
            if grads is not None:
                _acc(grads, f"dec.{k}", dW, db)
        dpre0 = dh * (cache[0] > 0)
        col = dpre0.sum(axis=0)
        W0 = np.asarray(self.params["dec.0.W"], np.float64)
        if grads is not None:
            dW0 = np.concatenate([vertices.T @ dpre0, np.outer(z, col)])
            _acc(grads, "dec.0", dW0, col)
        return W0[3:] @ col

    def decode(self, z, template: Mesh | None = None) -> Mesh:
        """Deform ``template`` (default: the model template) by latent code ``z``."""
        tpl = self.template if template is None else template
        return tpl.replace(vertices=self._decode(z, tpl.vertices), vertex_normals=None)


def _init_dense(params, name, a, b, rng):
    params[f"{name}.W"] = (rng.standard_normal((a, b)) * np.sqrt(2.0 / a)).astype(np.float32)
    params[f"{name}.b"] = np.zeros(b, np.float32)


def _acc(grads, name, dW, db):
    for key, g in ((f"{name}.W", dW), (f"{name}.b", db)):
        grads[key] = grads[key] + g if key in grads else g


def encode(model: ShapeModel, points) -> np.ndarray:
    return model.encode(points)


def decode(model: ShapeModel, z, template: Mesh | None = None) -> Mesh:
    return model.decode(z, template)


# ---------------------------------------------------------------------------
# completion and refinement

DEFAULT_INPUT_POINTS = 2048


def complete_shape(model: ShapeModel, partial: Mesh, n_points: int = DEFAULT_INPUT_POINTS, seed: int = 0):
    """First estimate: decode(encode(samples of the partial surface))."""
    pts = sample_surface(partial, n_points, seed)
    z0 = model.encode(pts)
    return model.decode(z0), z0


@dataclass
class RefineConfig:
    iterations: int = 200
    lr: float = 1e-2
    method: str = "adam"
    momentum: float = 0.9
    n_partial_samples: int = 8192
    n_model_samples: int = 8192
    tolerance: float = 0.0
    patience: int = 25
    use_hires: bool = True
    objective: str = "directed"
    derivative_free: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.objective not in ("directed", "symmetric"):
            raise ValueError("objective must be 'directed' or 'symmetric'")


@dataclass
class RefineResult:
    mesh: Mesh
    z: np.ndarray
    initial_objective: float
    objective: float
    history: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.mesh, self.z))


class LatentObjective:
    """Chamfer objective for latent fitting with an analytic z-gradient.

    The decoded surface is represented by fixed barycentric samples on the
    decoded template; nearest-neighbour assignments are held fixed inside a
    single gradient evaluation.
    """

    def __init__(self, model: ShapeModel, partial: Mesh, template: Mesh, z0, cfg: RefineConfig):
        self.model = model
        self.template = template
        self.kind = cfg.objective
        self.target = sample_surface(partial, cfg.n_partial_samples, cfg.seed)
        self.target_index = PointIndex(self.target) if self.kind == "symmetric" else None
        start = model.decode(z0, template)
        rng = np.random.default_rng([cfg.seed, 1])
        self.fid, self.bary = sample_barycentric(start, cfg.n_model_samples, rng)
        W0 = np.asarray(model.params["dec.0.W"], np.float64)
        self.base = template.vertices @ W0[:3] + model.params["dec.0.b"]

    def points(self, positions):
        return barycentric_points(positions, self.template.faces, self.fid, self.bary)

    def value(self, z) -> float:
        return self.value_and_grad(z, need_grad=False)[0]

    def value_and_grad(self, z, need_grad=True):
        m = self.model
        pos, cache = m._decode(z, self.template.vertices, keep=True, base=self.base)
        pts = self.points(pos)
        index = PointIndex(pts)
        ids, d2 = index.query(self.target)
        value = float(np.mean(d2))
        dpts = np.zeros_like(pts)
        if need_grad:
            np.add.at(dpts, ids, 2.0 * (pts[ids] - self.target) / len(self.target))
        if self.kind == "symmetric":
            ids2, d2b = self.target_index.query(pts)
            value += float(np.mean(d2b))
            if need_grad:
                dpts += 2.0 * (pts - self.target[ids2]) / len(pts)
        if not np.isfinite(value):
            raise NumericalError(f"non-finite refinement objective {value}")
        if not need_grad:
            return value, None
        dpos = np.zeros_like(pos)
        faces = self.template.faces[self.fid]
        for k in range(3):
            np.add.at(dpos, faces[:, k], self.bary[:, k:k + 1] * dpts)
        return value, m._decode_backward(cache, dpos)


def refine_latent(model: ShapeModel, partial: Mesh, z0, cfg: RefineConfig = RefineConfig()) -> RefineResult:
    """Fit the latent code to the partial shape with the decoder frozen.

    Returns the best iterate seen, so the objective never exceeds its
    starting value.
    """
    template = model.hires_template if cfg.use_hires else model.template
    z0 = np.asarray(z0, np.float64).copy()
    obj = LatentObjective(model, partial, template, z0, cfg)
    f0 = obj.value(z0)
    best_z, best_f = z0.copy(), f0
    history = [f0]
    z = z0.copy()
    if cfg.derivative_free:
        rng = np.random.default_rng([cfg.seed, 2])
        step = cfg.lr
        for _ in range(cfg.iterations):
            cand = z + step * rng.standard_normal(z.shape)
            fc = obj.value(cand)
            if fc < best_f:
                z, best_z, best_f = cand, cand.copy(), fc
                step *= 1.2
            else:
                step *= 0.85
            history.append(best_f)
    else:
        opt = Optimizer(method=cfg.method, lr=cfg.lr, momentum=cfg.momentum)
        params = {"z": z}
        f = f0
        for it in range(cfg.iterations):
            f, g = obj.value_and_grad(params["z"])
            if it > 0:
                history.append(f)
            if f < best_f:
                best_f, best_z = f, params["z"].copy()
            opt.step(params, {"z": g})
            if cfg.tolerance > 0 and len(history) > cfg.patience:
                if history[-cfg.patience - 1] - min(history[-cfg.patience:]) < cfg.tolerance * history[-cfg.patience - 1]:
                    break
        f_last = obj.value(params["z"])
        history.append(f_last)
        if f_last < best_f:
            best_f, best_z = f_last, params["z"].copy()
    mesh = model.decode(best_z, template)
    return RefineResult(mesh, best_z, f0, best_f, history)


# ---------------------------------------------------------------------------
# training

@dataclass
class ShapeDatasetConfig:
    seed: int = 0
    count: int = 200
    n_val: int = 20
    n_surface_samples: int = 4096
    pose_range: tuple = POSE_SAMPLE_RANGE
    shape_range: tuple = SHAPE_SAMPLE_RANGE

    @classmethod
    def from_json(cls, text: str) -> "ShapeDatasetConfig":
        return cls(**json.loads(text))


@dataclass
class ShapeTrainConfig:
    epochs: int = 40
    batch_size: int = 8
    lr: float = 3e-3
    lr_final: float = 3e-4
    n_points: int = DEFAULT_INPUT_POINTS
    augment: bool = True
    min_fraction: float = 0.3
    jitter: float = 0.005
    seed: int = 0
    arch: ShapeArch = field(default_factory=ShapeArch)


class ShapeDataset:
    """Synthetic bodies: dense surface samples (inputs) and template-topology vertices (targets)."""

    def __init__(self, cfg: ShapeDatasetConfig, res: TemplateResolution):
        rng = np.random.default_rng(cfg.seed)
        self.vertices, self.samples = [], []
        for k in range(cfg.count):
            pose, shape = sample_body_params(rng, cfg.pose_range, cfg.shape_range)
            mesh = generate_synthetic_body(pose, shape, res)
            self.vertices.append(mesh.vertices)
            self.samples.append(sample_surface(mesh, cfg.n_surface_samples, cfg.seed * 100003 + k))
        self.n_train = cfg.count - cfg.n_val
        if self.n_train < 1:
            raise ValueError("dataset needs at least one training shape")

    def train_ids(self):
        return range(self.n_train)

    def val_ids(self):
        return range(self.n_train, len(self.vertices))


def encoder_input(samples, n_points, rng=None, augment=False, min_fraction=0.3, jitter=0.0):
    """Points fed to the encoder; with augmentation: random subsample size and jitter."""
    if rng is None or not augment:
        step = max(1, len(samples) // n_points)
        return samples[::step][:n_points]
    n = int(round(n_points * rng.uniform(min_fraction, 1.0)))
    pts = samples[rng.choice(len(samples), size=max(n, 1), replace=False)]
    return pts + rng.normal(0.0, jitter, size=pts.shape)


def shape_loss_and_grad(model: ShapeModel, points, target, need_grad=True):
    """MSE = mean over vertices of the squared Euclidean error."""
    z, enc_cache = model._encode(points, keep=True)
    pos, dec_cache = model._decode(z, model.template.vertices, keep=True)
    diff = pos - target
    loss = float(np.mean((diff ** 2).sum(axis=1)))
    if not need_grad:
        return loss, None
    grads = {}
    dz = model._decode_backward(dec_cache, 2.0 * diff / len(diff), grads)
    model._encode_backward(enc_cache, dz, grads)
    return loss, grads


def evaluate_shape_model(model: ShapeModel, data: ShapeDataset, ids, n_points, fraction=1.0, seed=0):
    rng = np.random.default_rng(seed)
    losses = []
    for i in ids:
        s = data.samples[i]
        pts = encoder_input(s, n_points)
        if fraction < 1.0:
            pts = pts[rng.choice(len(pts), size=max(1, int(round(fraction * len(pts)))), replace=False)]
        losses.append(shape_loss_and_grad(model, pts, data.vertices[i], need_grad=False)[0])
    return float(np.mean(losses))


@dataclass
class TrainingHistory:
    epochs: list = field(default_factory=list)
    train_mse: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_mse", "val_mse"])
            for row in zip(self.epochs, self.train_mse, self.val_mse):
                w.writerow([row[0], repr(row[1]), repr(row[2])])


class TrainingDivergedError(NumericalError):
    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


def train_shape_model(data_cfg: ShapeDatasetConfig, cfg: ShapeTrainConfig,
                      checkpoint_path=None, resume_from=None, stop_after: Optional[int] = None,
                      dataset: ShapeDataset | None = None):
    """Supervised training on synthetic bodies. Returns (model, history).

    Every epoch draws its randomness from ``default_rng([seed, epoch])`` so a
    run resumed from a checkpoint continues bit-identically.
    """
    arch = cfg.arch
    res = TemplateResolution(arch.template_segments, arch.template_rings)
    data = dataset or ShapeDataset(data_cfg, res)
    model = ShapeModel.initialize(arch, cfg.seed)
    opt = Optimizer(method="adam", lr=cfg.lr)
    history = TrainingHistory()
    first_epoch = 0
    if resume_from is not None:
        w = load_weights(resume_from)
        model.params = {k: v for k, v in w.tensors.items() if not k.startswith("opt/")}
        opt.load_state_tensors(w.tensors)
        state = w.descriptor["train_state"]
        first_epoch = state["epoch"]
        history = TrainingHistory(**state["history"])
    last_epoch = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)
    for epoch in range(first_epoch, last_epoch):
        rng = np.random.default_rng([cfg.seed, epoch])
        opt.lr = cosine_lr(cfg.lr, cfg.lr_final, epoch, cfg.epochs)
        order = rng.permutation(list(data.train_ids()))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            total = {}
            for i in batch:
                pts = encoder_input(data.samples[i], cfg.n_points, rng, cfg.augment, cfg.min_fraction, cfg.jitter)
                loss, grads = shape_loss_and_grad(model, pts, data.vertices[i])
                losses.append(loss)
                for k, g in grads.items():
                    total[k] = total[k] + g if k in total else g
            if not all(np.isfinite(losses[-len(batch):])):
                raise TrainingDivergedError(f"loss became non-finite in epoch {epoch}", checkpoint_path)
            opt.step(model.params, {k: g / len(batch) for k, g in total.items()})
        train_mse = float(np.mean(losses))
        val_mse = evaluate_shape_model(model, data, data.val_ids(), cfg.n_points) if data.n_train < len(data.vertices) else train_mse
        history.epochs.append(epoch)
        history.train_mse.append(train_mse)
        history.val_mse.append(val_mse)
        log.info("epoch %d train %.6g val %.6g", epoch, train_mse, val_mse)
        if checkpoint_path is not None:
            save_checkpoint(model, opt, epoch + 1, history, checkpoint_path)
    if history.val_mse:
        model.tau_train = history.val_mse[-1]
    return model, history


def cosine_lr(lr0, lr1, epoch, epochs):
    frac = epoch / max(epochs - 1, 1)
    return lr1 + 0.5 * (lr0 - lr1) * (1.0 + np.cos(np.pi * frac))


def save_checkpoint(model: ShapeModel, opt: Optimizer, epoch: int, history: TrainingHistory, path):
    w = model.to_weights()
    w.descriptor["train_state"] = {"epoch": epoch, "history": asdict(history)}
    w.tensors.update(opt.state_tensors())
    save_weights(w, path)


def region_vertex_counts(mesh: Mesh, res: TemplateResolution) -> np.ndarray:
    labels = part_vertex_labels(res)
    if len(labels) != mesh.n_vertices:
        raise ValueError("mesh does not have the template topology")
    return np.bincount(labels, minlength=labels.max() + 1)
