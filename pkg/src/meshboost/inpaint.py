"""Background-aware partial convolutions, the inpainting UNet, its losses and training.

Shapes inside this module are batch-first: images ``[N, C, H, W]``, masks
``[N, 1, H, W]`` or per-channel ``[N, C, H, W]``.  The public single-image
helpers accept ``[C, H, W]`` images and ``[H, W]`` masks.

A partial convolution reads only entries where ``M * M_b`` is 1 and rescales
by ``count / sum(M * M_b)``, where ``count`` is the number of window entries
inside the image (so an all-ones mask reproduces a zero-padded convolution).
The background mask travels through the network unchanged by a centre-tap
kernel, i.e. it is subsampled at stride 2.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .body import synthetic_textured_body
from .mesh import HoleSpec, TextureAtlas, compute_vertex_normals, cut_holes, rasterize_background_mask
from .nn import NetworkWeights, Optimizer, load_weights, save_weights
from .nn.layers import conv2d_backward, conv2d_forward, upsample_nearest, upsample_nearest_backward
from .texture import TransferConfig, derive_masks, transfer_texture

log = logging.getLogger(__name__)

INPAINT_KIND = "meshboost.inpaint_net"
NEAR_BLACK = 0.1


class InpaintDivergedError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# data types

@dataclass(frozen=True, eq=False)
class MaskedImage:
    image: np.ndarray  # C x H x W in [0, 1]
    M: np.ndarray      # H x W, 1 = known
    M_b: np.ndarray    # H x W, 1 = foreground

    def __post_init__(self):
        img = np.asarray(self.image, np.float64)
        if img.ndim != 3:
            raise ValueError(f"image must be C x H x W, got {img.shape}")
        m = _binary(self.M, "M")
        mb = _binary(self.M_b, "M_b")
        if m.shape != img.shape[1:] or mb.shape != img.shape[1:]:
            raise ValueError("image and masks must share H x W")
        object.__setattr__(self, "image", img)
        object.__setattr__(self, "M", m)
        object.__setattr__(self, "M_b", mb)

    @classmethod
    def from_atlas(cls, atlas: TextureAtlas, M, M_b) -> "MaskedImage":
        return cls(atlas.as_float().transpose(2, 0, 1), M, M_b)


@dataclass
class PartialConvLayer:
    W: np.ndarray
    b: np.ndarray
    stride: int = 1
    padding: int | None = None

    def __post_init__(self):
        k = np.shape(self.W)[-1]
        if np.ndim(self.W) != 4 or np.shape(self.W)[-2] != k or k % 2 != 1:
            raise ValueError("kernel must be C_out x C_in x k x k with odd k")
        if self.padding is None:
            self.padding = k // 2
        if self.stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")


def _binary(mask, name):
    m = np.asarray(mask)
    if m.size and not np.all((m == 0) | (m == 1)):
        raise ValueError(f"mask {name} must be binary (0/1)")
    return m.astype(np.float64)


# ---------------------------------------------------------------------------
# partial convolution

def _window_sum(m, k, stride, padding):
    """Sum over channels and k x k windows: [N, C, H, W] -> [N, Ho, Wo]."""
    mp = np.pad(m, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(mp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    return win.sum(axis=(1, 4, 5))


def propagate_background_mask(M_b, stride: int):
    """Apply the centre-tap ("do-nothing") kernel: identity at stride 1, subsampling at stride 2."""
    if stride not in (1, 2):
        raise ValueError("stride must be 1 or 2")
    m = np.asarray(M_b)
    return m[..., ::stride, ::stride].copy()


def _pconv_forward(x, Mm, Mb, W, b, stride, padding):
    n, c, h, w = x.shape
    k = W.shape[2]
    if padding != k // 2:
        raise ValueError("partial convolution needs 'same' padding k // 2")
    valid = np.broadcast_to(Mm * Mb, x.shape)
    xm = x * valid
    msum = _window_sum(valid, k, stride, padding)
    count = _window_sum(np.ones((1, 1, h, w)), k, stride, padding)[0] * c
    has = msum > 0
    ratio = np.where(has, count / np.where(has, msum, 1.0), 0.0)
    raw = conv2d_forward(xm, W, np.zeros(W.shape[0]), stride, padding)
    out = np.where(has[:, None], raw * ratio[:, None] + np.asarray(b, np.float64)[None, :, None, None], 0.0)
    M_new = has[:, None].astype(np.float64)
    Mb_out = propagate_background_mask(Mb, stride)
    return out, M_new, Mb_out, (xm, valid, W, ratio, has, stride, padding)


def _pconv_backward(dout, cache):
    xm, valid, W, ratio, has, stride, padding = cache
    g = np.where(has[:, None], dout, 0.0)
    db = g.sum(axis=(0, 2, 3))
    dxm, dW, _ = conv2d_backward(xm, W, g * ratio[:, None], stride, padding)
    return dxm * valid, dW, db


def partial_conv_forward(x: MaskedImage, layer: PartialConvLayer):
    """One partial convolution on a single image.

    Returns (features [C_out, Ho, Wo], updated mask [Ho, Wo], propagated background mask [Ho, Wo]).
    """
    out, M_new, Mb_out, _ = _pconv_forward(
        x.image[None], x.M[None, None], x.M_b[None, None],
        np.asarray(layer.W, np.float64), layer.b, layer.stride, layer.padding)
    return out[0], M_new[0, 0].astype(np.uint8), Mb_out[0, 0].astype(np.uint8)


def partial_conv_backward(dout, x: MaskedImage, layer: PartialConvLayer):
    """Gradients (dx, dW, db) of partial_conv_forward's features."""
    *_, cache = _pconv_forward(
        x.image[None], x.M[None, None], x.M_b[None, None],
        np.asarray(layer.W, np.float64), layer.b, layer.stride, layer.padding)
    dx, dW, db = _pconv_backward(np.asarray(dout, np.float64)[None], cache)
    return dx[0], dW, db


# ---------------------------------------------------------------------------
# UNet

@dataclass
class InpaintArch:
    channels: tuple = (16, 32, 64)
    in_channels: int = 3
    kernel: int = 3

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if not self.channels:
            raise ValueError("need at least one stage")
        if self.kernel % 2 != 1:
            raise ValueError("kernel size must be odd")

    @property
    def stages(self) -> int:
        return len(self.channels)

    @classmethod
    def full_size(cls) -> "InpaintArch":
        return cls(channels=(64, 128, 256, 512, 512, 512, 512))

    def descriptor(self) -> dict:
        return {"kind": INPAINT_KIND, "channels": list(self.channels),
                "in_channels": self.in_channels, "kernel": self.kernel}

    def layer_shapes(self) -> dict:
        ch, c0, k = self.channels, self.in_channels, self.kernel
        shapes = {}
        for s in range(self.stages):
            shapes[f"enc.{s}"] = (ch[s], c0 if s == 0 else ch[s - 1], k, k)
        for lvl in range(self.stages - 1, -1, -1):
            c_up = ch[-1] if lvl == self.stages - 1 else ch[lvl]
            c_skip = c0 if lvl == 0 else ch[lvl - 1]
            c_out = c0 if lvl == 0 else ch[lvl - 1]
            shapes[f"dec.{lvl}"] = (c_out, c_up + c_skip, k, k)
        return shapes


class InpaintNet:
    """Partial-convolution UNet.

    ``use_background=False`` gives the plain partial-convolution network:
    every pixel counts as foreground inside the convolutions.
    """

    def __init__(self, arch: InpaintArch, params: dict, use_background: bool = True):
        self.arch = arch
        self.params = params
        self.use_background = use_background

    @classmethod
    def initialize(cls, arch: InpaintArch, seed: int, use_background: bool = True) -> "InpaintNet":
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in arch.layer_shapes().items():
            fan_in = shape[1] * shape[2] * shape[3]
            params[f"{name}.W"] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)
            params[f"{name}.b"] = np.zeros(shape[0], np.float32)
        return cls(arch, params, use_background)

    def copy(self) -> "InpaintNet":
        return InpaintNet(self.arch, {k: v.copy() for k, v in self.params.items()}, self.use_background)

    def to_weights(self) -> NetworkWeights:
        desc = self.arch.descriptor()
        desc["use_background"] = bool(self.use_background)
        return NetworkWeights(desc, dict(self.params))

    @classmethod
    def from_weights(cls, weights: NetworkWeights) -> "InpaintNet":
        d = weights.descriptor
        if d.get("kind") != INPAINT_KIND:
            raise ValueError(f"not an inpainting network: kind={d.get('kind')!r}")
        arch = InpaintArch(tuple(d["channels"]), d["in_channels"], d["kernel"])
        params = {k: v for k, v in weights.tensors.items() if "/" not in k}
        for name, shape in arch.layer_shapes().items():
            if params.get(f"{name}.W") is None or params[f"{name}.W"].shape != shape:
                raise ValueError(f"weights do not match the descriptor at layer {name}")
        return cls(arch, params, bool(d.get("use_background", True)))

    def save(self, path):
        save_weights(self.to_weights(), path)

    @classmethod
    def load(cls, path) -> "InpaintNet":
        return cls.from_weights(load_weights(path))

    def _layer(self, name):
        return np.asarray(self.params[f"{name}.W"], np.float64), self.params[f"{name}.b"]

    def forward(self, x, M, Mb):
        """Raw prediction [N, C, H, W] and the cache for ``backward``."""
        S = self.arch.stages
        n, c, h, w = x.shape
        if h % 2 ** S or w % 2 ** S:
            raise ValueError(f"image size {h}x{w} must be divisible by {2 ** S}")
        if not self.use_background:
            Mb = np.ones_like(Mb)
        pad = self.arch.kernel // 2
        feats, masks, bgs, caches = [x], [M], [Mb], {}
        for s in range(S):
            W, b = self._layer(f"enc.{s}")
            out, m_new, mb_new, cache = _pconv_forward(feats[-1], masks[-1], bgs[-1], W, b, 2, pad)
            caches[f"enc.{s}"] = (cache, out)
            feats.append(np.maximum(out, 0.0))
            masks.append(m_new)
            bgs.append(mb_new)
        d, dm = feats[S], masks[S]
        for lvl in range(S - 1, -1, -1):
            up = upsample_nearest(d)
            up_m = upsample_nearest(dm)
            skip, skip_m = feats[lvl], masks[lvl]
            inp = np.concatenate([up, skip], axis=1)
            inp_m = np.concatenate([np.broadcast_to(up_m, up.shape), np.broadcast_to(skip_m, skip.shape)], axis=1)
            W, b = self._layer(f"dec.{lvl}")
            out, dm, _, cache = _pconv_forward(inp, inp_m, bgs[lvl], W, b, 1, pad)
            caches[f"dec.{lvl}"] = (cache, out, up.shape[1])
            d = np.maximum(out, 0.0) if lvl > 0 else out
        return d, (caches, bgs, masks)

    def backward(self, dpred, cache) -> dict:
        caches, _, _ = cache
        S = self.arch.stages
        grads = {}
        dskip = [None] * (S + 1)
        g = dpred
        for lvl in range(S):
            pc, out, c_up = caches[f"dec.{lvl}"]
            if lvl > 0:
                g = g * (out > 0)
            dinp, dW, db = _pconv_backward(g, pc)
            grads[f"dec.{lvl}.W"], grads[f"dec.{lvl}.b"] = dW, db
            dskip[lvl] = dinp[:, c_up:]
            g = upsample_nearest_backward(dinp[:, :c_up])
        # g is now the gradient w.r.t. the deepest encoder output
        for s in range(S - 1, -1, -1):
            if s + 1 < S:
                g = g + dskip[s + 1]
            pc, out = caches[f"enc.{s}"]
            g = g * (out > 0)
            g, dW, db = _pconv_backward(g, pc)
            grads[f"enc.{s}.W"], grads[f"enc.{s}.b"] = dW, db
        return grads

    def predict(self, x, M, Mb):
        return self.forward(x, M, Mb)[0]

    def predict_with_mask(self, x, M, Mb):
        """Prediction and the final updated mask (1 where the output saw valid input)."""
        pred, (caches, _, _) = self.forward(x, M, Mb)
        has = caches["dec.0"][0][4]
        return pred, has[:, None].astype(np.float64)


def composite(image, pred, M, Mb):
    """Known foreground from ``image``, missing foreground from ``pred``, background black; clamped."""
    out = np.where(M > 0, image, pred)
    return np.clip(np.where(Mb > 0, out, 0.0), 0.0, 1.0)


def unet_inpaint(net: InpaintNet, x: MaskedImage) -> TextureAtlas:
    pred = net.predict(x.image[None], x.M[None, None], x.M_b[None, None])[0]
    out = composite(x.image, pred, x.M[None], x.M_b[None])
    return TextureAtlas.from_float(out.transpose(1, 2, 0))


def inpaint_atlas(net: InpaintNet, atlas: TextureAtlas, M, M_b, max_passes: int = 32):
    """Repeated passes for holes wider than one pass can bridge.

    Each pass fills the missing texels whose final mask became valid and
    marks them known for the next pass.  Texels no pass can reach (a chart
    cut off from all known foreground) get the mean known foreground colour,
    or mid-gray when nothing is known.  Returns (atlas, passes, fallback
    texel count).
    """
    x = MaskedImage.from_atlas(atlas, M, M_b)
    img, m, mb = x.image[None], x.M[None, None].copy(), x.M_b[None, None]
    known = (m == 1) & (mb == 1)
    passes = 0
    while passes < max_passes and ((m == 0) & (mb == 1)).any():
        pred, filled = net.predict_with_mask(img, m, mb)
        new = (m == 0) & (mb == 1) & (filled > 0)
        if not new.any():
            break
        img = np.where(new, np.clip(pred, 0.0, 1.0), img)
        m = np.where(new, 1.0, m)
        passes += 1
    stalled = (m == 0) & (mb == 1)
    n_stalled = int(stalled.sum())
    if n_stalled:
        fill = img[0][:, known[0, 0]].mean(axis=1) if known.any() else np.full(img.shape[1], 0.5)
        img = np.where(stalled, fill[None, :, None, None], img)
        m = np.where(stalled, 1.0, m)
    out = composite(img[0], img[0], m[0], mb[0])
    return TextureAtlas.from_float(out.transpose(1, 2, 0)), passes, n_stalled


# ---------------------------------------------------------------------------
# losses

@dataclass
class LossWeights:
    hole: float = 6.0
    valid: float = 1.0
    style: float = 120.0
    tv: float = 0.1


def style_features(x, Mb, phi: dict, n_stages: int):
    """Frozen-encoder activations per stage, zeroed on background."""
    feats, caches = [], []
    h, mb = x, Mb
    for s in range(n_stages):
        W = np.asarray(phi[f"enc.{s}.W"], np.float64)
        k = W.shape[2]
        out, _, mb_next, pc = _pconv_forward(h, np.ones_like(mb), mb, W, phi[f"enc.{s}.b"], 2, k // 2)
        act = np.maximum(out, 0.0)
        feats.append(act * mb_next)
        caches.append((pc, out, mb_next))
        h, mb = act, mb_next
    return feats, caches


def style_features_backward(dfeats, caches):
    g = np.zeros_like(dfeats[-1])
    for s in range(len(caches) - 1, -1, -1):
        pc, out, mb_next = caches[s]
        g = (g + dfeats[s] * mb_next) * (out > 0)
        g, _, _ = _pconv_backward(g, pc)
    return g


def gram(F):
    n, c = F.shape[:2]
    flat = F.reshape(n, c, -1)
    return flat @ flat.transpose(0, 2, 1) / (c * flat.shape[2])


def gram_backward(F, dG):
    n, c = F.shape[:2]
    flat = F.reshape(n, c, -1)
    return ((dG + dG.transpose(0, 2, 1)) @ flat / (c * flat.shape[2])).reshape(F.shape)


def dilate(mask):
    """3 x 3 binary dilation of [N, 1, H, W] masks."""
    mp = np.pad(mask, ((0, 0), (0, 0), (1, 1), (1, 1)))
    return sliding_window_view(mp, (3, 3), axis=(2, 3)).max(axis=(4, 5))


def loss_inpaint(pred, gt, M, Mb, weights: LossWeights = LossWeights(), phi: dict | None = None,
                 n_style_stages: int = 0):
    """Total loss, its gradient w.r.t. ``pred`` and the individual terms.

    Pixel terms are L1 over hole and valid foreground; the style term
    compares Gram matrices of frozen-encoder features of the composited
    image and the ground truth; TV runs on the composited image over the
    hole grown by one pixel.  Every term is normalized by the number of
    foreground entries and ignores background.
    """
    pred = np.asarray(pred, np.float64)
    gt = np.asarray(gt, np.float64)
    c = pred.shape[1]
    hole = (1.0 - M) * Mb
    valid = M * Mb
    norm = max(float(Mb.sum()) * c, 1.0)
    diff = pred - gt
    sgn = np.sign(diff)
    terms = {
        "hole": float((np.abs(diff) * hole).sum() / norm),
        "valid": float((np.abs(diff) * valid).sum() / norm),
        "style": 0.0,
        "tv": 0.0,
    }
    dpred = (weights.hole * hole + weights.valid * valid) * sgn / norm
    comp = np.where(M > 0, gt, pred) * Mb
    dcomp = np.zeros_like(comp)
    if weights.style and phi is not None and n_style_stages > 0:
        fc, cc = style_features(comp, Mb, phi, n_style_stages)
        fg, _ = style_features(gt, Mb, phi, n_style_stages)
        dfeats = []
        for a, b_ in zip(fc, fg):
            d = gram(a) - gram(b_)
            terms["style"] += float(np.abs(d).mean())
            dfeats.append(gram_backward(a, weights.style * np.sign(d) / d.size))
        dcomp += style_features_backward(dfeats, cc)
    if weights.tv:
        region = dilate(hole) * Mb
        for axis in (2, 3):
            a = [slice(None)] * 4
            b_ = [slice(None)] * 4
            a[axis], b_[axis] = slice(1, None), slice(None, -1)
            pair = region[tuple(a)] * region[tuple(b_)]
            dd = comp[tuple(a)] - comp[tuple(b_)]
            terms["tv"] += float((np.abs(dd) * pair).sum() / norm)
            g = weights.tv * np.sign(dd) * pair / norm
            dcomp[tuple(a)] += g
            dcomp[tuple(b_)] -= g
    dpred += dcomp * (1.0 - M) * Mb
    total = (weights.hole * terms["hole"] + weights.valid * terms["valid"]
             + weights.style * terms["style"] + weights.tv * terms["tv"])
    return total, dpred, terms


# ---------------------------------------------------------------------------
# synthetic corpora

def generic_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """Multi-colour composite [3, H, W]: gradient backdrop plus rectangles, discs and stripes."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    c0, c1 = rng.random(3), rng.random(3)
    ang = rng.uniform(0, 2 * np.pi)
    t = (np.cos(ang) * xx + np.sin(ang) * yy + 1.0) / 2.0
    img = c0[:, None, None] * (1 - t) + c1[:, None, None] * t
    for _ in range(rng.integers(2, 6)):
        col = rng.random(3)[:, None, None]
        kind = rng.integers(3)
        if kind == 0:
            x0, y0 = rng.random(2)
            w, h = rng.uniform(0.1, 0.5, 2)
            sel = (xx >= x0) & (xx < x0 + w) & (yy >= y0) & (yy < y0 + h)
        elif kind == 1:
            cx, cy = rng.random(2)
            sel = (xx - cx) ** 2 + (yy - cy) ** 2 < rng.uniform(0.05, 0.3) ** 2
        else:
            f = rng.uniform(4, 12)
            sel = np.sin(f * (np.cos(ang) * yy - np.sin(ang) * xx) * np.pi) > 0.3
        img = np.where(sel[None], col, img)
    return img


def blob_mask(rng: np.random.Generator, size: int, foreground=None, coverage=(0.05, 0.3)) -> np.ndarray:
    """Random irregular hole mask [H, W] (1 = known) from discs and strokes, confined to foreground."""
    fg = np.ones((size, size), bool) if foreground is None else np.asarray(foreground) > 0
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    target = rng.uniform(*coverage) * fg.sum()
    hole = np.zeros((size, size), bool)
    for _ in range(64):
        if (hole & fg).sum() >= target:
            break
        cx, cy = rng.uniform(0, size, 2)
        r = rng.uniform(1.0, size / 8)
        if rng.random() < 0.5:
            hole |= (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        else:
            ang = rng.uniform(0, np.pi)
            length = rng.uniform(size / 8, size / 2)
            px, py = xx - cx, yy - cy
            along = px * np.cos(ang) + py * np.sin(ang)
            across = -px * np.sin(ang) + py * np.cos(ang)
            hole |= (np.abs(along) <= length / 2) & (np.abs(across) <= r / 2)
    return (~(hole & fg)).astype(np.uint8)


def atlas_example(rng: np.random.Generator, size: int, hole_count=(2, 6), radius_range=(0.05, 0.2)):
    """Synthetic atlas with a missing-texture mask made by the real pipeline.

    Returns (ground truth [3,H,W], M, M_b) with holes from cut_holes + transfer.
    """
    tm = synthetic_textured_body(rng, atlas_size=size)
    target = compute_vertex_normals(tm.mesh)
    Mb = rasterize_background_mask(tm.mesh, size, size)
    spec = HoleSpec(int(rng.integers(2 ** 31)), int(rng.integers(*hole_count, endpoint=True)), radius_range)
    partial = cut_holes(tm, spec)
    atlas_p = transfer_texture(partial, target, TransferConfig(height=size, width=size))
    masks = derive_masks(atlas_p, Mb)
    return tm.atlas.as_float().transpose(2, 0, 1), masks.M, masks.M_b


@dataclass
class InpaintDataConfig:
    seed: int = 0
    size: int = 32
    n_atlases: int = 48
    hole_count: tuple = (2, 6)
    hole_radius: tuple = (0.05, 0.2)
    generic_coverage: tuple = (0.05, 0.5)


class InpaintCorpus:
    """Generic images (random blob masks) and pre-baked synthetic atlases."""

    def __init__(self, cfg: InpaintDataConfig):
        self.cfg = cfg
        self._atlases = None

    @property
    def atlases(self):
        if self._atlases is None:
            rng = np.random.default_rng([self.cfg.seed, 7])
            self._atlases = [atlas_example(rng, self.cfg.size, self.cfg.hole_count, self.cfg.hole_radius)
                             for _ in range(self.cfg.n_atlases)]
        return self._atlases

    def batch(self, kind: str, rng: np.random.Generator, n: int):
        size = self.cfg.size
        xs, ms, mbs = [], [], []
        for _ in range(n):
            if kind == "generic":
                x = generic_image(rng, size)
                mb = np.ones((size, size), np.uint8)
                m = blob_mask(rng, size, coverage=self.cfg.generic_coverage)
            else:
                x, m, mb = self.atlases[int(rng.integers(len(self.atlases)))]
                if rng.random() < 0.5:
                    # extra blob holes for variety
                    m = m & blob_mask(rng, size, mb)
            xs.append(x)
            ms.append(m)
            mbs.append(mb)
        f = np.float64
        return np.stack(xs), np.stack(ms)[:, None].astype(f), np.stack(mbs)[:, None].astype(f)


# ---------------------------------------------------------------------------
# training

STRATEGIES = ("scratch", "pretrain", "pretrain-finetune")


@dataclass
class InpaintTrainConfig:
    strategy: str = "scratch"
    iterations: int = 200
    pretrain_iterations: int = 200
    batch_size: int = 4
    lr: float = 1e-3
    seed: int = 0
    use_background: bool = True
    arch: InpaintArch = field(default_factory=InpaintArch)
    loss: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")


@dataclass
class InpaintHistory:
    rows: list = field(default_factory=list)  # (phase, iteration, total, hole, valid, style, tv)

    @property
    def losses(self):
        return [r[2] for r in self.rows]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["phase", "iteration", "loss", "hole", "valid", "style", "tv"])
            for r in self.rows:
                w.writerow([r[0], r[1]] + [repr(v) for v in r[2:]])


def _phases(cfg: InpaintTrainConfig):
    if cfg.strategy == "scratch":
        return [("atlas", cfg.iterations)]
    if cfg.strategy == "pretrain":
        return [("generic", cfg.pretrain_iterations)]
    return [("generic", cfg.pretrain_iterations), ("atlas", cfg.iterations)]


def train_inpainter(data_cfg: InpaintDataConfig, cfg: InpaintTrainConfig, corpus: InpaintCorpus | None = None,
                    init: InpaintNet | None = None, checkpoint_path=None, checkpoint_every: int = 100,
                    resume_from=None, stop_after: int | None = None):
    """Train with Adam; returns (net, history).

    The style extractor is a frozen snapshot of the encoder taken at the
    start of each phase.  Iteration ``it`` of phase ``p`` draws its batch
    from ``default_rng([seed, p, it])``, so a resumed run matches an
    uninterrupted one.  ``stop_after`` caps the total number of iterations
    run in this call (counted across phases).
    """
    corpus = corpus or InpaintCorpus(data_cfg)
    net = init.copy() if init is not None else InpaintNet.initialize(cfg.arch, cfg.seed, cfg.use_background)
    net.use_background = cfg.use_background
    history = InpaintHistory()
    start_phase, start_it, phi, opt = 0, 0, None, None
    if resume_from is not None:
        w = load_weights(resume_from)
        state = w.descriptor["train_state"]
        net.params = {k: v for k, v in w.tensors.items() if "/" not in k}
        phi = {k[4:]: v for k, v in w.tensors.items() if k.startswith("phi/")}
        opt = Optimizer(method="adam", lr=cfg.lr)
        opt.load_state_tensors(w.tensors)
        start_phase, start_it = state["phase"], state["iteration"]
        history = InpaintHistory([tuple(r) for r in state["history"]])
    done = 0
    phases = _phases(cfg)
    for p in range(start_phase, len(phases)):
        kind, iters = phases[p]
        first = start_it if p == start_phase else 0
        if first == 0 or opt is None:
            opt = Optimizer(method="adam", lr=cfg.lr)
            phi = {k: v.copy() for k, v in net.params.items() if k.startswith("enc.")}
        for it in range(first, iters):
            if stop_after is not None and done >= stop_after:
                return net, history
            rng = np.random.default_rng([cfg.seed, p, it])
            x, M, Mb = corpus.batch(kind, rng, cfg.batch_size)
            pred, cache = net.forward(x, M, Mb)
            loss, dpred, terms = loss_inpaint(pred, x, M, Mb, cfg.loss, phi, net.arch.stages)
            if not np.isfinite(loss):
                where = f" (last checkpoint: {checkpoint_path})" if checkpoint_path else ""
                raise InpaintDivergedError(f"loss became non-finite at {kind} iteration {it}{where}")
            grads = net.backward(dpred, cache)
            opt.step(net.params, grads)
            history.rows.append((kind, it, loss, terms["hole"], terms["valid"], terms["style"], terms["tv"]))
            done += 1
            if it % 100 == 0:
                log.info("%s it %d loss %.5g", kind, it, loss)
            if checkpoint_path is not None and ((it + 1) % checkpoint_every == 0 or it + 1 == iters):
                _save_inpaint_checkpoint(net, opt, phi, p, it + 1, history, checkpoint_path)
    return net, history


def _save_inpaint_checkpoint(net, opt, phi, phase, iteration, history, path):
    w = net.to_weights()
    w.descriptor["train_state"] = {"phase": phase, "iteration": iteration,
                                   "history": [list(r) for r in history.rows]}
    w.tensors.update(opt.state_tensors())
    w.tensors.update({f"phi/{k}": v for k, v in phi.items()})
    save_weights(w, path)


def residual_black_count(output: TextureAtlas, M, M_b, threshold: float = NEAR_BLACK) -> int:
    """Texels in {M = 0, M_b = 1} whose channels are all <= threshold."""
    img = output.as_float()
    dark = np.all(img <= threshold + 1e-12, axis=-1)
    return int((dark & (np.asarray(M) == 0) & (np.asarray(M_b) == 1)).sum())
