"""Texture transfer by normal-direction casting, and the two atlas masks.

Mask conventions: ``M`` is 1 where the texel colour is known and 0 where it
is missing; ``M_b`` is 1 on chart (foreground) texels and 0 on background.
Background texels always carry ``M = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, TextureAtlas, TexturedMesh, rasterize_uv
from .parallel import run_chunks
from .spatial import T_MIN, TriangleIndex

GRAY = np.array([128, 128, 128], np.uint8)
WHITE = np.array([255, 255, 255], np.uint8)


@dataclass(frozen=True)
class TransferConfig:
    max_ray_distance: float = 0.05
    bidirectional: bool = True
    height: int = 512
    width: int = 512

    def __post_init__(self):
        if not self.max_ray_distance > 0:
            raise ValueError("max_ray_distance must be > 0")
        if self.height < 1 or self.width < 1:
            raise ValueError("atlas resolution must be positive")


@dataclass(frozen=True, eq=False)
class MaskPair:
    M: np.ndarray
    M_b: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.M, np.uint8)
        mb = np.asarray(self.M_b, np.uint8)
        if m.shape != mb.shape or m.ndim != 2:
            raise ValueError(f"mask shapes differ or are not 2D: {m.shape} vs {mb.shape}")
        if m.max(initial=0) > 1 or mb.max(initial=0) > 1:
            raise ValueError("masks must be binary (0/1)")
        object.__setattr__(self, "M", m)
        object.__setattr__(self, "M_b", mb)

    @property
    def missing(self) -> np.ndarray:
        return (self.M == 0) & (self.M_b == 1)

    @property
    def missing_count(self) -> int:
        return int(self.missing.sum())


def bilinear_sample(image: np.ndarray, uv: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """Sample ``image`` [H,W,C] at UV points (origin bottom-left, v up).

    When ``valid`` [H,W] is given only valid texels contribute and the
    weights are renormalized; if none of the four neighbours is valid the
    texel under the point is used.
    """
    h, w = image.shape[:2]
    x = uv[:, 0] * w - 0.5
    y = (1.0 - uv[:, 1]) * h - 0.5
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx, fy = x - x0, y - y0
    img = image.astype(np.float64)
    acc = np.zeros((len(uv), image.shape[2]))
    wsum = np.zeros(len(uv))
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            yi = np.clip(y0 + dy, 0, h - 1)
            xi = np.clip(x0 + dx, 0, w - 1)
            wt = wy * wx
            if valid is not None:
                wt = wt * valid[yi, xi]
            acc += wt[:, None] * img[yi, xi]
            wsum += wt
    out = np.empty_like(acc)
    ok = wsum > 0
    out[ok] = acc[ok] / wsum[ok, None]
    if (~ok).any():
        yi = np.clip(np.floor((1.0 - uv[~ok, 1]) * h).astype(np.int64), 0, h - 1)
        xi = np.clip(np.floor(uv[~ok, 0] * w).astype(np.int64), 0, w - 1)
        out[~ok] = img[yi, xi]
    return out


def target_texels(target: Mesh, height: int, width: int):
    """Foreground texels of the target atlas with their surface points and unit normals."""
    if target.corner_uvs is None:
        raise ValueError("target mesh has no UVs")
    if target.vertex_normals is None:
        raise ValueError("target mesh has no vertex normals")
    owner, bary = rasterize_uv(target, width, height)
    rows, cols = np.nonzero(owner >= 0)
    fid = owner[rows, cols]
    b = bary[rows, cols]
    tri = target.faces[fid]
    points = np.einsum("nk,nkd->nd", b, target.vertices[tri])
    normals = np.einsum("nk,nkd->nd", b, target.vertex_normals[tri])
    length = np.linalg.norm(normals, axis=1)
    good = length > 0
    normals[good] /= length[good, None]
    return rows, cols, points, normals, good


def transfer_texture(source: TexturedMesh, target: Mesh, cfg: TransferConfig = TransferConfig()) -> TextureAtlas:
    """Copy the source texture onto the target's atlas layout.

    Every foreground texel is lifted to its 3D point ``p`` with normal ``n``;
    the surface hit closest to ``p`` on the line ``p + s n`` with
    ``|s| <= max_ray_distance`` (``0 < s`` only, when not bidirectional)
    supplies the colour.  Texels without a hit stay black.
    """
    if source.atlas is None or source.mesh.corner_uvs is None:
        raise ValueError("source mesh has no texture or no UVs")
    rows, cols, points, normals, good = target_texels(target, cfg.height, cfg.width)
    out = np.zeros((cfg.height, cfg.width, 3), np.uint8)
    if len(rows) == 0:
        return TextureAtlas(out)
    index = TriangleIndex(source.mesh)
    src_img = source.atlas.image
    src_valid = rasterize_uv(source.mesh, source.atlas.width, source.atlas.height)[0] >= 0
    D = cfg.max_ray_distance
    # one line cast covers both directions: start D behind p, keep the hit nearest p
    if cfg.bidirectional:
        shift, t_lo, t_hi, t_ref = D, T_MIN, 2.0 * D, D
    else:
        shift, t_lo, t_hi, t_ref = 0.0, T_MIN, D, 0.0
    colors = np.zeros((len(rows), 3), np.uint8)
    hit_any = np.zeros(len(rows), bool)

    def work(s, e):
        n = normals[s:e]
        faces, _, bary = index.cast(points[s:e] - shift * n, n, t_lo, t_hi, t_ref)
        hit = (faces >= 0) & good[s:e]
        if not hit.any():
            return
        uv = np.einsum("nk,nkd->nd", bary[hit], source.mesh.corner_uvs[faces[hit]])
        rgb = bilinear_sample(src_img, uv, src_valid)
        colors[s:e][hit] = np.clip(np.round(rgb), 0, 255).astype(np.uint8)
        hit_any[s:e] = hit

    run_chunks(work, len(rows))
    out[rows[hit_any], cols[hit_any]] = colors[hit_any]
    return TextureAtlas(out)


def is_black(image: np.ndarray, theta_black: float = 0.0) -> np.ndarray:
    """All channels <= theta_black (theta in [0,1] units)."""
    limit = int(np.floor(theta_black * 255.0 + 1e-9))
    return np.all(np.asarray(image) <= limit, axis=-1)


def derive_masks(atlas: TextureAtlas, M_b: np.ndarray, theta_black: float = 0.0) -> MaskPair:
    M_b = np.asarray(M_b, np.uint8)
    if M_b.shape != atlas.image.shape[:2]:
        raise ValueError(f"background mask {M_b.shape} does not match atlas {atlas.image.shape[:2]}")
    missing = (M_b == 1) & is_black(atlas.image, theta_black)
    return MaskPair((~missing).astype(np.uint8), M_b)


def apply_masks_to_image(atlas: TextureAtlas, masks: MaskPair) -> np.ndarray:
    """Diagnostic view: background gray, missing texels white, known texels unchanged."""
    img = atlas.image.copy()
    if masks.M.shape != img.shape[:2]:
        raise ValueError("mask and atlas dimensions differ")
    img[masks.M_b == 0] = GRAY
    img[masks.missing] = WHITE
    return img
