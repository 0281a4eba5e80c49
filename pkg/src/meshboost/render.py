"""Offscreen orthographic rasterizer for preview images.

Flat Lambert shading with the light at the camera: ``0.25 + 0.75 cos``.  A
face that looks straight at the camera is therefore drawn at full texture
colour.  Texture lookup is nearest-texel.  Depth ties keep the lower face id.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .mesh import Mesh, TextureAtlas, face_normals

# camera preset -> (screen right, screen up, direction towards the camera)
CAMERAS = {
    "front": ((1, 0, 0), (0, 1, 0), (0, 0, 1)),
    "back": ((-1, 0, 0), (0, 1, 0), (0, 0, -1)),
    "left": ((0, 0, -1), (0, 1, 0), (1, 0, 0)),
    "right": ((0, 0, 1), (0, 1, 0), (-1, 0, 0)),
}
BACKGROUND = 255
UNTEXTURED_GRAY = 0.8
AMBIENT = 0.25


@njit(cache=True)
def _raster(sx, sy, sz, faces, size, zbuf, owner, bary):
    for f in range(faces.shape[0]):
        a, b, c = faces[f, 0], faces[f, 1], faces[f, 2]
        ax, ay, bx, by, cx, cy = sx[a], sy[a], sx[b], sy[b], sx[c], sy[c]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area == 0.0:
            continue
        j0 = max(int(np.floor(min(ax, min(bx, cx)) - 0.5)), 0)
        j1 = min(int(np.ceil(max(ax, max(bx, cx)) - 0.5)), size - 1)
        i0 = max(int(np.floor(min(ay, min(by, cy)) - 0.5)), 0)
        i1 = min(int(np.ceil(max(ay, max(by, cy)) - 0.5)), size - 1)
        for i in range(i0, i1 + 1):
            py = i + 0.5
            for j in range(j0, j1 + 1):
                px = j + 0.5
                wa = ((cx - bx) * (py - by) - (cy - by) * (px - bx)) / area
                wb = ((ax - cx) * (py - cy) - (ay - cy) * (px - cx)) / area
                wc = ((bx - ax) * (py - ay) - (by - ay) * (px - ax)) / area
                if wa < 0.0 or wb < 0.0 or wc < 0.0:
                    continue
                z = wa * sz[a] + wb * sz[b] + wc * sz[c]
                if z > zbuf[i, j]:
                    zbuf[i, j] = z
                    owner[i, j] = f
                    bary[i, j, 0] = wa
                    bary[i, j, 1] = wb
                    bary[i, j, 2] = wc


def camera_frame(camera: str):
    if camera not in CAMERAS:
        raise ValueError(f"unknown camera {camera!r}; choose from {sorted(CAMERAS)}")
    return tuple(np.array(v, np.float64) for v in CAMERAS[camera])


def project(vertices, camera: str, size: int, margin: float = 0.05, bounds=None):
    """Screen coordinates (x right, y down, pixels) and depth towards the camera."""
    right, up, towards = camera_frame(camera)
    u = vertices @ right
    v = vertices @ up
    if bounds is None:
        bounds = (u.min(), u.max(), v.min(), v.max())
    u0, u1, v0, v1 = bounds
    extent = max(u1 - u0, v1 - v0, 1e-12) * (1.0 + 2.0 * margin)
    cu, cv = 0.5 * (u0 + u1), 0.5 * (v0 + v1)
    sx = (u - cu) / extent * size + size / 2.0
    sy = (cv - v) / extent * size + size / 2.0
    return sx, sy, vertices @ towards


def render(mesh: Mesh, atlas: TextureAtlas | None = None, camera: str = "front", size: int = 512,
           margin: float = 0.05, bounds=None) -> np.ndarray:
    """RGB uint8 image of the mesh seen from a preset orthographic camera."""
    if size < 1:
        raise ValueError("image size must be positive")
    if atlas is not None and mesh.corner_uvs is None:
        raise ValueError("textured rendering needs corner UVs")
    right, up, towards = camera_frame(camera)
    sx, sy, sz = project(mesh.vertices, camera, size, margin, bounds)
    zbuf = np.full((size, size), -np.inf)
    owner = np.full((size, size), -1, np.int64)
    bary = np.zeros((size, size, 3))
    _raster(sx, sy, sz, mesh.faces, size, zbuf, owner, bary)
    img = np.full((size, size, 3), float(BACKGROUND))
    hit = owner >= 0
    if not hit.any():
        return img.astype(np.uint8)
    fid = owner[hit]
    fn = face_normals(mesh.vertices, mesh.faces)
    length = np.linalg.norm(fn, axis=1)
    cos = np.where(length > 0, fn @ towards / np.where(length > 0, length, 1.0), 0.0)
    shade = AMBIENT + (1.0 - AMBIENT) * np.clip(cos[fid], 0.0, 1.0)
    if atlas is None:
        color = np.full((len(fid), 3), UNTEXTURED_GRAY * 255.0)
    else:
        uv = np.einsum("nk,nkd->nd", bary[hit], mesh.corner_uvs[fid])
        h, w = atlas.height, atlas.width
        col = np.clip(np.floor(uv[:, 0] * w).astype(np.int64), 0, w - 1)
        row = np.clip(np.floor((1.0 - uv[:, 1]) * h).astype(np.int64), 0, h - 1)
        color = atlas.image[row, col].astype(np.float64)
    img[hit] = color * shade[:, None]
    return np.clip(np.round(img), 0, 255).astype(np.uint8)
