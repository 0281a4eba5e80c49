"""Triangle meshes, texture atlases and their file formats.

Conventions used throughout the package:

* UV origin is bottom-left with ``v`` pointing up.
* Pixel ``(i, j)`` is (row, column), row 0 at the top of the image.
* The center of pixel ``(i, j)`` sits at ``u = (j + 0.5) / W``,
  ``v = 1 - (i + 0.5) / H``.
* Background texels are exact black.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from numba import njit
from PIL import Image


class ObjParseError(ValueError):
    """Malformed OBJ content; carries the offending line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class MissingTextureError(FileNotFoundError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray
    corner_uvs: Optional[np.ndarray] = None
    vertex_normals: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError("vertex coordinates must be finite")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError(f"face index out of range for {len(v)} vertices")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.corner_uvs is not None:
            uv = np.ascontiguousarray(self.corner_uvs, dtype=np.float64).reshape(-1, 3, 2)
            if len(uv) != len(f):
                raise ValueError(f"corner_uvs has {len(uv)} faces, mesh has {len(f)}")
            if uv.size and (uv.min() < 0.0 or uv.max() > 1.0 or not np.all(np.isfinite(uv))):
                raise ValueError("UV coordinates must lie in [0, 1]^2")
            object.__setattr__(self, "corner_uvs", uv)
        if self.vertex_normals is not None:
            n = np.ascontiguousarray(self.vertex_normals, dtype=np.float64).reshape(-1, 3)
            if len(n) != len(v):
                raise ValueError("vertex_normals must have one row per vertex")
            object.__setattr__(self, "vertex_normals", n)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def replace(self, **changes) -> "Mesh":
        fields = dict(
            vertices=self.vertices,
            faces=self.faces,
            corner_uvs=self.corner_uvs,
            vertex_normals=self.vertex_normals,
        )
        fields.update(changes)
        return Mesh(**fields)


@dataclass(frozen=True, eq=False)
class TextureAtlas:
    image: np.ndarray

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
            raise ValueError(f"atlas image must be HxWx3, got {img.shape}")
        if img.dtype != np.uint8:
            if img.min() < 0 or img.max() > 255:
                raise ValueError("atlas pixel values must lie in [0, 255]")
            img = img.astype(np.uint8)
        object.__setattr__(self, "image", np.ascontiguousarray(img))

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    def as_float(self) -> np.ndarray:
        return self.image.astype(np.float64) / 255.0

    @classmethod
    def from_float(cls, image: np.ndarray) -> "TextureAtlas":
        return cls(np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8))

    @classmethod
    def blank(cls, height: int, width: int) -> "TextureAtlas":
        return cls(np.zeros((height, width, 3), np.uint8))


@dataclass(frozen=True, eq=False)
class TexturedMesh:
    """A mesh with an optional texture atlas.

    The atlas may be absent (plain geometry read from OBJ); when it is
    present the mesh must carry per-corner UVs.
    """

    mesh: Mesh
    atlas: Optional[TextureAtlas] = None

    def __post_init__(self):
        if self.atlas is not None and self.mesh.corner_uvs is None:
            raise ValueError("a textured mesh needs corner UVs")


@dataclass(frozen=True)
class HoleSpec:
    seed: int
    count: int
    radius_range: tuple = (0.05, 0.15)

    def __post_init__(self):
        lo, hi = self.radius_range
        if self.count < 0:
            raise ValueError("hole count must be >= 0")
        if not (0 < lo <= hi):
            raise ValueError(f"invalid radius range {self.radius_range}")


# ---------------------------------------------------------------------------
# images

def read_png_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_png(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise TypeError("write_png expects uint8 data")
    Image.fromarray(img).save(path, format="PNG", optimize=False)


def write_mask_png(path, mask: np.ndarray) -> None:
    """Binary mask to 8-bit PNG: 0 = masked/background, 255 = valid/foreground."""
    write_png(path, np.where(np.asarray(mask) > 0, 255, 0).astype(np.uint8))


def read_mask_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return (np.asarray(im.convert("L")) >= 128).astype(np.uint8)


# ---------------------------------------------------------------------------
# OBJ

def load_obj(path) -> TexturedMesh:
    path = Path(path)
    verts, uvs, faces, face_uv = [], [], [], []
    mtllib = None
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            tag = parts[0]
            try:
                if tag == "v":
                    if len(parts) < 4:
                        raise ObjParseError("vertex needs 3 coordinates", lineno)
                    verts.append([float(x) for x in parts[1:4]])
                elif tag == "vt":
                    if len(parts) < 3:
                        raise ObjParseError("texture coordinate needs 2 values", lineno)
                    uvs.append([float(x) for x in parts[1:3]])
                elif tag == "f":
                    if len(parts) != 4:
                        raise ObjParseError("only triangular faces are supported", lineno)
                    fv, ft = [], []
                    for token in parts[1:]:
                        fields = token.split("/")
                        fv.append(_obj_index(fields[0], len(verts), lineno))
                        if len(fields) > 1 and fields[1]:
                            ft.append(_obj_index(fields[1], len(uvs), lineno))
                    if ft and len(ft) != 3:
                        raise ObjParseError("face mixes corners with and without vt", lineno)
                    if faces and bool(ft) != bool(face_uv):
                        raise ObjParseError("faces mix corners with and without vt", lineno)
                    faces.append(fv)
                    if ft:
                        face_uv.append(ft)
                elif tag == "mtllib":
                    mtllib = line[len("mtllib"):].strip()
            except ValueError as exc:
                if isinstance(exc, ObjParseError):
                    raise
                raise ObjParseError(str(exc), lineno) from None

    vertices = np.array(verts, dtype=np.float64).reshape(-1, 3)
    f = np.array(faces, dtype=np.int64).reshape(-1, 3)
    corner_uvs = None
    if face_uv:
        uv_arr = np.array(uvs, dtype=np.float64).reshape(-1, 2)
        corner_uvs = uv_arr[np.array(face_uv, dtype=np.int64)]
    mesh = Mesh(vertices, f, corner_uvs)

    atlas = None
    if mtllib is not None:
        texture = _texture_from_mtl(path.parent / mtllib)
        if texture is not None:
            if not texture.exists():
                raise MissingTextureError(f"texture file not found: {texture}")
            atlas = TextureAtlas(read_png_rgb(texture))
            if corner_uvs is None:
                raise ObjParseError("texture referenced but no vt data", 0)
    return TexturedMesh(mesh, atlas)


def _obj_index(token: str, count: int, lineno: int) -> int:
    try:
        k = int(token)
    except ValueError:
        raise ObjParseError(f"bad index {token!r}", lineno) from None
    if k == 0:
        raise ObjParseError("OBJ indices are 1-based; got 0", lineno)
    idx = k - 1 if k > 0 else count + k
    if not 0 <= idx < count:
        raise ObjParseError(f"index {k} out of range (have {count})", lineno)
    return idx


def _texture_from_mtl(mtl_path: Path) -> Optional[Path]:
    if not mtl_path.exists():
        raise MissingTextureError(f"material library not found: {mtl_path}")
    with open(mtl_path, "r") as fh:
        for raw in fh:
            parts = raw.split("#", 1)[0].strip().split(None, 1)
            if len(parts) == 2 and parts[0] == "map_Kd":
                return mtl_path.parent / parts[1].strip()
    return None


def save_obj(textured: TexturedMesh, path) -> None:
    """Write an OBJ (plus .mtl and .png when the mesh is textured)."""
    if isinstance(textured, Mesh):
        textured = TexturedMesh(textured)
    path = Path(path)
    mesh = textured.mesh
    lines = []
    if textured.atlas is not None:
        lines.append(f"mtllib {path.stem}.mtl")
        lines.append("usemtl material0")
    lines.extend("v %r %r %r" % tuple(map(float, v)) for v in mesh.vertices)
    if mesh.corner_uvs is not None:
        flat = mesh.corner_uvs.reshape(-1, 2)
        uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1, 3)
        lines.extend("vt %r %r" % (float(u), float(v)) for u, v in uniq)
        lines.extend(
            "f %d/%d %d/%d %d/%d" % (a + 1, ta + 1, b + 1, tb + 1, c + 1, tc + 1)
            for (a, b, c), (ta, tb, tc) in zip(mesh.faces, inverse)
        )
    else:
        lines.extend("f %d %d %d" % (a + 1, b + 1, c + 1) for a, b, c in mesh.faces)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    if textured.atlas is not None:
        with open(path.with_suffix(".mtl"), "w") as fh:
            fh.write(f"newmtl material0\nKd 1 1 1\nmap_Kd {path.stem}.png\n")
        write_png(path.with_suffix(".png"), textured.atlas.image)


# ---------------------------------------------------------------------------
# geometry

def face_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Unnormalized face normals (length = twice the face area)."""
    a, b, c = (vertices[faces[:, k]] for k in range(3))
    return np.cross(b - a, c - a)


def face_areas(mesh: Mesh) -> np.ndarray:
    return 0.5 * np.linalg.norm(face_normals(mesh.vertices, mesh.faces), axis=1)


def compute_vertex_normals(mesh: Mesh) -> Mesh:
    """Area-weighted vertex normals.

    Vertices with no (non-degenerate) incident face get a zero normal and a
    warning is emitted.
    """
    if mesh.n_faces < 1:
        raise ValueError("mesh has no faces")
    fn = face_normals(mesh.vertices, mesh.faces)
    acc = np.zeros_like(mesh.vertices)
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], fn)
    length = np.linalg.norm(acc, axis=1)
    isolated = length == 0.0
    if isolated.any():
        warnings.warn(f"{int(isolated.sum())} vertices have no incident area; zero normals")
    normals = np.zeros_like(acc)
    normals[~isolated] = acc[~isolated] / length[~isolated, None]
    return mesh.replace(vertex_normals=normals)


def sample_barycentric(mesh: Mesh, n: int, rng: np.random.Generator):
    """Area-uniform surface samples as (face ids, barycentric weights)."""
    areas = face_areas(mesh)
    total = areas.sum()
    if not total > 0:
        raise ValueError("mesh has no non-degenerate face to sample")
    cdf = np.cumsum(areas)
    cdf /= cdf[-1]
    fid = np.searchsorted(cdf, rng.random(n), side="right")
    fid = np.minimum(fid, len(areas) - 1)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    bary = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)
    return fid, bary


def barycentric_points(vertices: np.ndarray, faces: np.ndarray, fid: np.ndarray, bary: np.ndarray) -> np.ndarray:
    tri = vertices[faces[fid]]
    return np.einsum("nk,nkd->nd", bary, tri)


# ---------------------------------------------------------------------------
# UV rasterization

@njit(cache=True)
def _raster_uv(uv, height, width, owner, bary):
    n_f = uv.shape[0]
    for f in range(n_f):
        ax, ay = uv[f, 0, 0], uv[f, 0, 1]
        bx, by = uv[f, 1, 0], uv[f, 1, 1]
        cx, cy = uv[f, 2, 0], uv[f, 2, 1]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area == 0.0:
            continue
        umin = min(ax, min(bx, cx))
        umax = max(ax, max(bx, cx))
        vmin = min(ay, min(by, cy))
        vmax = max(ay, max(by, cy))
        j0 = max(int(np.floor(umin * width - 0.5)) - 1, 0)
        j1 = min(int(np.ceil(umax * width - 0.5)) + 1, width - 1)
        i0 = max(int(np.floor((1.0 - vmax) * height - 0.5)) - 1, 0)
        i1 = min(int(np.ceil((1.0 - vmin) * height - 0.5)) + 1, height - 1)
        for i in range(i0, i1 + 1):
            pv = 1.0 - (i + 0.5) / height
            for j in range(j0, j1 + 1):
                if owner[i, j] >= 0:
                    continue
                pu = (j + 0.5) / width
                # edge functions, opposite vertex a, b, c respectively
                ea = (cx - bx) * (pv - by) - (cy - by) * (pu - bx)
                eb = (ax - cx) * (pv - cy) - (ay - cy) * (pu - cx)
                ec = (bx - ax) * (pv - ay) - (by - ay) * (pu - ax)
                if area > 0.0:
                    inside = ea >= 0.0 and eb >= 0.0 and ec >= 0.0
                else:
                    inside = ea <= 0.0 and eb <= 0.0 and ec <= 0.0
                if inside:
                    owner[i, j] = f
                    bary[i, j, 0] = ea / area
                    bary[i, j, 1] = eb / area
                    bary[i, j, 2] = ec / area


def rasterize_uv(mesh: Mesh, width: int, height: int):
    """Per-texel owning face (lowest face id wins, -1 = background) and barycentrics."""
    owner = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 3), dtype=np.float64)
    if mesh.corner_uvs is None:
        raise ValueError("mesh has no corner UVs")
    if mesh.n_faces:
        _raster_uv(mesh.corner_uvs, height, width, owner, bary)
    return owner, bary


def rasterize_background_mask(mesh: Mesh, width: int, height: int) -> np.ndarray:
    """Background mask: 1 where a texel center lies in (or on) a UV triangle."""
    owner, _ = rasterize_uv(mesh, width, height)
    return (owner >= 0).astype(np.uint8)


# ---------------------------------------------------------------------------
# hole cutting

def cut_holes(textured: TexturedMesh, spec: HoleSpec) -> TexturedMesh:
    """Remove every face whose centroid falls inside one of ``spec.count`` balls."""
    if spec.count == 0:
        return textured
    mesh = textured.mesh
    centers, radii = hole_balls(mesh, spec)
    centroids = mesh.vertices[mesh.faces].mean(axis=1)
    d2 = ((centroids[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    removed = (d2 <= radii[None, :] ** 2).any(axis=1)
    keep = ~removed
    if not keep.any():
        raise ValueError("empty result: hole specification removes every face")
    return TexturedMesh(submesh(mesh, keep), textured.atlas)


def hole_balls(mesh: Mesh, spec: HoleSpec):
    rng = np.random.default_rng(spec.seed)
    fid, bary = sample_barycentric(mesh, spec.count, rng)
    centers = barycentric_points(mesh.vertices, mesh.faces, fid, bary)
    lo, hi = spec.radius_range
    radii = rng.uniform(lo, hi, size=spec.count)
    return centers, radii


def submesh(mesh: Mesh, keep_faces: np.ndarray) -> Mesh:
    """Keep a subset of faces and re-index the referenced vertices compactly."""
    faces = mesh.faces[keep_faces]
    used = np.unique(faces)
    remap = np.full(mesh.n_vertices, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    normals = None if mesh.vertex_normals is None else mesh.vertex_normals[used]
    uvs = None if mesh.corner_uvs is None else mesh.corner_uvs[keep_faces]
    return Mesh(mesh.vertices[used], remap[faces], uvs, normals)
