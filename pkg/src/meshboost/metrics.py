"""Chamfer distances between point sets and area-uniform surface sampling.

Chamfer values are means of *squared* nearest-neighbour distances.
"""

from __future__ import annotations

import numpy as np

from .mesh import Mesh, barycentric_points, sample_barycentric
from .spatial import PointIndex


def _as_points(points, name="points") -> np.ndarray:
    p = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0:
        raise ValueError(f"{name} is empty")
    return p


def nearest_matches(src, dst, index: PointIndex | None = None):
    """For every row of ``src``: id of and squared distance to its nearest ``dst`` row."""
    src = _as_points(src, "source set")
    if index is None:
        index = PointIndex(_as_points(dst, "target set"))
    return index.query(src)


def directed_chamfer(src, dst, index: PointIndex | None = None) -> float:
    """Mean over ``src`` of the squared distance to the closest point of ``dst``."""
    _, d2 = nearest_matches(src, dst, index)
    return float(np.mean(d2))


def symmetric_chamfer(a, b) -> float:
    return directed_chamfer(a, b) + directed_chamfer(b, a)


def directed_chamfer_brute(src, dst) -> float:
    src = _as_points(src, "source set")
    dst = _as_points(dst, "target set")
    d2 = ((src[:, None, :] - dst[None, :, :]) ** 2).sum(-1)
    return float(np.mean(d2.min(axis=1)))


def sample_surface(mesh: Mesh, n: int, seed: int) -> np.ndarray:
    """``n`` area-uniform samples of the mesh surface, deterministic per seed."""
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    fid, bary = sample_barycentric(mesh, n, rng)
    return barycentric_points(mesh.vertices, mesh.faces, fid, bary)
