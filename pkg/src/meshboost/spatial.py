"""k-d tree nearest-neighbour search and a BVH for ray/triangle casting.

Both structures are built once and then only read, so the query kernels
can be called from several threads at once (they release the GIL).
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .mesh import Mesh

KD_LEAF_SIZE = 8
BVH_LEAF_SIZE = 4
DET_EPS = 1e-9
T_MIN = 1e-9


# ---------------------------------------------------------------------------
# k-d tree

@njit(cache=True)
def _kd_build(points, leaf_size):
    n = points.shape[0]
    idx = np.arange(n)
    max_nodes = 2 * n + 1
    start = np.zeros(max_nodes, np.int64)
    end = np.zeros(max_nodes, np.int64)
    dim = np.zeros(max_nodes, np.int64)
    split = np.zeros(max_nodes, np.float64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    stack = np.empty(max_nodes, np.int64)
    start[0], end[0] = 0, n
    n_nodes = 1
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        s, e = start[node], end[node]
        if e - s <= leaf_size:
            continue
        best_d, best_spread = 0, -1.0
        for d in range(3):
            lo, hi = np.inf, -np.inf
            for k in range(s, e):
                c = points[idx[k], d]
                lo = min(lo, c)
                hi = max(hi, c)
            if hi - lo > best_spread:
                best_spread = hi - lo
                best_d = d
        if best_spread <= 0.0:
            continue
        sub = idx[s:e].copy()
        keys = np.empty(e - s)
        for k in range(e - s):
            keys[k] = points[sub[k], best_d]
        order = np.argsort(keys, kind="mergesort")
        for k in range(e - s):
            idx[s + k] = sub[order[k]]
        m = s + (e - s) // 2
        dim[node] = best_d
        split[node] = points[idx[m], best_d]
        l, r = n_nodes, n_nodes + 1
        n_nodes += 2
        start[l], end[l] = s, m
        start[r], end[r] = m, e
        left[node], right[node] = l, r
        stack[sp] = l
        stack[sp + 1] = r
        sp += 2
    return idx, start[:n_nodes], end[:n_nodes], dim[:n_nodes], split[:n_nodes], left[:n_nodes], right[:n_nodes]


@njit(cache=True, nogil=True)
def _kd_query(points, idx, start, end, dim, split, left, right, queries, out_id, out_d2):
    stack_node = np.empty(256, np.int64)
    stack_bound = np.empty(256, np.float64)
    for qi in range(queries.shape[0]):
        qx, qy, qz = queries[qi, 0], queries[qi, 1], queries[qi, 2]
        best_d = np.inf
        best_i = -1
        sp = 0
        stack_node[0] = 0
        stack_bound[0] = 0.0
        sp = 1
        while sp > 0:
            sp -= 1
            node = stack_node[sp]
            bound = stack_bound[sp]
            if bound > best_d:
                continue
            if left[node] < 0:
                for k in range(start[node], end[node]):
                    i = idx[k]
                    dx = points[i, 0] - qx
                    dy = points[i, 1] - qy
                    dz = points[i, 2] - qz
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 < best_d or (d2 == best_d and i < best_i):
                        best_d = d2
                        best_i = i
                continue
            diff = queries[qi, dim[node]] - split[node]
            if diff <= 0.0:
                near, far = left[node], right[node]
            else:
                near, far = right[node], left[node]
            stack_node[sp] = far
            stack_bound[sp] = max(bound, diff * diff)
            stack_node[sp + 1] = near
            stack_bound[sp + 1] = bound
            sp += 2
        out_id[qi] = best_i
        out_d2[qi] = best_d


class PointIndex:
    """k-d tree with median splits and leaves of at most 8 points."""

    def __init__(self, points):
        pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            raise ValueError("cannot index an empty point set")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        self.points = pts
        (self._idx, self._start, self._end, self._dim, self._split,
         self._left, self._right) = _kd_build(pts, KD_LEAF_SIZE)

    def __len__(self):
        return len(self.points)

    @property
    def n_nodes(self) -> int:
        return len(self._start)

    def query(self, queries):
        """Nearest indexed point for every query row: (ids, squared distances)."""
        q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        ids = np.empty(len(q), np.int64)
        d2 = np.empty(len(q), np.float64)
        _kd_query(self.points, self._idx, self._start, self._end, self._dim, self._split,
                  self._left, self._right, q, ids, d2)
        return ids, d2


def build_point_index(points) -> PointIndex:
    return PointIndex(points)


def nearest(index: PointIndex, query) -> tuple:
    """Closest point id and squared distance; ties go to the smallest id."""
    ids, d2 = index.query(np.asarray(query, dtype=np.float64).reshape(1, 3))
    return int(ids[0]), float(d2[0])


def brute_force_nearest(points, queries):
    """O(n*q) reference nearest neighbour with the same tie rule."""
    pts = np.asarray(points, np.float64)
    q = np.asarray(queries, np.float64).reshape(-1, 3)
    ids = np.empty(len(q), np.int64)
    d2 = np.empty(len(q))
    for k, x in enumerate(q):
        d = ((pts - x) ** 2).sum(axis=1)
        ids[k] = int(np.argmin(d))  # argmin returns the first minimum
        d2[k] = d[ids[k]]
    return ids, d2


# ---------------------------------------------------------------------------
# BVH over triangles

@njit(cache=True)
def _bvh_build(tris, leaf_size):
    n = tris.shape[0]
    order = np.arange(n)
    cent = np.empty((n, 3))
    for f in range(n):
        for d in range(3):
            cent[f, d] = (tris[f, 0, d] + tris[f, 1, d] + tris[f, 2, d]) / 3.0
    max_nodes = 2 * n + 1
    start = np.zeros(max_nodes, np.int64)
    end = np.zeros(max_nodes, np.int64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    bmin = np.zeros((max_nodes, 3))
    bmax = np.zeros((max_nodes, 3))
    stack = np.empty(max_nodes, np.int64)
    start[0], end[0] = 0, n
    n_nodes = 1
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        s, e = start[node], end[node]
        for d in range(3):
            lo, hi = np.inf, -np.inf
            for k in range(s, e):
                f = order[k]
                for c in range(3):
                    lo = min(lo, tris[f, c, d])
                    hi = max(hi, tris[f, c, d])
            bmin[node, d] = lo
            bmax[node, d] = hi
        if e - s <= leaf_size:
            continue
        best_d, best_spread = 0, -1.0
        for d in range(3):
            lo, hi = np.inf, -np.inf
            for k in range(s, e):
                c = cent[order[k], d]
                lo = min(lo, c)
                hi = max(hi, c)
            if hi - lo > best_spread:
                best_spread = hi - lo
                best_d = d
        sub = order[s:e].copy()
        keys = np.empty(e - s)
        for k in range(e - s):
            keys[k] = cent[sub[k], best_d]
        srt = np.argsort(keys, kind="mergesort")
        for k in range(e - s):
            order[s + k] = sub[srt[k]]
        m = s + (e - s) // 2
        l, r = n_nodes, n_nodes + 1
        n_nodes += 2
        start[l], end[l] = s, m
        start[r], end[r] = m, e
        left[node], right[node] = l, r
        stack[sp] = l
        stack[sp + 1] = r
        sp += 2
    return order, start[:n_nodes], end[:n_nodes], left[:n_nodes], right[:n_nodes], bmin[:n_nodes], bmax[:n_nodes]


@njit(cache=True, nogil=True)
def intersect_triangle(o, d, v0, v1, v2):
    """Moller-Trumbore. Returns (t, u, v) or t = -1.0 on a miss."""
    e1x, e1y, e1z = v1[0] - v0[0], v1[1] - v0[1], v1[2] - v0[2]
    e2x, e2y, e2z = v2[0] - v0[0], v2[1] - v0[1], v2[2] - v0[2]
    px = d[1] * e2z - d[2] * e2y
    py = d[2] * e2x - d[0] * e2z
    pz = d[0] * e2y - d[1] * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < DET_EPS:
        return -1.0, 0.0, 0.0
    inv = 1.0 / det
    sx, sy, sz = o[0] - v0[0], o[1] - v0[1], o[2] - v0[2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < 0.0 or u > 1.0:
        return -1.0, 0.0, 0.0
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return -1.0, 0.0, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    return t, u, v


@njit(cache=True, nogil=True)
def _box_interval(o, d, lo, hi):
    tn, tf = -np.inf, np.inf
    for k in range(3):
        if d[k] == 0.0:
            if o[k] < lo[k] or o[k] > hi[k]:
                return np.inf, -np.inf
            continue
        inv = 1.0 / d[k]
        t1 = (lo[k] - o[k]) * inv
        t2 = (hi[k] - o[k]) * inv
        if t1 > t2:
            t1, t2 = t2, t1
        tn = max(tn, t1)
        tf = min(tf, t2)
    return tn, tf


@njit(cache=True, nogil=True)
def _bvh_cast(tris, order, start, end, left, right, bmin, bmax,
              origins, dirs, t_lo, t_hi, t_ref, out_face, out_t, out_uv):
    """For every ray, the hit with t in (t_lo, t_hi] closest to t_ref.

    Ties on |t - t_ref| go to the smaller t, then to the smaller face id.
    """
    stack = np.empty(256, np.int64)
    for r in range(origins.shape[0]):
        o = origins[r]
        d = dirs[r]
        best_key = np.inf
        best_t = np.inf
        best_f = -1
        bu, bv = 0.0, 0.0
        stack[0] = 0
        sp = 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            tn, tf = _box_interval(o, d, bmin[node], bmax[node])
            tn = max(tn, t_lo)
            tf = min(tf, t_hi)
            if tn > tf:
                continue
            if t_ref < tn:
                gap = tn - t_ref
            elif t_ref > tf:
                gap = t_ref - tf
            else:
                gap = 0.0
            if gap > best_key:
                continue
            if left[node] < 0:
                for k in range(start[node], end[node]):
                    f = order[k]
                    t, u, v = intersect_triangle(o, d, tris[f, 0], tris[f, 1], tris[f, 2])
                    if t <= t_lo or t > t_hi:
                        continue
                    key = abs(t - t_ref)
                    if (key < best_key or (key == best_key and (t < best_t or (t == best_t and f < best_f)))):
                        best_key, best_t, best_f, bu, bv = key, t, f, u, v
                continue
            stack[sp] = left[node]
            stack[sp + 1] = right[node]
            sp += 2
        out_face[r] = best_f
        out_t[r] = best_t if best_f >= 0 else np.inf
        out_uv[r, 0] = bu
        out_uv[r, 1] = bv


class TriangleIndex:
    """Bounding-volume hierarchy (median split on centroids, leaves <= 4)."""

    def __init__(self, mesh: Mesh):
        if mesh.n_faces < 1:
            raise ValueError("cannot index a mesh without faces")
        self.mesh = mesh
        self.triangles = np.ascontiguousarray(mesh.vertices[mesh.faces])
        (self._order, self._start, self._end, self._left, self._right,
         self.box_min, self.box_max) = _bvh_build(self.triangles, BVH_LEAF_SIZE)

    @property
    def n_nodes(self) -> int:
        return len(self._start)

    def node_faces(self, node: int) -> np.ndarray:
        return self._order[self._start[node]:self._end[node]]

    def cast(self, origins, dirs, t_lo=T_MIN, t_hi=np.inf, t_ref=0.0):
        """Batched cast. Returns (face ids with -1 for misses, t, barycentrics)."""
        o = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
        d = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
        faces = np.empty(len(o), np.int64)
        t = np.empty(len(o))
        uv = np.empty((len(o), 2))
        _bvh_cast(self.triangles, self._order, self._start, self._end, self._left, self._right,
                  self.box_min, self.box_max, o, d, float(t_lo), float(t_hi), float(t_ref),
                  faces, t, uv)
        bary = np.stack([1.0 - uv[:, 0] - uv[:, 1], uv[:, 0], uv[:, 1]], axis=1)
        return faces, t, bary


def build_triangle_index(mesh: Mesh) -> TriangleIndex:
    return TriangleIndex(mesh)


def ray_cast(index: TriangleIndex, origin, direction, max_dist: float):
    """Nearest hit with t in (1e-9, max_dist]: (face id, barycentric, t) or None."""
    d = np.asarray(direction, np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError("ray direction must be a unit vector")
    if not max_dist > 0:
        raise ValueError("max_dist must be positive")
    faces, t, bary = index.cast(origin, d, T_MIN, max_dist, 0.0)
    if faces[0] < 0:
        return None
    return int(faces[0]), tuple(bary[0]), float(t[0])


def brute_force_ray_cast(mesh: Mesh, origin, direction, max_dist: float):
    """Reference: test every triangle, keep the smallest t (then smallest face id)."""
    o = np.asarray(origin, np.float64)
    d = np.asarray(direction, np.float64)
    best = None
    for f, (a, b, c) in enumerate(mesh.vertices[mesh.faces]):
        t, u, v = intersect_triangle(o, d, a, b, c)
        if t <= T_MIN or t > max_dist:
            continue
        if best is None or t < best[2]:
            best = (f, (1.0 - u - v, u, v), t)
    return best
