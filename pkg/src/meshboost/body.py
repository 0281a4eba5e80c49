"""Procedural articulated humanoid used as template body and training data.

The body is ten closed lathe surfaces (torso, head, upper arms, forearms,
thighs, shins).  Limbs are capsules, torso and head are ellipsoids.  Every
part is rigid; a part follows the rotations of all its ancestors in the
kinematic chain.  Coordinates are meters, ``+y`` up, ``+z`` forward and
``+x`` towards the subject's left.  All-zero parameters give the T-pose.

Topology and UV layout never depend on the parameters: each part owns one
chart of the atlas, unwrapped cylindrically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, TextureAtlas, TexturedMesh, rasterize_uv

POSE_NAMES = (
    "l_shoulder_z", "l_shoulder_y", "l_elbow",
    "r_shoulder_z", "r_shoulder_y", "r_elbow",
    "l_hip_x", "l_hip_z", "l_knee",
    "r_hip_x", "r_hip_z", "r_knee",
)
SHAPE_NAMES = ("height", "torso_width", "head", "arm_length", "leg_length", "limb_radius")
N_POSE = len(POSE_NAMES)
N_SHAPE = len(SHAPE_NAMES)

# accepted parameter ranges (validation); sampling uses narrower ranges
POSE_LIMIT = np.pi
SHAPE_LIMIT = 0.5
POSE_SAMPLE_RANGE = (-np.pi / 3, np.pi / 3)
SHAPE_SAMPLE_RANGE = (-0.2, 0.2)

PART_NAMES = (
    "torso", "head",
    "l_upper_arm", "l_forearm", "r_upper_arm", "r_forearm",
    "l_thigh", "l_shin", "r_thigh", "r_shin",
)


@dataclass(frozen=True)
class TemplateResolution:
    segments: int = 16
    rings: int = 12

    def __post_init__(self):
        if self.segments < 3 or self.rings < 3:
            raise ValueError("template needs at least 3 segments and 3 rings")


# chart rectangles (u0, v0, u1, v1); cells of a 4 x 3 grid with gutters
def _chart_rects():
    rects = []
    gutter = 0.02
    for k in range(len(PART_NAMES)):
        col, row = k % 4, k // 4
        u0, u1 = col / 4 + gutter, (col + 1) / 4 - gutter
        v1, v0 = 1 - row / 3 - gutter, 1 - (row + 1) / 3 + gutter
        rects.append((u0, v0, u1, v1))
    return rects


CHART_RECTS = _chart_rects()


def _lathe_topology(segments: int, rings: int):
    """Faces and corner UVs (in unit chart space) of a pole-to-pole lathe grid.

    Vertex 0 is the start pole, then ``rings - 1`` rings of ``segments``
    vertices, then the end pole.
    """
    S, R = segments, rings
    end = 1 + (R - 1) * S
    faces, uvs = [], []

    def ring(r, s):
        return 1 + (r - 1) * S + (s % S)

    for s in range(S):
        u0, u1 = s / S, (s + 1) / S
        um = 0.5 * (u0 + u1)
        v1 = 1.0 / R
        faces.append((0, ring(1, s + 1), ring(1, s)))
        uvs.append(((um, 0.0), (u1, v1), (u0, v1)))
        for r in range(1, R - 1):
            va, vb = r / R, (r + 1) / R
            a, b = ring(r, s), ring(r, s + 1)
            c, d = ring(r + 1, s), ring(r + 1, s + 1)
            faces.append((a, b, d))
            uvs.append(((u0, va), (u1, va), (u1, vb)))
            faces.append((a, d, c))
            uvs.append(((u0, va), (u1, vb), (u0, vb)))
        vr = (R - 1) / R
        faces.append((end, ring(R - 1, s), ring(R - 1, s + 1)))
        uvs.append(((um, 1.0), (u0, vr), (u1, vr)))
    return np.array(faces, np.int64), np.array(uvs, np.float64)


def _profile_capsule(rings: int, length: float, radius: float):
    """Axial offsets and radii for a capsule from a=0 (start cap) to a=length.

    The hemispherical caps extend ``radius`` beyond both ends.
    """
    R = rings
    n_cap = max(1, R // 4)
    axial, rad = [-radius], [0.0]
    for r in range(1, R):
        if r <= n_cap:
            theta = (np.pi / 2) * r / n_cap
            axial.append(-radius * np.cos(theta))
            rad.append(radius * np.sin(theta))
        elif r >= R - n_cap:
            theta = (np.pi / 2) * (R - r) / n_cap
            axial.append(length + radius * np.cos(theta))
            rad.append(radius * np.sin(theta))
        else:
            t = (r - n_cap) / (R - 2 * n_cap)
            axial.append(length * t)
            rad.append(radius)
    axial.append(length + radius)
    rad.append(0.0)
    return np.array(axial), np.array(rad)


def _profile_ellipsoid(rings: int, half_axis: float):
    theta = np.pi * np.arange(rings + 1) / rings
    return -half_axis * np.cos(theta), np.sin(theta)


def _lathe_vertices(origin, axis, e1, e2, axial, radius, r1, r2, segments):
    """Positions of a lathe surface; cross-section radii scaled by (r1, r2)."""
    phi = 2 * np.pi * np.arange(segments) / segments
    ring_dirs = np.cos(phi)[:, None] * e1 * r1 + np.sin(phi)[:, None] * e2 * r2
    pts = [origin + axis * axial[0]]
    for r in range(1, len(axial) - 1):
        pts.extend(origin + axis * axial[r] + radius[r] * ring_dirs)
    pts.append(origin + axis * axial[-1])
    return np.array(pts)


def _rot(axis: str, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    if axis == "x":
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    if axis == "y":
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def validate_params(pose_params, shape_params):
    pose = np.zeros(N_POSE) if pose_params is None else np.asarray(pose_params, np.float64)
    shape = np.zeros(N_SHAPE) if shape_params is None else np.asarray(shape_params, np.float64)
    if pose.shape != (N_POSE,) or shape.shape != (N_SHAPE,):
        raise ValueError(f"expected {N_POSE} pose and {N_SHAPE} shape parameters")
    if not (np.all(np.isfinite(pose)) and np.all(np.isfinite(shape))):
        raise ValueError("parameters must be finite")
    if np.any(np.abs(pose) > POSE_LIMIT):
        raise ValueError("pose parameters must lie in [-pi, pi]")
    if np.any(np.abs(shape) > SHAPE_LIMIT):
        raise ValueError(f"shape parameters must lie in [-{SHAPE_LIMIT}, {SHAPE_LIMIT}]")
    return pose, shape


def rest_skeleton(shape_params=None) -> dict:
    """Joint positions and part dimensions of the unposed body."""
    _, shape = validate_params(None, shape_params)
    height, width, head, arm, leg, limb = 1.0 + shape
    torso_c = np.array([0.0, 1.15 * height, 0.0])
    torso_r = np.array([0.17 * width, 0.30 * height, 0.11 * width])
    sk = {
        "torso_center": torso_c,
        "torso_radii": torso_r,
        "head_center": torso_c + [0.0, torso_r[1] + 0.10 * head, 0.0],
        "head_radii": np.array([0.085, 0.115, 0.095]) * head,
        "upper_arm_len": 0.28 * arm,
        "forearm_len": 0.26 * arm,
        "upper_arm_r": 0.045 * limb,
        "forearm_r": 0.037 * limb,
        "thigh_len": 0.40 * leg,
        "shin_len": 0.40 * leg,
        "thigh_r": 0.07 * limb,
        "shin_r": 0.05 * limb,
    }
    for side, sign in (("l", 1.0), ("r", -1.0)):
        shoulder = torso_c + [sign * (torso_r[0] + 0.02), 0.75 * torso_r[1], 0.0]
        sk[f"{side}_shoulder"] = shoulder
        sk[f"{side}_elbow"] = shoulder + [sign * sk["upper_arm_len"], 0.0, 0.0]
        hip = torso_c + [sign * 0.55 * torso_r[0], -0.85 * torso_r[1], 0.0]
        sk[f"{side}_hip"] = hip
        sk[f"{side}_knee"] = hip - [0.0, sk["thigh_len"], 0.0]
    return sk


class _Template:
    def __init__(self, res: TemplateResolution):
        self.res = res
        faces, uvs = _lathe_topology(res.segments, res.rings)
        self.part_faces = faces
        self.part_uvs = uvs
        self.verts_per_part = 2 + (res.rings - 1) * res.segments


_TEMPLATES: dict = {}


def _template(res: TemplateResolution) -> _Template:
    if res not in _TEMPLATES:
        _TEMPLATES[res] = _Template(res)
    return _TEMPLATES[res]


def part_vertex_labels(res: TemplateResolution = TemplateResolution()) -> np.ndarray:
    """Index into PART_NAMES for each vertex of a generated body."""
    per = _template(res).verts_per_part
    return np.repeat(np.arange(len(PART_NAMES)), per)


def part_face_labels(res: TemplateResolution = TemplateResolution()) -> np.ndarray:
    per = len(_template(res).part_faces)
    return np.repeat(np.arange(len(PART_NAMES)), per)


def _rest_parts(shape_params, res):
    """Rest-pose vertex blocks per part, plus the skeleton."""
    sk = rest_skeleton(shape_params)
    S, R = res.segments, res.rings
    ex, ey, ez = np.eye(3)
    parts = {}
    axial, rad = _profile_ellipsoid(R, sk["torso_radii"][1])
    parts["torso"] = _lathe_vertices(sk["torso_center"], ey, ez, ex, axial, rad,
                                     sk["torso_radii"][2], sk["torso_radii"][0], S)
    axial, rad = _profile_ellipsoid(R, sk["head_radii"][1])
    parts["head"] = _lathe_vertices(sk["head_center"], ey, ez, ex, axial, rad,
                                    sk["head_radii"][2], sk["head_radii"][0], S)
    for side, sign in (("l", 1.0), ("r", -1.0)):
        ax = ex * sign
        axial, rad = _profile_capsule(R, sk["upper_arm_len"], sk["upper_arm_r"])
        parts[f"{side}_upper_arm"] = _lathe_vertices(sk[f"{side}_shoulder"], ax, ey, ez * sign,
                                                     axial, rad, 1.0, 1.0, S)
        axial, rad = _profile_capsule(R, sk["forearm_len"], sk["forearm_r"])
        parts[f"{side}_forearm"] = _lathe_vertices(sk[f"{side}_elbow"], ax, ey, ez * sign,
                                                   axial, rad, 1.0, 1.0, S)
        down = -ey
        axial, rad = _profile_capsule(R, sk["thigh_len"], sk["thigh_r"])
        parts[f"{side}_thigh"] = _lathe_vertices(sk[f"{side}_hip"], down, ez, -ex,
                                                 axial, rad, 1.0, 1.0, S)
        axial, rad = _profile_capsule(R, sk["shin_len"], sk["shin_r"])
        parts[f"{side}_shin"] = _lathe_vertices(sk[f"{side}_knee"], down, ez, -ex,
                                                axial, rad, 1.0, 1.0, S)
    return parts, sk


def _pose_parts(parts, sk, pose):
    p = dict(zip(POSE_NAMES, pose))
    out = {"torso": parts["torso"], "head": parts["head"]}
    for side in ("l", "r"):
        shoulder, elbow = sk[f"{side}_shoulder"], sk[f"{side}_elbow"]
        r_sh = _rot("z", p[f"{side}_shoulder_z"]) @ _rot("y", p[f"{side}_shoulder_y"])
        r_el = _rot("y", p[f"{side}_elbow"])
        out[f"{side}_upper_arm"] = shoulder + (parts[f"{side}_upper_arm"] - shoulder) @ r_sh.T
        elbow_posed = shoulder + r_sh @ (elbow - shoulder)
        out[f"{side}_forearm"] = elbow_posed + (parts[f"{side}_forearm"] - elbow) @ (r_sh @ r_el).T

        hip, knee = sk[f"{side}_hip"], sk[f"{side}_knee"]
        r_hip = _rot("x", p[f"{side}_hip_x"]) @ _rot("z", p[f"{side}_hip_z"])
        r_kn = _rot("x", p[f"{side}_knee"])
        out[f"{side}_thigh"] = hip + (parts[f"{side}_thigh"] - hip) @ r_hip.T
        knee_posed = hip + r_hip @ (knee - hip)
        out[f"{side}_shin"] = knee_posed + (parts[f"{side}_shin"] - knee) @ (r_hip @ r_kn).T
    return out


def generate_synthetic_body(pose_params=None, shape_params=None,
                            resolution: TemplateResolution = TemplateResolution()) -> Mesh:
    """Articulated capsule humanoid with the fixed template topology and UVs.

    Args:
        pose_params: 12 joint angles in radians, ordered as ``POSE_NAMES``;
            each must lie in [-pi, pi].
        shape_params: 6 relative scale offsets ordered as ``SHAPE_NAMES``; the
            scale applied is ``1 + p`` with ``p`` in [-0.5, 0.5].
        resolution: lathe resolution shared by every part.
    """
    pose, shape = validate_params(pose_params, shape_params)
    tpl = _template(resolution)
    parts, sk = _rest_parts(shape, resolution)
    posed = _pose_parts(parts, sk, pose)
    verts, faces, uvs = [], [], []
    for k, name in enumerate(PART_NAMES):
        u0, v0, u1, v1 = CHART_RECTS[k]
        verts.append(posed[name])
        faces.append(tpl.part_faces + k * tpl.verts_per_part)
        chart = tpl.part_uvs.copy()
        chart[..., 0] = u0 + (u1 - u0) * chart[..., 0]
        chart[..., 1] = v0 + (v1 - v0) * chart[..., 1]
        uvs.append(chart)
    return Mesh(np.concatenate(verts), np.concatenate(faces), np.concatenate(uvs))


def sample_body_params(rng: np.random.Generator, pose_range=POSE_SAMPLE_RANGE, shape_range=SHAPE_SAMPLE_RANGE):
    pose = rng.uniform(*pose_range, size=N_POSE)
    shape = rng.uniform(*shape_range, size=N_SHAPE)
    return pose, shape


def subdivide(mesh: Mesh) -> Mesh:
    """Midpoint (1-to-4) subdivision; new vertices lie on the original faces.

    Original vertices keep their indices; edge midpoints are appended in a
    deterministic order.
    """
    f = mesh.faces
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    key = np.sort(edges, axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.reshape(3, -1).T + mesh.n_vertices  # midpoint ids of (e01, e12, e20)
    mids = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])
    verts = np.concatenate([mesh.vertices, mids])
    a, b, c = f[:, 0], f[:, 1], f[:, 2]
    ab, bc, ca = inv[:, 0], inv[:, 1], inv[:, 2]
    new_faces = np.stack([
        np.stack([a, ab, ca], 1),
        np.stack([ab, b, bc], 1),
        np.stack([ca, bc, c], 1),
        np.stack([ab, bc, ca], 1),
    ], axis=1).reshape(-1, 3)
    uvs = None
    if mesh.corner_uvs is not None:
        t = mesh.corner_uvs
        tab, tbc, tca = 0.5 * (t[:, 0] + t[:, 1]), 0.5 * (t[:, 1] + t[:, 2]), 0.5 * (t[:, 2] + t[:, 0])
        uvs = np.stack([
            np.stack([t[:, 0], tab, tca], 1),
            np.stack([tab, t[:, 1], tbc], 1),
            np.stack([tca, tbc, t[:, 2]], 1),
            np.stack([tab, tbc, tca], 1),
        ], axis=1).reshape(-1, 3, 2)
    return Mesh(verts, new_faces, uvs)


# ---------------------------------------------------------------------------
# synthetic textures

_PART_HUES = np.array([
    [0.80, 0.35, 0.30], [0.90, 0.75, 0.60],
    [0.30, 0.55, 0.80], [0.90, 0.75, 0.60], [0.30, 0.55, 0.80], [0.90, 0.75, 0.60],
    [0.35, 0.35, 0.65], [0.55, 0.45, 0.35], [0.35, 0.35, 0.65], [0.55, 0.45, 0.35],
])

COLOR_FLOOR = 0.15


def texture_color(points: np.ndarray, part: np.ndarray, style: np.ndarray) -> np.ndarray:
    """Smooth colour field over rest-pose surface points.

    ``style`` is a length-9 vector (per-subject variation).  Output channels
    are kept in [COLOR_FLOOR, 0.95] so that no chart texel is ever black.
    """
    base = _PART_HUES[part] * (0.8 + 0.4 * style[:3])
    freq = 12.0 + 10.0 * style[3]
    stripes = 0.5 + 0.5 * np.sin(freq * points[:, 1] + 6.0 * style[4])
    checks = 0.5 + 0.5 * np.sin(9.0 * points[:, 0] + 3.0 * style[5]) * np.cos(9.0 * points[:, 2] + 3.0 * style[6])
    tint = np.stack([stripes, checks, 0.5 * (stripes + checks)], axis=1)
    col = base * (0.7 + 0.3 * tint) + 0.1 * (style[7:9].mean() - 0.5)
    return np.clip(col, COLOR_FLOOR, 0.95)


def bake_texture(mesh: Mesh, rest: Mesh, size: int, style: np.ndarray,
                 resolution: TemplateResolution = TemplateResolution()) -> TextureAtlas:
    """Rasterize the colour field of ``rest`` into an atlas laid out by ``mesh`` UVs."""
    owner, bary = rasterize_uv(mesh, size, size)
    img = np.zeros((size, size, 3))
    fg = owner >= 0
    fid = owner[fg]
    pts = np.einsum("nk,nkd->nd", bary[fg], rest.vertices[rest.faces[fid]])
    labels = part_face_labels(resolution)[fid]
    img[fg] = texture_color(pts, labels, style)
    return TextureAtlas.from_float(img)


def synthetic_textured_body(rng: np.random.Generator, atlas_size: int = 512,
                            resolution: TemplateResolution = TemplateResolution(),
                            pose=None, shape=None) -> TexturedMesh:
    """Random posed body with a baked subject-specific texture."""
    if pose is None or shape is None:
        p, s = sample_body_params(rng)
        pose = p if pose is None else pose
        shape = s if shape is None else shape
    style = rng.random(9)
    mesh = generate_synthetic_body(pose, shape, resolution)
    rest = generate_synthetic_body(None, None, resolution)
    return TexturedMesh(mesh, bake_texture(mesh, rest, atlas_size, style, resolution))
