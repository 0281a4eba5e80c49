import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meshboost.body import (
    N_POSE, N_SHAPE, POSE_NAMES, PART_NAMES, TemplateResolution,
    generate_synthetic_body, part_vertex_labels, rest_skeleton, subdivide,
)
from meshboost.mesh import (
    HoleSpec, Mesh, ObjParseError, TextureAtlas, TexturedMesh,
    compute_vertex_normals, cut_holes, hole_balls, load_obj, rasterize_background_mask, save_obj,
)

from oracles import point_in_triangle_count, union_mask


def random_mesh(rng, n_v=None, n_f=None, uvs=True):
    n_v = n_v or int(rng.integers(3, 30))
    n_f = n_f or int(rng.integers(1, 40))
    v = rng.normal(size=(n_v, 3)) * 10 ** rng.uniform(-3, 3)
    f = rng.integers(0, n_v, size=(n_f, 3))
    uv = rng.random((n_f, 3, 2)) if uvs else None
    return Mesh(v, f, uv)


def cube():
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
    f = np.array([[0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
                  [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]])
    return Mesh(v, f)


# ---------------------------------------------------------------------------
# OBJ io

def test_single_triangle_obj(tmp_path):
    p = tmp_path / "tri.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n")
    tm = load_obj(p)
    assert tm.mesh.n_vertices == 3 and tm.mesh.n_faces == 1
    np.testing.assert_array_equal(tm.mesh.corner_uvs[0], [[0, 0], [1, 0], [0, 1]])
    assert tm.atlas is None


def test_zero_face_index_is_parse_error(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n")
    with pytest.raises(ObjParseError) as err:
        load_obj(p)
    assert err.value.line == 4


@pytest.mark.parametrize("text", ["v 0 0\n", "v 0 0 0\nf 1 2 3\n", "v a b c\n", "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n"])
def test_malformed_obj(tmp_path, text):
    p = tmp_path / "bad.obj"
    p.write_text(text)
    with pytest.raises(ObjParseError):
        load_obj(p)


def test_cube_round_trip(tmp_path):
    save_obj(TexturedMesh(cube()), tmp_path / "c.obj")
    back = load_obj(tmp_path / "c.obj").mesh
    np.testing.assert_array_equal(back.faces, cube().faces)
    np.testing.assert_array_equal(back.vertices, cube().vertices)


def test_no_uv_means_no_vt_lines(tmp_path):
    save_obj(TexturedMesh(cube()), tmp_path / "c.obj")
    assert not any(line.startswith("vt") for line in (tmp_path / "c.obj").read_text().splitlines())


def test_textured_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    mesh = random_mesh(rng)
    atlas = TextureAtlas(rng.integers(0, 256, (8, 6, 3)).astype(np.uint8))
    save_obj(TexturedMesh(mesh, atlas), tmp_path / "m.obj")
    back = load_obj(tmp_path / "m.obj")
    np.testing.assert_array_equal(back.atlas.image, atlas.image)
    np.testing.assert_array_equal(back.mesh.corner_uvs, mesh.corner_uvs)


def test_fuzz_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    for k in range(10_000):
        path = tmp_path / f"f{k}.obj"
        mesh = random_mesh(rng, uvs=bool(k % 2))
        save_obj(TexturedMesh(mesh), path)
        back = load_obj(path).mesh
        assert np.array_equal(back.faces, mesh.faces)
        assert np.allclose(back.vertices, mesh.vertices, rtol=0, atol=1e-6)
        if mesh.corner_uvs is not None:
            assert np.allclose(back.corner_uvs, mesh.corner_uvs, rtol=0, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_round_trip_property(tmp_path_factory, seed):
    path = tmp_path_factory.mktemp("rt") / "m.obj"
    mesh = random_mesh(np.random.default_rng(seed))
    save_obj(TexturedMesh(mesh), path)
    back = load_obj(path).mesh
    assert np.array_equal(back.faces, mesh.faces)
    assert np.abs(back.vertices - mesh.vertices).max() <= 1e-6


def test_mesh_invariants():
    with pytest.raises(ValueError):
        Mesh(np.zeros((3, 3)), [[0, 1, 3]])
    with pytest.raises(ValueError):
        Mesh([[0, 0, np.nan], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    with pytest.raises(ValueError):
        Mesh(np.eye(3), [[0, 1, 2]], corner_uvs=[[[0, 0], [1.5, 0], [0, 1]]])
    with pytest.raises(ValueError):
        TexturedMesh(Mesh(np.eye(3), [[0, 1, 2]]), TextureAtlas.blank(2, 2))
    with pytest.raises(ValueError):
        HoleSpec(0, 1, (0.2, 0.1))


# ---------------------------------------------------------------------------
# normals

def test_quad_normals():
    quad = Mesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])
    n = compute_vertex_normals(quad).vertex_normals
    np.testing.assert_allclose(n, np.tile([0, 0, 1.0], (4, 1)))


def icosahedron():
    p = (1 + 5 ** 0.5) / 2
    v = np.array([[-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0], [0, -1, p], [0, 1, p],
                  [0, -1, -p], [0, 1, -p], [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1]], float)
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11], [1, 5, 9], [5, 11, 4],
         [11, 10, 2], [10, 7, 6], [7, 1, 8], [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8],
         [3, 8, 9], [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    return Mesh(v, f)


def test_icosahedron_normals_radial():
    m = compute_vertex_normals(icosahedron())
    radial = m.vertices / np.linalg.norm(m.vertices, axis=1, keepdims=True)
    np.testing.assert_allclose(m.vertex_normals, radial, atol=1e-6)


def convex_hull_mesh(points):
    """Outward-oriented hull of points on a sphere (brute-force face enumeration)."""
    faces = []
    n = len(points)
    for a in range(n):
        for b in range(a + 1, n):
            for c in range(b + 1, n):
                nrm = np.cross(points[b] - points[a], points[c] - points[a])
                side = (points - points[a]) @ nrm
                if np.all(side <= 1e-12):
                    faces.append([a, b, c])
                elif np.all(side >= -1e-12):
                    faces.append([a, c, b])
    return Mesh(points, faces)


def test_convex_normals_point_outward():
    rng = np.random.default_rng(5)
    for _ in range(5):
        pts = rng.normal(size=(14, 3))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        m = compute_vertex_normals(convex_hull_mesh(pts))
        centroid = m.vertices.mean(axis=0)
        assert np.all(np.einsum("ij,ij->i", m.vertex_normals, m.vertices - centroid) > 0)
        np.testing.assert_allclose(np.linalg.norm(m.vertex_normals, axis=1), 1.0, atol=1e-6)


# ---------------------------------------------------------------------------
# background mask

def test_lower_left_triangle_4x4():
    tri = Mesh(np.eye(3), [[0, 1, 2]], corner_uvs=[[[0, 0], [1, 0], [0, 1]]])
    mask = rasterize_background_mask(tri, 4, 4)
    assert point_in_triangle_count([[0, 0], [1, 0], [0, 1]], 4, 4) == 10
    assert mask.sum() == 10
    # pixel centers strictly below the anti-diagonal, plus the 4 centers on it
    assert mask[3].sum() == 4 and mask[0].sum() == 1


def test_no_uv_triangles():
    empty = Mesh(np.zeros((0, 3)), np.zeros((0, 3), int), corner_uvs=np.zeros((0, 3, 2)))
    assert rasterize_background_mask(empty, 5, 7).sum() == 0
    assert rasterize_background_mask(empty, 5, 7).shape == (7, 5)


def test_mask_matches_brute_force_on_random_charts():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n_f = int(rng.integers(1, 4))
        w, h = int(rng.integers(3, 17)), int(rng.integers(3, 17))
        uv = rng.random((n_f, 3, 2))
        if rng.random() < 0.3:  # snap to the texel-center grid to exercise edge hits
            uv = (np.round(uv * 4) / 4)
        mesh = Mesh(rng.normal(size=(3 * n_f, 3)), np.arange(3 * n_f).reshape(-1, 3), uv)
        np.testing.assert_array_equal(rasterize_background_mask(mesh, w, h), union_mask(uv, w, h))


# ---------------------------------------------------------------------------
# holes and synthetic bodies

@pytest.fixture(scope="module")
def body():
    from meshboost.body import synthetic_textured_body
    return synthetic_textured_body(np.random.default_rng(1), 32)


def test_cut_zero_holes_is_identity(body):
    out = cut_holes(body, HoleSpec(4, 0))
    np.testing.assert_array_equal(out.mesh.faces, body.mesh.faces)
    np.testing.assert_array_equal(out.mesh.vertices, body.mesh.vertices)


def test_cut_holes_deterministic(body):
    a = cut_holes(body, HoleSpec(9, 4, (0.05, 0.2)))
    b = cut_holes(body, HoleSpec(9, 4, (0.05, 0.2)))
    np.testing.assert_array_equal(a.mesh.vertices, b.mesh.vertices)
    np.testing.assert_array_equal(a.mesh.faces, b.mesh.faces)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), count=st.integers(1, 6))
def test_cut_holes_geometry(body, seed, count):
    spec = HoleSpec(seed, count, (0.03, 0.15))
    mesh = body.mesh
    centers, radii = hole_balls(mesh, spec)
    centroids = mesh.vertices[mesh.faces].mean(axis=1)
    inside = (((centroids[:, None] - centers[None]) ** 2).sum(-1) <= radii ** 2).any(axis=1)
    if inside.all():
        return
    out = cut_holes(body, spec).mesh
    # the kept faces, mapped back to original vertex positions, are exactly the outside faces
    kept = np.sort(out.vertices[out.faces].reshape(len(out.faces), -1), axis=0)
    expect = np.sort(mesh.vertices[mesh.faces[~inside]].reshape(int((~inside).sum()), -1), axis=0)
    np.testing.assert_array_equal(kept, expect)
    # sub-complex: every output vertex is an input vertex
    assert np.all((out.vertices[:, None] == mesh.vertices[None]).all(-1).any(1))


def test_body_zero_params_is_template():
    a = generate_synthetic_body()
    b = generate_synthetic_body(np.zeros(N_POSE), np.zeros(N_SHAPE))
    np.testing.assert_array_equal(a.vertices, b.vertices)
    # T-pose: arms horizontal, so every arm vertex sits within its radius of the shoulder height
    sk = rest_skeleton()
    labels = part_vertex_labels()
    arm = np.isin(labels, [PART_NAMES.index("l_upper_arm"), PART_NAMES.index("l_forearm")])
    assert np.abs(a.vertices[arm, 1] - sk["l_shoulder"][1]).max() <= sk["upper_arm_r"] + 1e-9


def test_body_deterministic_and_fixed_topology():
    rng = np.random.default_rng(0)
    base = generate_synthetic_body()
    for _ in range(5):
        pose, shape = rng.uniform(-1, 1, N_POSE), rng.uniform(-0.3, 0.3, N_SHAPE)
        a = generate_synthetic_body(pose, shape)
        b = generate_synthetic_body(pose, shape)
        assert np.array_equal(a.vertices, b.vertices)
        assert np.array_equal(a.faces, base.faces)
        assert np.array_equal(a.corner_uvs, base.corner_uvs)


def test_elbow_rotation():
    pose = np.zeros(N_POSE)
    pose[POSE_NAMES.index("l_elbow")] = np.pi / 2
    rest, bent = generate_synthetic_body(), generate_synthetic_body(pose)
    forearm = part_vertex_labels() == PART_NAMES.index("l_forearm")
    elbow = rest_skeleton()["l_elbow"]
    c, s = 0.0, 1.0
    ry = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    expect = elbow + (rest.vertices[forearm] - elbow) @ ry.T
    np.testing.assert_allclose(bent.vertices[forearm], expect, atol=1e-5)
    # upper arm is not affected
    upper = part_vertex_labels() == PART_NAMES.index("l_upper_arm")
    np.testing.assert_array_equal(bent.vertices[upper], rest.vertices[upper])


def test_invalid_body_params():
    with pytest.raises(ValueError):
        generate_synthetic_body(np.zeros(3))
    with pytest.raises(ValueError):
        generate_synthetic_body(np.full(N_POSE, 4.0))


def test_subdivision_shares_topology_class():
    res = TemplateResolution(8, 6)
    m = generate_synthetic_body(resolution=res)
    s = subdivide(m)
    assert s.n_faces == 4 * m.n_faces
    np.testing.assert_array_equal(s.vertices[:m.n_vertices], m.vertices)
