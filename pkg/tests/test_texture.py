import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meshboost.body import PART_NAMES, part_face_labels, rest_skeleton, synthetic_textured_body
from meshboost.mesh import (
    HoleSpec, Mesh, TextureAtlas, TexturedMesh, compute_vertex_normals, cut_holes,
    rasterize_background_mask, submesh,
)
from meshboost.texture import (
    GRAY, WHITE, MaskPair, TransferConfig, apply_masks_to_image, bilinear_sample, derive_masks,
    is_black, target_texels, transfer_texture,
)

SIZE = 128


@pytest.fixture(scope="module")
def tpose():
    tm = synthetic_textured_body(np.random.default_rng(0), SIZE, pose=np.zeros(12), shape=np.zeros(6))
    return tm, compute_vertex_normals(tm.mesh)


def cfg(**kw):
    return TransferConfig(height=SIZE, width=SIZE, **kw)


def test_identity_transfer(tpose):
    tm, target = tpose
    out = transfer_texture(tm, target, cfg())
    fg = rasterize_background_mask(tm.mesh, SIZE, SIZE) == 1
    close = np.all(np.abs(out.image.astype(int) - tm.atlas.image.astype(int)) <= 2, axis=-1)
    assert close[fg].mean() >= 0.99
    assert np.all(out.image[~fg] == 0)


def test_missing_forearm_is_black(tpose):
    tm, target = tpose
    forearm = part_face_labels() == PART_NAMES.index("l_forearm")
    source = TexturedMesh(submesh(tm.mesh, ~forearm), tm.atlas)
    out = transfer_texture(source, target, cfg())
    rows, cols, points, _, _ = target_texels(target, SIZE, SIZE)
    from meshboost.mesh import rasterize_uv
    owner = rasterize_uv(target, SIZE, SIZE)[0][rows, cols]
    on_forearm = forearm[owner]
    # away from the elbow, where the upper arm is out of reach, nothing can be hit
    far = np.linalg.norm(points - rest_skeleton()["l_elbow"], axis=1) > 0.1
    black = is_black(out.image)[rows, cols]
    assert np.all(black[on_forearm & far])
    assert not black[~on_forearm].any()


def test_tiny_ray_distance_gives_black(tpose):
    tm, target = tpose
    # shift the target off the source surface so no hit is within reach
    moved = target.replace(vertices=target.vertices + target.vertex_normals * 1e-3)
    out = transfer_texture(tm, moved, cfg(max_ray_distance=1e-6))
    assert np.all(out.image == 0)


def test_cast_direction(tpose):
    tm, target = tpose
    fg = rasterize_background_mask(tm.mesh, SIZE, SIZE) == 1
    inner = target.replace(vertices=target.vertices - target.vertex_normals * 0.01)
    outer = target.replace(vertices=target.vertices + target.vertex_normals * 0.01)
    covered = lambda mesh, **kw: (~is_black(transfer_texture(tm, mesh, cfg(**kw)).image))[fg].mean()
    # +n only reaches the source from inside it
    assert covered(inner, bidirectional=False) > 0.95
    assert covered(outer, bidirectional=False) < 0.25  # residue: neighbouring parts within reach
    assert covered(outer) > 0.95


def test_transfer_rejects_untextured_source(tpose):
    tm, target = tpose
    with pytest.raises(ValueError):
        transfer_texture(TexturedMesh(tm.mesh), target, cfg())
    with pytest.raises(ValueError):
        transfer_texture(tm, tm.mesh, cfg())
    with pytest.raises(ValueError):
        TransferConfig(max_ray_distance=0.0)


@settings(max_examples=6, deadline=None)
@given(st.integers(0, 10**6))
def test_enlarging_holes_never_shrinks_missing_set(tpose, seed):
    tm, target = tpose
    Mb = rasterize_background_mask(target, 64, 64)
    small = cut_holes(tm, HoleSpec(seed, 2, (0.05, 0.12)))
    # the larger source removes a superset of faces
    extra = cut_holes(small, HoleSpec(seed + 1, 2, (0.05, 0.12)))
    small_cfg = TransferConfig(height=64, width=64)
    m_small = derive_masks(transfer_texture(small, target, small_cfg), Mb).M
    m_large = derive_masks(transfer_texture(extra, target, small_cfg), Mb).M
    assert np.all(m_large <= m_small)


def test_masks_on_partial_transfer(tpose):
    tm, target = tpose
    partial = cut_holes(tm, HoleSpec(3, 4, (0.1, 0.2)))
    atlas = transfer_texture(partial, target, cfg())
    Mb = rasterize_background_mask(target, SIZE, SIZE)
    masks = derive_masks(atlas, Mb)
    scan = sum(1 for i in range(SIZE) for j in range(SIZE)
               if Mb[i, j] == 1 and atlas.image[i, j].max() == 0)
    assert masks.missing_count == scan > 0
    assert np.all(Mb[masks.M == 0] == 1)
    assert np.all(masks.M[Mb == 0] == 1)
    view = apply_masks_to_image(atlas, masks)
    assert np.all(view[masks.M == 0] == WHITE)
    assert np.all(view[Mb == 0] == GRAY)
    known = (masks.M == 1) & (Mb == 1)
    assert np.array_equal(view[known], atlas.image[known])


def test_full_atlas_has_no_missing(tpose):
    tm, _ = tpose
    Mb = rasterize_background_mask(tm.mesh, SIZE, SIZE)
    assert np.all(derive_masks(tm.atlas, Mb).M == 1)


def test_black_threshold():
    img = np.array([[[0, 0, 0], [2, 1, 0], [3, 0, 0]]], np.uint8)
    assert is_black(img).tolist() == [[True, False, False]]
    assert is_black(img, 2 / 255).tolist() == [[True, True, False]]


def test_mask_validation():
    with pytest.raises(ValueError):
        MaskPair(np.ones((2, 2)), np.ones((3, 2)))
    with pytest.raises(ValueError):
        MaskPair(np.full((2, 2), 2), np.ones((2, 2)))
    with pytest.raises(ValueError):
        derive_masks(TextureAtlas.blank(4, 4), np.ones((3, 3)))


def test_bilinear_sampling():
    img = np.zeros((2, 2, 1))
    img[0, 1] = 100.0  # top-right texel
    centre = bilinear_sample(img, np.array([[0.5, 0.5]]))
    assert centre[0, 0] == pytest.approx(25.0)
    # exact texel centres reproduce the texel
    at = bilinear_sample(img, np.array([[0.75, 0.75], [0.25, 0.25]]))
    assert at[:, 0].tolist() == [100.0, 0.0]
    # invalid neighbours are excluded and the rest renormalized
    valid = np.array([[0, 1], [0, 0]])
    assert bilinear_sample(img, np.array([[0.5, 0.5]]), valid)[0, 0] == pytest.approx(100.0)
    # no valid neighbour: nearest texel
    assert bilinear_sample(img, np.array([[0.9, 0.9]]), np.zeros((2, 2)))[0, 0] == 100.0


def test_same_hit_same_colour(tpose):
    tm, _ = tpose
    uv = np.random.default_rng(0).random((50, 2))
    a = bilinear_sample(tm.atlas.image, np.concatenate([uv, uv]))
    assert np.array_equal(a[:50], a[50:])
