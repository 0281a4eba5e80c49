import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meshboost.body import TemplateResolution, generate_synthetic_body, sample_body_params
from meshboost.dataset import HoleConfig, synthetic_case
from meshboost.metrics import directed_chamfer, sample_surface
from meshboost.nn import numeric_grad, relative_error
from meshboost.shape import (
    LatentObjective, RefineConfig, ShapeArch, ShapeDataset, ShapeDatasetConfig, ShapeModel,
    ShapeTrainConfig, complete_shape, decode, encode, evaluate_shape_model, refine_latent,
    region_vertex_counts, shape_loss_and_grad, train_shape_model,
)

TINY = ShapeArch(n_z=8, encoder=(3, 8, 8), decoder=(11, 8, 3), template_segments=6, template_rings=4)

# pilot with the bundled model, 10 cases, 200 iterations: median decrease 0.93
MEDIAN_DECREASE_FLOOR = 0.30


def body_points(seed, n=1500):
    pose, shape = sample_body_params(np.random.default_rng(seed))
    return sample_surface(generate_synthetic_body(pose, shape), n, seed)


# ---------------------------------------------------------------------------
# encoder / decoder

def test_encoder_permutation_and_duplicates(shape_model):
    pts = body_points(1)
    z = encode(shape_model, pts)
    perm = np.random.default_rng(0).permutation(len(pts))
    assert np.array_equal(encode(shape_model, pts[perm]), z)
    assert np.array_equal(encode(shape_model, np.concatenate([pts, pts])), z)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_encoder_permutation_property(seed):
    model = ShapeModel.initialize(TINY, seed % 1000)
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(int(rng.integers(1, 50)), 3))
    assert np.array_equal(model.encode(pts[rng.permutation(len(pts))]), model.encode(pts))


def test_code_sensitive_to_point_motion(shape_model):
    pts = body_points(2)
    z = encode(shape_model, pts)
    moved = pts.copy()
    moved[0] += [0.3, 0.3, 0.3]
    assert np.abs(encode(shape_model, moved) - z).max() > 1e-6


def test_decode_deterministic_and_topology(shape_model):
    z = np.random.default_rng(3).normal(size=shape_model.n_z) * 0.1
    a, b = decode(shape_model, z), decode(shape_model, z)
    assert np.array_equal(a.vertices, b.vertices)
    assert np.array_equal(a.faces, shape_model.template.faces)
    hi = decode(shape_model, z, shape_model.hires_template)
    assert np.array_equal(hi.faces, shape_model.hires_template.faces)
    assert np.array_equal(hi.corner_uvs, shape_model.hires_template.corner_uvs)


def test_descriptor_sizes():
    arch = ShapeArch()
    assert arch.decoder[0] == 3 + arch.n_z and arch.decoder[-1] == 3
    assert ShapeArch.full_size().descriptor()["decoder"] == [1027, 513, 256, 128, 3]
    with pytest.raises(ValueError):
        ShapeArch(n_z=16, encoder=(3, 8, 8))


def test_model_round_trip(tmp_path, shape_model):
    shape_model.save(tmp_path / "m.w3b")
    back = ShapeModel.load(tmp_path / "m.w3b")
    assert back.tau_train == shape_model.tau_train
    pts = body_points(4)
    assert np.array_equal(back.encode(pts), shape_model.encode(pts))


def test_training_shapes_reconstructed_below_tau(shape_model):
    cfg = ShapeDatasetConfig(seed=0, count=11, n_val=1)
    data = ShapeDataset(cfg, shape_model.resolution)
    mse = evaluate_shape_model(shape_model, data, data.train_ids(), 2048)
    assert mse <= shape_model.tau_train


def test_complete_input_within_tau(shape_model):
    data = ShapeDataset(ShapeDatasetConfig(seed=0, count=6, n_val=1), shape_model.resolution)
    for i in data.train_ids():
        mesh = shape_model.template.replace(vertices=data.vertices[i])
        s0, _ = complete_shape(shape_model, mesh, 2048, i)
        d = directed_chamfer(sample_surface(mesh, 8192, 0), sample_surface(s0, 8192, 1))
        assert d <= shape_model.tau_train


def test_partial_completion_has_every_part(shape_model):
    case = synthetic_case(7, HoleConfig(min_missing=0.3), atlas_size=16)
    s0, z0 = complete_shape(shape_model, case.partial.mesh)
    assert np.all(region_vertex_counts(s0, shape_model.resolution) > 0)
    assert np.all(np.isfinite(s0.vertices))
    s1, z1 = complete_shape(shape_model, case.partial.mesh)
    assert np.array_equal(z0, z1) and np.array_equal(s0.vertices, s1.vertices)


# ---------------------------------------------------------------------------
# refinement

def test_refine_noop(shape_model):
    case = synthetic_case(3, atlas_size=16)
    _, z0 = complete_shape(shape_model, case.partial.mesh)
    res = refine_latent(shape_model, case.partial.mesh, z0, RefineConfig(iterations=1, lr=0.0, method="sgd"))
    assert np.array_equal(res.z, z0)
    assert res.objective == res.initial_objective


@pytest.mark.parametrize("objective", ["directed", "symmetric"])
def test_latent_gradient_matches_finite_differences(objective):
    model = ShapeModel.initialize(TINY, 1)
    model.params["dec.1.W"] = model.params["dec.1.W"] * np.float32(30.0)
    partial = generate_synthetic_body(resolution=TemplateResolution(6, 4))
    z0 = np.random.default_rng(2).normal(size=8)
    cfg = RefineConfig(n_partial_samples=300, n_model_samples=300, objective=objective, use_hires=False)
    obj = LatentObjective(model, partial, model.template, z0, cfg)
    _, g = obj.value_and_grad(z0)
    fd = numeric_grad(lambda z: obj.value(z), z0.copy(), 1e-6)
    assert relative_error(g, fd) <= 1e-3


@pytest.mark.parametrize("method", ["adam", "momentum"])
def test_refine_never_worse(shape_model, method):
    for seed in range(3):
        case = synthetic_case(20 + seed, HoleConfig(min_missing=0.3), atlas_size=16)
        _, z0 = complete_shape(shape_model, case.partial.mesh, 2048, seed)
        cfg = RefineConfig(iterations=15, lr=0.5, method=method, seed=seed)
        res = refine_latent(shape_model, case.partial.mesh, z0, cfg)
        assert res.objective <= res.initial_objective
        assert res.objective == min(res.history)


def test_derivative_free_fallback(shape_model):
    case = synthetic_case(5, atlas_size=16)
    _, z0 = complete_shape(shape_model, case.partial.mesh)
    res = refine_latent(shape_model, case.partial.mesh, z0,
                        RefineConfig(iterations=20, lr=0.05, derivative_free=True, n_model_samples=2048))
    assert res.objective <= res.initial_objective


def test_median_objective_decrease(shape_model):
    decrease = []
    for s in range(10):
        case = synthetic_case(1000 + s, HoleConfig(min_missing=0.3), atlas_size=16)
        _, z0 = complete_shape(shape_model, case.partial.mesh, 2048, s)
        res = refine_latent(shape_model, case.partial.mesh, z0, RefineConfig(iterations=100, seed=s))
        decrease.append(1.0 - res.objective / res.initial_objective)
    assert np.median(decrease) >= MEDIAN_DECREASE_FLOOR


# ---------------------------------------------------------------------------
# training

def test_shape_gradients():
    model = ShapeModel.initialize(TINY, 0)
    for k in model.params:
        model.params[k] = model.params[k].astype(np.float64)
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(20, 3))
    target = model.template.vertices + 0.1 * rng.normal(size=model.template.vertices.shape)
    _, grads = shape_loss_and_grad(model, pts, target)
    for name in ("enc.0.W", "enc.1.b", "fc.0.W", "fc.1.b", "dec.0.W", "dec.1.b"):
        p = model.params[name]
        fd = numeric_grad(lambda _: shape_loss_and_grad(model, pts, target, False)[0], p, 1e-5)
        assert relative_error(grads[name], fd) <= 1e-4, name


TINY_DATA = ShapeDatasetConfig(seed=0, count=12, n_val=2, n_surface_samples=512)
TINY_TRAIN = ShapeTrainConfig(epochs=4, batch_size=4, n_points=128, seed=3, arch=TINY)


def test_training_deterministic():
    a, ha = train_shape_model(TINY_DATA, TINY_TRAIN)
    b, hb = train_shape_model(TINY_DATA, TINY_TRAIN)
    assert ha == hb
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert a.tau_train == ha.val_mse[-1]


def test_training_resume_is_bitwise(tmp_path):
    full, hist = train_shape_model(TINY_DATA, TINY_TRAIN)
    ckpt = tmp_path / "ckpt.w3b"
    train_shape_model(TINY_DATA, TINY_TRAIN, checkpoint_path=ckpt, stop_after=2)
    resumed, hist2 = train_shape_model(TINY_DATA, TINY_TRAIN, resume_from=ckpt)
    assert hist2 == hist
    assert all(np.array_equal(full.params[k], resumed.params[k]) for k in full.params)


@pytest.mark.slow
def test_toy_training_curve_and_augmentation():
    data_cfg = ShapeDatasetConfig(seed=0, count=220, n_val=20)
    data = ShapeDataset(data_cfg, TemplateResolution())
    results = {}
    for augment in (True, False):
        cfg = ShapeTrainConfig(epochs=20, n_points=1024, augment=augment)
        model, hist = train_shape_model(data_cfg, cfg, dataset=data)
        smooth = np.convolve(hist.train_mse, np.ones(10) / 10, "valid")
        assert np.all(np.diff(smooth) < 0)
        results[augment] = evaluate_shape_model(model, data, data.val_ids(), 1024, fraction=0.5, seed=1)
    assert results[True] < results[False]
