import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from meshboost.mesh import Mesh
from meshboost.metrics import directed_chamfer, sample_surface, symmetric_chamfer

from oracles import chamfer_loop

points = lambda n: arrays(np.float64, (n, 3), elements=st.floats(-10, 10, allow_nan=False))


def test_hand_example():
    assert directed_chamfer([[0, 0, 0]], [[1, 0, 0], [0, 2, 0]]) == 1.0


def test_identity_and_subset():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(40, 3))
    b = np.concatenate([a, rng.normal(size=(30, 3))])
    assert directed_chamfer(a, a) == 0.0
    assert symmetric_chamfer(a, a) == 0.0
    assert directed_chamfer(a, b) == 0.0
    assert directed_chamfer(b, a) > 0.0


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 64).flatmap(points), st.integers(1, 64).flatmap(points))
def test_matches_brute_force(a, b):
    ref = chamfer_loop(a, b)
    assert directed_chamfer(a, b) == pytest.approx(ref, rel=1e-12, abs=1e-300)
    assert symmetric_chamfer(a, b) == pytest.approx(ref + chamfer_loop(b, a), rel=1e-12, abs=1e-300)
    assert symmetric_chamfer(a, b) == symmetric_chamfer(b, a)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rigid_motion_invariance(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(30, 3)), rng.normal(size=(25, 3))
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    t = rng.normal(size=3)
    move = lambda p: p @ q.T + t
    assert directed_chamfer(move(a), move(b)) == pytest.approx(directed_chamfer(a, b), abs=1e-9)
    assert symmetric_chamfer(move(a), move(b)) == pytest.approx(symmetric_chamfer(a, b), abs=1e-9)


def test_zero_iff_contained():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(10, 3))
    b = a[:9]
    assert directed_chamfer(b, a) == 0.0
    assert directed_chamfer(a, b) > 0.0


def unit_square():
    return Mesh([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])


def test_sample_surface_mean_and_determinism():
    s = sample_surface(unit_square(), 100_000, 0)
    np.testing.assert_allclose(s.mean(axis=0), [0.5, 0.5, 0.0], atol=0.01)
    assert np.array_equal(s, sample_surface(unit_square(), 100_000, 0))
    assert not np.array_equal(s[:10], sample_surface(unit_square(), 10, 1))


def test_samples_lie_on_faces():
    rng = np.random.default_rng(2)
    v = rng.normal(size=(3, 3))
    m = Mesh(v, [[0, 1, 2]])
    s = sample_surface(m, 1000, 3)
    n = np.cross(v[1] - v[0], v[2] - v[0])
    n /= np.linalg.norm(n)
    assert np.abs((s - v[0]) @ n).max() <= 1e-9


def test_empty_set_rejected():
    with pytest.raises(ValueError):
        directed_chamfer(np.zeros((0, 3)), np.zeros((2, 3)))
