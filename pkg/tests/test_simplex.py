import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from feddadil.simplex import simplex_project
from oracles import grid_projection


vectors = arrays(np.float64, st.integers(2, 6), elements=st.floats(-5, 5, allow_nan=False))


def test_already_on_simplex_is_unchanged():
    p = np.array([0.2, 0.3, 0.5])
    np.testing.assert_array_equal(simplex_project(p), p)


def test_vertex_when_one_entry_dominates():
    np.testing.assert_allclose(simplex_project([10.0, 0.0, 0.0]), [1.0, 0.0, 0.0])


def test_uniform_shift():
    np.testing.assert_allclose(simplex_project([3.0, 3.0]), [0.5, 0.5])


def test_rows_projected_independently(rng):
    V = rng.normal(size=(4, 3))
    P = simplex_project(V)
    for v, p in zip(V, P):
        np.testing.assert_array_equal(simplex_project(v), p)


def test_rejects_non_finite():
    with pytest.raises(ValueError):
        simplex_project([np.nan, 1.0])


@pytest.mark.parametrize("n", [2, 3])
def test_matches_grid_search(n):
    rng = np.random.default_rng(7 + n)
    for _ in range(50):
        v = rng.uniform(-1.5, 1.5, size=n)
        np.testing.assert_allclose(simplex_project(v), grid_projection(v), atol=1e-3)


@settings(max_examples=200, deadline=None)
@given(vectors)
def test_output_on_simplex(v):
    p = simplex_project(v)
    assert p.min() >= 0
    assert abs(p.sum() - 1) < 1e-12


@settings(max_examples=200, deadline=None)
@given(vectors)
def test_idempotent(v):
    p = simplex_project(v)
    np.testing.assert_array_equal(simplex_project(p), p)


@settings(max_examples=200, deadline=None)
@given(vectors)
def test_order_preserving(v):
    p = simplex_project(v)
    i, j = np.triu_indices(v.size, 1)
    assert np.all((v[i] < v[j]) <= (p[i] <= p[j]))
    assert np.all((v[i] > v[j]) <= (p[i] >= p[j]))


@settings(max_examples=100, deadline=None)
@given(vectors, st.floats(-10, 10))
def test_invariant_to_constant_shift(v, c):
    np.testing.assert_allclose(simplex_project(v + c), simplex_project(v), atol=1e-9)
