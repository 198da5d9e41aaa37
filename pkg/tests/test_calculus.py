import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hodgelab.calculus import (
    Form,
    build_dec,
    codifferential,
    coordinate_form,
    exterior_derivative,
    hodge_energy,
    hodge_laplacian,
    inner,
    l2_equivalence_ratio,
    lp_norm,
    pointwise_norm,
    vertex_vectors,
)

coeffs = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_exterior_square_vanishes_exactly(ops2):
    assert abs(ops2.d1 @ ops2.d0).max() == 0.0


def test_stars_positive_and_areas_sum(ops2, sphere2):
    assert ops2.positive_weights and ops2.delaunay and ops2.trusted
    assert np.isclose(ops2.M0.sum(), sphere2.triangle_areas().sum())
    assert np.isclose(ops2.total_area, 4 * np.pi, rtol=0.02)


def test_intertwining_is_exact(ops2):
    left = (ops2.L1_hodge @ ops2.d0).toarray()
    right = (ops2.d0 @ ops2.generator(0)).toarray()
    assert np.max(np.abs(left - right)) <= 1e-12 * np.max(np.abs(left))


def test_stiffness_symmetric_and_matches_generator(ops2):
    S = ops2.S1.toarray()
    assert np.allclose(S, S.T, atol=1e-12)
    assert np.allclose(S, ops2.M1[:, None] * ops2.L1_hodge.toarray(), atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(arrays(float, 162, elements=coeffs), arrays(float, 480, elements=coeffs))
def test_codifferential_is_adjoint(ops2, f, w):
    fw, ww = Form(0, f), Form(1, w)
    lhs = inner(ops2, exterior_derivative(ops2, fw), ww)
    rhs = inner(ops2, fw, codifferential(ops2, ww))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(arrays(float, 480, elements=coeffs))
def test_energy_is_half_laplacian_pairing(ops2, w):
    x = Form(1, w)
    e = hodge_energy(ops2, x)
    assert e >= 0
    assert 2 * e == pytest.approx(inner(ops2, hodge_laplacian(ops2, x), x), rel=1e-9, abs=1e-8)


def test_form_algebra_and_degree_errors(ops2):
    a = Form(1, np.ones(480))
    assert np.allclose((2 * a - a).values, a.values)
    with pytest.raises(ValueError):
        Form(3, np.zeros(2))
    with pytest.raises(ValueError):
        a + Form(0, np.ones(162))
    with pytest.raises(ValueError):
        hodge_laplacian(ops2, Form(0, np.ones(162)))
    with pytest.raises(ValueError):
        lp_norm(ops2, a, 0.5)


def test_linear_field_reconstructed_exactly_on_torus(torus8):
    ops = build_dec(torus8)
    for axis in (0, 1):
        w = coordinate_form(torus8, axis)
        assert np.allclose(ops.d1 @ w.values, 0.0, atol=1e-14)
        assert np.allclose(ops.L1_hodge @ w.values, 0.0, atol=1e-10)
        assert np.allclose(pointwise_norm(ops, torus8, w).values, 1.0, atol=1e-12)
        V = vertex_vectors(ops, w.values)
        assert np.allclose(np.linalg.norm(V, axis=1), 1.0, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(arrays(float, 162, elements=coeffs))
def test_vertex_norm_equals_mass_norm_for_exact_forms(ops2, f):
    w = exterior_derivative(ops2, Form(0, f))
    if inner(ops2, w, w) < 1e-12:
        return
    assert l2_equivalence_ratio(ops2, w) == pytest.approx(1.0, rel=1e-9)


def test_lp_norms_ordered(ops2):
    rng = np.random.default_rng(0)
    w = Form(1, rng.standard_normal(480))
    vals = [lp_norm(ops2, w, p) / ops2.total_area ** (1 / p) for p in (1, 2, 4)]
    assert vals[0] <= vals[1] <= vals[2] <= lp_norm(ops2, w, np.inf) + 1e-12
