import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hodgelab.calculus import build_dec
from hodgelab.complex import make_flat_torus
from hodgelab.spectral import (
    AmbiguousClusterError,
    check_invariants,
    eigenform_growth_check,
    eigensolve,
    harmonic_dimension,
    harmonic_projection,
    minmax_check,
    poincare_check,
    spectral_gap_chain,
    spectral_inclusion_check,
    spectrum_rows,
)


def test_sphere_clusters_near_continuum(ctx3):
    lam = ctx3.spec0.eigenvalues
    assert abs(lam[0]) < 1e-10
    assert np.allclose(lam[1:4], 2.0, rtol=0.02)
    assert np.allclose(lam[4:9], 6.0, rtol=0.02)
    assert lam[9] > 11.0


def test_invariants_dense(ctx3):
    for spec in (ctx3.spec0, ctx3.spec1):
        assert spec.complete
        assert check_invariants(spec, ctx3.ops).passed


def test_iterative_matches_dense(ops2, spec2):
    for degree, dense in enumerate(spec2):
        it = eigensolve(ops2, degree, count=15, method="iterative")
        assert not it.complete
        assert np.allclose(it.eigenvalues, dense.eigenvalues[:15], atol=1e-9 * dense.lambda_max)
        assert it.lambda_max == pytest.approx(dense.lambda_max, rel=1e-6)
        assert check_invariants(it, ops2).passed


def test_count_is_clamped_and_validated(ops2):
    assert eigensolve(ops2, 0, count=10**6).count == ops2.n_vertices
    with pytest.raises(ValueError):
        eigensolve(ops2, 0, count=0)
    with pytest.raises(ValueError):
        eigensolve(ops2, 2)
    with pytest.raises(ValueError):
        eigensolve(ops2, 0, method="iterative")


@pytest.mark.parametrize("n,m", [(8, 8), (12, 10), (16, 16)])
def test_torus_harmonic_dimension_two(n, m):
    ops = build_dec(make_flat_torus(n, m))
    assert harmonic_dimension(eigensolve(ops, 1)) == 2


def test_sphere_harmonic_dimension_zero(spec2):
    assert harmonic_dimension(spec2[1]) == 0
    assert harmonic_projection(spec2[1]).shape[1] == 0


def test_ambiguous_threshold_raises(spec2):
    lam = spec2[1].eigenvalues
    with pytest.raises(AmbiguousClusterError):
        harmonic_dimension(spec2[1], tol=lam[0] * 2)


def test_function_spectrum_included_in_form_spectrum(ctx3, ctx_torus):
    for ctx in (ctx3, ctx_torus):
        rec = spectral_inclusion_check(ctx.spec0, ctx.spec1, 1e-8, ctx.ops)
        assert rec.passed
        assert rec.extra["checked"] == ctx.ops.n_vertices - 1


def test_gap_chain(ctx3, ctx_torus):
    for ctx in (ctx3, ctx_torus):
        rec = spectral_gap_chain(ctx.spec0, ctx.spec1, ctx.K, ctx.ops.mesh_h)
        assert rec.passed
        assert rec.extra["slack_link3"] >= -1e-8
    with pytest.raises(ValueError):
        spectral_gap_chain(ctx3.spec0, ctx3.spec1, None)


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 10**6))
def test_poincare_any_seed(ctx_torus, seed):
    assert poincare_check(ctx_torus.spec1, ctx_torus.ops, 10, seed).passed


def test_minmax(ctx3):
    rec = minmax_check(ctx3.spec1, ctx3.ops, 20, 1)
    assert rec.passed
    assert rec.extra["achiever_error"] <= 1e-10


def test_growth_exponent_small_mesh(ctx3):
    rec = eigenform_growth_check(ctx3.spec1, ctx3.ops, ctx3.surface, 2.0, 60)
    assert rec.passed and rec.lhs <= 0.65


def test_spectrum_rows(spec2):
    rows = spectrum_rows(spec2[0])
    assert rows[0][0] == 0 and len(rows) == spec2[0].count
