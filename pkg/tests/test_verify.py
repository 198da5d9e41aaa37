import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hodgelab.calculus import Form
from hodgelab.spectral import eigensolve
from hodgelab.verify import (
    SuiteConfig,
    bakry_ledoux_check,
    bakry_ledoux_terms,
    be2_check,
    bl_prefactor,
    contractivity_schedule,
    convergence_study,
    dimensional_energy_check,
    eigenform_lq_check,
    flsi_check,
    flsi_coefficients,
    graded_simpson,
    hsu_check,
    hypercontractivity_check,
    jensen_ordering_check,
    kato_quadratic_check,
    lsi2_check,
    model_beta,
    monotone_with_inversion,
    schedule_check,
    simpson_weights,
    subexponential_check,
    two_to_infinity_norm,
    ultracontractivity_converse_check,
    weak_one_bochner_check,
)


# ------------------------------------------------------------- pure helpers

@settings(max_examples=50)
@given(st.floats(-5, 5), st.floats(1.0, 10.0), st.floats(1e-3, 5.0))
def test_bl_prefactor_continuous_and_positive(K, N, t):
    v = bl_prefactor(K, N, t)
    assert v > 0
    # never above the integral weight 2/N * int_0^t e^{-2Ks} ds
    weight = 2 / N * (t if K == 0 else -math.expm1(-2 * K * t) / (2 * K))
    assert v <= weight * (1 + 1e-12)
    assert bl_prefactor(0.0, N, t) == pytest.approx(2 * t / N)
    assert bl_prefactor(1e-12, N, t) == pytest.approx(2 * t / N, rel=1e-9)


@settings(max_examples=50)
@given(st.floats(1e-3, 10.0), st.sampled_from([3, 5, 9, 33]), st.floats(0.0, 1e4),
       st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_graded_simpson_exact_on_cubics(t, nodes, lam, c):
    s, w = graded_simpson(t, nodes, lam)
    assert s[0] == 0.0 and s[-1] == pytest.approx(t)
    assert np.all(np.diff(s) > 0) and np.all(w > 0)
    poly = np.polynomial.Polynomial(c)
    exact = poly.integ()(t) - poly.integ()(0.0)
    assert float(w @ poly(s)) == pytest.approx(exact, rel=1e-9, abs=1e-9 * (1 + t) ** 4)


def test_graded_simpson_resolves_stiff_exponential():
    lam = 5e3
    s, w = graded_simpson(1.0, 33, lam)
    approx = float(w @ np.exp(-lam * (1.0 - s)))
    assert approx == pytest.approx((1 - math.exp(-lam)) / lam, rel=1e-2)
    assert np.allclose(graded_simpson(1.0, 33, 0.0)[1], simpson_weights(1.0, 33))
    with pytest.raises(ValueError):
        graded_simpson(1.0, 4, 1.0)


def test_flsi_coefficients():
    eps, gam = flsi_coefficients(2.0, 0.5, 0.0, 1.0)
    assert eps == pytest.approx(0.5) and gam == pytest.approx(-0.5)
    with pytest.raises(ValueError):
        flsi_coefficients(1.0, 0.5, 0.0, 1.0)
    assert model_beta(1.0, 2.0) == 0.5
    with pytest.raises(ValueError):
        model_beta(0.0, 2.0)


@pytest.mark.parametrize("K,expected_C", [(1.0, -math.inf), (0.0, 0.0), (-1.0, math.inf)])
def test_schedule_closed_form_vs_ode(K, expected_C):
    sch = contractivity_schedule(2.0, 0.5, K, 1.0)
    assert sch.agreement <= 1e-8
    assert math.isinf(sch.T)
    assert sch.C == expected_C or abs(sch.C - expected_C) < 1e-12
    assert schedule_check(2.0, 0.5, K, 1.0).passed


def test_schedule_rejects_bad_input():
    with pytest.raises(ValueError):
        contractivity_schedule(1.0, 0.5, 1.0, 1.0)
    with pytest.raises(ValueError):
        contractivity_schedule(2.0, 0.0, 1.0, 1.0)


def test_monotone_with_inversion():
    assert monotone_with_inversion([3, 2, 1])[0]
    assert monotone_with_inversion([3, 2, 2.1, 1])[0]
    assert not monotone_with_inversion([3, 2, 2.5, 1])[0]
    assert not monotone_with_inversion([3, 3.1, 2, 2.1])[0]
    assert monotone_with_inversion([0, 1e-12, 0], floor=1e-9)[0]


def test_config_keyvalue_roundtrip(tmp_path):
    cfg = SuiteConfig(times=(0.2, 0.4), seed=5, tolerances={**SuiteConfig().tolerances, "hsu": 0.3})
    p = tmp_path / "cfg.txt"
    p.write_text(cfg.to_keyvalue())
    back = SuiteConfig.from_keyvalue(p)
    assert back == cfg
    assert SuiteConfig.from_keyvalue(p, seed=9).seed == 9
    p.write_text("bogus = 1\n")
    with pytest.raises(ValueError):
        SuiteConfig.from_keyvalue(p)
    with pytest.raises(ValueError):
        SuiteConfig(simpson_nodes=4)


# --------------------------------------------------------- checks on meshes

@pytest.mark.parametrize("which", ["ctx3", "ctx_torus"])
def test_pointwise_checks_pass(request, which):
    ctx = request.getfixturevalue(which)
    for label, X in ctx.corpus.items():
        for t in (0.1, 1.0):
            assert hsu_check(ctx.flow, ctx.ops, ctx.surface, X, t, ctx.K, label=label).passed
            assert be2_check(ctx.flow, ctx.ops, ctx.surface, X, t, ctx.K, label=label).passed
            T = bakry_ledoux_terms(ctx.flow, ctx.ops, X, t, ctx.K, ctx.N)
            for v in ("strong", "integral_weak", "non_integral"):
                assert bakry_ledoux_check(ctx.flow, ctx.ops, ctx.surface, X, t, ctx.K, ctx.N, v,
                                          label=label, terms=T).passed
            rec = jensen_ordering_check(T, ctx.ops, t, label)
            assert rec.passed and rec.lhs <= 1e-10


def test_bakry_ledoux_zero_time_and_bad_variant(ctx2):
    X = ctx2.corpus["random"]
    T = bakry_ledoux_terms(ctx2.flow, ctx2.ops, X, 0.0, 1.0, 2.0)
    assert np.allclose(T.strong, T.rhs)
    with pytest.raises(ValueError):
        bakry_ledoux_check(ctx2.flow, ctx2.ops, None, X, 0.1, 1.0, 2.0, "medium")


def test_hsu_exact_on_harmonic_torus(ctx_torus):
    H = ctx_torus.corpus["harmonic"]
    rec = hsu_check(ctx_torus.flow, ctx_torus.ops, None, H, 0.5, 0.0)
    assert abs(rec.slack) < 1e-8


@pytest.mark.parametrize("which", ["ctx3", "ctx_torus"])
def test_quadratic_checks_pass(request, which):
    ctx = request.getfixturevalue(which)
    X = ctx.all_forms()
    assert kato_quadratic_check(ctx.ops, X, ctx.K).passed
    assert dimensional_energy_check(ctx.ops, X, ctx.K, ctx.N).passed
    phi = 1.5 + ctx.surface.vertices[:, 0] ** 2
    assert weak_one_bochner_check(ctx.ops, ctx.flow, X, phi, ctx.K).passed
    with pytest.raises(ValueError):
        weak_one_bochner_check(ctx.ops, ctx.flow, X, -phi, ctx.K)


def test_log_sobolev_family(ctx3):
    X = ctx3.all_forms()
    beta = model_beta(1.0, 2.0)
    assert lsi2_check(ctx3.ops, X, beta, 0.0, 1.0).passed
    for p in (1.5, 2.0, 3.0, 4.0):
        e, g = flsi_coefficients(p, beta, 0.0, 1.0)
        assert flsi_check(ctx3.ops, X, p, e, g).passed
    with pytest.raises(ValueError):
        lsi2_check(ctx3.ops, np.zeros((ctx3.ops.n_edges, 1)), beta)


def test_contractivity_on_sphere(ctx3):
    X = ctx3.all_forms()
    for t in (0.1, 0.3, 0.7):
        assert hypercontractivity_check(ctx3.flow, ctx3.ops, X, t, 2.0, 0.5, 1.0).passed
    rec = eigenform_lq_check(ctx3.spec1, ctx3.ops, 0.5, 1.0, (3.0, 4.0, 6.0))
    assert rec.passed


def test_ultracontractivity(ctx3, ops2, spec2):
    rec = ultracontractivity_converse_check(ctx3.flow, ctx3.ops, ctx3.spec1, (0.05, 0.1, 0.3, 1.0), 1.0,
                                            ctx3.all_forms())
    assert rec.passed and rec.extra["pass_rate"] == 1.0 and rec.extra["monotone_norm"]
    full, _ = two_to_infinity_norm(ops2, spec2[1], 0.2)
    part, tail = two_to_infinity_norm(ops2, eigensolve(ops2, 1, count=100), 0.2)
    assert full <= part + 1e-12
    assert part**2 - full**2 <= tail + 1e-12


def test_subexponential(ctx3):
    a = subexponential_check(ctx3.surface, 0.1, M0=ctx3.ops.M0, distances=ctx3.distances())
    b = subexponential_check(ctx3.surface, 1.0, M0=ctx3.ops.M0, distances=ctx3.distances())
    assert a.passed and b.passed and a.lhs > b.lhs > 0


def test_study_needs_three_levels():
    with pytest.raises(ValueError):
        convergence_study("hsu", "icosphere", (2, 3))
    with pytest.raises(ValueError):
        convergence_study("nonsense", "icosphere", (1, 2, 3))


def test_small_studies():
    cfg = SuiteConfig(times=(0.3,), n_random=4, n_eigenforms=6, n_eigenfunctions=6)
    r = convergence_study("commutation", "torus", (1, 2, 3), cfg)
    assert r.passed and max(r.violations) <= 1e-9
    r = convergence_study("hsu", "icosphere", (1, 2, 3), cfg)
    assert r.passed
    assert len(r.plot_rows()) == 3 and r.summary()["verdict"] == "pass"
