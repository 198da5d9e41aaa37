"""Acceptance criteria 1-10, one printed verdict line each (see the terminal summary)."""

import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest
from acceptance_lines import report

from hodgelab.complex import make_flat_torus, make_icosphere
from hodgelab.heat import gaussian_bound_fit, trace_inequality_check
from hodgelab.spectral import (
    DENSE_LIMIT,
    eigenform_growth_check,
    eigensolve,
    harmonic_dimension,
    spectral_gap_chain,
)
from hodgelab.calculus import build_dec
from hodgelab.suites import run_suite
from hodgelab.verify import (
    SuiteConfig,
    contractivity_schedule,
    convergence_studies,
    eigenform_lq_check,
    hypercontractivity_check,
    make_context,
)

TIMES = (0.1, 0.5, 1.0)


@pytest.fixture(scope="module")
def sphere4_ctx():
    # 400 form eigenpairs: enough for a tight trace tail and the 60-eigenform growth fit
    return make_context(make_icosphere(4), SuiteConfig(), n1=400)


def test_criterion_01_exact_identities(sphere3, torus16):
    start = time.perf_counter()
    worst = {}
    ok = True
    for s in (sphere3, torus16):
        for r in run_suite("identities", s, SuiteConfig(times=TIMES)):
            ok &= r.passed
            worst[r.name] = max(worst.get(r.name, 0.0), max(0.0, -r.slack))
    elapsed = time.perf_counter() - start
    ok &= worst["exterior_square"] == 0.0
    ok &= worst["intertwining"] <= 1e-12
    ok &= worst["commutation"] <= 1e-9
    ok &= worst["kernel_invariants"] <= 1e-10 and worst["chapman_kolmogorov"] <= 1e-10
    ok &= elapsed < 30
    report(1, ok, f"d1d0={worst['exterior_square']:.0e} intertwining={worst['intertwining']:.1e} "
                  f"commutation={worst['commutation']:.1e} kernel={worst['kernel_invariants']:.1e} "
                  f"CK={worst['chapman_kolmogorov']:.1e} time={elapsed:.1f}s")
    assert ok


def test_criterion_02_dual_path(sphere3, torus16):
    worst, inputs = 0.0, []
    for s in (sphere3, torus16):
        recs = [r for r in run_suite("identities", s, SuiteConfig()) if r.name == "dual_path"]
        inputs.append(sum(r.params["inputs"] for r in recs))
        worst = max([worst] + [r.lhs for r in recs])
    ok = worst <= 1e-8 and inputs == [50, 50]
    report(2, ok, f"max relative gap {worst:.1e} over {inputs} seeded inputs")
    assert ok


def test_criterion_03_analytic_spectra(sphere4_ctx, torus16):
    lam0 = sphere4_ctx.spec0.eigenvalues
    lam1 = sphere4_ctx.spec1.eigenvalues
    c2, c6 = lam0[1:4], lam0[4:9]
    cluster_ok = np.allclose(c2, 2.0, rtol=0.02) and np.allclose(c6, 6.0, rtol=0.02)
    transfer = max(float(np.min(np.abs(lam1 - v))) / v for v in np.concatenate([c2, c6]))
    torus_b1 = harmonic_dimension(eigensolve(build_dec(torus16), 1))
    sphere_b1 = harmonic_dimension(sphere4_ctx.spec1)
    ok = cluster_ok and transfer <= 1e-8 and torus_b1 == 2 and sphere_b1 == 0
    report(3, ok, f"clusters {c2.mean():.4f}(x3) {c6.mean():.4f}(x5), transfer {transfer:.1e}, "
                  f"b1 torus={torus_b1} sphere={sphere_b1}")
    assert ok


def test_criterion_04_gap_chain(sphere3):
    parts, ok = [], True
    for level in (3, 4, 5):
        s = sphere3 if level == 3 else make_icosphere(level)
        ops = build_dec(s)
        dense = ops.n_edges <= DENSE_LIMIT
        s0 = eigensolve(ops, 0) if ops.n_vertices <= DENSE_LIMIT else eigensolve(ops, 0, count=6)
        s1 = eigensolve(ops, 1) if dense else eigensolve(ops, 1, count=6)
        rec = spectral_gap_chain(s0, s1, 1.0, ops.mesh_h, c=1.0)
        ok &= rec.passed and rec.extra["slack_link3"] >= -1e-8
        parts.append(f"s={level}: link1 {rec.extra['slack_link1']:+.2e} (tol {rec.extra['tol_link1']:.3f}) "
                     f"link3 {rec.extra['slack_link3']:+.1e}")
    report(4, ok, "c=1.0; " + "; ".join(parts))
    assert ok


def test_criterion_05_trace(ctx3, sphere4_ctx, ctx_torus):
    s3 = [trace_inequality_check(ctx3.spec0, ctx3.spec1, 1.0, 2, t).slack for t in TIMES]
    s4 = [trace_inequality_check(sphere4_ctx.spec0, sphere4_ctx.spec1, 1.0, 2, t).slack for t in TIMES]
    tor = [trace_inequality_check(ctx_torus.spec0, ctx_torus.spec1, 0.0, 2, t).slack
           for t in (0.01, *TIMES, 5.0)]
    ok = min(s4) >= 0 and min(tor) >= -1e-8
    report(5, ok, "slack s=3 " + " ".join(f"{v:.3f}" for v in s3) + "; s=4 "
                  + " ".join(f"{v:.3f}" for v in s4) + f" ({sphere4_ctx.spec1.count} pairs + tail);"
                  f" torus min {min(tor):.1e}")
    assert ok


def test_criterion_06_pointwise_studies():
    start = time.perf_counter()
    res = convergence_studies(["hsu", "be2", "bakry_ledoux"], "icosphere", (2, 3, 4, 5))
    elapsed = time.perf_counter() - start
    jensen = all(r.passed for r in res["bakry_ledoux"].records if r.name == "bakry_ledoux_jensen")
    ok = all(r.passed for r in res.values()) and jensen and elapsed <= 600
    detail = "; ".join(f"{k} " + " ".join(f"{v:.1e}" for v in r.violations) for k, r in res.items())
    report(6, ok, f"{detail}; jensen={'ok' if jensen else 'violated'}; time={elapsed:.0f}s")
    assert ok


def test_criterion_07_hypercontractivity(sphere4_ctx):
    sch = contractivity_schedule(2.0, 0.5, 1.0, 1.0)
    X = sphere4_ctx.all_forms()
    recs = [hypercontractivity_check(sphere4_ctx.flow, sphere4_ctx.ops, X, t, 2.0, 0.5, 1.0, label="corpus")
            for t in (0.1, 0.3, 0.7)]
    lq = eigenform_lq_check(sphere4_ctx.spec1, sphere4_ctx.ops, 0.5, 1.0, (3.0, 4.0, 6.0))
    ok = sch.agreement <= 1e-8 and all(r.passed for r in recs) and lq.passed
    report(7, ok, f"schedule gap {sch.agreement:.1e}; min slack "
                  f"{min(r.slack for r in recs):.3f} over {X.shape[1]} forms; L^q worst {lq.lhs:+.3f}")
    assert ok


def test_criterion_08_growth(sphere4_ctx):
    rec = eigenform_growth_check(sphere4_ctx.spec1, sphere4_ctx.ops, sphere4_ctx.surface, 2.0, 60)
    ok = rec.passed and rec.lhs <= 0.65
    report(8, ok, f"fitted exponent {rec.lhs:.3f} (bound 0.65, continuum 0.5) over {rec.params['count']} forms")
    assert ok


def test_criterion_09_gaussian(ctx3, sphere4_ctx):
    times = (0.2, 0.5, 1.0)
    r3 = gaussian_bound_fit(ctx3.spec0, ctx3.surface, times, 1.0, ops=ctx3.ops, spec1=ctx3.spec1,
                            distances=ctx3.distances())
    r4 = gaussian_bound_fit(sphere4_ctx.spec0, sphere4_ctx.surface, times, 1.0,
                            reference=r3.lhs, distances=sphere4_ctx.distances())
    ok = (r3.passed and r4.passed and math.isfinite(r3.extra["C1_forms"])
          and r3.extra["C2"] == 0.0 and r4.extra["C2"] == 0.0)
    report(9, ok, f"C1 s=3 {r3.lhs:.3f} (forms {r3.extra['C1_forms']:.3f}), s=4 {r4.lhs:.3f}, "
                  f"prefactor ratio {r4.extra['prefactor_ratio']:.3f}, C2=0")
    assert ok


def test_criterion_10_runtime(tmp_path):
    env = dict(os.environ, HODGE_LAB_THREADS="4")
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "hodgelab.cli", "verify", "--model", "icosphere",
                           "--level", "3", "--suite", "all", "--out", str(tmp_path)],
                          capture_output=True, text=True, env=env)
    elapsed = time.perf_counter() - start
    doc = json.loads((tmp_path / "report.json").read_text())
    with pytest.raises(ValueError):
        eigensolve(build_dec(make_flat_torus(72, 72)), 0, method="dense")
    ok = proc.returncode == 0 and elapsed <= 120 and DENSE_LIMIT == 5000
    report(10, ok, f"verify --suite all at s=3: exit {proc.returncode}, {len(doc['records'])} records, "
                   f"{elapsed:.1f}s; dense cap {DENSE_LIMIT}")
    assert ok, proc.stdout + proc.stderr
