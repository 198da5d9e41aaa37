import json

import pytest

from hodgelab.complex import make_flat_torus, make_icosphere
from hodgelab.records import DIAGNOSTIC
from hodgelab.suites import SUITES, ReportDocument, build_report, run_suite, thread_cap
from hodgelab.verify import SuiteConfig

FAST = SuiteConfig(times=(0.1, 0.5), n_random=6, n_eigenforms=8, n_eigenfunctions=8, dual_path_inputs=10)


def test_unknown_suite(sphere2):
    with pytest.raises(ValueError):
        run_suite("everything", sphere2, FAST)


@pytest.mark.parametrize("suite", SUITES)
def test_every_suite_passes_on_small_sphere(sphere2, suite):
    recs = run_suite(suite, sphere2, FAST)
    assert recs
    failed = [(r.name, r.params, r.slack) for r in recs if not r.passed]
    assert not failed
    assert recs == sorted(recs, key=lambda r: r.sort_key())


def test_identity_suite_contents(sphere2):
    names = {r.name for r in run_suite("identities", sphere2, FAST)}
    for n in ("exterior_square", "intertwining", "commutation", "dual_path", "kernel_invariants",
              "chapman_kolmogorov", "semigroup_law", "self_adjointness"):
        assert n in names


def test_thread_count_does_not_change_records(sphere2):
    a = [r.to_dict() for r in run_suite("all", sphere2, FAST, threads=1)]
    b = [r.to_dict() for r in run_suite("all", sphere2, FAST, threads=4)]
    assert json.dumps(a) == json.dumps(b)


def test_thread_cap_env(monkeypatch):
    monkeypatch.setenv("HODGE_LAB_THREADS", "3")
    assert thread_cap() == 3
    monkeypatch.setenv("HODGE_LAB_THREADS", "zero")
    with pytest.raises(ValueError):
        thread_cap()


def test_nonpositive_weights_refused():
    # obtuse pairs give negative cotangent weights: the 1-form mass is indefinite
    with pytest.raises(ValueError, match="not positive"):
        run_suite("identities", make_flat_torus(3, 12), FAST)


def test_untrusted_records_downgraded(sphere2, monkeypatch):
    from hodgelab import suites
    from hodgelab.verify import make_context

    ctx = make_context(sphere2, FAST)
    monkeypatch.setattr(type(ctx.ops), "trusted", property(lambda self: False))
    recs = suites.run_suite("identities", sphere2, FAST, ctx=ctx)
    assert recs and all(r.verdict == DIAGNOSTIC for r in recs)


def test_report_roundtrip_and_streaming(sphere2):
    streamed = []
    rep = build_report("identities", sphere2, FAST, sink=streamed.extend)
    text = rep.to_json()
    back = ReportDocument.from_json(text)
    assert back.to_json() == text
    assert rep.fingerprint == make_icosphere(2).fingerprint()
    assert len(streamed) >= len(rep.records)
    assert "total" in rep.timings and "setup" in rep.timings
