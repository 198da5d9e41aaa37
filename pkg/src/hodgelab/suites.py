"""Named verification suites over one mesh, and the report document they fill."""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import __version__
from .calculus import Form
from .complex import SimplicialSurface, validate_surface
from .heat import (
    HeatFlow,
    apriori_checks,
    chapman_kolmogorov_check,
    commutation_checks,
    expmv_action,
    gaussian_bound_fit,
    kernel_block_norm,
    kernel_invariants_check,
    kernel_matrix,
    trace_inequality_check,
)
from .records import DIAGNOSTIC, VerificationRecord, make_record
from .spectral import (
    AmbiguousClusterError,
    check_invariants,
    eigenform_growth_check,
    harmonic_dimension,
    minmax_check,
    poincare_check,
    spectral_gap_chain,
    spectral_inclusion_check,
)
from .verify import (
    MeshContext,
    SuiteConfig,
    bakry_ledoux_check,
    bakry_ledoux_terms,
    be2_check,
    dimensional_energy_check,
    eigenform_lq_check,
    flsi_check,
    flsi_coefficients,
    hsu_check,
    hypercontractivity_check,
    jensen_ordering_check,
    kato_quadratic_check,
    lsi2_check,
    make_context,
    model_beta,
    schedule_check,
    subexponential_check,
    ultracontractivity_converse_check,
    weak_one_bochner_check,
)

SUITES = ("identities", "inequalities", "spectral", "kernel", "all")
THREADS_ENV = "HODGE_LAB_THREADS"
GROWTH_COUNT = 60
TRACE_TOL = 1e-8

Task = Callable[[], list[VerificationRecord]]


def thread_cap() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return min(4, os.cpu_count() or 1)
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None


def _rng(config: SuiteConfig, stream: int) -> np.random.Generator:
    # one independent stream per task keeps results independent of scheduling
    return np.random.default_rng([config.seed, stream])


def _rel_max(a: np.ndarray, b: np.ndarray) -> float:
    den = float(np.max(np.abs(a)))
    return float(np.max(np.abs(a - b))) / den if den > 0 else float(np.max(np.abs(b)))


# ----------------------------------------------------------------- identities


def identity_tasks(ctx: MeshContext, config: SuiteConfig) -> list[Task]:
    ops = ctx.ops
    complete = ctx.spec0.complete and ctx.spec1.complete

    def exterior():
        dd = ops.d1 @ ops.d0
        v = float(abs(dd).max()) if dd.nnz else 0.0
        return [make_record("exterior_square", {}, v, 0.0, 0.0, slack=-v, mesh_h=ops.mesh_h)]

    def intertwining():
        left = (ops.L1_hodge @ ops.d0).toarray()
        right = (ops.d0 @ ops.generator(0)).toarray()
        v = _rel_max(left, right)
        return [make_record("intertwining", {}, v, 0.0, 1e-12, slack=-v, mesh_h=ops.mesh_h)]

    def commutation():
        rng = _rng(config, 1)
        out = []
        for t in config.times:
            f = Form(0, rng.standard_normal(ops.n_vertices))
            w = Form(1, rng.standard_normal(ops.n_edges))
            out.append(commutation_checks(ctx.spec0, ctx.spec1, ops, t, f, w))
        return out

    def dual_path():
        rng = _rng(config, 2)
        fast = HeatFlow(ops, ctx.spec0, ctx.spec1)
        oracle_route = "spectral" if complete else "chebyshev"
        out = []
        for degree in (0, 1):
            n = config.dual_path_inputs // 2 + (config.dual_path_inputs % 2 if degree == 0 else 0)
            X = rng.standard_normal((ops.size(degree), n))
            t = 0.3
            if complete:
                a = fast.apply(degree, t, X)
            else:
                a = HeatFlow(ops, route="chebyshev").apply(degree, t, X)
            b = expmv_action(ops, degree, t, X)
            rel = np.linalg.norm(a - b, axis=0) / np.linalg.norm(a, axis=0)
            v = float(rel.max())
            out.append(make_record("dual_path", {"degree": degree, "t": t, "inputs": n}, v, 0.0, 1e-8,
                                   slack=-v, mesh_h=ops.mesh_h, seed=config.seed,
                                   extra={"route": oracle_route}))
        return out

    def semigroup_law():
        rng = _rng(config, 3)
        out = []
        for degree in (0, 1):
            x = rng.standard_normal(ops.size(degree))
            y = rng.standard_normal(ops.size(degree))
            flow = ctx.flow
            t, s = 0.2, 0.3
            law = _rel_max(flow.apply(degree, t + s, x), flow.apply(degree, t, flow.apply(degree, s, x)))
            m = ops.mass(degree)
            a = flow.apply(degree, t, x) @ (m * y)
            b = x @ (m * flow.apply(degree, t, y))
            sa = abs(a - b) / max(abs(a), abs(b), 1e-300)
            lin = _rel_max(flow.apply(degree, t, 2.0 * x - 3.0 * y),
                           2.0 * flow.apply(degree, t, x) - 3.0 * flow.apply(degree, t, y))
            zero = float(np.max(np.abs(flow.apply(degree, 0.0, x) - x)))
            out.append(make_record("semigroup_law", {"degree": degree}, law, 0.0, 1e-10, slack=-law,
                                   mesh_h=ops.mesh_h, seed=config.seed))
            out.append(make_record("self_adjointness", {"degree": degree}, sa, 0.0, 1e-10, slack=-sa,
                                   mesh_h=ops.mesh_h, seed=config.seed))
            out.append(make_record("linearity", {"degree": degree}, lin, 0.0, 1e-12, slack=-lin,
                                   mesh_h=ops.mesh_h, seed=config.seed))
            out.append(make_record("initial_value", {"degree": degree}, zero, 0.0, 0.0, slack=-zero,
                                   mesh_h=ops.mesh_h))
        return out

    def apriori():
        rng = _rng(config, 4)
        w = Form(1, ctx.flow.forms(config.mollify_t, rng.standard_normal(ops.n_edges)))
        return [apriori_checks(ctx.spec1, ops, w, t) for t in config.times if t > 0]

    def kernels():
        if not complete:
            return []
        out = []
        for spec in (ctx.spec0, ctx.spec1):
            for t in config.times:
                if t > 0:
                    out.append(kernel_invariants_check(kernel_matrix(spec, t)))
            ts = [t for t in config.times if t > 0]
            if len(ts) >= 2:
                out.append(chapman_kolmogorov_check(spec, ts[0], ts[1], ts[-1]))
        return out

    return [exterior, intertwining, commutation, dual_path, semigroup_law, apriori, kernels]


# -------------------------------------------------------------------- spectral


def spectral_tasks(ctx: MeshContext, config: SuiteConfig) -> list[Task]:
    ops, s = ctx.ops, ctx.surface

    def invariants():
        return [check_invariants(ctx.spec0, ops), check_invariants(ctx.spec1, ops)]

    def harmonic():
        expected = 2 - s.euler_characteristic
        try:
            k = harmonic_dimension(ctx.spec1)
            ok = k == expected
            extra = {"expected": expected}
        except AmbiguousClusterError as exc:
            k, ok, extra = -1, False, {"expected": expected, "error": str(exc)}
        return [make_record("harmonic_dimension", {}, k, expected, 0.0, slack=0.0 if ok else -1.0,
                            mesh_h=ops.mesh_h, extra=extra)]

    def inclusion():
        return [spectral_inclusion_check(ctx.spec0, ctx.spec1, 1e-8, ops)]

    def gap():
        if ctx.K is None:
            return []
        return [spectral_gap_chain(ctx.spec0, ctx.spec1, ctx.K, ops.mesh_h, 1.0, ctx.assertable)]

    def poincare():
        return [poincare_check(ctx.spec1, ops, 20, config.seed)]

    def minmax():
        return [minmax_check(ctx.spec1, ops, 40, config.seed)]

    def growth():
        if ctx.N is None or ctx.spec1.count < GROWTH_COUNT + 2:
            return []
        return [eigenform_growth_check(ctx.spec1, ops, s, ctx.N, GROWTH_COUNT, ctx.assertable)]

    def trace():
        if ctx.K is None:
            return []
        return [trace_inequality_check(ctx.spec0, ctx.spec1, ctx.K, 2, t, tolerance=TRACE_TOL, mesh_h=ops.mesh_h)
                for t in config.times if t > 0]

    return [invariants, harmonic, inclusion, gap, poincare, minmax, growth, trace]


# ---------------------------------------------------------------------- kernel

SMALL_TIME = 1e-6


def kernel_tasks(ctx: MeshContext, config: SuiteConfig) -> list[Task]:
    ops, s = ctx.ops, ctx.surface
    complete = ctx.spec0.complete and ctx.spec1.complete
    times = [t for t in config.times if t > 0]

    def invariants():
        if not complete:
            return []
        out = []
        for spec in (ctx.spec0, ctx.spec1):
            for t in times:
                out.append(kernel_invariants_check(kernel_matrix(spec, t)))
            for a in times:
                for b in times:
                    if a <= b:
                        out.append(chapman_kolmogorov_check(spec, a, b))
        return out

    def small_time():
        if not complete:
            return []
        out = []
        for spec in (ctx.spec0, ctx.spec1):
            k = kernel_matrix(spec, SMALL_TIME)
            err = float(np.max(np.abs(k.G * spec.mass[None, :] - np.eye(spec.dim))))
            # first-order deviation is t*|A_ij|; beyond 1e-3 the probe cannot discriminate
            regime = SMALL_TIME * spec.lambda_max <= 1e-3
            out.append(make_record("kernel_small_time", {"degree": spec.degree, "t": SMALL_TIME}, err, 0.0,
                                   1e-3, slack=-err, diagnostic=not regime, mesh_h=ops.mesh_h,
                                   extra={"t_lambda_max": SMALL_TIME * spec.lambda_max}))
        return out

    def pointwise_hsu():
        if not complete or ctx.K is None:
            return []
        out = []
        c = config.tolerances["kernel_hsu"]
        for t in times:
            p = kernel_matrix(ctx.spec0, t).G
            nb = kernel_block_norm(ops, s, kernel_matrix(ctx.spec1, t))
            rhs = math.exp(-ctx.K * t) * p
            v = float(np.max(nb - rhs)) / float(np.max(rhs))
            sym = float(np.max(np.abs(nb - nb.T))) / float(np.max(nb))
            out.append(make_record("kernel_hsu", {"t": t, "K": ctx.K}, float(nb.max()), float(rhs.max()),
                                   c * ops.mesh_h, slack=-v, diagnostic=not ctx.assertable,
                                   mesh_h=ops.mesh_h, extra={"c": c, "block_symmetry": sym}))
        return out

    def gaussian():
        if ctx.K is None:
            return []
        ts = [t for t in times if t >= 0.1]
        if not ts:
            return []
        return [gaussian_bound_fit(ctx.spec0, s, ts, 1.0, ops=ops, spec1=ctx.spec1 if complete else None,
                                   K=ctx.K, distances=ctx.distances())]

    def trace():
        if ctx.K is None:
            return []
        return [trace_inequality_check(ctx.spec0, ctx.spec1, ctx.K, 2, t, tolerance=TRACE_TOL, mesh_h=ops.mesh_h) for t in times]

    return [invariants, small_time, pointwise_hsu, gaussian, trace]


# ---------------------------------------------------------------- inequalities


def inequality_tasks(ctx: MeshContext, config: SuiteConfig) -> list[Task]:
    ops, s, flow, K, N = ctx.ops, ctx.surface, ctx.flow, ctx.K, ctx.N
    tol = config.tolerances
    if K is None:
        return []
    forms = ctx.all_forms()

    def pointwise():
        out = []
        for t in config.times:
            for label, X in ctx.corpus.items():
                out.append(hsu_check(flow, ops, s, X, t, K, c=tol["hsu"], label=label))
                out.append(be2_check(flow, ops, s, X, t, K, c=tol["be2"], label=label))
        return out

    def bakry_ledoux():
        if N is None:
            return []
        out = []
        for t in config.times:
            for label, X in ctx.corpus.items():
                T = bakry_ledoux_terms(flow, ops, X, t, K, N, config.simpson_nodes)
                for v in ("strong", "integral_weak", "non_integral"):
                    out.append(bakry_ledoux_check(flow, ops, s, X, t, K, N, v, nodes=config.simpson_nodes,
                                                  c=tol["bakry_ledoux"], label=label, terms=T))
                out.append(jensen_ordering_check(T, ops, t, label))
        return out

    def quadratic():
        out = []
        for label, X in ctx.corpus.items():
            out.append(kato_quadratic_check(ops, X, K, c=tol["kato"], label=label))
            if N is not None:
                out.append(dimensional_energy_check(ops, X, K, N, c=tol["dimensional_energy"], label=label))
        phi = 1.0 + s.vertices[:, 0] ** 2
        phi = phi - phi.min() + 0.5
        for label, X in ctx.corpus.items():
            out.append(weak_one_bochner_check(ops, flow, X, phi, K, c=tol["weak_one_bochner"], label=label))
        return out

    def logsobolev():
        if K <= 0:
            return []
        beta = model_beta(K, N)
        out = []
        for label, X in ctx.corpus.items():
            out.append(lsi2_check(ops, X, beta, config.chi, K, c=tol["lsi2"], label=label))
            for p in config.p_grid:
                e, g = flsi_coefficients(p, beta, config.chi, K)
                out.append(flsi_check(ops, X, p, e, g, c=tol["flsi"], label=label))
        out.append(schedule_check(config.p0, beta, K, max(config.times)))
        for t in config.times:
            out.append(hypercontractivity_check(flow, ops, forms, t, config.p0, beta, K,
                                                c=tol["hypercontractivity"], label="corpus"))
        out.append(eigenform_lq_check(ctx.spec1, ops, beta, K, config.q_grid, c=tol["eigenform_lq"]))
        return out

    def ultra():
        if K < 0:
            return []
        ts = [t for t in config.times if t > 0]
        return [ultracontractivity_converse_check(flow, ops, ctx.spec1, ts, K, forms,
                                                  c=tol["ultracontractivity"])]

    def subexp():
        return [subexponential_check(s, e, M0=ops.M0, distances=ctx.distances()) for e in (0.1, 1.0)]

    return [pointwise, bakry_ledoux, quadratic, logsobolev, ultra, subexp]


TASKS = {
    "identities": identity_tasks,
    "spectral": spectral_tasks,
    "kernel": kernel_tasks,
    "inequalities": inequality_tasks,
}


def run_suite(suite: str, surface: SimplicialSurface, config: SuiteConfig | None = None,
              threads: int | None = None, ctx: MeshContext | None = None,
              timings: dict[str, float] | None = None,
              sink: Callable[[list[VerificationRecord]], None] | None = None) -> list[VerificationRecord]:
    """Run a named suite; records come back sorted by (name, params).

    ``sink`` receives each task's records as the task finishes, always on
    the calling thread, so a single writer can stream them.
    """
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    config = config or SuiteConfig()
    timings = timings if timings is not None else {}
    t0 = time.perf_counter()
    if ctx is None:
        ctx = make_context(surface, config, n1=GROWTH_COUNT + 4 if suite in ("spectral", "all") else None)
    timings["setup"] = time.perf_counter() - t0
    names = list(TASKS) if suite == "all" else [suite]
    tasks: list[tuple[str, Task]] = [(n, task) for n in names for task in TASKS[n](ctx, config)]
    workers = min(threads or thread_cap(), max(1, len(tasks)))

    def timed(item):
        name, task = item
        start = time.perf_counter()
        return name, task(), time.perf_counter() - start

    def finalise(recs):
        if ctx.ops.trusted:
            return recs
        return [replace(r, verdict=DIAGNOSTIC) for r in recs]

    results = []
    if workers == 1:
        for item in tasks:
            results.append(timed(item))
            if sink:
                sink(finalise(results[-1][1]))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(timed, item) for item in tasks]
            for fut in as_completed(futures):
                if sink:
                    sink(finalise(fut.result()[1]))
            results = [f.result() for f in futures]
    records: list[VerificationRecord] = []
    seen: set[str] = set()
    for name, recs, dt in results:
        timings[name] = timings.get(name, 0.0) + dt
        for r in finalise(recs):
            # suites overlap (trace, kernel invariants); keep one copy of identical records
            key = json.dumps(r.to_dict(), sort_keys=True)
            if key not in seen:
                seen.add(key)
                records.append(r)
    return sorted(records, key=lambda r: r.sort_key())


# --------------------------------------------------------------------- report


@dataclass
class ReportDocument:
    version: str
    config: dict
    fingerprint: str
    mesh: dict
    records: list[VerificationRecord]
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def failures(self) -> list[VerificationRecord]:
        return [r for r in self.records if not r.passed]

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "config": self.config,
            "fingerprint": self.fingerprint,
            "mesh": self.mesh,
            "records": [r.to_dict() for r in self.records],
            "timings": self.timings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> "ReportDocument":
        d = json.loads(text)
        return cls(d["version"], d["config"], d["fingerprint"], d["mesh"],
                   [VerificationRecord.from_dict(r) for r in d["records"]], d.get("timings", {}))


def mesh_summary(s: SimplicialSurface) -> dict:
    return {"name": s.name, "level": s.level, "vertices": s.n_vertices, "edges": s.n_edges,
            "faces": s.n_faces, "mesh_h": s.mesh_size(),
            "K": s.curvature.K if s.curvature else None, "N": s.curvature.N if s.curvature else None,
            "delaunay": all(f.ok for f in validate_surface(s) if f.name == "delaunay")}


def build_report(suite: str, surface: SimplicialSurface, config: SuiteConfig,
                 threads: int | None = None, echo: dict | None = None,
                 sink: Callable[[list[VerificationRecord]], None] | None = None) -> ReportDocument:
    timings: dict[str, float] = {}
    start = time.perf_counter()
    records = run_suite(suite, surface, config, threads, timings=timings, sink=sink)
    timings["total"] = time.perf_counter() - start
    cfg = {"suite": suite, **(echo or {}), "settings": config.to_keyvalue()}
    return ReportDocument(__version__, cfg, surface.fingerprint(), mesh_summary(surface), records, timings)
