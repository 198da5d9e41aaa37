"""Command-line front end: ``hodgelab {mesh,spectrum,verify,study}``.

Exit codes: 0 success, 1 computation failure, 2 mesh validation findings,
3 verification failures, 64 usage errors. Plots are not rendered; the
study command writes two-column data files for any plotting tool.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .calculus import build_dec
from .complex import (
    SurfaceError,
    load_surface,
    make_flat_torus,
    make_icosphere,
    validate_surface,
    write_off,
)
from .records import VerificationRecord
from .spectral import DENSE_LIMIT, eigensolve, spectrum_rows
from .suites import SUITES, build_report, thread_cap
from .verify import FAMILIES, STUDY_CHECKS, SuiteConfig, convergence_studies

EXIT_OK, EXIT_FAILURE, EXIT_FINDINGS, EXIT_VERIFY, EXIT_USAGE = 0, 1, 2, 3, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _float_list(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals or any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("times must be nonnegative and nonempty")
    return vals


def _level_range(text: str) -> tuple[int, ...]:
    try:
        if ".." in text:
            a, b = (int(x) for x in text.split(".."))
            return tuple(range(a, b + 1))
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a..b or a comma list, got {text!r}") from None


def _add_source(p: argparse.ArgumentParser, mesh: bool = True) -> None:
    if mesh:
        p.add_argument("--mesh", help="OFF file (curvature constants from <file>.cfg)")
    p.add_argument("--model", choices=FAMILIES)
    p.add_argument("--level", type=int, help="icosphere subdivisions; torus uses 2^(level+1) cells")
    p.add_argument("--n", type=int, help="torus cells along x")
    p.add_argument("--m", type=int, help="torus cells along y")


def _surface(args):
    if getattr(args, "mesh", None):
        if args.model:
            raise UsageError("give either --mesh or --model, not both")
        return load_surface(args.mesh)
    if args.model == "icosphere":
        if args.level is None:
            raise UsageError("--model icosphere needs --level")
        return make_icosphere(args.level)
    if args.model == "torus":
        if args.n is not None or args.m is not None:
            if args.n is None or args.m is None:
                raise UsageError("--model torus needs both --n and --m")
            return make_flat_torus(args.n, args.m)
        if args.level is None:
            raise UsageError("--model torus needs --n and --m (or --level)")
        n = 2 ** (args.level + 1)
        return make_flat_torus(n, n)
    raise UsageError("a mesh source is required: --mesh FILE or --model")


def build_parser() -> argparse.ArgumentParser:
    root = _Parser(prog="hodgelab", description=__doc__.splitlines()[0])
    root.add_argument("--version", action="version", version=f"hodgelab {__version__}")
    sub = root.add_subparsers(dest="command", required=True)

    mesh = sub.add_parser("mesh", help="generate or validate triangle meshes")
    msub = mesh.add_subparsers(dest="action", required=True)
    gen = msub.add_parser("gen", help="write a model surface as OFF")
    _add_source(gen, mesh=False)
    gen.add_argument("--out", required=True)
    val = msub.add_parser("validate", help="print mesh diagnostics")
    val.add_argument("path")

    spec = sub.add_parser("spectrum", help="eigenvalues of the degree-0 or degree-1 Laplacian")
    _add_source(spec)
    spec.add_argument("--degree", type=int, choices=(0, 1), required=True)
    spec.add_argument("--count", type=int, help="number of eigenpairs (default: all, dense meshes only)")
    spec.add_argument("--out", default="spectrum", help="output prefix for .csv and .json")

    ver = sub.add_parser("verify", help="run a verification suite and write a report")
    _add_source(ver)
    ver.add_argument("--suite", default="all", choices=SUITES)
    ver.add_argument("--t-grid", type=_float_list)
    ver.add_argument("--seed", type=int)
    ver.add_argument("--config", help="key = value file mirroring SuiteConfig fields")
    ver.add_argument("--threads", type=int, help="worker cap (overrides HODGE_LAB_THREADS)")
    ver.add_argument("--out", default="report", help="output directory")

    st = sub.add_parser("study", help="mesh-refinement convergence study")
    st.add_argument("--check", required=True, help=f"comma list from {', '.join(STUDY_CHECKS)}")
    st.add_argument("--levels", required=True, type=_level_range, help="a..b or a comma list")
    st.add_argument("--model", choices=FAMILIES, default="icosphere")
    st.add_argument("--t-grid", type=_float_list)
    st.add_argument("--seed", type=int)
    st.add_argument("--config")
    st.add_argument("--out", default="study", help="output directory")
    return root


# -------------------------------------------------------------------- commands


def cmd_mesh(args) -> int:
    if args.action == "gen":
        s = _surface(args)
        write_off(s, args.out)
        print(f"wrote {args.out}: {s.n_vertices} vertices, {s.n_edges} edges, {s.n_faces} faces, "
              f"h = {s.mesh_size():.6g}")
        return EXIT_OK
    try:
        s = load_surface(args.path)
    except FileNotFoundError:
        print(f"error: no such file {args.path}", file=sys.stderr)
        return EXIT_FAILURE
    except SurfaceError as exc:
        print(f"invalid mesh: {exc}")
        return EXIT_FINDINGS
    findings = validate_surface(s)
    for f in findings:
        print(f"{'ok  ' if f.ok else 'FAIL'} {f.name}: {f.detail}")
    return EXIT_OK if all(f.ok for f in findings) else EXIT_FINDINGS


def cmd_spectrum(args) -> int:
    s = _surface(args)
    ops = build_dec(s)
    dof = ops.size(args.degree)
    count = args.count
    if count is not None:
        if count < 1:
            raise UsageError("--count must be positive")
        if count > dof:
            print(f"warning: --count {count} exceeds {dof} degrees of freedom; clamped", file=sys.stderr)
            count = dof
    elif dof > DENSE_LIMIT:
        raise UsageError(f"{dof} unknowns exceed the dense limit {DENSE_LIMIT}; pass --count")
    if count == dof:
        count = None
    try:
        spec = eigensolve(ops, args.degree, count=count)
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"error: eigensolve failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    rows = spectrum_rows(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(f"{out}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "eigenvalue"])
        w.writerows((i, repr(v)) for i, v in rows)
    summary = {"degree": spec.degree, "count": spec.count, "dim": spec.dim, "complete": spec.complete,
               "lambda_max": spec.lambda_max, "residual_bound": spec.residual_bound,
               "eigenvalues": [v for _, v in rows], "mesh": s.fingerprint()}
    Path(f"{out}.json").write_text(json.dumps(summary, indent=2))
    print(f"{spec.count} eigenvalues of degree {spec.degree}; smallest {rows[0][1]:.6g}")
    return EXIT_OK


def _config(args) -> SuiteConfig:
    overrides = {}
    if args.t_grid is not None:
        overrides["times"] = args.t_grid
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        if args.config:
            return SuiteConfig.from_keyvalue(args.config, **overrides)
        return SuiteConfig(**overrides)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad configuration: {exc}") from None


def cmd_verify(args) -> int:
    config = _config(args)
    try:
        threads = args.threads if args.threads is not None else thread_cap()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if threads < 1:
        raise UsageError("--threads must be positive")
    s = _surface(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo = {k: v for k, v in vars(args).items() if k not in ("func",) and v is not None}
    stream_path = out / "records.jsonl"
    with open(stream_path, "w") as stream:
        def sink(recs: list[VerificationRecord]) -> None:
            for r in recs:
                stream.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
            stream.flush()

        try:
            report = build_report(args.suite, s, config, threads, echo, sink)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_FAILURE
    (out / "report.json").write_text(report.to_json())
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "params", "lhs", "rhs", "slack", "tolerance", "verdict"])
        for r in report.records:
            w.writerow([r.name, json.dumps(r.params, sort_keys=True), repr(r.lhs), repr(r.rhs),
                        repr(r.slack), repr(r.tolerance), r.verdict])
    fails = report.failures
    print(f"{len(report.records)} records, {len(fails)} failures, "
          f"{report.timings.get('total', 0.0):.1f} s -> {out}/report.json")
    for r in fails:
        print(f"  FAIL {r.name} {json.dumps(r.params, sort_keys=True)} slack={r.slack:.3e} "
              f"tol={r.tolerance:.3e}")
    return EXIT_VERIFY if fails else EXIT_OK


def cmd_study(args) -> int:
    checks = [c.strip() for c in args.check.split(",") if c.strip()]
    unknown = [c for c in checks if c not in STUDY_CHECKS]
    if unknown or not checks:
        raise UsageError(f"unknown check(s) {unknown}; choose from {', '.join(STUDY_CHECKS)}")
    if len(args.levels) < 3:
        raise UsageError("a convergence study needs at least 3 levels")
    config = _config(args)
    config = replace(config, levels=tuple(args.levels))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        results = convergence_studies(checks, args.model, args.levels, config,
                                      progress=lambda msg: print(msg, flush=True))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    summaries = []
    for check, res in results.items():
        with open(out / f"{check}.dat", "w") as fh:
            fh.write("# mesh_h max_relative_violation\n")
            for h, v in res.plot_rows():
                fh.write(f"{h!r} {v!r}\n")
        summaries.append(res.summary())
    doc = {"version": __version__, "model": args.model, "levels": list(args.levels),
           "studies": summaries, "seconds": time.perf_counter() - start}
    (out / "study_summary.json").write_text(json.dumps(doc, indent=2, allow_nan=False))
    failed = [r.check for r in results.values() if not r.passed]
    for r in results.values():
        print(f"{r.check}: {'pass' if r.passed else 'FAIL'} (final {r.violations[-1]:.3e}, "
              f"monotone {r.monotone})")
    return EXIT_VERIFY if failed else EXIT_OK


COMMANDS = {"mesh": cmd_mesh, "spectrum": cmd_spectrum, "verify": cmd_verify, "study": cmd_study}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"hodgelab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SurfaceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FINDINGS


if __name__ == "__main__":
    sys.exit(main())
