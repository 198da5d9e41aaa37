"""Heat semigroups on functions and 1-forms, and their kernels.

Two independent routes are provided: the spectral expansion over a
mass-orthonormal eigenbasis and the Krylov action of the matrix
exponential on the sparse generator.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse, special
from scipy.sparse import linalg as splinalg

from .calculus import DECOperators, Form, codiff_array, energy_array
from .complex import SimplicialSurface, distance_matrix
from .records import VerificationRecord, make_record
from .spectral import SpectralData

# beyond this t*||A||_1 the Krylov scaling-and-squaring loses every digit
EXPMV_LIMIT = 1e8
KERNEL_HEADER = struct.Struct("<qd")


class ExpmvUnderflowError(ArithmeticError):
    """t * ||generator|| is too large for a meaningful exponential action."""


def _check_time(t: float) -> float:
    t = float(t)
    if not math.isfinite(t) or t < 0:
        raise ValueError(f"heat flow needs a finite t >= 0, got {t}")
    return t


def _values(x) -> tuple[np.ndarray, int | None]:
    if isinstance(x, Form):
        return x.values, x.degree
    return np.asarray(x, dtype=float), None


# ------------------------------------------------------------------ semigroups


def spectral_action(spec: SpectralData, t: float, x: np.ndarray) -> np.ndarray:
    """Sum_i exp(-lambda_i t) <x, phi_i>_M phi_i for a vector or column block."""
    phi = spec.eigenvectors
    coeff = phi.T @ (x * spec.mass if x.ndim == 1 else x * spec.mass[:, None])
    decay = np.exp(-spec.eigenvalues * t)
    return phi @ (coeff * decay if x.ndim == 1 else coeff * decay[:, None])


def semigroup_apply(spec: SpectralData, t: float, form: Form) -> Form:
    """Spectral heat flow; needs the complete spectrum of the form's degree."""
    t = _check_time(t)
    x, degree = _values(form)
    if degree is not None and degree != spec.degree:
        raise ValueError(f"form of degree {degree} given to a degree-{spec.degree} spectrum")
    if t == 0.0:
        return Form(spec.degree, x.copy())
    if not spec.complete:
        raise ValueError("spectral heat flow needs the complete spectrum")
    return Form(spec.degree, spectral_action(spec, t, x))


def expmv_action(ops: DECOperators, degree: int, t: float, x: np.ndarray,
                 norm: float | None = None) -> np.ndarray:
    t = _check_time(t)
    if t == 0.0:
        return x.copy()
    A = ops.generator(degree)
    a_norm = norm if norm is not None else splinalg.onenormest(A)
    if t * a_norm > EXPMV_LIMIT:
        raise ExpmvUnderflowError(f"t*||A|| = {t * a_norm:.3g} exceeds {EXPMV_LIMIT:.0e}")
    return splinalg.expm_multiply(-t * A, x)


def semigroup_apply_expmv(ops: DECOperators, t: float, form: Form) -> Form:
    """Heat flow through the action of exp(-tA) on the sparse generator A."""
    if form.degree not in (0, 1):
        raise ValueError("heat flow acts on degrees 0 and 1")
    return Form(form.degree, expmv_action(ops, form.degree, t, form.values))


def spectral_radius_bound(ops: DECOperators, degree: int) -> float:
    """Gershgorin bound for the generator, taken on its symmetric form M^-1/2 K M^-1/2."""
    K = sparse.coo_matrix(ops.stiffness(degree))
    m = ops.mass(degree)
    vals = np.abs(K.data) / np.sqrt(m[K.row] * m[K.col])
    rows = np.bincount(K.row, weights=vals, minlength=len(m))
    return float(rows.max())


def chebyshev_coefficients(z: float, tol: float = 1e-17) -> np.ndarray:
    """Scaled Bessel weights of exp(-z(X+1)) = sum_k c_k T_k(X) on [-1, 1]."""
    k = np.arange(0, int(z + 12.0 * math.sqrt(z + 1.0) + 40))
    c = special.ive(k, z)
    c[1:] *= 2.0
    c[1::2] *= -1.0
    keep = np.nonzero(np.abs(c) >= tol)[0]
    return c[: keep[-1] + 1] if len(keep) else c[:1]


def chebyshev_action(A: sparse.spmatrix, t: float, x: np.ndarray, lam_bound: float) -> np.ndarray:
    """exp(-tA) x for A similar to a symmetric matrix with spectrum in [0, lam_bound].

    Cost grows like sqrt(t * lam_bound) products, against t * ||A|| for
    Taylor-based actions.
    """
    t = _check_time(t)
    if t == 0.0:
        return x.copy()
    z = 0.5 * t * lam_bound
    c = chebyshev_coefficients(z)
    a = 2.0 / lam_bound
    t_prev, t_cur = x, a * (A @ x) - x
    out = c[0] * t_prev
    if len(c) > 1:
        out = out + c[1] * t_cur
    for ck in c[2:]:
        t_prev, t_cur = t_cur, 2.0 * (a * (A @ t_cur) - t_cur) - t_prev
        out += ck * t_cur
    return out


class HeatFlow:
    """Both semigroups of one mesh.

    Uses the spectral route when a complete spectrum is attached and a
    Chebyshev expansion otherwise; ``route`` may force "spectral",
    "chebyshev" or the scipy Krylov action "expmv".
    """

    def __init__(self, ops: DECOperators, spec0: SpectralData | None = None,
                 spec1: SpectralData | None = None, route: str = "auto"):
        if route not in ("auto", "spectral", "chebyshev", "expmv"):
            raise ValueError(f"unknown route {route!r}")
        self.ops = ops
        self.specs = {0: spec0, 1: spec1}
        self.route = route
        self._norms: dict[int, float] = {}
        self._generators: dict[int, sparse.csr_matrix] = {}

    def uses_spectrum(self, degree: int) -> bool:
        spec = self.specs[degree]
        if self.route in ("expmv", "chebyshev"):
            return False
        if self.route == "spectral" and (spec is None or not spec.complete):
            raise ValueError(f"no complete degree-{degree} spectrum for the spectral route")
        return spec is not None and spec.complete

    def _norm(self, degree: int) -> float:
        if degree not in self._norms:
            self._norms[degree] = float(splinalg.onenormest(self.ops.generator(degree)))
        return self._norms[degree]

    def _bound(self, degree: int) -> float:
        key = degree + 10
        if key not in self._norms:
            self._norms[key] = spectral_radius_bound(self.ops, degree)
            self._generators[degree] = self.ops.generator(degree).tocsr()
        return self._norms[key]

    def apply(self, degree: int, t: float, x: np.ndarray) -> np.ndarray:
        t = _check_time(t)
        x = np.asarray(x, dtype=float)
        if t == 0.0:
            return x.copy()
        if self.uses_spectrum(degree):
            return spectral_action(self.specs[degree], t, x)
        if self.route == "expmv":
            return expmv_action(self.ops, degree, t, x, self._norm(degree))
        lam = self._bound(degree)
        return chebyshev_action(self._generators[degree], t, x, lam)

    def functions(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.apply(0, t, x)

    def lambda_bound(self, degree: int) -> float:
        """Upper bound on the generator spectrum (exact when the spectrum is complete)."""
        spec = self.specs[degree]
        if spec is not None and spec.complete:
            return float(spec.lambda_max)
        return self._bound(degree)

    def forms(self, t: float, x: np.ndarray) -> np.ndarray:
        return self.apply(1, t, x)

    def trajectory(self, degree: int, x: np.ndarray, t_end: float, num: int) -> np.ndarray:
        """States at ``num`` uniform times from 0 to ``t_end`` (first axis is time)."""
        t_end = _check_time(t_end)
        x = np.asarray(x, dtype=float)
        times = np.linspace(0.0, t_end, num)
        if self.uses_spectrum(degree):
            return np.stack([self.apply(degree, s, x) for s in times])
        if self.route != "expmv":
            out = [x]
            for _ in range(num - 1):
                out.append(self.apply(degree, t_end / (num - 1), out[-1]))
            return np.stack(out)
        if t_end * self._norm(degree) > EXPMV_LIMIT:
            raise ExpmvUnderflowError("trajectory horizon too long for the Krylov route")
        out = splinalg.expm_multiply(-self.ops.generator(degree), x, start=0.0, stop=t_end,
                                     num=num, endpoint=True)
        return np.asarray(out)


# ------------------------------------------------------------ identity checks


def _rel(num: float, den: float) -> float:
    if num == 0.0:
        return 0.0
    return num / den if den > 0 else math.inf


def commutation_checks(spec0: SpectralData | None, spec1: SpectralData | None,
                       ops: DECOperators, t: float, f: Form, w: Form) -> VerificationRecord:
    """H_t df = d P_t f and delta H_t w = P_t delta w, relative residuals."""
    if f.degree != 0 or w.degree != 1:
        raise ValueError("commutation_checks takes a function and a 1-form")
    flow = HeatFlow(ops, spec0, spec1)
    M0, M1 = ops.M0, ops.M1
    mn = lambda v, m: float(np.sqrt(max(v @ (m * v), 0.0)))  # noqa: E731

    df = ops.d0 @ f.values
    r1 = flow.forms(t, df) - ops.d0 @ flow.functions(t, f.values)
    res1 = _rel(mn(r1, M1), mn(df, M1))

    dw = codiff_array(ops, 1, w.values)
    r2 = codiff_array(ops, 1, flow.forms(t, w.values)) - flow.functions(t, dw)
    lam = spec1.lambda_max if spec1 is not None else float(splinalg.onenormest(ops.generator(1)))
    # harmonic inputs have delta w = 0, so fall back to the natural scale of w
    scale = max(mn(dw, M0), 1e-12 * mn(w.values, M1) * math.sqrt(lam))
    res2 = _rel(mn(r2, M0), scale)
    worst = max(res1, res2)
    return make_record(
        "commutation", {"t": float(t)}, worst, 0.0, 1e-9, slack=-worst, mesh_h=ops.mesh_h,
        extra={"d_residual": res1, "delta_residual": res2,
               "route": "spectral" if flow.uses_spectrum(1) else "expmv"},
    )


def apriori_checks(spec1: SpectralData | None, ops: DECOperators, w: Form, t: float,
                   grid: int = 10) -> VerificationRecord:
    """Energy dissipation and the two a priori bounds of the 1-form flow."""
    t = float(t)
    if t <= 0:
        raise ValueError("apriori_checks needs t > 0")
    flow = HeatFlow(ops, None, spec1)
    x = w.values
    n2 = float(x @ (ops.M1 * x))
    ht = flow.forms(t, x)
    energy = float(energy_array(ops, ht))
    lap = ops.L1_hodge @ ht
    lap_sq = float(lap @ (ops.M1 * lap))
    b1, b2 = n2 / (4 * t), n2 / (2 * t * t)
    times = np.linspace(0.0, t, grid)
    traj = flow.trajectory(1, x, t, grid) if not flow.uses_spectrum(1) else \
        np.stack([flow.forms(s, x) for s in times])
    energies = np.array([float(energy_array(ops, y)) for y in traj])
    l2 = np.array([float(y @ (ops.M1 * y)) for y in traj])
    scale = max(n2, 1e-300)
    mono_e = float(np.max(np.diff(energies), initial=0.0)) / max(energies[0], 1e-300)
    mono_l2 = float(np.max(np.diff(l2), initial=0.0)) / scale
    rel = [(b1 - energy) / max(b1, 1e-300), (b2 - lap_sq) / max(b2, 1e-300), -mono_e, -mono_l2]
    slack = min(rel)
    return make_record(
        "apriori", {"t": t}, energy, b1, 1e-12, slack=slack, mesh_h=ops.mesh_h,
        extra={"energy": energy, "energy_bound": b1, "laplacian_sq": lap_sq,
               "laplacian_bound": b2, "energy_increase": mono_e, "l2_increase": mono_l2},
    )


# -------------------------------------------------------------------- kernels


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Kernel density G (action x -> G @ (mass * x)) at time ``t``."""

    degree: int
    t: float
    G: np.ndarray
    mass: np.ndarray

    def act(self, x: np.ndarray) -> np.ndarray:
        return self.G @ (x * self.mass if x.ndim == 1 else x * self.mass[:, None])

    def invariants(self) -> dict[str, float]:
        G = self.G
        scale = float(np.max(np.abs(G)))
        out = {"symmetry": float(np.max(np.abs(G - G.T))) / scale}
        if self.degree == 0:
            out["row_mass"] = float(np.max(np.abs(G @ self.mass - 1.0)))
            out["min_entry"] = float(G.min()) / scale
        return out

    def summary(self) -> dict:
        d = {"degree": self.degree, "t": self.t, "dim": int(self.G.shape[0]),
             "max": float(self.G.max()), "min": float(self.G.min()),
             "trace": float(np.trace(self.G * self.mass[None, :]))}
        d.update(self.invariants())
        return d


def kernel_matrix(spec: SpectralData, t: float) -> KernelMatrix:
    """G = Phi diag(exp(-lambda t)) Phi^T from a complete spectrum."""
    t = float(t)
    if t <= 0:
        raise ValueError("kernel needs t > 0")
    if not spec.complete:
        raise ValueError("kernel_matrix needs all modes; got a partial spectrum")
    phi = spec.eigenvectors
    G = (phi * np.exp(-spec.eigenvalues * t)[None, :]) @ phi.T
    G = 0.5 * (G + G.T)
    return KernelMatrix(spec.degree, t, G, spec.mass)


def kernel_invariants_check(k: KernelMatrix, tol: float = 1e-10) -> VerificationRecord:
    inv = k.invariants()
    worst = inv["symmetry"]
    if k.degree == 0:
        worst = max(worst, inv["row_mass"], max(-inv["min_entry"], 0.0))
    return make_record("kernel_invariants", {"degree": k.degree, "t": k.t}, worst, 0.0, tol,
                       slack=-worst, extra=inv)


def reconstruction(ops: DECOperators) -> sparse.csr_matrix:
    """Vertex tangent-frame reconstruction R (2V x E) of 1-form coefficients."""
    return (ops.frames @ ops.whitney).tocsr()


def block_norms(B: np.ndarray) -> np.ndarray:
    """Largest singular value of each 2x2 block of a (2V x 2V) matrix."""
    V = B.shape[0] // 2
    b = B.reshape(V, 2, V, 2)
    a, bb, c, d = b[:, 0, :, 0], b[:, 0, :, 1], b[:, 1, :, 0], b[:, 1, :, 1]
    fro = a * a + bb * bb + c * c + d * d
    det = a * d - bb * c
    disc = np.sqrt(np.maximum(fro * fro - 4 * det * det, 0.0))
    return np.sqrt(np.maximum(0.5 * (fro + disc), 0.0))


def kernel_block_norm(ops: DECOperators, s: SimplicialSurface | None, h_t: KernelMatrix) -> np.ndarray:
    """|h_t|(x, y): operator norm of the 2x2 tangent block R_x G R_y^T."""
    if h_t.degree != 1:
        raise ValueError("kernel_block_norm needs a 1-form kernel")
    R = reconstruction(ops)
    if np.any(np.asarray(abs(ops.frames).sum(axis=1)).ravel() == 0):
        raise ValueError("degenerate vertex frame")
    RG = (R @ h_t.G)
    B = (R @ RG.T).T
    return block_norms(B)


def chapman_kolmogorov_check(spec: SpectralData, t: float, s: float,
                             r: float | None = None) -> VerificationRecord:
    """G_{t+s} = G_t M G_s, plus the threefold composition when ``r`` is given."""
    if t <= 0 or s <= 0:
        raise ValueError("Chapman-Kolmogorov check needs t, s > 0")
    m = spec.mass
    Gt, Gs, Gts = (kernel_matrix(spec, x).G for x in (t, s, t + s))
    scale = float(np.max(np.abs(Gts)))
    err = float(np.max(np.abs(Gts - (Gt * m[None, :]) @ Gs))) / scale
    extra = {"two_fold": err}
    if r is not None:
        Gr = kernel_matrix(spec, r).G
        Gall = kernel_matrix(spec, t + s + r).G
        three = ((Gt * m[None, :]) @ (Gs * m[None, :])) @ Gr
        extra["three_fold"] = float(np.max(np.abs(Gall - three))) / float(np.max(np.abs(Gall)))
    worst = max(extra.values())
    params = {"degree": spec.degree, "t": float(t), "s": float(s)}
    if r is not None:
        params["r"] = float(r)
    return make_record("chapman_kolmogorov", params, worst, 0.0, 1e-10, slack=-worst, extra=extra)


def trace_bounds(spec: SpectralData, t: float) -> tuple[float, float]:
    """Lower and upper bounds for tr exp(-tA); equal when the spectrum is complete."""
    partial = float(np.sum(np.exp(-spec.eigenvalues * t)))
    if spec.complete:
        return partial, partial
    tail = (spec.dim - spec.count) * math.exp(-spec.eigenvalues[-1] * t)
    return partial, partial + tail


def trace_inequality_check(spec0: SpectralData, spec1: SpectralData, K: float | None,
                           N_dim: int, t: float, *, tolerance: float = 0.0,
                           mesh_h: float = float("nan")) -> VerificationRecord:
    """tr H_t <= N_dim e^{-Kt} tr P_t, with truncation accounted for conservatively."""
    if K is None:
        raise ValueError("trace inequality needs the curvature bound K")
    p_lo, p_hi = trace_bounds(spec0, t)
    h_lo, h_hi = trace_bounds(spec1, t)
    rhs = N_dim * math.exp(-K * t) * p_lo
    return make_record(
        "trace_inequality", {"t": float(t), "K": float(K), "N": int(N_dim)}, h_hi, rhs, tolerance,
        mesh_h=mesh_h,
        extra={"trace_P": p_lo, "trace_P_upper": p_hi, "trace_H": h_lo, "trace_H_upper": h_hi,
               "complete": bool(spec0.complete and spec1.complete)},
    )


def ball_volumes(M0: np.ndarray, D: np.ndarray, r: float) -> tuple[np.ndarray, np.ndarray]:
    """m[B_r(x)] for every vertex and the number of vertices in each ball."""
    inside = D <= r
    return inside.astype(float) @ M0, inside.sum(axis=1)


def _fit_exponent(P: np.ndarray, base: np.ndarray, floor: float) -> tuple[float, int]:
    ok = P > floor * float(np.max(P))
    return float(np.max(np.log(P[ok]) + base[ok])), int(ok.size - ok.sum())


def gaussian_bound_fit(spec0: SpectralData, s: SimplicialSurface, times, eps: float,
                       *, ops: DECOperators | None = None, spec1: SpectralData | None = None,
                       K: float | None = None, reference: float | None = None,
                       distances: np.ndarray | None = None,
                       floor: float = 1e-11) -> VerificationRecord:
    """Smallest C1 in the Gaussian upper bound over all vertex pairs and times.

    With ``ops`` and a complete ``spec1`` the 1-form version (block norms
    and an extra e^{-Kt}) is fitted as well. ``reference`` is a C1 from
    another refinement level; the verdict then also requires the prefactors
    e^{C1} to agree within a factor 2. Kernel values below ``floor`` times
    the kernel maximum sit at the roundoff level of the spectral sum; those
    pairs are excluded and counted.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    K = s.curvature.K if K is None and s.curvature is not None else K
    if K is None:
        raise ValueError("Gaussian bound needs K")
    C2 = 0.0 if K >= 0 else -K
    D = distance_matrix(s) if distances is None else distances
    M0 = spec0.mass
    per_t, per_t1, skipped, unresolved = {}, {}, [], {}
    for t in times:
        vol, counts = ball_volumes(M0, D, math.sqrt(t))
        if np.any(counts <= 1):
            skipped.append(float(t))
            continue
        lv = 0.5 * np.log(vol)
        gauss = D * D / ((4 + eps) * t)
        base = lv[:, None] + lv[None, :] + gauss
        G = kernel_matrix(spec0, t).G
        c, n_low = _fit_exponent(G, base, floor)
        per_t[float(t)] = c / (1 + C2 * t)
        unresolved[float(t)] = n_low
        if ops is not None and spec1 is not None and spec1.complete:
            nb = kernel_block_norm(ops, s, kernel_matrix(spec1, t))
            c, _ = _fit_exponent(nb, base + K * t, floor)
            per_t1[float(t)] = c / (1 + C2 * t)
    if not per_t:
        raise ValueError("every time was too small: balls contain only their centre")
    c1 = max(per_t.values())
    ok = math.isfinite(c1)
    extra = {"per_t": per_t, "C2": C2, "skipped_times": skipped, "eps": float(eps),
             "noise_floor": floor, "unresolved_pairs": unresolved}
    if per_t1:
        c1_forms = max(per_t1.values())
        extra["C1_forms"] = c1_forms
        extra["per_t_forms"] = per_t1
        ok = ok and math.isfinite(c1_forms)
    if reference is not None:
        extra["reference"] = float(reference)
        extra["prefactor_ratio"] = math.exp(abs(c1 - reference))
        ok = ok and abs(c1 - reference) <= math.log(2.0)
    return make_record("gaussian_bound", {"eps": float(eps)}, c1, c1, 0.0,
                       slack=0.0 if ok else -math.inf, mesh_h=s.mesh_size(), extra=extra)


# ---------------------------------------------------------------------- export


def export_kernel(k: KernelMatrix, path: str | Path) -> None:
    """Row-major float64 matrix preceded by (int64 degree, float64 t); JSON summary alongside."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(KERNEL_HEADER.pack(k.degree, k.t))
        fh.write(np.ascontiguousarray(k.G, dtype="<f8").tobytes())
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(k.summary(), indent=2, sort_keys=True))


def import_kernel(path: str | Path, mass: np.ndarray) -> KernelMatrix:
    raw = Path(path).read_bytes()
    degree, t = KERNEL_HEADER.unpack_from(raw)
    body = np.frombuffer(raw, dtype="<f8", offset=KERNEL_HEADER.size)
    n = int(round(math.sqrt(body.size)))
    if n * n != body.size or n != len(mass):
        raise ValueError("kernel file does not hold a square matrix of the expected size")
    return KernelMatrix(int(degree), float(t), body.reshape(n, n).copy(), np.asarray(mass, float))
