"""Generalized eigenproblems L x = λ M x for the function and 1-form Laplacians."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as splinalg

from .calculus import DECOperators, Form, energy_array, pointwise_norm_array
from .complex import SimplicialSurface, diameter_estimate
from .records import VerificationRecord, make_record

log = logging.getLogger(__name__)

DENSE_LIMIT = 5000


class AmbiguousClusterError(ValueError):
    """The zero-cluster tolerance does not sit in a spectral gap."""


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Ascending eigenvalues with mass-orthonormal eigenvector columns.

    ``complete`` marks a full spectrum; ``lambda_max`` is exact when
    complete and an iterative estimate otherwise.
    """

    degree: int
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residual_bound: float
    complete: bool
    dim: int
    lambda_max: float
    mass: np.ndarray | None = None

    @property
    def count(self) -> int:
        return len(self.eigenvalues)

    def vector(self, i: int) -> Form:
        return Form(self.degree, self.eigenvectors[:, i])


def eigensolve(
    ops: DECOperators,
    degree: int,
    count: int | None = None,
    method: str = "auto",
    tol: float = 1e-13,
) -> SpectralData:
    """Solve the pencil (stiffness, mass) for ``degree`` 0 or 1.

    ``count=None`` asks for the whole spectrum. The dense path is used when
    the problem has at most ``DENSE_LIMIT`` unknowns; larger problems need an
    explicit ``count`` and go through shift-invert Lanczos.
    """
    if degree not in (0, 1):
        raise ValueError("eigensolve handles degrees 0 and 1")
    K = ops.stiffness(degree)
    m = ops.mass(degree)
    if np.any(m <= 0):
        raise ValueError(f"mass matrix for degree {degree} is not positive (non-Delaunay mesh?)")
    n = len(m)
    if count is not None:
        count = int(count)
        if count < 1:
            raise ValueError("count must be positive")
        count = min(count, n)
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "iterative"
    if method == "dense":
        if n > DENSE_LIMIT:
            raise ValueError(f"dense eigensolve capped at {DENSE_LIMIT} unknowns, got {n}")
        vals, vecs = _dense(K, m, count)
        lam_max = float(vals[-1]) if count is None or count == n else _lambda_max(K, m)
        complete = count is None or count == n
    elif method == "iterative":
        if count is None or count >= n - 1:
            raise ValueError("iterative eigensolve needs a partial count below the dimension")
        vals, vecs = _iterative(K, m, count, tol)
        lam_max = _lambda_max(K, m)
        complete = False
    else:
        raise ValueError(f"unknown method {method!r}")

    resid = K @ vecs - vecs * m[:, None] * vals[None, :]
    residual = float(np.max(np.linalg.norm(resid, axis=0))) if len(vals) else 0.0
    return SpectralData(degree, vals, vecs, residual, complete, n, lam_max, m.copy())


def _dense(K, m, count):
    s = 1.0 / np.sqrt(m)
    A = K.toarray() if sparse.issparse(K) else np.asarray(K)
    A = A * s[:, None] * s[None, :]
    A = 0.5 * (A + A.T)
    if count is None or count == len(m):
        vals, y = linalg.eigh(A)
    else:
        vals, y = linalg.eigh(A, subset_by_index=[0, count - 1])
    return vals, y * s[:, None]


def _iterative(K, m, count, tol):
    n = len(m)
    diag_ratio = K.diagonal() / m
    sigma = -1e-3 * float(np.mean(diag_ratio))
    M = sparse.diags(m).tocsc()
    # padding: Lanczos can drop members of a tight cluster cut at the boundary
    k = min(n - 2, count + max(10, count // 5))
    ncv = min(n - 1, max(2 * k + 1, k + 32))
    vals, vecs = splinalg.eigsh(
        K.tocsc(), k=k, M=M, sigma=sigma, which="LM", tol=tol, ncv=ncv, maxiter=20 * n
    )
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    # re-orthonormalise against M (clusters come back slightly mixed)
    G = vecs.T @ (vecs * m[:, None])
    Lc = np.linalg.cholesky(0.5 * (G + G.T))
    vecs = linalg.solve_triangular(Lc, vecs.T, lower=True).T
    # Rayleigh-Ritz in the span to restore exact eigen-ordering
    H = vecs.T @ (K @ vecs)
    rv, ry = linalg.eigh(0.5 * (H + H.T))
    return rv[:count], vecs @ ry[:, :count]


def _lambda_max(K, m):
    try:
        v = splinalg.eigsh(K.tocsc(), k=1, M=sparse.diags(m).tocsc(), which="LA", tol=1e-8,
                           return_eigenvectors=False, maxiter=10 * len(m))
        return float(v[0])
    except splinalg.ArpackNoConvergence:
        return float(np.max(np.asarray(abs(K).sum(axis=1)).ravel() / m))


def check_invariants(spec: SpectralData, ops: DECOperators) -> VerificationRecord:
    """Ordering, M-orthonormality, residual bound and eigenspace orthogonality."""
    lam = spec.eigenvalues
    m = ops.mass(spec.degree)
    scale = max(spec.lambda_max, 1.0)
    G = spec.eigenvectors.T @ (spec.eigenvectors * m[:, None])
    orth = float(np.max(np.abs(G - np.eye(spec.count))))
    sorted_ok = bool(np.all(np.diff(lam) >= 0))
    nonneg = float(lam.min()) >= -1e-10 * scale
    resid_ok = spec.residual_bound <= 1e-8 * scale
    ok = sorted_ok and nonneg and resid_ok and orth <= 1e-10
    return make_record(
        f"eigen_invariants_deg{spec.degree}",
        {"degree": spec.degree, "count": spec.count},
        orth, 1e-10, 0.0,
        slack=0.0 if ok else -1.0,
        mesh_h=ops.mesh_h,
        extra={
            "orthonormality_error": orth,
            "sorted": sorted_ok,
            "min_eigenvalue": float(lam.min()),
            "residual_bound": spec.residual_bound,
            "lambda_max": spec.lambda_max,
        },
    )


def harmonic_dimension(spec1: SpectralData, tol: float | None = None) -> int:
    """Number of eigenvalues below ``tol`` (default 1e-6 * λ_max).

    Raises ``AmbiguousClusterError`` when an eigenvalue lies within a factor
    100 of the threshold, i.e. when ``tol`` does not sit in a clear gap.
    """
    lam = spec1.eigenvalues
    if tol is None:
        tol = 1e-6 * spec1.lambda_max
    near = lam[(lam > tol / 100.0) & (lam < tol * 100.0)]
    if near.size:
        raise AmbiguousClusterError(
            f"eigenvalue {near[0]:.6g} within a factor 100 of the zero-cluster tolerance {tol:.3g}"
        )
    k = int(np.sum(lam < tol))
    if not spec1.complete and k == spec1.count:
        raise AmbiguousClusterError("every computed eigenvalue is below tol; request more eigenpairs")
    return k


def positive_part(spec: SpectralData, tol: float | None = None) -> np.ndarray:
    if tol is None:
        tol = 1e-6 * spec.lambda_max
    return np.flatnonzero(spec.eigenvalues >= tol)


def weyl_residual(ops: DECOperators, w: Form, lam: float) -> float:
    """||Δw - λw||_M1 / ||w||_M1."""
    if w.degree != 1:
        raise ValueError("weyl_residual expects a 1-form")
    x = w.values
    nrm = np.sqrt(x @ (ops.M1 * x))
    if nrm == 0:
        raise ValueError("weyl_residual of the zero form")
    r = ops.L1_hodge @ x - lam * x
    return float(np.sqrt(r @ (ops.M1 * r)) / nrm)


def spectral_inclusion_check(
    spec0: SpectralData, spec1: SpectralData, tol: float = 1e-8, ops: DECOperators | None = None
) -> VerificationRecord:
    """Every positive function eigenvalue reappears in the 1-form spectrum.

    With ``ops`` the normalised differentials dφ/||dφ|| are also tested as
    1-form eigenvectors through their Weyl residual.
    """
    lam0 = spec0.eigenvalues
    pos = np.flatnonzero(lam0 > tol * max(1.0, spec0.lambda_max))
    lam1 = spec1.eigenvalues
    top = np.inf if spec1.complete else float(lam1.max(initial=-np.inf))
    decidable = pos[lam0[pos] <= top * (1 + tol)] if np.isfinite(top) else pos
    undecidable = lam0[np.setdiff1d(pos, decidable)]
    mismatch = 0.0
    for i in decidable:
        j = np.argmin(np.abs(lam1 - lam0[i]))
        mismatch = max(mismatch, abs(lam1[j] - lam0[i]) / lam0[i])
    resid = 0.0
    if ops is not None:
        for i in decidable:
            w = ops.d0 @ spec0.eigenvectors[:, i]
            resid = max(resid, weyl_residual(ops, Form(1, w), lam0[i]))
    worst = max(mismatch, resid)
    return make_record(
        "spectral_inclusion",
        {"tol": tol},
        worst, tol, tol, slack=tol - worst if decidable.size else tol,
        mesh_h=ops.mesh_h if ops is not None else float("nan"),
        extra={
            "checked": int(decidable.size),
            "max_relative_mismatch": mismatch,
            "max_transfer_residual": resid,
            "undecidable_range": [float(undecidable.min()), float(undecidable.max())] if undecidable.size else [],
        },
    )


def spectral_gap_chain(
    spec0: SpectralData,
    spec1: SpectralData,
    K: float | None,
    mesh_h: float = float("nan"),
    c: float = 1.0,
    trusted: bool = True,
) -> VerificationRecord:
    """inf σ(-Δ+K) <= inf σ(Δ1) <= inf σ(Δ1)\\{0} <= inf σ(-Δ)\\{0}.

    The first link is continuum-valid and asserted with tolerance c*h; the
    last one is an exact discrete consequence of the intertwining identity
    and asserted at 1e-8.
    """
    if K is None:
        raise ValueError("spectral_gap_chain needs the curvature bound K")
    tol0 = 1e-6 * spec0.lambda_max
    tol1 = 1e-6 * spec1.lambda_max
    inf0 = float(spec0.eigenvalues[0])
    inf1 = float(spec1.eigenvalues[0])
    pos0 = spec0.eigenvalues[spec0.eigenvalues >= tol0]
    pos1 = spec1.eigenvalues[spec1.eigenvalues >= tol1]
    gap0 = float(pos0[0]) if pos0.size else np.inf
    gap1 = float(pos1[0]) if pos1.size else np.inf
    link1 = inf1 - (inf0 + K)
    link2 = gap1 - inf1
    link3 = gap0 - gap1
    tol_h = c * mesh_h if np.isfinite(mesh_h) else 0.0
    ok1 = link1 >= -tol_h
    ok3 = link3 >= -1e-8
    return make_record(
        "spectral_gap_chain",
        {"K": K, "c": c},
        inf0 + K, inf1, tol_h,
        slack=0.0 if (ok1 and ok3) else min(link1 + tol_h, link3 + 1e-8) - tol_h,
        diagnostic=not trusted,
        mesh_h=mesh_h,
        extra={
            "inf_shifted_function_spectrum": inf0 + K,
            "inf_form_spectrum": inf1,
            "form_gap": gap1,
            "function_gap": gap0,
            "slack_link1": link1,
            "slack_link2": link2,
            "slack_link3": link3,
            "tol_link1": tol_h,
        },
    )


def harmonic_projection(spec1: SpectralData, tol: float | None = None) -> np.ndarray:
    """Columns spanning the harmonic forms (M1-orthonormal)."""
    k = harmonic_dimension(spec1, tol)
    return spec1.eigenvectors[:, :k]


def poincare_check(
    spec1: SpectralData, ops: DECOperators, samples: int = 20, seed: int = 0, forms: np.ndarray | None = None
) -> VerificationRecord:
    """||ω - Tω||^2 <= 2C E(ω) with C = 1/λ+ and T the harmonic projection."""
    k = harmonic_dimension(spec1)
    if k >= spec1.count:
        raise ValueError("no nonzero eigenvalue available")
    lam_plus = float(spec1.eigenvalues[k])
    C = 1.0 / lam_plus
    H = spec1.eigenvectors[:, :k]
    m = ops.M1
    if forms is None:
        rng = np.random.default_rng(seed)
        forms = rng.standard_normal((ops.n_edges, samples))
    X = np.atleast_2d(forms.T).T
    proj = H @ (H.T @ (X * m[:, None])) if k else np.zeros_like(X)
    R = X - proj
    lhs = np.einsum("ij,i,ij->j", R, m, R)
    rhs = 2 * C * energy_array(ops, X)
    rel = (lhs - rhs) / np.maximum(np.einsum("ij,i,ij->j", X, m, X), 1e-300)
    worst = float(rel.max()) if rel.size else 0.0
    nonzero = spec1.eigenvalues[k:]
    eig_ok = bool(np.all(nonzero >= 1.0 / C * (1 - 1e-12)))
    return make_record(
        "poincare",
        {"samples": int(X.shape[1]), "seed": seed},
        float(lhs.max(initial=0.0)), float(rhs.max(initial=0.0)), 1e-10,
        slack=-worst if eig_ok else -np.inf,
        mesh_h=ops.mesh_h, seed=seed,
        extra={"C": C, "lambda_plus": lam_plus, "harmonic_dim": k, "eigenvalue_bound_ok": eig_ok},
    )


def eigenform_growth_check(
    spec1: SpectralData,
    ops: DECOperators,
    s: SimplicialSurface,
    N: float,
    count: int | None = 60,
    trusted: bool = True,
) -> VerificationRecord:
    """Fit log ||ω||_∞ against log λ over unit eigenforms; pass if slope <= N/4 + 0.15."""
    if N is None:
        raise ValueError("eigenform_growth_check needs the dimension bound N")
    D = diameter_estimate(s)
    k = harmonic_dimension(spec1)
    lam = spec1.eigenvalues
    idx = np.arange(k, spec1.count if count is None else min(spec1.count, k + count))
    idx = idx[lam[idx] >= 1.0 / D**2]
    if idx.size < 10:
        raise ValueError(f"insufficient data: {idx.size} usable eigenpairs, need at least 10")
    V = spec1.eigenvectors[:, idx]
    V = V / np.sqrt(np.einsum("ij,i,ij->j", V, ops.M1, V))[None, :]
    sup = pointwise_norm_array(ops, V).max(axis=0)
    slope, intercept = np.polyfit(np.log(lam[idx]), np.log(sup), 1)
    bound = N / 4.0 + 0.15
    return make_record(
        "eigenform_growth",
        {"N": N, "count": int(idx.size)},
        float(slope), bound, 0.0,
        diagnostic=not trusted,
        mesh_h=ops.mesh_h,
        extra={"intercept": float(intercept), "diameter": D, "reference_exponent": N / 4.0},
    )


def minmax_check(
    spec1: SpectralData, ops: DECOperators, trials: int = 100, seed: int = 0, dims: tuple[int, ...] = (1, 2, 3)
) -> VerificationRecord:
    """λ_i = min over i-dim subspaces of max 2E on the unit sphere.

    Random subspaces (half pure noise, half small perturbations of the
    leading eigenspace) must give values >= λ_i - 1e-8 * scale, and the
    leading eigenspace must reach λ_i to 1e-10 * scale.
    """
    rng = np.random.default_rng(seed)
    lam = spec1.eigenvalues
    K = ops.stiffness(spec1.degree)
    m = ops.mass(spec1.degree)
    n = len(m)
    scale = max(1.0, float(lam[max(dims) - 1]))
    worst_random = np.inf
    worst_achiever = 0.0
    for i in dims:
        if i > spec1.count:
            raise ValueError(f"subspace dimension {i} exceeds computed eigenpairs")
        target = lam[i - 1]
        Phi = spec1.eigenvectors[:, :i]
        worst_achiever = max(worst_achiever, abs(_pencil_max(K, m, Phi) - target) / scale)
        for trial in range(trials):
            if trial % 2 == 0:
                Y = rng.standard_normal((n, i))
            else:
                eps = 10.0 ** rng.uniform(-6, -1)
                Y = Phi + eps * rng.standard_normal((n, i)) / np.sqrt(m)[:, None] / np.sqrt(n)
            val = _pencil_max(K, m, Y)
            worst_random = min(worst_random, (val - target) / scale)
    ok = worst_achiever <= 1e-10
    return make_record(
        "minmax",
        {"trials": trials, "seed": seed, "dims": ",".join(map(str, dims))},
        -worst_random, 1e-8, 1e-8,
        slack=worst_random if ok else -np.inf,
        mesh_h=ops.mesh_h, seed=seed,
        extra={"achiever_error": worst_achiever, "min_random_excess": worst_random},
    )


def _pencil_max(K, m, Y) -> float:
    A = Y.T @ (K @ Y)
    B = Y.T @ (Y * m[:, None])
    return float(linalg.eigh(0.5 * (A + A.T), 0.5 * (B + B.T), eigvals_only=True)[-1])


def spectrum_rows(spec: SpectralData) -> list[tuple[int, float]]:
    return [(i, float(v)) for i, v in enumerate(spec.eigenvalues)]
