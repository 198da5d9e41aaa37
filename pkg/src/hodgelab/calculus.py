"""Discrete exterior calculus on a triangulated surface.

Forms are coefficient vectors on vertices (degree 0), edges (degree 1) and
faces (degree 2). Inner products are diagonal:

    <a, b>_0 = a^T M0 b   (barycentric dual areas)
    <a, b>_1 = a^T M1 b   (cotangent weights, dual/primal length ratio)
    <a, b>_2 = a^T M2 b   (inverse triangle areas)

The codifferential is the adjoint of d for these pairings, so
delta d f = M0^{-1} L0 f = -Δf with L0 = d0^T M1 d0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .complex import SimplicialSurface, SurfaceError, is_delaunay


@dataclass(frozen=True, eq=False)
class Form:
    degree: int
    values: np.ndarray

    def __post_init__(self):
        if self.degree not in (0, 1, 2):
            raise ValueError(f"form degree must be 0, 1 or 2, got {self.degree}")
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __add__(self, other: "Form") -> "Form":
        _same_degree(self, other)
        return Form(self.degree, self.values + other.values)

    def __sub__(self, other: "Form") -> "Form":
        _same_degree(self, other)
        return Form(self.degree, self.values - other.values)

    def __mul__(self, c: float) -> "Form":
        return Form(self.degree, c * self.values)

    __rmul__ = __mul__

    def __neg__(self) -> "Form":
        return Form(self.degree, -self.values)


def _same_degree(a: Form, b: Form) -> None:
    if a.degree != b.degree:
        raise ValueError(f"degree mismatch: {a.degree} vs {b.degree}")


@dataclass(frozen=True, eq=False)
class DECOperators:
    d0: sparse.csr_matrix
    d1: sparse.csr_matrix
    M0: np.ndarray
    M1: np.ndarray
    M2: np.ndarray
    L0: sparse.csr_matrix
    L1_hodge: sparse.csr_matrix
    S1: sparse.csr_matrix
    whitney: sparse.csr_matrix
    vertex_face: sparse.csr_matrix
    frames: sparse.csr_matrix
    positive_weights: bool
    delaunay: bool
    mesh_h: float
    level: int | None

    @property
    def n_vertices(self) -> int:
        return self.d0.shape[1]

    @property
    def n_edges(self) -> int:
        return self.d0.shape[0]

    @property
    def n_faces(self) -> int:
        return self.d1.shape[0]

    @property
    def total_area(self) -> float:
        return float(self.M0.sum())

    def size(self, degree: int) -> int:
        return (self.n_vertices, self.n_edges, self.n_faces)[degree]

    def mass(self, degree: int) -> np.ndarray:
        return (self.M0, self.M1, self.M2)[degree]

    def stiffness(self, degree: int) -> sparse.csr_matrix:
        """Symmetric stiffness of the pencil (stiffness, mass) for degree 0 or 1."""
        if degree == 0:
            return self.L0
        if degree == 1:
            return self.S1
        raise ValueError("stiffness is defined for degrees 0 and 1")

    def generator(self, degree: int) -> sparse.csr_matrix:
        """Nonnegative generator A with heat flow exp(-tA): M0^{-1} L0 or the Hodge Laplacian."""
        if degree == 0:
            return sparse.diags(1.0 / self.M0) @ self.L0
        if degree == 1:
            return self.L1_hodge
        raise ValueError("generator is defined for degrees 0 and 1")

    @property
    def trusted(self) -> bool:
        """Inequality verdicts may be asserted (positive cotangent weights)."""
        return self.positive_weights and self.delaunay


def build_dec(s: SimplicialSurface) -> DECOperators:
    """Assemble incidence matrices, diagonal Hodge stars and both Laplacians."""
    nv, ne, nf = s.n_vertices, s.n_edges, s.n_faces
    e = s.edges
    rows = np.repeat(np.arange(ne), 2)
    d0 = sparse.csr_matrix(
        (np.tile([-1.0, 1.0], ne), (rows, e.ravel())), shape=(ne, nv)
    )
    d1 = sparse.csr_matrix(
        (s.triangle_edge_signs.ravel().astype(float), (np.repeat(np.arange(nf), 3), s.triangle_edges.ravel())),
        shape=(nf, ne),
    )

    p = s.corners()
    normal = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    dbl_area = np.linalg.norm(normal, axis=1)
    scale = s.mesh_size()
    if np.any(dbl_area <= 1e-14 * scale**2):
        raise SurfaceError(f"degenerate triangle (zero area) at face {int(np.argmin(dbl_area))}")
    area = 0.5 * dbl_area
    unit_n = normal / dbl_area[:, None]

    # cotangent of the angle at corner k, assigned to the opposite edge slot (k+1) % 3
    weights = np.zeros(ne)
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        w = p[:, (k + 2) % 3] - p[:, k]
        cot = np.einsum("ij,ij->i", u, w) / dbl_area
        np.add.at(weights, s.triangle_edges[:, (k + 1) % 3], 0.5 * cot)

    M0 = np.zeros(nv)
    np.add.at(M0, s.triangles.ravel(), np.repeat(area / 3.0, 3))
    M1 = weights
    M2 = 1.0 / area

    L0 = (d0.T @ sparse.diags(M1) @ d0).tocsr()
    positive = bool(np.all(M1 > 0))
    inv_m1 = np.where(M1 != 0, 1.0 / np.where(M1 != 0, M1, 1.0), 0.0)
    exact_part = d0 @ sparse.diags(1.0 / M0) @ d0.T @ sparse.diags(M1)
    coexact_part = sparse.diags(inv_m1) @ d1.T @ sparse.diags(M2) @ d1
    L1 = (exact_part + coexact_part).tocsr()
    S1 = (sparse.diags(M1) @ d0 @ sparse.diags(1.0 / M0) @ d0.T @ sparse.diags(M1) + d1.T @ sparse.diags(M2) @ d1).tocsr()
    S1 = (0.5 * (S1 + S1.T)).tocsr()

    whitney = _whitney_operator(s, p, unit_n, dbl_area)
    vf = sparse.csr_matrix(
        (np.repeat(area / 3.0, 3), (s.triangles.ravel(), np.repeat(np.arange(nf), 3))), shape=(nv, nf)
    )
    frames = _vertex_frames(s, unit_n, area, vf, M0)

    return DECOperators(
        d0=d0, d1=d1, M0=M0, M1=M1, M2=M2, L0=L0, L1_hodge=L1, S1=S1,
        whitney=whitney, vertex_face=vf, frames=frames,
        positive_weights=positive, delaunay=is_delaunay(s),
        mesh_h=scale, level=s.level,
    )


def _whitney_operator(s, p, unit_n, dbl_area) -> sparse.csr_matrix:
    """(3F, E) map from edge coefficients to the Whitney field at each barycentre.

    Rows are component-major: row c*F + f holds component c of face f.
    For closed 1-forms the field is constant on the face and reproduces the
    edge line integrals exactly.
    """
    nf = s.n_faces
    # grad λ_k = n × (p_{k+2} - p_{k+1}) / (2A)
    grads = [np.cross(unit_n, p[:, (k + 2) % 3] - p[:, (k + 1) % 3]) / dbl_area[:, None] for k in range(3)]
    rows, cols, vals = [], [], []
    for slot in range(3):
        i, j = slot, (slot + 1) % 3
        vec = (grads[j] - grads[i]) / 3.0 * s.triangle_edge_signs[:, slot][:, None]
        for c in range(3):
            rows.append(c * nf + np.arange(nf))
            cols.append(s.triangle_edges[:, slot])
            vals.append(vec[:, c])
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(3 * nf, s.n_edges)
    )


def _vertex_frames(s, unit_n, area, vf, M0) -> sparse.csr_matrix:
    """(2V, 3F) linear reconstruction: area-weighted face vectors projected to a vertex tangent frame.

    Row 2v + a gives frame component a at vertex v.
    """
    nv, nf = s.n_vertices, s.n_faces
    vn = np.zeros((nv, 3))
    for c in range(3):
        vn[:, c] = vf @ unit_n[:, c]
    vn /= np.linalg.norm(vn, axis=1, keepdims=True)
    # deterministic tangent frame: Gram-Schmidt against the least-aligned axis
    axis = np.eye(3)[np.argmin(np.abs(vn), axis=1)]
    e1 = axis - np.einsum("ij,ij->i", axis, vn)[:, None] * vn
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(vn, e1)
    avg = sparse.diags(1.0 / M0) @ vf  # (V, F) weights summing to 1 per row
    avg = avg.tocoo()
    rows, cols, vals = [], [], []
    for a, basis in enumerate((e1, e2)):
        for c in range(3):
            rows.append(2 * avg.row + a)
            cols.append(c * nf + avg.col)
            vals.append(avg.data * basis[avg.row, c])
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(2 * nv, 3 * nf)
    )


# ------------------------------------------------------------------ operators


def _check_degree(form: Form, allowed: tuple[int, ...], op: str) -> None:
    if form.degree not in allowed:
        raise ValueError(f"{op} is not defined on degree-{form.degree} forms")


def exterior_derivative(ops: DECOperators, f: Form) -> Form:
    _check_degree(f, (0, 1), "exterior_derivative")
    d = ops.d0 if f.degree == 0 else ops.d1
    return Form(f.degree + 1, d @ f.values)


def codifferential(ops: DECOperators, w: Form) -> Form:
    """Adjoint of d: M0^{-1} d0^T M1 on 1-forms, M1^{-1} d1^T M2 on 2-forms."""
    _check_degree(w, (1, 2), "codifferential")
    return Form(w.degree - 1, codiff_array(ops, w.degree, w.values))


def codiff_array(ops: DECOperators, degree: int, x: np.ndarray) -> np.ndarray:
    if degree == 1:
        return _scale_rows(ops.d0.T @ _scale_rows(x, ops.M1), 1.0 / ops.M0)
    if not ops.positive_weights:
        raise ValueError("codifferential on 2-forms needs nonzero cotangent weights")
    return _scale_rows(ops.d1.T @ _scale_rows(x, ops.M2), 1.0 / ops.M1)


def _scale_rows(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    return x * w if x.ndim == 1 else x * w[:, None]


def hodge_laplacian(ops: DECOperators, w: Form) -> Form:
    """(d delta + delta d) on 1-forms."""
    _check_degree(w, (1,), "hodge_laplacian")
    return Form(1, ops.L1_hodge @ w.values)


def hodge_energy(ops: DECOperators, w: Form) -> float:
    """E(w) = (|dw|^2 + |delta w|^2) / 2 in the M2 and M0 norms."""
    _check_degree(w, (1,), "hodge_energy")
    return float(energy_array(ops, w.values))


def energy_array(ops: DECOperators, x: np.ndarray) -> np.ndarray | float:
    dx = ops.d1 @ x
    sx = codiff_array(ops, 1, x)
    if x.ndim == 1:
        return 0.5 * (dx @ (ops.M2 * dx) + sx @ (ops.M0 * sx))
    return 0.5 * (np.einsum("ij,i,ij->j", dx, ops.M2, dx) + np.einsum("ij,i,ij->j", sx, ops.M0, sx))


def inner(ops: DECOperators, a: Form, b: Form) -> float:
    _same_degree(a, b)
    return float(a.values @ (ops.mass(a.degree) * b.values))


def mass_norm(ops: DECOperators, f: Form) -> float:
    return float(np.sqrt(max(inner(ops, f, f), 0.0)))


# ------------------------------------------------------- pointwise quantities


def face_vectors(ops: DECOperators, x: np.ndarray) -> np.ndarray:
    """Whitney barycentre vectors: (F, 3) for one form, (F, 3, k) for k columns."""
    nf = ops.n_faces
    u = ops.whitney @ x
    if x.ndim == 1:
        return u.reshape(3, nf).T
    return u.reshape(3, nf, -1).transpose(1, 0, 2)


def pointwise_sq_array(ops: DECOperators, x: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
    """Vertex field of <x, y> (default |x|^2): dual-area-weighted mean over incident faces."""
    ux = face_vectors(ops, x)
    uy = ux if y is None else face_vectors(ops, y)
    per_face = np.sum(ux * uy, axis=1)
    return _scale_rows(ops.vertex_face @ per_face, 1.0 / ops.M0)


def pointwise_norm_array(ops: DECOperators, x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.maximum(pointwise_sq_array(ops, x), 0.0))


def pointwise_norm(ops: DECOperators, s: SimplicialSurface | None, w: Form) -> Form:
    """|w| at vertices from the Whitney reconstruction (RMS over incident faces)."""
    _check_degree(w, (1,), "pointwise_norm")
    return Form(0, pointwise_norm_array(ops, w.values))


def pointwise_inner(ops: DECOperators, a: Form, b: Form) -> Form:
    _check_degree(a, (1,), "pointwise_inner")
    _check_degree(b, (1,), "pointwise_inner")
    return Form(0, pointwise_sq_array(ops, a.values, b.values))


def vertex_vectors(ops: DECOperators, x: np.ndarray) -> np.ndarray:
    """Linear tangent-frame reconstruction at vertices: (V, 2) or (V, 2, k)."""
    nf = ops.n_faces
    u = ops.whitney @ x
    r = ops.frames @ u
    if x.ndim == 1:
        return r.reshape(-1, 2)
    return r.reshape(-1, 2, x.shape[1])


def lp_norm_array(ops: DECOperators, values: np.ndarray, p: float) -> np.ndarray | float:
    """L^p norm of nonnegative vertex values against M0; columns are separate fields."""
    if p < 1:
        raise ValueError("p must be >= 1")
    a = np.abs(values)
    if np.isinf(p):
        return a.max(axis=0)
    if values.ndim == 1:
        return float(np.sum(a**p * ops.M0) ** (1.0 / p))
    return np.sum(a**p * ops.M0[:, None], axis=0) ** (1.0 / p)


def lp_norm(ops: DECOperators, form: Form, p: float) -> float:
    """L^p norm; 1-forms use the pointwise norm composed with the vertex measure."""
    if p < 1:
        raise ValueError("p must be >= 1")
    if form.degree == 0:
        vals = form.values
    elif form.degree == 1:
        vals = pointwise_norm_array(ops, form.values)
    else:
        raise ValueError("lp_norm is defined for degrees 0 and 1")
    return float(lp_norm_array(ops, vals, p))


def l2_equivalence_ratio(ops: DECOperators, w: Form) -> float:
    """Vertex-quadrature L^2 norm of |w| divided by the M1 norm (1 for exact forms)."""
    _check_degree(w, (1,), "l2_equivalence_ratio")
    m1 = mass_norm(ops, w)
    if m1 == 0:
        return 1.0
    return lp_norm(ops, w, 2.0) / m1


def coordinate_form(s: SimplicialSurface, axis: int) -> Form:
    """Edge increments of a coordinate: closed, and harmonic on the flat torus."""
    return Form(1, s.edge_vectors()[:, axis])
