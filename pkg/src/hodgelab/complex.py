"""Model surfaces: generation, OFF input/output, validation and edge-graph distances."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

MAX_ICOSPHERE_LEVEL = 7


class SurfaceError(ValueError):
    """Raised for meshes that cannot be used as closed oriented surfaces."""


class SurfaceFormatError(SurfaceError):
    """Parse failure in an OFF file or sidecar; ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class CurvatureConstants:
    K: float
    N: float


@dataclass(frozen=True, eq=False)
class SimplicialSurface:
    """Closed oriented triangulated surface.

    ``periods`` is set for flat tori stored in the unit cell: vertex
    positions are taken modulo the lattice and each triangle is unwrapped
    around its first corner before any metric quantity is computed.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    curvature: CurvatureConstants | None = None
    name: str = "surface"
    level: int | None = None
    periods: tuple[float, float] | None = None
    edges: np.ndarray = field(init=False, repr=False)
    triangle_edges: np.ndarray = field(init=False, repr=False)
    triangle_edge_signs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise SurfaceError("vertices must be an (n, 3) array")
        if t.ndim != 2 or t.shape[1] != 3:
            raise SurfaceError("triangles must be an (m, 3) array")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise SurfaceError("triangle index out of range")
        v.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

        # half-edges (a->b) in face order (0,1), (1,2), (2,0)
        a = t.ravel()
        b = np.roll(t, -1, axis=1).ravel()
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        keys = np.stack([lo, hi], axis=1)
        edges, inverse = np.unique(keys, axis=0, return_inverse=True)
        edges.flags.writeable = False
        tri_edges = inverse.reshape(-1, 3)
        signs = np.where(a < b, 1, -1).reshape(-1, 3)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "triangle_edges", tri_edges)
        object.__setattr__(self, "triangle_edge_signs", signs)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_faces(self) -> int:
        return len(self.triangles)

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    def corners(self) -> np.ndarray:
        """(F, 3, 3) corner positions, unwrapped for periodic surfaces."""
        p = self.vertices[self.triangles]
        if self.periods is None:
            return p
        p = p.copy()
        lat = np.array([self.periods[0], self.periods[1], 0.0])
        for k in (1, 2):
            delta = p[:, k] - p[:, 0]
            delta[:, :2] -= lat[:2] * np.round(delta[:, :2] / lat[:2])
            p[:, k] = p[:, 0] + delta
        return p

    def edge_vectors(self) -> np.ndarray:
        """(E, 3) displacement from the low-index to the high-index endpoint."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        if self.periods is not None:
            lat = np.array(self.periods)
            d = d.copy()
            d[:, :2] -= lat * np.round(d[:, :2] / lat)
        return d

    def edge_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.edge_vectors(), axis=1)

    def mesh_size(self) -> float:
        return float(self.edge_lengths().max())

    def triangle_areas(self) -> np.ndarray:
        p = self.corners()
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.triangles, dtype="<i8").tobytes())
        if self.periods is not None:
            h.update(np.asarray(self.periods, dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    def with_triangles(self, triangles: np.ndarray) -> "SimplicialSurface":
        return SimplicialSurface(
            self.vertices, triangles, self.curvature, self.name, self.level, self.periods
        )


# --------------------------------------------------------------------- models


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def make_icosphere(subdivisions: int) -> SimplicialSurface:
    """Unit sphere from repeated midpoint subdivision of the icosahedron.

    Carries K = 1, N = 2 (constant curvature 1 in dimension 2).
    """
    s = int(subdivisions)
    if s < 0:
        raise ValueError("subdivisions must be nonnegative")
    if s > MAX_ICOSPHERE_LEVEL:
        raise ValueError(f"subdivision cap exceeded: {s} > {MAX_ICOSPHERE_LEVEL}")
    verts, faces = _icosahedron()
    for _ in range(s):
        verts, faces = _subdivide(verts, faces)
        verts = verts / np.linalg.norm(verts, axis=1, keepdims=True)
    return SimplicialSurface(verts, faces, CurvatureConstants(1.0, 2.0), f"icosphere-{s}", s)


def _subdivide(verts: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = faces.ravel()
    b = np.roll(faces, -1, axis=1).ravel()
    keys = np.stack([np.minimum(a, b), np.maximum(a, b)], axis=1)
    edges, inverse = np.unique(keys, axis=0, return_inverse=True)
    mids = 0.5 * (verts[edges[:, 0]] + verts[edges[:, 1]])
    m = (inverse.reshape(-1, 3) + len(verts)).astype(np.int64)
    v0, v1, v2 = faces.T
    m01, m12, m20 = m.T
    new = np.concatenate(
        [
            np.stack([v0, m01, m20], 1),
            np.stack([v1, m12, m01], 1),
            np.stack([v2, m20, m12], 1),
            np.stack([m01, m12, m20], 1),
        ]
    )
    return np.vstack([verts, mids]), new


def make_flat_torus(n: int, m: int) -> SimplicialSurface:
    """Flat unit-square torus R^2/Z^2 on an n x m periodic grid, 2 triangles per cell.

    Row j is shifted by j*q/(m*n) with q = ceil(m/2), so consecutive rows are
    offset by roughly half a cell; when n and m are within a factor 1.5 of
    each other every triangle is acute (elongated grids are not Delaunay). An unshifted
    grid would have right angles opposite every diagonal and therefore zero
    cotangent weights there. Row m wraps onto row 0 with an index offset of q.
    """
    n, m = int(n), int(m)
    if n < 3 or m < 3:
        raise ValueError("torus grid needs n, m >= 3")
    q = (m + 1) // 2
    shift = q / (m * n)
    jj, ii = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
    x = (ii / n + jj * shift) % 1.0
    y = jj / m
    verts = np.stack([x.ravel(), y.ravel(), np.zeros(n * m)], axis=1)

    def vid(i, j):
        wraps = j // m
        return ((i + wraps * q) % n) + (j % m) * n

    tris = []
    for j in range(m):
        for i in range(n):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((a, b, c))
            tris.append((b, d, c))
    return SimplicialSurface(
        verts,
        np.array(tris, dtype=np.int64),
        CurvatureConstants(0.0, 2.0),
        f"torus-{n}x{m}",
        _torus_level(n, m),
        (1.0, 1.0),
    )


def _torus_level(n: int, m: int) -> int:
    # comparable refinement index: 16x16 sits with icosphere level 3
    return max(0, int(np.floor(np.log2(min(n, m)))) - 1)


# ------------------------------------------------------------------- OFF i/o


def write_off(s: SimplicialSurface, path: str | Path) -> None:
    lines = ["OFF", f"{s.n_vertices} {s.n_faces} {s.n_edges}"]
    lines += [" ".join(repr(float(c)) for c in p) for p in s.vertices]
    lines += ["3 " + " ".join(str(int(i)) for i in t) for t in s.triangles]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
    if s.curvature is not None or s.periods is not None:
        write_sidecar(s, _sidecar_path(path))


def _sidecar_path(path: str | Path) -> Path:
    p = Path(path)
    return p.with_suffix(p.suffix + ".cfg")


def write_sidecar(s: SimplicialSurface, path: str | Path) -> None:
    out = []
    if s.curvature is not None:
        out += [f"K = {s.curvature.K!r}", f"N = {s.curvature.N!r}"]
    if s.periods is not None:
        out += [f"period_x = {s.periods[0]!r}", f"period_y = {s.periods[1]!r}"]
    if s.level is not None:
        out.append(f"level = {s.level}")
    out.append(f"name = {s.name}")
    Path(path).write_text("\n".join(out) + "\n", encoding="ascii")


def read_keyvalue(path: str | Path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SurfaceFormatError("expected 'key = value'", lineno)
        k, v = line.split("=", 1)
        values[k.strip()] = v.strip()
    return values


def load_surface(path: str | Path, sidecar: str | Path | None = None) -> SimplicialSurface:
    """Read an ASCII OFF triangle mesh and validate it as a closed oriented surface.

    Curvature constants (and torus periods) come from a ``key = value``
    sidecar; by default ``<path>.cfg`` is used when it exists.
    """
    path = Path(path)
    tokens: list[tuple[int, list[str]]] = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            tokens.append((lineno, line.split()))
    if not tokens or tokens[0][1] != ["OFF"]:
        raise SurfaceFormatError("missing 'OFF' header", tokens[0][0] if tokens else 1)
    if len(tokens) < 2:
        raise SurfaceFormatError("missing counts line", 2)
    lineno, counts = tokens[1]
    if len(counts) != 3:
        raise SurfaceFormatError("counts line needs 'n_vertices n_faces n_edges'", lineno)
    try:
        nv, nf, _ = (int(c) for c in counts)
    except ValueError:
        raise SurfaceFormatError("counts must be integers", lineno) from None
    body = tokens[2:]
    if len(body) < nv + nf:
        last = body[-1][0] + 1 if body else lineno + 1
        raise SurfaceFormatError(f"expected {nv} vertices and {nf} faces, file ends early", last)
    verts = np.empty((nv, 3))
    for k in range(nv):
        ln, parts = body[k]
        if len(parts) < 3:
            raise SurfaceFormatError("vertex line needs 3 coordinates", ln)
        try:
            verts[k] = [float(c) for c in parts[:3]]
        except ValueError:
            raise SurfaceFormatError("bad vertex coordinate", ln) from None
    faces = np.empty((nf, 3), dtype=np.int64)
    for k in range(nf):
        ln, parts = body[nv + k]
        try:
            ids = [int(c) for c in parts]
        except ValueError:
            raise SurfaceFormatError("bad face index", ln) from None
        if ids[0] != 3 or len(ids) < 4:
            raise SurfaceError(f"non-triangle face at line {ln}")
        if any(i < 0 or i >= nv for i in ids[1:4]):
            raise SurfaceFormatError("face index out of range", ln)
        faces[k] = ids[1:4]

    cfg_path = Path(sidecar) if sidecar is not None else _sidecar_path(path)
    curvature, periods, level, name = None, None, None, path.stem
    if cfg_path.exists():
        cfg = read_keyvalue(cfg_path)
        if "K" in cfg and "N" in cfg:
            curvature = CurvatureConstants(float(cfg["K"]), float(cfg["N"]))
        if "period_x" in cfg and "period_y" in cfg:
            periods = (float(cfg["period_x"]), float(cfg["period_y"]))
        if "level" in cfg:
            level = int(cfg["level"])
        name = cfg.get("name", name)

    surf = SimplicialSurface(verts, faces, curvature, name, level, periods)
    findings = validate_surface(surf)
    bad = [f for f in findings if not f.ok and f.name in ("manifold", "orientation", "nondegenerate")]
    if bad:
        raise SurfaceError("; ".join(f"{f.name}: {f.detail}" for f in bad))
    return surf


# ---------------------------------------------------------------- validation


@dataclass(frozen=True)
class Finding:
    name: str
    ok: bool
    detail: str
    value: float | None = None


def opposite_angle_sums(s: SimplicialSurface) -> np.ndarray:
    """Per edge, sum of the two angles opposite it (π marks the Delaunay limit)."""
    p = s.corners()
    sums = np.zeros(s.n_edges)
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        w = p[:, (k + 2) % 3] - p[:, k]
        cosang = np.einsum("ij,ij->i", u, w) / (np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1))
        ang = np.arccos(np.clip(cosang, -1.0, 1.0))
        # corner k faces half-edge (k+1 -> k+2), stored at slot (k+1) % 3
        np.add.at(sums, s.triangle_edges[:, (k + 1) % 3], ang)
    return sums


def validate_surface(s: SimplicialSurface) -> list[Finding]:
    out: list[Finding] = []
    edge_count = np.bincount(s.triangle_edges.ravel(), minlength=s.n_edges)
    nonmanifold = np.flatnonzero(edge_count != 2)
    if nonmanifold.size:
        e = s.edges[nonmanifold[0]]
        out.append(
            Finding(
                "manifold", False,
                f"{nonmanifold.size} edges not bordered by exactly 2 faces, first ({e[0]}, {e[1]})",
            )
        )
    else:
        out.append(Finding("manifold", True, "every edge borders exactly 2 faces"))

    # consistent orientation: each undirected edge traversed once in each direction
    signed = np.zeros(s.n_edges, dtype=np.int64)
    np.add.at(signed, s.triangle_edges.ravel(), s.triangle_edge_signs.ravel())
    bad_edges = np.flatnonzero((signed != 0) & (edge_count == 2))
    if bad_edges.size:
        faces = np.flatnonzero(np.isin(s.triangle_edges, bad_edges).any(axis=1))
        out.append(
            Finding(
                "orientation", False,
                f"orientation inconsistency at face {_culprit_face(s, faces)}",
            )
        )
    else:
        out.append(Finding("orientation", True, "adjacent faces consistently oriented"))

    lengths = s.edge_lengths()
    areas = s.triangle_areas()
    scale = max(lengths.max(initial=0.0), 1e-300)
    degenerate = np.flatnonzero(areas <= 1e-14 * scale**2)
    if degenerate.size or lengths.min(initial=1.0) <= 0:
        out.append(Finding("nondegenerate", False, f"degenerate triangle at face {int(degenerate[0]) if degenerate.size else -1}"))
    else:
        out.append(Finding("nondegenerate", True, "all triangles satisfy the strict triangle inequality"))

    if nonmanifold.size == 0 and not degenerate.size:
        sums = opposite_angle_sums(s)
        nd = np.flatnonzero(sums > np.pi + 1e-12)
        out.append(
            Finding(
                "delaunay", nd.size == 0,
                "all edges Delaunay" if nd.size == 0 else f"{nd.size} non-Delaunay edges, first edge {int(nd[0])}",
                float(sums.max()),
            )
        )
    n_comp = csgraph.connected_components(_adjacency(s), directed=False)[0]
    out.append(Finding("connected", n_comp == 1, f"{n_comp} connected component(s)", float(n_comp)))
    out.append(Finding("euler_characteristic", True, f"V - E + F = {s.euler_characteristic}", float(s.euler_characteristic)))
    out.append(Finding("min_edge_length", True, f"{lengths.min():.6g}", float(lengths.min())))
    out.append(Finding("max_edge_length", True, f"{lengths.max():.6g}", float(lengths.max())))
    out.append(Finding("mesh_size", True, f"h = {lengths.max():.6g}", float(lengths.max())))
    return out


def _culprit_face(s: SimplicialSurface, candidates: np.ndarray) -> int:
    # the flipped face is the one disagreeing with all of its neighbours
    a = s.triangles.ravel()
    b = np.roll(s.triangles, -1, axis=1).ravel()
    directed = {}
    for k, (x, y) in enumerate(zip(a.tolist(), b.tolist())):
        directed.setdefault((x, y), []).append(k // 3)
    best, best_bad = int(candidates[0]), -1
    for f in candidates.tolist():
        t = s.triangles[f]
        nbad = sum(len(directed.get((int(t[i]), int(t[(i + 1) % 3])), [])) > 1 for i in range(3))
        if nbad > best_bad:
            best, best_bad = f, nbad
    return best


def is_delaunay(s: SimplicialSurface) -> bool:
    return bool(np.all(opposite_angle_sums(s) <= np.pi + 1e-12))


# ----------------------------------------------------------------- distances


def _adjacency(s: SimplicialSurface, weights: np.ndarray | None = None) -> sparse.csr_matrix:
    w = np.ones(s.n_edges) if weights is None else weights
    i, j = s.edges.T
    a = sparse.coo_matrix((np.r_[w, w], (np.r_[i, j], np.r_[j, i])), shape=(s.n_vertices,) * 2)
    return a.tocsr()


@dataclass(frozen=True)
class DistanceField:
    source: int
    distances: np.ndarray


def shortest_path_distances(s: SimplicialSurface, source: int) -> DistanceField:
    """Edge-graph shortest paths weighted by edge length (Dijkstra)."""
    if not 0 <= source < s.n_vertices:
        raise IndexError("source vertex out of range")
    d = csgraph.dijkstra(_adjacency(s, s.edge_lengths()), directed=False, indices=source)
    if not np.all(np.isfinite(d)):
        raise SurfaceError("surface is disconnected")
    return DistanceField(int(source), d)


def distance_matrix(s: SimplicialSurface, sources: np.ndarray | None = None) -> np.ndarray:
    """All-pairs (or rows for ``sources``) edge-graph distances.

    The full matrix is symmetrised with an elementwise minimum so that
    d(x, y) == d(y, x) bit for bit regardless of summation order.
    """
    idx = np.arange(s.n_vertices) if sources is None else np.asarray(sources)
    d = csgraph.dijkstra(_adjacency(s, s.edge_lengths()), directed=False, indices=idx)
    if not np.all(np.isfinite(d)):
        raise SurfaceError("surface is disconnected")
    if sources is None:
        d = np.minimum(d, d.T)
    return d


def diameter_estimate(s: SimplicialSurface, samples: int = 16) -> float:
    """Max edge-graph distance from ``samples`` evenly spaced source vertices."""
    idx = np.unique(np.linspace(0, s.n_vertices - 1, min(samples, s.n_vertices)).astype(int))
    return float(distance_matrix(s, idx).max())
