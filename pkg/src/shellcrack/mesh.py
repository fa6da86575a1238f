"""Planar triangulation with edge skeleton, element affine maps and labels.

The mesh lives in chart coordinates.  A notch is represented as a true slit:
vertices along the slit line are duplicated so the two crack faces are
topologically disconnected while geometrically coincident.  Boundary edges
(including both slit faces and hole loops) carry a label that drives the
boundary conditions.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np


class BoundaryLabel(enum.IntEnum):
    FREE = 0
    DIRICHLET_PLUS = 1
    DIRICHLET_MINUS = 2
    DIRICHLET_ZERO = 3
    NOTCH = 4
    HOLE = 5

    @property
    def is_dirichlet(self) -> bool:
        return self in (BoundaryLabel.DIRICHLET_PLUS,
                        BoundaryLabel.DIRICHLET_MINUS,
                        BoundaryLabel.DIRICHLET_ZERO)


_LABEL_NAMES = {
    BoundaryLabel.FREE: "free",
    BoundaryLabel.DIRICHLET_PLUS: "dirichlet_plus",
    BoundaryLabel.DIRICHLET_MINUS: "dirichlet_minus",
    BoundaryLabel.DIRICHLET_ZERO: "dirichlet_zero",
    BoundaryLabel.NOTCH: "notch",
    BoundaryLabel.HOLE: "hole",
}
_LABEL_FROM_NAME = {v: k for k, v in _LABEL_NAMES.items()}


class MeshError(ValueError):
    """Invalid mesh topology or geometry."""


class DegenerateElementError(MeshError):
    """Element with (numerically) zero area."""


# reference triangle: equilateral inscribed in the unit circle, apex at (0, 1)
REF_TRIANGLE = np.array([
    [-np.sqrt(3.0) / 2.0, -0.5],
    [np.sqrt(3.0) / 2.0, -0.5],
    [0.0, 1.0],
])
REF_AREA = 3.0 * np.sqrt(3.0) / 4.0


def edge_key(i: int, j: int) -> Tuple[int, int]:
    return (i, j) if i < j else (j, i)


@dataclass
class ElementMap:
    """Affine map from the reference triangle onto one element."""

    M: np.ndarray           # 2x2
    theta: np.ndarray       # shift, 2-vector
    sigma1: float           # larger singular value
    sigma2: float           # smaller singular value
    r1: np.ndarray          # left singular vector of sigma1
    r2: np.ndarray          # left singular vector of sigma2
    aspect_ratio: float     # sigma1 / sigma2 >= 1
    h_T: float              # element diameter


class Triangulation:
    """Conforming triangulation with labeled boundary edges.

    Parameters
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise
    boundary : dict mapping sorted vertex pairs to BoundaryLabel; must cover
        exactly the edges with a single incident triangle
    slit_side : optional (nv,) int8 array, -1/+1 on the two faces of a slit
    slit_x : abscissa of the slit line when a slit is present
    """

    def __init__(self, vertices, triangles, boundary=None, slit_side=None, slit_x=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must be (nv, 2)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must be (nt, 3)")
        self.boundary: Dict[Tuple[int, int], BoundaryLabel] = dict(boundary or {})
        if slit_side is None:
            slit_side = np.zeros(len(self.vertices), dtype=np.int8)
        self.slit_side = np.asarray(slit_side, dtype=np.int8)
        self.slit_x = slit_x
        self._cache: dict = {}

    # ------------------------------------------------------------------
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

    def _edge_data(self):
        """Unique edges, their incident triangles and boundary mask."""
        if "edges" in self._cache:
            return self._cache["edges"], self._cache["edge_tris"]
        t = self.triangles
        raw = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        raw_sorted = np.sort(raw, axis=1)
        edges, inv = np.unique(raw_sorted, axis=0, return_inverse=True)
        edge_tris = np.full((len(edges), 2), -1, dtype=np.int64)
        tri_ids = np.tile(np.arange(len(t)), 3)
        for e, tid in zip(inv, tri_ids):
            if edge_tris[e, 0] < 0:
                edge_tris[e, 0] = tid
            elif edge_tris[e, 1] < 0:
                edge_tris[e, 1] = tid
            else:
                raise MeshError("non-manifold edge with >2 incident triangles")
        self._cache["edges"] = edges
        self._cache["edge_tris"] = edge_tris
        return edges, edge_tris

    @property
    def edges(self) -> np.ndarray:
        return self._edge_data()[0]

    @property
    def edge_tris(self) -> np.ndarray:
        return self._edge_data()[1]

    def vertex_tris(self):
        """CSR-style vertex -> incident triangles adjacency."""
        if "v2t" in self._cache:
            return self._cache["v2t"]
        nv, t = self.n_vertices, self.triangles
        counts = np.bincount(t.ravel(), minlength=nv)
        offsets = np.concatenate([[0], np.cumsum(counts)])
        flat = t.ravel()
        order = np.argsort(flat, kind="stable")
        data = (order // 3).astype(np.int64)
        self._cache["v2t"] = (offsets, data)
        return offsets, data

    def incident_triangles(self, v: int) -> np.ndarray:
        offsets, data = self.vertex_tris()
        return data[offsets[v]:offsets[v + 1]]

    # ------------------------------------------------------------------
    def validate(self) -> None:
        """Raise MeshError on any violated structural invariant."""
        nv = self.n_vertices
        t = self.triangles
        if t.min(initial=0) < 0 or t.max(initial=-1) >= nv:
            raise MeshError("triangle vertex index out of range")
        if len(np.unique(np.sort(t, axis=1), axis=0)) != len(t):
            raise MeshError("duplicate triangles")
        areas = self.signed_areas()
        if np.any(areas <= 0.0):
            raise MeshError("non-positive signed area (orientation or degeneracy)")
        edges, edge_tris = self._edge_data()
        boundary_mask = edge_tris[:, 1] < 0
        boundary_set = {edge_key(*e) for e in edges[boundary_mask]}
        labeled = set(self.boundary.keys())
        if boundary_set != labeled:
            raise MeshError("boundary labels do not cover exactly the boundary edges")

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges) + self.n_triangles

    # ------------------------------------------------------------------
    def copy(self) -> "Triangulation":
        return Triangulation(self.vertices.copy(), self.triangles.copy(),
                             dict(self.boundary), self.slit_side.copy(), self.slit_x)

    def dirichlet_vertices(self) -> Dict[int, list]:
        """Vertex -> list of incident Dirichlet labels (deterministic order)."""
        out: Dict[int, list] = {}
        for (i, j), lab in self.boundary.items():
            if lab.is_dirichlet:
                for v in (i, j):
                    out.setdefault(v, [])
                    if lab not in out[v]:
                        out[v].append(lab)
        return out


# ----------------------------------------------------------------------
# element affine maps
# ----------------------------------------------------------------------

def element_map(tri: Triangulation, t: int) -> ElementMap:
    """Affine map data for element ``t`` including its SVD."""
    if not 0 <= t < tri.n_triangles:
        raise MeshError(f"element id {t} out of range")
    p = tri.vertices[tri.triangles[t]]
    M, theta = _map_matrix(p)
    if abs(np.linalg.det(M)) < 1e-300:
        raise DegenerateElementError(f"element {t} is degenerate")
    U, S, Vt = np.linalg.svd(M)
    h = max(np.linalg.norm(p[0] - p[1]), np.linalg.norm(p[1] - p[2]),
            np.linalg.norm(p[2] - p[0]))
    return ElementMap(M=M, theta=theta, sigma1=float(S[0]), sigma2=float(S[1]),
                      r1=U[:, 0].copy(), r2=U[:, 1].copy(),
                      aspect_ratio=float(S[0] / S[1]), h_T=float(h))


def _map_matrix(p: np.ndarray):
    (x1, y1), (x2, y2), (x3, y3) = p
    M = np.array([
        [np.sqrt(3.0) * (x2 - x1), 2.0 * x3 - x1 - x2],
        [np.sqrt(3.0) * (y2 - y1), 2.0 * y3 - y1 - y2],
    ]) / 3.0
    theta = np.array([x1 + x2 + x3, y1 + y2 + y3]) / 3.0
    return M, theta


def element_maps_arrays(tri: Triangulation):
    """Vectorized (sigma1, sigma2, r1, r2, h_T) for all elements.

    Computed from the closed-form eigendecomposition of M M^T; r2 is r1
    rotated by 90 degrees so orthogonality is exact.
    """
    key = "maps"
    if key in tri._cache:
        return tri._cache[key]
    p = tri.vertices[tri.triangles]
    M = np.empty((len(p), 2, 2))
    M[:, 0, 0] = np.sqrt(3.0) * (p[:, 1, 0] - p[:, 0, 0])
    M[:, 0, 1] = 2.0 * p[:, 2, 0] - p[:, 0, 0] - p[:, 1, 0]
    M[:, 1, 0] = np.sqrt(3.0) * (p[:, 1, 1] - p[:, 0, 1])
    M[:, 1, 1] = 2.0 * p[:, 2, 1] - p[:, 0, 1] - p[:, 1, 1]
    M /= 3.0
    B00 = M[:, 0, 0] ** 2 + M[:, 0, 1] ** 2
    B01 = M[:, 0, 0] * M[:, 1, 0] + M[:, 0, 1] * M[:, 1, 1]
    B11 = M[:, 1, 0] ** 2 + M[:, 1, 1] ** 2
    mean = 0.5 * (B00 + B11)
    disc = np.sqrt(np.maximum(0.25 * (B00 - B11) ** 2 + B01 ** 2, 0.0))
    lam1 = mean + disc
    lam2 = np.maximum(mean - disc, 0.0)
    sigma1 = np.sqrt(lam1)
    sigma2 = np.sqrt(lam2)
    # eigenvector of B for lam1
    r1 = np.empty((len(p), 2))
    use_col0 = np.abs(B00 - lam2) >= np.abs(B11 - lam2)
    r1[:, 0] = np.where(use_col0, lam1 - B11, B01)
    r1[:, 1] = np.where(use_col0, B01, lam1 - B00)
    nrm = np.hypot(r1[:, 0], r1[:, 1])
    deg = nrm < 1e-14 * np.maximum(sigma1, 1e-300)
    r1[deg] = [1.0, 0.0]
    nrm[deg] = 1.0
    r1 /= nrm[:, None]
    r2 = np.column_stack([-r1[:, 1], r1[:, 0]])
    d01 = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    d12 = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    d20 = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
    h = np.maximum(np.maximum(d01, d12), d20)
    tri._cache[key] = (sigma1, sigma2, r1, r2, h)
    return tri._cache[key]


def aspect_ratios(tri: Triangulation) -> np.ndarray:
    s1, s2, _, _, _ = element_maps_arrays(tri)
    return s1 / np.maximum(s2, 1e-300)


# ----------------------------------------------------------------------
# patches
# ----------------------------------------------------------------------

def patch(tri: Triangulation, t: int) -> set:
    """Elements sharing at least a vertex with element ``t`` (including it)."""
    if not 0 <= t < tri.n_triangles:
        raise MeshError(f"element id {t} out of range")
    out = set()
    for v in tri.triangles[t]:
        out.update(tri.incident_triangles(v).tolist())
    return out


# ----------------------------------------------------------------------
# stiffness-sign (Riemannian acuteness) diagnostic
# ----------------------------------------------------------------------

@dataclass
class StiffnessSignReport:
    violating_pairs: list          # (l, m, value) with value > tol_sign
    max_positive_offdiag: float
    max_abs_entry: float

    @property
    def ok(self) -> bool:
        return not self.violating_pairs


def check_stiffness_sign(tri: Triangulation, chart) -> StiffnessSignReport:
    """Off-diagonal sign check of the A-weighted stiffness matrix.

    Assembles K_{lm} = int grad(xi_l)^T A grad(xi_m) with the same midpoint
    quadrature used by the solver, and reports vertex pairs sharing an edge
    whose entry exceeds 1e-10 * max|K|.
    """
    from .fem import Discretization  # local import to avoid a cycle

    disc = Discretization.get(tri, chart)
    K = disc.stiffness(disc.A_mid)
    K = K.tocoo()
    off = K.row != K.col
    rows, cols, vals = K.row[off], K.col[off], K.data[off]
    max_abs = float(np.max(np.abs(K.data))) if K.nnz else 0.0
    tol = 1e-10 * max_abs
    bad = vals > tol
    pairs = []
    seen = set()
    for l, m, v in zip(rows[bad], cols[bad], vals[bad]):
        k = edge_key(int(l), int(m))
        if k not in seen:
            seen.add(k)
            pairs.append((k[0], k[1], float(v)))
    pairs.sort()
    max_pos = float(vals.max()) if len(vals) else 0.0
    return StiffnessSignReport(pairs, max(max_pos, 0.0), max_abs)


# ----------------------------------------------------------------------
# ASCII mesh format
# ----------------------------------------------------------------------

def write_mesh(tri: Triangulation, path) -> None:
    """Write the documented ASCII format (header `shellmesh 1`, V/T/B blocks)."""
    lines = ["shellmesh 1"]
    lines.append(f"V {tri.n_vertices}")
    for x, y in tri.vertices:
        lines.append(f"{x!r} {y!r}")
    lines.append(f"T {tri.n_triangles}")
    for i, j, k in tri.triangles:
        lines.append(f"{i} {j} {k}")
    items = sorted(tri.boundary.items())
    lines.append(f"B {len(items)}")
    for (i, j), lab in items:
        lines.append(f"{i} {j} {_LABEL_NAMES[lab]}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path) -> Triangulation:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "shellmesh 1":
        raise MeshError("not a shellmesh file")
    pos = 1

    def expect_block(tag):
        nonlocal pos
        parts = lines[pos].split()
        if len(parts) != 2 or parts[0] != tag:
            raise MeshError(f"expected '{tag} n' at line {pos + 1}")
        pos += 1
        return int(parts[1])

    nv = expect_block("V")
    verts = np.empty((nv, 2))
    for r in range(nv):
        a, b = lines[pos].split()
        verts[r] = float(a), float(b)
        pos += 1
    nt = expect_block("T")
    tris = np.empty((nt, 3), dtype=np.int64)
    for r in range(nt):
        tris[r] = [int(v) for v in lines[pos].split()]
        pos += 1
    nb = expect_block("B")
    boundary = {}
    for r in range(nb):
        i, j, name = lines[pos].split()
        boundary[edge_key(int(i), int(j))] = _LABEL_FROM_NAME[name]
        pos += 1
    tri = Triangulation(verts, tris, boundary)
    _reconstruct_slit_sides(tri)
    return tri


def _reconstruct_slit_sides(tri: Triangulation) -> None:
    """Recover slit-face tags from Notch-labeled edges (format carries none)."""
    notch_edges = [e for e, lab in tri.boundary.items() if lab == BoundaryLabel.NOTCH]
    if not notch_edges:
        return
    notch_vertices = sorted({v for e in notch_edges for v in e})
    xs = tri.vertices[notch_vertices, 0]
    slit_x = float(np.median(xs))
    side = np.zeros(tri.n_vertices, dtype=np.int8)
    centroids = tri.vertices[tri.triangles].mean(axis=1)
    for v in notch_vertices:
        tids = tri.incident_triangles(v)
        off = centroids[tids, 0] - slit_x
        if np.all(off > 0):
            side[v] = 1
        elif np.all(off < 0):
            side[v] = -1
    tri.slit_side = side
    tri.slit_x = slit_x
