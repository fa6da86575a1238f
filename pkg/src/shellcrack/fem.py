"""P1 finite elements: interpolation, discrete energies and their assemblies.

Quadrature convention (one discrete functional, assemblies are its exact
derivatives):

* every integral containing a gradient factor uses the 3-point edge-midpoint
  rule, with the coefficient fields A, b and the interpolant of v^2 evaluated
  at the midpoints;
* the zero-order interpolated terms (the (1-v)^2 dissipation term, the
  penalty and the lumped norm) use the vertex rule, which makes their
  second-derivative blocks diagonal.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np
import scipy.sparse as sp

from .charts import SurfaceChart
from .mesh import BoundaryLabel, Triangulation


class FemError(ValueError):
    pass


@dataclass
class ModelParams:
    """Scalar parameters of the regularized model (chart carries the Lame pair)."""

    epsilon: float = 5e-3
    eta: float = 1e-5
    kappa: float = 1.0
    alpha: float = 1e-4
    tau: float = 1e-2

    def __post_init__(self):
        if min(self.epsilon, self.kappa, self.tau) <= 0 or self.eta <= 0 or self.alpha < 0:
            raise FemError("parameters must be positive (alpha >= 0)")


@dataclass
class FeField:
    """Nodal values of a P1 function on a triangulation."""

    mesh: Triangulation
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_vertices,):
            raise FemError("values length must equal the vertex count")

    @classmethod
    def constant(cls, mesh: Triangulation, value: float) -> "FeField":
        return cls(mesh, np.full(mesh.n_vertices, float(value)))

    def copy(self) -> "FeField":
        return FeField(self.mesh, self.values.copy())

    def check_unit_interval(self, tol: float = 0.0) -> bool:
        return bool(np.all(self.values >= -tol) and np.all(self.values <= 1.0 + tol))


def interpolate(mesh: Triangulation, f: Callable) -> FeField:
    """Lagrangian interpolant: nodal values of ``f(x, y)``."""
    vals = np.array([f(x, y) for x, y in mesh.vertices], dtype=float)
    if not np.all(np.isfinite(vals)):
        raise FemError("function returned non-finite values at mesh vertices")
    return FeField(mesh, vals)


@dataclass
class DiscreteEnergyParts:
    elastic: float
    dissipation: float
    penalty: float

    @property
    def total(self) -> float:
        return self.elastic + self.dissipation + self.penalty


# ----------------------------------------------------------------------
# per-(mesh, chart) discretization data
# ----------------------------------------------------------------------

class Discretization:
    """Cached per-element geometry and chart coefficients for assembly."""

    def __init__(self, mesh: Triangulation, chart: SurfaceChart):
        self.mesh = mesh
        self.chart = chart
        t = mesh.triangles
        p = mesh.vertices[t]                       # (nt, 3, 2)
        self.tri = t
        self.coords = p
        area = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
        if np.any(area <= 0):
            raise FemError("mesh has non-positive element areas")
        self.area = area
        # P1 basis gradients: grad phi_i = perp(p_k - p_j) / (2 area)
        grads = np.empty((len(t), 3, 2))
        for i in range(3):
            d = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
            grads[:, i, 0] = -d[:, 1]
            grads[:, i, 1] = d[:, 0]
        grads /= (2.0 * area)[:, None, None]
        self.grads = grads
        # midpoint m_i is opposite vertex i
        mids = 0.5 * (p[:, [1, 2, 0]] + p[:, [2, 0, 1]])
        self.mids = mids
        flat_m = mids.reshape(-1, 2)
        _, _, sqa_m, _, A_m, b_m = chart.coefficients(flat_m)
        self.A_mid = A_m.reshape(len(t), 3, 2, 2)
        self.b_mid = b_m.reshape(len(t), 3)
        self.sqrta_mid = sqa_m.reshape(len(t), 3)
        flat_v = p.reshape(-1, 2)
        sqa_v = chart.sqrt_a_field(flat_v)
        self.sqrta_vtx = sqa_v.reshape(len(t), 3)
        # lumped vertex masses and sqrt(a)-weighted lumped loads
        nv = mesh.n_vertices
        w = np.repeat(area / 3.0, 3)
        self.lumped_mass = np.bincount(t.ravel(), weights=w, minlength=nv)
        self.lumped_sqrta = np.bincount(t.ravel(), weights=w * self.sqrta_vtx.ravel(),
                                        minlength=nv)
        self._div_A_mid = None

    @property
    def div_A_mid(self) -> np.ndarray:
        if self._div_A_mid is None:
            flat = self.mids.reshape(-1, 2)
            self._div_A_mid = self.chart.div_A(flat).reshape(len(self.tri), 3, 2)
        return self._div_A_mid

    @classmethod
    def get(cls, mesh: Triangulation, chart: SurfaceChart) -> "Discretization":
        cache = mesh._cache.setdefault("disc", {})
        if chart not in cache:
            cache[chart] = cls(mesh, chart)
        return cache[chart]

    # ------------------------------------------------------------------
    def element_values(self, field: FeField) -> np.ndarray:
        return field.values[self.tri]

    def element_gradients(self, field: FeField) -> np.ndarray:
        loc = self.element_values(field)
        return np.einsum("ti,tid->td", loc, self.grads)

    def midpoint_values(self, loc: np.ndarray) -> np.ndarray:
        """P1 values at the edge midpoints from element vertex values."""
        return 0.5 * (loc[:, [1, 2, 0]] + loc[:, [2, 0, 1]])

    # ------------------------------------------------------------------
    def stiffness(self, coef_mid: np.ndarray) -> sp.csr_matrix:
        """Assemble int grad(xi_l)^T C grad(xi_m) with C given at midpoints.

        ``coef_mid`` has shape (nt, 3, 2, 2) or (nt, 3) for scalar * A
        pre-multiplied data; scalars are not accepted here.
        """
        if coef_mid.ndim != 4:
            raise FemError("stiffness expects (nt, 3, 2, 2) midpoint tensors")
        Ceff = (self.area / 3.0)[:, None, None] * coef_mid.sum(axis=1)
        loc = np.einsum("tid,tdk,tjk->tij", self.grads, Ceff, self.grads)
        return self._scatter(loc)

    def mass(self, coef_mid: np.ndarray) -> sp.csr_matrix:
        """Assemble int c xi_l xi_m with c given at midpoints, (nt, 3)."""
        # phi_l(m_e) = 1/2 for l != e, 0 for l == e
        phi = 0.5 * (1.0 - np.eye(3))              # (e, l)
        w = self.area[:, None] / 3.0 * coef_mid    # (nt, 3)
        loc = np.einsum("te,el,em->tlm", w, phi, phi)
        return self._scatter(loc)

    def _scatter(self, loc: np.ndarray) -> sp.csr_matrix:
        nv = self.mesh.n_vertices
        t = self.tri
        rows = np.repeat(t, 3, axis=1).ravel()
        cols = np.tile(t, (1, 3)).ravel()
        K = sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(nv, nv))
        return K.tocsr()


# ----------------------------------------------------------------------
# energies
# ----------------------------------------------------------------------

def xh_norm(field: FeField) -> float:
    """Lumped norm: sqrt of the vertex-rule integral of the squared field."""
    disc_mass = _lumped_mass(field.mesh)
    return float(np.sqrt(np.dot(disc_mass, field.values ** 2)))


def _lumped_mass(mesh: Triangulation) -> np.ndarray:
    if "lumped_mass" not in mesh._cache:
        p = mesh.vertices[mesh.triangles]
        area = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
        w = np.repeat(area / 3.0, 3)
        mesh._cache["lumped_mass"] = np.bincount(mesh.triangles.ravel(), weights=w,
                                                 minlength=mesh.n_vertices)
    return mesh._cache["lumped_mass"]


def _check_same_mesh(*fields: FeField) -> Triangulation:
    mesh = fields[0].mesh
    for f in fields[1:]:
        if f.mesh is not mesh:
            raise FemError("fields live on different meshes")
    return mesh


def energy(u: FeField, v: FeField, prev_v: Optional[FeField], chart: SurfaceChart,
           params: ModelParams) -> DiscreteEnergyParts:
    """Discrete elastic energy, dissipation and (optional) penalty."""
    mesh = _check_same_mesh(u, v, *([] if prev_v is None else [prev_v]))
    disc = Discretization.get(mesh, chart)
    mu = chart.lame_mu
    uloc = disc.element_values(u)
    vloc = disc.element_values(v)
    g_u = disc.element_gradients(u)
    g_v = disc.element_gradients(v)
    w = disc.area / 3.0

    u_mid = disc.midpoint_values(uloc)
    pv2_mid = disc.midpoint_values(vloc ** 2)           # interpolant of v^2
    gAg_u = np.einsum("td,tedk,tk->te", g_u, disc.A_mid, g_u)
    gAg_v = np.einsum("td,tedk,tk->te", g_v, disc.A_mid, g_v)

    elastic = 0.5 * np.sum(w[:, None] * disc.b_mid * u_mid ** 2)
    elastic += 0.5 * mu * np.sum(w[:, None] * (pv2_mid + params.eta) * gAg_u)

    diss = params.kappa / (4.0 * params.epsilon) * np.sum(
        w[:, None] * (1.0 - vloc) ** 2 * disc.sqrta_vtx)
    diss += params.kappa * params.epsilon * np.sum(w[:, None] * gAg_v)

    penalty = 0.0
    if prev_v is not None:
        dv = v.values - prev_v.values
        penalty = params.alpha / (2.0 * params.tau) * float(
            np.dot(disc.lumped_mass, dv ** 2))
    return DiscreteEnergyParts(float(elastic), float(diss), float(penalty))


# ----------------------------------------------------------------------
# Dirichlet data
# ----------------------------------------------------------------------

@dataclass
class DirichletData:
    """Constrained vertices and their nodal values."""

    index: np.ndarray   # constrained vertex ids, sorted
    values: np.ndarray  # nodal values at those ids

    @classmethod
    def from_labels(cls, mesh: Triangulation, value_of_label: Dict[BoundaryLabel, float]
                    ) -> "DirichletData":
        """Nodal interpolation of labelwise-constant boundary data.

        A vertex touched by several Dirichlet labels gets the mean of their
        values (the odd-symmetry limit at a +t/-t junction is 0).
        """
        per_vertex = mesh.dirichlet_vertices()
        idx, vals = [], []
        for v in sorted(per_vertex):
            labs = per_vertex[v]
            idx.append(v)
            vals.append(float(np.mean([value_of_label.get(l, 0.0) for l in labs])))
        return cls(np.array(idx, dtype=np.int64), np.array(vals))


@dataclass
class DisplacementSystem:
    """SPD system for the displacement step after boundary elimination."""

    K: sp.csr_matrix          # full matrix (all dofs)
    free: np.ndarray          # free vertex ids
    fixed: np.ndarray         # constrained vertex ids
    fixed_values: np.ndarray
    K_ff: sp.csr_matrix
    load: np.ndarray          # -K_fc g_c on the free dofs

    def expand(self, u_free: np.ndarray) -> np.ndarray:
        out = np.empty(self.K.shape[0])
        out[self.free] = u_free
        out[self.fixed] = self.fixed_values
        return out


def assemble_displacement_system(v: FeField, chart: SurfaceChart, params: ModelParams,
                                 dirichlet: Optional[DirichletData] = None
                                 ) -> DisplacementSystem:
    """Matrix of the displacement step and the load from the Dirichlet lift."""
    mesh = v.mesh
    disc = Discretization.get(mesh, chart)
    mu = chart.lame_mu
    vloc = disc.element_values(v)
    pv2_mid = disc.midpoint_values(vloc ** 2)
    coef = mu * (pv2_mid + params.eta)              # (nt, 3)
    K = disc.stiffness(coef[:, :, None, None] * disc.A_mid)
    K = K + disc.mass(disc.b_mid)
    nv = mesh.n_vertices
    if dirichlet is None or len(dirichlet.index) == 0:
        free = np.arange(nv)
        fixed = np.empty(0, dtype=np.int64)
        fvals = np.empty(0)
        return DisplacementSystem(K, free, fixed, fvals, K.tocsr(), np.zeros(nv))
    fixed = dirichlet.index
    mask = np.ones(nv, dtype=bool)
    mask[fixed] = False
    free = np.nonzero(mask)[0]
    K_ff = K[free][:, free].tocsr()
    load = -K[free][:, fixed] @ dirichlet.values
    return DisplacementSystem(K, free, fixed, dirichlet.values.copy(), K_ff,
                              np.asarray(load).ravel())


def assemble_phase_system(u: FeField, prev_v: FeField, chart: SurfaceChart,
                          params: ModelParams):
    """Quadratic model of the phase step: 1/2 v^T H v - c^T v + const.

    H combines the diagonal strain lump, the diagonal sqrt(a) dissipation
    lump, the A-weighted gradient stiffness and the diagonal penalty; c
    collects the dissipation and penalty loads.
    """
    mesh = _check_same_mesh(u, prev_v)
    disc = Discretization.get(mesh, chart)
    mu = chart.lame_mu
    kap, eps = params.kappa, params.epsilon
    nv = mesh.n_vertices
    w = disc.area / 3.0

    g_u = disc.element_gradients(u)
    gAg_u = np.einsum("td,tedk,tk->te", g_u, disc.A_mid, g_u)   # (nt, 3) at mids
    # vertex i couples to the two midpoints other than m_i
    per_vertex = gAg_u[:, [1, 2, 0]] + gAg_u[:, [2, 0, 1]]
    strain_diag = np.bincount(disc.tri.ravel(),
                              weights=(0.5 * mu * w[:, None] * per_vertex).ravel(),
                              minlength=nv)

    diss_diag = kap / (2.0 * eps) * disc.lumped_sqrta
    pen_diag = params.alpha / params.tau * disc.lumped_mass

    H = disc.stiffness(2.0 * kap * eps * disc.A_mid)
    H = H + sp.diags(strain_diag + diss_diag + pen_diag)
    c = diss_diag + pen_diag * prev_v.values
    return H.tocsr(), c
