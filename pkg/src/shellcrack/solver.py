"""Inner solvers of the alternating scheme and the scheme itself.

The displacement step is an SPD solve (Jacobi-preconditioned CG, direct
factorization for small systems).  The phase step is a bound-constrained
SPD quadratic program solved by a primal-dual active set iteration with a
projected-gradient safeguard.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .charts import SurfaceChart
from .fem import (
    DirichletData,
    FeField,
    ModelParams,
    assemble_displacement_system,
    assemble_phase_system,
    energy,
)
from .mesh import BoundaryLabel, Triangulation

_DIRECT_LIMIT = 2000


class SolverError(RuntimeError):
    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class SolvabilityError(SolverError):
    """System has no Dirichlet data and no zero-order term."""


def solve_spd(K: sp.csr_matrix, rhs: np.ndarray, x0: Optional[np.ndarray] = None,
              rtol: float = 1e-10) -> np.ndarray:
    """Solve an SPD sparse system.

    Jacobi-preconditioned conjugate gradients at relative tolerance ``rtol``
    with at most 10 n iterations; systems with n <= 2000 (or a CG that hits
    the cap) go through a direct sparse factorization.
    """
    n = K.shape[0]
    if n == 0:
        return np.empty(0)
    if n <= _DIRECT_LIMIT:
        return spla.spsolve(K.tocsc(), rhs)
    diag = K.diagonal()
    if np.any(diag <= 0):
        raise SolverError("matrix is not positive definite (nonpositive diagonal)")
    M = sp.diags(1.0 / diag)
    x, info = spla.cg(K, rhs, x0=x0, rtol=rtol, atol=0.0, maxiter=10 * n, M=M)
    if info != 0:
        x = spla.spsolve(K.tocsc(), rhs)
    return x


# ----------------------------------------------------------------------
# displacement step
# ----------------------------------------------------------------------

def _dirichlet_from_g(mesh: Triangulation, g_values) -> DirichletData:
    if isinstance(g_values, DirichletData):
        return g_values
    return DirichletData.from_labels(mesh, dict(g_values or {}))


def solve_displacement(v: FeField, g_values, chart: SurfaceChart, params: ModelParams,
                       u0: Optional[FeField] = None) -> FeField:
    """Unique minimizer of the elastic energy at fixed phase field.

    ``g_values`` maps Dirichlet labels to boundary values (or is a prebuilt
    DirichletData).  ``u0`` warm-starts the iterative solver only.
    """
    mesh = v.mesh
    dd = _dirichlet_from_g(mesh, g_values)
    sysm = assemble_displacement_system(v, chart, params, dd)
    if len(dd.index) == 0:
        # solvable only through the zero-order term b |u|^2
        from .fem import Discretization
        disc = Discretization.get(mesh, chart)
        if np.max(disc.b_mid, initial=0.0) <= 0.0:
            raise SolvabilityError("no Dirichlet data and b = 0: singular system")
    x0 = None
    if u0 is not None:
        x0 = u0.values[sysm.free]
    u_free = solve_spd(sysm.K_ff, sysm.load, x0=x0)
    return FeField(mesh, sysm.expand(u_free))


# ----------------------------------------------------------------------
# bound-constrained QP (phase step)
# ----------------------------------------------------------------------

@dataclass
class QpInfo:
    iterations: int
    kkt_violation: float
    active: np.ndarray


def solve_bound_qp(H: sp.csr_matrix, c: np.ndarray, bound: np.ndarray,
                   x0: Optional[np.ndarray] = None, max_outer: int = 60,
                   kkt_tol: float = 1e-8) -> tuple[np.ndarray, QpInfo]:
    """Minimize 1/2 x^T H x - c^T x subject to x <= bound (H SPD).

    Primal-dual active set iteration; nodes whose multiplier vanishes are
    treated as inactive.  A few projected-gradient steps re-seed the active
    set if the iteration cycles.
    """
    n = H.shape[0]
    bound = np.asarray(bound, float)
    x = np.minimum(x0 if x0 is not None else bound.copy(), bound)
    active = x >= bound - 1e-14 * np.maximum(1.0, np.abs(bound))
    if x0 is None:
        active = np.ones(n, dtype=bool)
    seen = set()
    diag = H.diagonal()
    scale = max(1.0, float(np.max(np.abs(c), initial=0.0)))
    for it in range(1, max_outer + 1):
        x = _solve_active(H, c, bound, active)
        lam = c - H @ x                       # multiplier for x <= bound
        grad_up = -lam                        # objective gradient
        # next active set: active nodes keep a positive multiplier,
        # inactive nodes that overshoot the bound join
        next_active = np.where(active, lam > 0.0, x > bound)
        kkt = _kkt_violation(x, grad_up, bound)
        if kkt <= kkt_tol * max(scale, float(np.max(np.abs(H @ x), initial=0.0))):
            if np.array_equal(next_active, active) or kkt <= kkt_tol:
                return np.minimum(x, bound), QpInfo(it, kkt, active)
        key = next_active.tobytes()
        if key in seen:
            # cycling: projected gradient re-seed
            y = np.minimum(x, bound)
            for _ in range(20):
                g = H @ y - c
                y = np.minimum(y - g / diag, bound)
            next_active = (bound - y) < 1e-10 * np.maximum(1.0, np.abs(bound))
            seen.clear()
        seen.add(key)
        active = next_active
    x = np.minimum(x, bound)
    kkt = _kkt_violation(x, H @ x - c, bound)
    if kkt <= 1e-6 * scale:
        return x, QpInfo(max_outer, kkt, active)
    raise SolverError(f"active-set QP did not converge (kkt={kkt:.3e})",
                      last_iterate=x)


def _solve_active(H, c, bound, active):
    x = np.empty(H.shape[0])
    x[active] = bound[active]
    free = ~active
    if np.any(free):
        idx = np.nonzero(free)[0]
        H_ff = H[idx][:, idx].tocsr()
        rhs = c[idx] - H[idx][:, np.nonzero(active)[0]] @ bound[active]
        x[idx] = solve_spd(H_ff, np.asarray(rhs).ravel())
    return x


def _kkt_violation(x, grad, bound):
    """Max KKT violation of the upper-bound QP: grad = Hx - c."""
    at_bound = x >= bound - 1e-12 * np.maximum(1.0, np.abs(bound))
    viol_inactive = np.abs(np.where(at_bound, 0.0, grad))
    viol_active = np.where(at_bound, np.maximum(grad, 0.0), 0.0)
    feas = np.maximum(x - bound, 0.0)
    out = 0.0
    for arr in (viol_inactive, viol_active, feas):
        if len(arr):
            out = max(out, float(np.max(arr)))
    return out


def solve_phase(u: FeField, prev_v: FeField, v_bound: FeField, chart: SurfaceChart,
                params: ModelParams, v0: Optional[FeField] = None) -> FeField:
    """Unique minimizer of the phase energy under the nodal bound."""
    H, c = assemble_phase_system(u, prev_v, chart, params)
    x0 = v0.values if v0 is not None else np.minimum(prev_v.values, v_bound.values)
    x, _ = solve_bound_qp(H, c, v_bound.values, x0=x0)
    return FeField(u.mesh, x)


# ----------------------------------------------------------------------
# critical-point residual
# ----------------------------------------------------------------------

@dataclass
class CriticalPointResidual:
    stationarity_u: float
    complementarity_v: float
    scale: float


def residual(u: FeField, v: FeField, v_bound: FeField, chart: SurfaceChart,
             params: ModelParams) -> CriticalPointResidual:
    """Residuals of the discrete critical-point conditions.

    stationarity_u: norm of the elastic-energy gradient on the free
    (non-Dirichlet) dofs; complementarity_v: max nodal KKT violation of the
    bound-constrained phase problem (with penalty center = bound field).
    """
    mesh = u.mesh
    sysm = assemble_displacement_system(v, chart, params, None)
    r = sysm.K @ u.values
    dir_vertices = set(mesh.dirichlet_vertices().keys())
    free_mask = np.ones(mesh.n_vertices, dtype=bool)
    if dir_vertices:
        free_mask[sorted(dir_vertices)] = False
    stat_u = float(np.linalg.norm(r[free_mask]))

    H, c = assemble_phase_system(u, v_bound, chart, params)
    grad = H @ v.values - c
    comp = _kkt_violation(v.values, grad, v_bound.values)
    scale = max(1.0, float(np.max(np.abs(c), initial=0.0)),
                float(np.max(np.abs(H @ v.values), initial=0.0)))
    return CriticalPointResidual(stat_u, comp, scale)


# ----------------------------------------------------------------------
# alternating minimization
# ----------------------------------------------------------------------

@dataclass
class AltMinResult:
    u: FeField
    v: FeField
    iterations: int
    final_increment: float
    energy_trace: list
    converged: bool


def alternate_minimize(u0: FeField, v0: FeField, prev_v: FeField, g_values,
                       chart: SurfaceChart, params: ModelParams,
                       tol_v: float = 2e-3, max_sweeps: int = 8) -> AltMinResult:
    """Alternate displacement/phase minimizations until the phase increment
    drops below ``tol_v`` in the sup norm or ``max_sweeps`` is reached."""
    if np.any(v0.values > prev_v.values + 1e-12):
        raise SolverError("initial phase iterate exceeds the bound field")
    mesh = u0.mesh
    dd = _dirichlet_from_g(mesh, g_values)
    u, v = u0, FeField(mesh, np.minimum(v0.values, prev_v.values))
    trace = []
    increment = np.inf
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        u = solve_displacement(v, dd, chart, params, u0=u)
        v_new = solve_phase(u, prev_v, prev_v, chart, params, v0=v)
        increment = float(np.max(np.abs(v_new.values - v.values)))
        v = v_new
        parts = energy(u, v, prev_v, chart, params)
        trace.append(parts.total)
        if increment < tol_v:
            converged = True
            break
    return AltMinResult(u, v, sweeps, increment, trace, converged)
