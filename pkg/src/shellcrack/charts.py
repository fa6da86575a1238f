"""Chart-dependent coefficient fields of the reduced thin-shell model.

A chart maps a planar rectangle into 3-space.  Everything the solver needs
from the geometry is condensed into three coefficient fields on the plane:
the 2x2 SPD matrix ``A = (a^{alpha beta}) sqrt(a)`` weighting gradients, the
scalar ``b`` (a curvature-squared term weighting displacements) and the area
factor ``sqrt(a)``.  The shipped charts (flat, cylinder, sphere) provide
closed forms, including the row-wise divergence of ``A`` needed by the error
estimator; custom charts fall back to central finite differences for it.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

_FD_STEP = 1.0e-6  # finite-difference step for custom-chart div(A), chart units


class ChartKind(enum.Enum):
    FLAT = "flat"
    CYLINDER = "cylinder"
    SPHERE = "sphere"
    CUSTOM = "custom"


class ChartParameterError(ValueError):
    """Chart constructed with invalid parameters."""


class ChartDegeneracyError(ChartParameterError):
    """Chart parameters reach a degenerate configuration (metric collapses)."""


class ChartDomainError(ValueError):
    """Point lies outside the chart's validity region."""


@dataclass(frozen=True)
class ChartEval:
    """All geometric coefficients at a single chart point."""

    a_cov: np.ndarray       # covariant metric, 2x2 symmetric
    a_contra: np.ndarray    # inverse metric, 2x2 symmetric
    sqrt_a: float           # area factor sqrt(det a_cov)
    b_cov: np.ndarray       # covariant curvature tensor, 2x2 symmetric
    A: np.ndarray           # a_contra * sqrt_a, 2x2 SPD
    b_coeff: float          # zero-order displacement coefficient, >= 0
    div_A: np.ndarray       # row-wise divergence of A, 2-vector
    grad_sqrt_a: np.ndarray  # gradient of sqrt_a, 2-vector


@dataclass(frozen=True)
class SurfaceChart:
    """Immutable single-chart surface description.

    ``domain`` is the axis-aligned rectangle ``(x0, x1, y0, y1)`` in chart
    coordinates before any notching.  All evaluation methods are pure; the
    batch variants take an ``(n, 2)`` array of points and are the ones used
    inside quadrature loops.
    """

    kind: ChartKind
    lame_lambda: float = 0.0
    lame_mu: float = 1.0
    domain: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    radius: float = 1.0
    length: float = 1.0
    xbar: float = math.pi / 2
    ybar: float = math.pi / 4
    # custom-chart callbacks: (n,) x, (n,) y -> (n,2,2) arrays
    metric_fn: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    curvature_fn: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.lame_lambda < 0.0:
            raise ChartParameterError("lame_lambda must be >= 0")
        if self.lame_mu <= 0.0:
            raise ChartParameterError("lame_mu must be > 0")
        if self.kind in (ChartKind.CYLINDER, ChartKind.SPHERE) and self.radius <= 0.0:
            raise ChartParameterError("radius must be > 0")
        if self.kind is ChartKind.CYLINDER and self.length <= 0.0:
            raise ChartParameterError("length must be > 0")
        if self.kind is ChartKind.SPHERE:
            if not 0.0 < self.xbar < math.pi:
                raise ChartParameterError("xbar must lie in (0, pi)")
            if not 0.0 < self.ybar:
                raise ChartParameterError("ybar must be > 0")
            if self.ybar >= math.pi / 2:
                raise ChartDegeneracyError("ybar >= pi/2: metric degenerates at the pole")
        if self.kind is ChartKind.CUSTOM and (self.metric_fn is None or self.curvature_fn is None):
            raise ChartParameterError("custom chart needs metric_fn and curvature_fn")

    # ------------------------------------------------------------------
    # validity
    # ------------------------------------------------------------------
    def _check_valid(self, x: np.ndarray, y: np.ndarray) -> None:
        if self.kind is ChartKind.SPHERE:
            if np.any(np.abs(y) >= math.pi / 2 - 1e-12):
                raise ChartDomainError("sphere chart degenerates at |y| = pi/2")
        # flat / cylinder / custom formulas are valid on all of R^2

    # ------------------------------------------------------------------
    # batch geometry
    # ------------------------------------------------------------------
    def metric_cov(self, pts: np.ndarray) -> np.ndarray:
        x, y = np.asarray(pts, float).T
        self._check_valid(x, y)
        out = np.zeros((len(x), 2, 2))
        if self.kind is ChartKind.FLAT:
            out[:, 0, 0] = 1.0
            out[:, 1, 1] = 1.0
        elif self.kind is ChartKind.CYLINDER:
            out[:, 0, 0] = self.radius ** 2
            out[:, 1, 1] = 1.0
        elif self.kind is ChartKind.SPHERE:
            c = np.cos(y)
            out[:, 0, 0] = (self.radius * c) ** 2
            out[:, 1, 1] = self.radius ** 2
        else:
            out[:] = self.metric_fn(x, y)
        return out

    def curvature_cov(self, pts: np.ndarray) -> np.ndarray:
        x, y = np.asarray(pts, float).T
        self._check_valid(x, y)
        out = np.zeros((len(x), 2, 2))
        if self.kind is ChartKind.FLAT:
            pass
        elif self.kind is ChartKind.CYLINDER:
            out[:, 0, 0] = -self.radius
        elif self.kind is ChartKind.SPHERE:
            c = np.cos(y)
            out[:, 0, 0] = -self.radius * c ** 2
            out[:, 1, 1] = -self.radius
        else:
            out[:] = self.curvature_fn(x, y)
        return out

    def coefficients(self, pts: np.ndarray):
        """Batch (a_cov, a_contra, sqrt_a, b_cov, A, b_coeff) at ``pts``.

        Returns arrays shaped (n,2,2), (n,2,2), (n,), (n,2,2), (n,2,2), (n,).
        """
        pts = np.atleast_2d(np.asarray(pts, float))
        a_cov = self.metric_cov(pts)
        b_cov = self.curvature_cov(pts)
        det = a_cov[:, 0, 0] * a_cov[:, 1, 1] - a_cov[:, 0, 1] * a_cov[:, 1, 0]
        if np.any(det <= 0.0):
            raise ChartDomainError("metric tensor is not positive definite")
        sqrt_a = np.sqrt(det)
        a_contra = np.empty_like(a_cov)
        a_contra[:, 0, 0] = a_cov[:, 1, 1] / det
        a_contra[:, 1, 1] = a_cov[:, 0, 0] / det
        a_contra[:, 0, 1] = -a_cov[:, 0, 1] / det
        a_contra[:, 1, 0] = -a_cov[:, 1, 0] / det
        A = a_contra * sqrt_a[:, None, None]
        mixed = np.einsum("nij,njk->nik", a_contra, b_cov)
        tr = mixed[:, 0, 0] + mixed[:, 1, 1]
        tr_sq = np.einsum("nij,nji->n", mixed, mixed)
        lam, mu = self.lame_lambda, self.lame_mu
        b_coeff = (2.0 * lam * mu / (lam + 2.0 * mu) * tr ** 2 + 2.0 * mu * tr_sq) * sqrt_a
        return a_cov, a_contra, sqrt_a, b_cov, A, b_coeff

    def A_field(self, pts: np.ndarray) -> np.ndarray:
        return self.coefficients(pts)[4]

    def b_field(self, pts: np.ndarray) -> np.ndarray:
        return self.coefficients(pts)[5]

    def sqrt_a_field(self, pts: np.ndarray) -> np.ndarray:
        return self.coefficients(pts)[2]

    def div_A(self, pts: np.ndarray) -> np.ndarray:
        """Row-wise divergence (div A)_i = d_j A_{ij}, batch (n, 2)."""
        pts = np.atleast_2d(np.asarray(pts, float))
        n = len(pts)
        if self.kind in (ChartKind.FLAT, ChartKind.CYLINDER):
            return np.zeros((n, 2))
        if self.kind is ChartKind.SPHERE:
            out = np.zeros((n, 2))
            out[:, 1] = -np.sin(pts[:, 1])
            return out
        out = np.empty((n, 2))
        h = _FD_STEP
        for k, step in ((0, np.array([h, 0.0])), (1, np.array([0.0, h]))):
            dA = (self.A_field(pts + step) - self.A_field(pts - step)) / (2.0 * h)
            if k == 0:
                out[:, 0] = dA[:, 0, 0]
                out[:, 1] = dA[:, 1, 0]
            else:
                out[:, 0] += dA[:, 0, 1]
                out[:, 1] += dA[:, 1, 1]
        return out

    def grad_sqrt_a(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        n = len(pts)
        if self.kind in (ChartKind.FLAT, ChartKind.CYLINDER):
            return np.zeros((n, 2))
        if self.kind is ChartKind.SPHERE:
            out = np.zeros((n, 2))
            out[:, 1] = -self.radius ** 2 * np.sin(pts[:, 1])
            return out
        h = _FD_STEP
        gx = (self.sqrt_a_field(pts + [h, 0.0]) - self.sqrt_a_field(pts - [h, 0.0])) / (2 * h)
        gy = (self.sqrt_a_field(pts + [0.0, h]) - self.sqrt_a_field(pts - [0.0, h])) / (2 * h)
        return np.column_stack([gx, gy])

    # ------------------------------------------------------------------
    # 3D embedding (for output only)
    # ------------------------------------------------------------------
    def embed(self, pts: np.ndarray) -> np.ndarray:
        """Map chart points to 3D surface points, (n, 3)."""
        pts = np.atleast_2d(np.asarray(pts, float))
        x, y = pts.T
        if self.kind is ChartKind.FLAT:
            return np.column_stack([x, y, np.zeros_like(x)])
        if self.kind is ChartKind.CYLINDER:
            R = self.radius
            return np.column_stack([R * np.cos(x), R * np.sin(x), y])
        if self.kind is ChartKind.SPHERE:
            R = self.radius
            return R * np.column_stack([np.cos(x) * np.cos(y), np.sin(x) * np.cos(y), np.sin(y)])
        raise ChartParameterError("custom charts do not ship an embedding")

    def normal(self, pts: np.ndarray) -> np.ndarray:
        """Unit surface normal at chart points, (n, 3)."""
        pts = np.atleast_2d(np.asarray(pts, float))
        x, y = pts.T
        if self.kind is ChartKind.FLAT:
            out = np.zeros((len(x), 3))
            out[:, 2] = 1.0
            return out
        if self.kind is ChartKind.CYLINDER:
            return np.column_stack([np.cos(x), np.sin(x), np.zeros_like(x)])
        if self.kind is ChartKind.SPHERE:
            return np.column_stack([np.cos(x) * np.cos(y), np.sin(x) * np.cos(y), np.sin(y)])
        raise ChartParameterError("custom charts do not ship an embedding")

    # ------------------------------------------------------------------
    # single-point evaluation
    # ------------------------------------------------------------------
    def eval(self, point) -> ChartEval:
        pt = np.asarray(point, float).reshape(1, 2)
        a_cov, a_contra, sqrt_a, b_cov, A, b_coeff = self.coefficients(pt)
        return ChartEval(
            a_cov=a_cov[0],
            a_contra=a_contra[0],
            sqrt_a=float(sqrt_a[0]),
            b_cov=b_cov[0],
            A=A[0],
            b_coeff=float(b_coeff[0]),
            div_A=self.div_A(pt)[0],
            grad_sqrt_a=self.grad_sqrt_a(pt)[0],
        )


def make_flat(domain=(0.0, 1.0, 0.0, 1.0), lame_lambda=0.0, lame_mu=1.0) -> SurfaceChart:
    """Euclidean chart: A = I, b = 0, sqrt_a = 1."""
    return SurfaceChart(ChartKind.FLAT, lame_lambda, lame_mu, tuple(map(float, domain)))


def make_cylinder(R: float, L: float, lame_lambda=0.0, lame_mu=1.0) -> SurfaceChart:
    """Cylindrical chart of radius R on (-pi/2, pi/2) x (0, L)."""
    if R <= 0.0 or L <= 0.0:
        raise ChartParameterError("cylinder needs R > 0 and L > 0")
    dom = (-math.pi / 2, math.pi / 2, 0.0, float(L))
    return SurfaceChart(ChartKind.CYLINDER, lame_lambda, lame_mu, dom, radius=float(R), length=float(L))


def make_sphere(R: float, xbar: float, ybar: float, lame_lambda=0.0, lame_mu=1.0) -> SurfaceChart:
    """Spherical chart of radius R on (-xbar, xbar) x (-ybar, ybar)."""
    if R <= 0.0:
        raise ChartParameterError("sphere needs R > 0")
    dom = (-float(xbar), float(xbar), -float(ybar), float(ybar))
    return SurfaceChart(ChartKind.SPHERE, lame_lambda, lame_mu, dom,
                        radius=float(R), xbar=float(xbar), ybar=float(ybar))
