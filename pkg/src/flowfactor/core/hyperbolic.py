"""Inverse of the differential of (b₁, …, bₙ) ↦ e^{b₁X₁}∘…∘e^{bₙXₙ} near hyperbolic seeds.

Near a point q where a(q) = 0 and <da, X>(q) < 0 the field aX is rectified to
â(x₁, y)∂/∂x₁ and then linearized to α(y)ξ∂/∂ξ. In those coordinates A(a, X)
becomes Â, which splits into blocks that are inverted in closed form or by a
contracting Neumann series.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.optimize import brentq

from .box import BoxFunction, BoxGrid, simpson_unit
from .config import FlowConfig
from .errors import ChartError, ConvergenceError, FrameError, NonHyperbolicError
from .flow import differential, flow_points_timed, operator_A, operator_A_matrix, scaled_flow
from .grid import (
    DiffeoGrid,
    GridFunction,
    VectorField,
    invert_points,
    node_points,
    torus_offset,
)
from .models import FRAME_CONDITION_MAX

logger = logging.getLogger(__name__)

__all__ = [
    "ALPHA_MIN",
    "LinearizedField",
    "RectifiedChart",
    "SplitFunction",
    "inverse_A",
    "inverse_Ahat",
    "inverse_B",
    "inverse_DPhi",
    "linearize_1d",
    "neumann_inverse",
    "operator_A",
    "operator_Ahat",
    "operator_B",
    "operator_R",
    "rectify",
    "split_b",
    "y_derivative_of_neumann",
]

ALPHA_MIN = 0.05
CHART_TOL = 1e-8
CONJUGACY_TOL = 1e-6

_DEFAULT = FlowConfig()


@dataclass(frozen=True, eq=False)
class RectifiedChart:
    """Coordinates (x₁, y) near q in which X = ∂/∂x₁ and a(0, y) = 0.

    Ψ(x₁, y) = e^{(x₁ + s₀(y))X}(q + y·ν) where ν ⊥ X(q) spans the slice and
    s₀(y) is the zero of a along the flow line through the slice point.
    """

    X: VectorField
    q: np.ndarray
    normal: np.ndarray | None
    box: BoxGrid
    flow_box: tuple[BoxFunction, ...]
    shift_coef: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.q)

    @cached_property
    def _flow_box_ds(self) -> tuple[BoxFunction, ...]:
        return tuple(F.d_x1() for F in self.flow_box)

    @cached_property
    def _flow_box_dy(self) -> tuple[BoxFunction, ...]:
        return tuple(F.d_y() for F in self.flow_box)

    def shift(self, y: np.ndarray | None) -> np.ndarray:
        if self.dim == 1:
            return np.full(np.shape(y) if y is not None else (), self.shift_coef[0])
        return C.chebval(np.asarray(y) / self.box.y_half_width, self.shift_coef)

    def forward(self, x1: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
        """Ψ(x₁, y) as unwrapped torus points, shape x1.shape + (dim,)."""
        x1 = np.asarray(x1, dtype=float)
        if self.dim == 1:
            s = x1 + self.shift_coef[0]
            return np.stack([F.evaluate(s) for F in self.flow_box], axis=-1)
        y = np.asarray(y, dtype=float)
        s = x1 + self.shift(y)
        return np.stack([F.evaluate(s, y) for F in self.flow_box], axis=-1)

    def jacobian(self, x1: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
        x1 = np.asarray(x1, dtype=float)
        if self.dim == 1:
            s = x1 + self.shift_coef[0]
            return np.stack([F.evaluate(s) for F in self._flow_box_ds], axis=-1)[..., None]
        y = np.asarray(y, dtype=float)
        s = x1 + self.shift(y)
        ds = np.stack([F.evaluate(s, y) for F in self._flow_box_ds], axis=-1)
        dy = np.stack([F.evaluate(s, y) for F in self._flow_box_dy], axis=-1)
        shift_dy = C.chebval(y / self.box.y_half_width, C.chebder(self.shift_coef)) / self.box.y_half_width
        return np.stack([ds, dy + ds * shift_dy[..., None]], axis=-1)

    def box_points(self) -> np.ndarray:
        """Ψ at the box nodes, shape (nx, ny, dim)."""
        x1, y = self.box.mesh()
        return self.forward(x1, None if self.dim == 1 else y)

    def pull(self, f: GridFunction) -> BoxFunction:
        """f∘Ψ on the box nodes."""
        pts = self.box_points()
        return BoxFunction(self.box, f.evaluate(pts.reshape(-1, self.dim)).reshape(self.box.shape))

    def rectified_field(self, x1: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
        """Components of X in rectified coordinates; (1, 0) on a valid chart."""
        pts = self.forward(x1, y)
        flat = pts.reshape(-1, self.dim)
        jac = self.jacobian(x1, y).reshape(-1, self.dim, self.dim)
        comps = np.linalg.solve(jac, self.X.evaluate(flat)[..., None])[..., 0]
        return comps.reshape(pts.shape)

    def backward(self, points: np.ndarray, max_iters: int = 50) -> tuple[np.ndarray, np.ndarray]:
        """Rectified coordinates of torus points and a mask of points inside the box."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        dim = self.dim
        limits = np.array([self.box.half_width] + ([self.box.y_half_width] if dim == 2 else []))

        def parts(z: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
            return z[:, 0], (z[:, 1] if dim == 2 else None)

        origin = np.zeros(dim)
        jac0 = self.jacobian(*((origin[0],) if dim == 1 else (origin[0], origin[1])))
        z = np.linalg.solve(jac0.reshape(dim, dim), torus_offset(pts, self.q).T).T
        z = np.clip(z, -1.5 * limits, 1.5 * limits)
        res = np.full(len(pts), np.inf)
        for _ in range(max_iters):
            r = torus_offset(self.forward(*parts(z)), pts)
            res = np.max(np.abs(r), axis=1)
            if np.all(res < 1e-12):
                break
            jac = self.jacobian(*parts(z))
            try:
                step = np.linalg.solve(jac, r[..., None])[..., 0]
            except np.linalg.LinAlgError:
                step = np.einsum("mij,mj->mi", np.linalg.pinv(jac), r)
            z = np.clip(z - step, -1.5 * limits, 1.5 * limits)
        inside = (res < 1e-10) & np.all(np.abs(z) <= limits * (1 + 1e-12), axis=1)
        return z, inside


def rectify(
    X: VectorField,
    a: GridFunction | None,
    q: Sequence[float],
    eps: float,
    eps_y: float | None = None,
    cfg: FlowConfig = _DEFAULT,
    nodes: int = 33,
) -> RectifiedChart:
    """Flow-box chart at q with the x₁-origin slid onto the zero set of ``a``.

    With ``a=None`` the chart is the plain flow box (s₀ ≡ 0).
    """
    q = np.asarray(q, dtype=float).reshape(-1)
    dim = X.dim
    v = X.evaluate(q[None])[0]
    speed = float(np.linalg.norm(v))
    if speed < 1e-10:
        raise ChartError(f"X vanishes at q={q.tolist()}", stage="rectify")
    if a is not None:
        a_q = float(a.evaluate(q[None])[0])
        slope = float(X.directional(a).evaluate(q[None])[0])
        if abs(a_q) > CHART_TOL:
            raise ChartError(f"a(q) = {a_q:.3e} is not zero", stage="rectify")
        if slope >= 0:
            raise NonHyperbolicError(f"<da, X>(q) = {slope:.3e} is not negative", stage="rectify")

    span = 2.0 * eps
    if dim == 1:
        sgrid = BoxGrid(span, None, nodes)
        normal = None
        starts = np.broadcast_to(q, (nodes, 1))
        times = sgrid.x1
    else:
        eps_y = eps if eps_y is None else eps_y
        sgrid = BoxGrid(span, eps_y, nodes)
        normal = np.array([-v[1], v[0]]) / speed
        s_mesh, y_mesh = sgrid.mesh()
        starts = (q + y_mesh[..., None] * normal).reshape(-1, 2)
        times = s_mesh.ravel()
    images = flow_points_timed(X, starts, times, cfg, min_steps=256)
    flow_box = tuple(BoxFunction(sgrid, images[:, i].reshape(sgrid.shape)) for i in range(dim))

    ny = sgrid.shape[1]
    shifts = np.zeros(ny)
    if a is not None:
        along = BoxFunction(sgrid, a.evaluate(images).reshape(sgrid.shape)).coefficients
        for j in range(ny):
            col = along[:, j]
            g = lambda s, c=col: float(C.chebval(s / span, c))  # noqa: E731
            lo, hi = -0.5 * eps, 0.5 * eps
            if g(lo) * g(hi) > 0:
                raise ChartError(
                    f"a has no zero on slice {j} within the box; reduce ε",
                    stage="rectify",
                )
            shifts[j] = brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    box = BoxGrid(eps, None if dim == 1 else eps_y, nodes)
    shift_coef = shifts.copy() if dim == 1 else box.vander_inv @ shifts

    chart = RectifiedChart(X, q, normal, box, flow_box, shift_coef)
    _check_chart(chart, a)
    return chart


def _check_chart(chart: RectifiedChart, a: GridFunction | None) -> None:
    x1, y = chart.box.mesh()
    y_arg = None if chart.dim == 1 else y
    pts = chart.forward(x1, y_arg).reshape(-1, chart.dim)
    ds = chart.jacobian(x1, y_arg)[..., 0].reshape(-1, chart.dim)
    err = float(np.max(np.abs(ds - chart.X.evaluate(pts))))
    if err > CHART_TOL:
        raise ChartError(f"flow-box derivative misses X by {err:.3e}", stage="rectify")
    if a is not None:
        zero_set = chart.forward(np.zeros(chart.box.shape[1]), None if chart.dim == 1 else chart.box.y)
        worst = float(np.max(np.abs(a.evaluate(zero_set.reshape(-1, chart.dim)))))
        if worst > CHART_TOL:
            raise ChartError(f"a on the slice x₁=0 reaches {worst:.3e}", stage="rectify")
    logger.debug("chart at %s: derivative error %.2e", chart.q.tolist(), err)


@dataclass(frozen=True, eq=False)
class LinearizedField:
    """ξ = h(x₁, y) conjugating â(x₁, y)∂/∂x₁ to α(y)ξ∂/∂ξ."""

    a_rect: BoxFunction
    alpha: np.ndarray
    h: BoxFunction
    dh: BoxFunction
    xi_grid: BoxGrid

    def to_xi(self, x1: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
        return self.h.evaluate(x1, y)

    def from_xi(self, xi: np.ndarray, max_iters: int = 50) -> np.ndarray:
        """Column-wise inverse of h: xi[..., j] lives on slice j."""
        xi = np.asarray(xi, dtype=float)
        x = xi.copy()
        limit = self.h.grid.half_width
        for _ in range(max_iters):
            step = (self.h.along_x1(x) - xi) / self.dh.along_x1(x)
            x = np.clip(x - step, -limit, limit)
            if np.max(np.abs(step)) < 1e-15:
                break
        return x


def linearize_1d(a_rect: BoxFunction, margin: float = ALPHA_MIN) -> LinearizedField:
    """Per-slice linearization ξ = x₁·exp(∫₀^{x₁} (α/â(s) − 1/s) ds).

    â is written as x₁·m(x₁); the integrand is then (m(0) − m(s))/(s·m(s)), a
    ratio with no singularity, integrated as a Chebyshev series.
    """
    grid = a_rect.grid
    eta = grid.half_width
    u_nodes = grid.unit_nodes
    dense = np.linspace(-1.0, 1.0, 4 * grid.nodes + 1)
    ny = grid.shape[1]
    alpha = np.empty(ny)
    xi = np.empty(grid.shape)
    for j in range(ny):
        m_coef, _ = C.chebdiv(a_rect.coefficients[:, j], [0.0, 1.0])
        m0 = float(C.chebval(0.0, m_coef))
        alpha[j] = m0 / eta
        if alpha[j] > -margin:
            raise NonHyperbolicError(
                f"∂â/∂x₁(0) = {alpha[j]:.3e} on slice {j} misses the margin {-margin}",
                stage="linearize",
            )
        if np.max(C.chebval(dense, m_coef)) >= -1e-12:
            raise NonHyperbolicError(
                f"â vanishes away from x₁=0 on slice {j}; use a smaller ε",
                stage="linearize",
            )
        n_coef = C.chebdiv(C.chebsub([m0], m_coef), [0.0, 1.0])[0]
        q_nodes = C.chebval(u_nodes, n_coef) / (eta * C.chebval(u_nodes, m_coef))
        big_q = C.chebint(grid.vander_inv @ q_nodes, lbnd=0) * eta
        xi[:, j] = grid.x1 * np.exp(C.chebval(u_nodes, big_q))

    h = BoxFunction(grid, xi)
    dh = h.d_x1()
    residual = float(np.max(np.abs(dh.values * a_rect.values - alpha[None, :] * h.values)))
    if residual > CONJUGACY_TOL:
        raise ChartError(f"linearization conjugacy residual {residual:.3e}", stage="linearize")
    if np.min(dh.values) <= 0:
        raise ChartError("linearizing map is not monotone", stage="linearize")
    half = float(min(np.min(-h.values[0]), np.min(h.values[-1])))
    return LinearizedField(a_rect, alpha, h, dh, grid.with_half_width(half))


def _alpha(alpha: np.ndarray | BoxFunction | float, grid: BoxGrid) -> np.ndarray:
    if isinstance(alpha, BoxFunction):
        alpha = alpha.values[0]
    return np.broadcast_to(np.asarray(alpha, dtype=float).reshape(-1), (grid.shape[1],)).copy()


@dataclass(frozen=True, eq=False)
class SplitFunction:
    """b = b₀(y) + x₁b₁(y) + x₁²u(x₁, y)."""

    b0: np.ndarray
    b1: np.ndarray
    u: BoxFunction

    def reassemble(self) -> BoxFunction:
        x1 = self.u.grid.x1[:, None]
        return BoxFunction(self.u.grid, self.b0[None, :] + x1 * self.b1[None, :] + x1 ** 2 * self.u.values)


def split_b(b: BoxFunction) -> SplitFunction:
    grid = b.grid
    eta = grid.half_width
    coef = b.coefficients
    b0 = C.chebval(0.0, coef)
    b1 = C.chebval(0.0, C.chebder(coef, axis=0)) / eta
    rest = coef.copy()
    rest[0] -= b0
    rest[1] -= b1 * eta
    # u² = (T₀ + T₂)/2; chebdiv trims trailing zeros, so columns are padded back
    quo = np.zeros_like(rest)
    for j in range(coef.shape[1]):
        col = C.chebdiv(rest[:, j], [0.5, 0.0, 0.5])[0]
        quo[: len(col), j] = col
    quo /= eta ** 2
    return SplitFunction(np.asarray(b0), np.asarray(b1), BoxFunction.from_coefficients(grid, quo))


def operator_Ahat(alpha: np.ndarray | float, b: BoxFunction) -> BoxFunction:
    """Âb(ξ, y) = ∫₀¹ e^{-tα(y)} b(e^{α(y)t}ξ, y) dt."""
    al = _alpha(alpha, b.grid)
    x1 = b.grid.x1[None, :, None]

    def integrand(t: np.ndarray) -> np.ndarray:
        scale = np.exp(al[None, None, :] * t[:, None, None])
        return b.along_x1(np.broadcast_to(scale * x1, (len(t),) + b.grid.shape)) / scale

    return BoxFunction(b.grid, simpson_unit(integrand))


def operator_B(alpha: np.ndarray | float, u: BoxFunction) -> BoxFunction:
    """Bu(ξ, y) = ∫_{e^{α(y)}}^1 u(τξ, y) dτ."""
    al = _alpha(alpha, u.grid)
    lo = np.exp(al)[None, None, :]
    x1 = u.grid.x1[None, :, None]

    def integrand(s: np.ndarray) -> np.ndarray:
        tau = lo + (1.0 - lo) * s[:, None, None]
        return u.along_x1(np.broadcast_to(tau * x1, (len(s),) + u.grid.shape)) * (1.0 - lo)

    return BoxFunction(u.grid, simpson_unit(integrand))


def operator_R(alpha: np.ndarray | float, v: BoxFunction) -> BoxFunction:
    """Rv(ξ, y) = e^{α(y)} v(e^{α(y)}ξ, y)."""
    scale = np.exp(_alpha(alpha, v.grid))[None, :]
    return BoxFunction(v.grid, scale * v.along_x1(scale * v.grid.x1[:, None]))


def neumann_inverse(alpha: np.ndarray | float, psi: BoxFunction, tol: float = 1e-12) -> BoxFunction:
    """(I − R)⁻¹ψ = Σ Rᵏψ with Rᵏψ(ξ) = e^{kα}ψ(e^{kα}ξ)."""
    al = _alpha(alpha, psi.grid)
    sup = float(np.max(al))
    if sup >= 0:
        raise NonHyperbolicError(f"sup α = {sup:.3e} is not negative", stage="neumann")
    cap = math.ceil(10.0 / -sup * math.log(1.0 / tol))
    threshold = tol * (1.0 - math.exp(sup))
    x1 = psi.grid.x1[:, None]
    total = psi.values.copy()
    for k in range(1, cap + 1):
        scale = np.exp(k * al)[None, :]
        term = scale * psi.along_x1(scale * x1)
        total += term
        if np.max(np.abs(term)) < threshold:
            logger.debug("neumann series converged after %d terms", k)
            return BoxFunction(psi.grid, total)
    raise ConvergenceError(f"Neumann series not converged in {cap} terms", stage="neumann")


def inverse_B(alpha: np.ndarray | float, w: BoxFunction, tol: float = 1e-12) -> BoxFunction:
    """B⁻¹w = ∂/∂ξ(ξ·(I − R)⁻¹w)."""
    return neumann_inverse(alpha, w, tol).times_x1_then_dx1()


def y_derivative_of_neumann(
    alpha: np.ndarray | BoxFunction,
    psi: BoxFunction,
    phi: BoxFunction,
    tol: float = 1e-12,
) -> BoxFunction:
    """∂φ/∂y for φ = (I − R)⁻¹ψ on a 2-D box.

    Differentiating φ = ψ + Rφ in y gives
    φ_y = (I − R)⁻¹(ψ_y + e^α α_y φ(e^α ξ) + e^{2α} α_y ξ φ_ξ(e^α ξ)).
    """
    grid = psi.grid
    al = _alpha(alpha, grid)
    alpha_y = BoxFunction.of_y(grid, al).d_y().values[0][None, :]
    scale = np.exp(al)[None, :]
    x1 = grid.x1[:, None]
    inner = scale * x1
    source = (
        psi.d_y().values
        + scale * alpha_y * phi.along_x1(inner)
        + scale ** 2 * alpha_y * x1 * phi.d_x1().along_x1(inner)
    )
    return neumann_inverse(al, BoxFunction(grid, source), tol)


def inverse_Ahat(alpha: np.ndarray | float, c: BoxFunction, tol: float = 1e-12) -> BoxFunction:
    """Solve Âb = c block by block."""
    al = _alpha(alpha, c.grid)
    parts = split_b(c)
    b0 = al / (1.0 - np.exp(-al)) * parts.b0
    u = inverse_B(al, parts.u * (-al[None, :]), tol)
    return SplitFunction(b0, parts.b1, u).reassemble()


def inverse_A(
    a: GridFunction,
    X: VectorField,
    c: GridFunction,
    chart: RectifiedChart | None = None,
    cfg: FlowConfig = _DEFAULT,
    margin: float = ALPHA_MIN,
) -> GridFunction:
    """Solve A(a, X)b = c on the grid.

    Inside the linearized box b comes from the block inverse of Â after the
    change of variables (Mb)(ξ) = h'·b∘h⁻¹ that turns A into Â. The remaining
    nodes where a is nonzero are solved densely with the box values fixed.
    Where a vanishes at a node the point is stationary and A multiplies by
    ∫₀¹ e^{-t<da,X>} dt.
    """
    if not np.any(c.samples) or not np.any(a.samples):
        return c
    if chart is None:
        raise ChartError("inverse_A needs a chart at a hyperbolic zero of a", stage="inverse_A")

    lin = linearize_1d(chart.pull(a), margin)
    xi_grid = lin.xi_grid
    xi_mesh, y_mesh = xi_grid.mesh()
    x1_of_xi = lin.from_xi(xi_mesh)
    y_arg = None if chart.dim == 1 else y_mesh
    pts = chart.forward(x1_of_xi, y_arg).reshape(-1, chart.dim)
    c_tilde = lin.dh.along_x1(x1_of_xi) * c.evaluate(pts).reshape(xi_grid.shape)
    b_tilde = inverse_Ahat(lin.alpha, BoxFunction(xi_grid, c_tilde))

    shape = a.grid_shape
    nodes = node_points(shape)
    z, inside = chart.backward(nodes)
    x1 = z[:, 0]
    y = z[:, 1] if chart.dim == 2 else None
    xi = lin.to_xi(x1, y)
    in_box = inside & (np.abs(xi) <= xi_grid.half_width)

    b = c.samples.ravel().copy()
    b[in_box] = b_tilde.evaluate(xi[in_box], None if y is None else y[in_box]) / lin.dh.evaluate(
        x1[in_box], None if y is None else y[in_box]
    )
    # a node where a vanishes does not move, but <da,X> need not vanish there
    still = (a.samples.ravel() == 0) & ~in_box
    rate = X.directional(a).samples.ravel()[still]
    b[still] = c.samples.ravel()[still] / _stationary_weight(rate)
    active = ~still & ~in_box
    if np.any(active):
        rows = np.flatnonzero(active)
        matrix = operator_A_matrix(a, X, rows=rows, cfg=cfg)
        rhs = c.samples.ravel()[rows] - matrix[:, ~active] @ b[~active]
        b[rows] = np.linalg.solve(matrix[:, rows], rhs)
    logger.debug("inverse_A: %d box nodes, %d solved densely", int(in_box.sum()), int(active.sum()))
    return GridFunction(b.reshape(shape))


def _stationary_weight(rate: np.ndarray) -> np.ndarray:
    """∫₀¹ e^{-t·rate} dt, equal to 1 where rate is 0."""
    out = np.ones_like(rate)
    nz = rate != 0
    out[nz] = -np.expm1(-rate[nz]) / rate[nz]
    return out


def frame_condition(vectors: np.ndarray) -> float:
    """2-norm condition number of the matrix whose columns are ``vectors``."""
    sv = np.linalg.svd(np.atleast_2d(vectors), compute_uv=False)
    return float(np.inf if sv[-1] == 0 else sv[0] / sv[-1])


def inverse_DPhi(
    abar: Sequence[GridFunction],
    fields: Sequence[VectorField],
    c: VectorField,
    charts: Sequence[RectifiedChart | None],
    q: Sequence[float],
    cfg: FlowConfig = _DEFAULT,
    margin: float = ALPHA_MIN,
) -> list[GridFunction]:
    """Solve D_āΦ[b⃗] = c for Φ(b⃗) = e^{b₁X₁}∘…∘e^{bₙXₙ}.

    With Lᵢ = e^{a₁X₁}∘…∘e^{aᵢXᵢ} and the tail Tᵢ = Lᵢ⁻¹∘Φ,
    D_āΦ[b⃗](x) = Σᵢ (A(aᵢ,Xᵢ)bᵢ)(Tᵢx) · DLᵢ(Tᵢx)Xᵢ(Tᵢx). c is split in that
    moving frame node by node; coordinate i is then moved back by Tᵢ⁻¹ and
    passed through A(aᵢ,Xᵢ)⁻¹. Tₙ is the identity, so the last coordinate
    needs no interpolation.
    """
    shape = c.grid_shape
    flows = [scaled_flow(a, X, cfg) for a, X in zip(abar, fields)]
    partial = []
    acc = DiffeoGrid.identity(shape)
    for step in flows:
        acc = acc.compose(step)
        partial.append(acc)
    tails = []
    acc = DiffeoGrid.identity(shape)
    for step in reversed(flows):
        tails.append(acc)
        acc = step.compose(acc)
    tails.reverse()

    q = np.asarray(q, dtype=float)
    at_q = [differential(L, q[None])[0] @ X.evaluate(q[None])[0] for L, X in zip(partial, fields)]
    cond = frame_condition(np.stack(at_q, axis=-1))
    if cond > FRAME_CONDITION_MAX:
        raise FrameError(f"moving frame at q has condition number {cond:.3e}", stage="inverse_DPhi")

    columns = []
    for L, T, X in zip(partial, tails, fields):
        pts = T.image_points
        columns.append(np.einsum("mij,mj->mi", differential(L, pts), X.evaluate(pts)))
    frame = np.stack(columns, axis=-1)
    target = c.array.reshape(c.dim, -1).T
    gamma = np.einsum("mij,mj->mi", np.linalg.pinv(frame, rcond=1e-8), target)

    nodes = node_points(shape)
    out = []
    for i, (a, X, T) in enumerate(zip(abar, fields, tails)):
        beta = GridFunction(gamma[:, i].reshape(shape))
        if not T.is_identity():
            pre = invert_points(T, nodes, tol=cfg.inverse_tol, max_iters=cfg.inverse_max_iters)
            beta = GridFunction(beta.evaluate(pre).reshape(shape))
        out.append(inverse_A(a, X, beta, charts[i], cfg, margin))
    return out
