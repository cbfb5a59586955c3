"""Flows of vector fields on the torus and the calculus built on them.

Every flow is integrated with fixed-step classical RK4 from the grid nodes;
off-grid field values come from trigonometric interpolation.
"""

from __future__ import annotations

import logging
import math
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import simpson

from .config import FlowConfig
from .errors import FlowError
from .grid import (
    DiffeoGrid,
    FourierEvaluator,
    GridFunction,
    VectorField,
    invert_points,
    node_points,
    spectral_derivative,
)

logger = logging.getLogger(__name__)

_DEFAULT = FlowConfig()

Rhs = Callable[[np.ndarray], np.ndarray]


def _stacked(arrays: Sequence[np.ndarray], grid_shape: tuple[int, ...]) -> Rhs:
    """p -> (M, len(arrays)) of interpolated values, sharing one basis per call."""

    def rhs(points: np.ndarray) -> np.ndarray:
        ev = FourierEvaluator(points, grid_shape)
        return np.stack([ev(a) for a in arrays], axis=-1)

    return rhs


def _rk4(rhs: Rhs, points: np.ndarray, acc: np.ndarray | None, dt: float, steps: int):
    """Advance points (and optional accumulators driven by the trailing rhs columns)."""
    dim = points.shape[1]
    for _ in range(steps):
        k1 = rhs(points)
        k2 = rhs(points + 0.5 * dt * k1[:, :dim])
        k3 = rhs(points + 0.5 * dt * k2[:, :dim])
        k4 = rhs(points + dt * k3[:, :dim])
        inc = dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        points = points + inc[:, :dim]
        if acc is not None:
            acc = acc + inc[:, dim:]
    return points, acc


def _steps(X: VectorField, t: float, cfg: FlowConfig) -> int:
    h_min = 2.0 * np.pi / max(X.grid_shape)
    return cfg.step_count(X.sup_norm(), t, h_min)


def flow_points(
    X: VectorField,
    points: np.ndarray,
    t: float,
    cfg: FlowConfig = _DEFAULT,
    steps: int | None = None,
) -> np.ndarray:
    """Time-t flow of X applied to arbitrary points (unwrapped)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if t == 0:
        return pts.copy()
    n = steps or _steps(X, t, cfg)
    out, _ = _rk4(_stacked(X.array, X.grid_shape), pts, None, t / n, n)
    return out


def flow_points_timed(
    X: VectorField,
    points: np.ndarray,
    times: np.ndarray,
    cfg: FlowConfig = _DEFAULT,
    min_steps: int = 0,
) -> np.ndarray:
    """Flow each point for its own time: integrates p' = τ·X(p) over [0, 1]."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    tau = np.asarray(times, dtype=float).reshape(-1, 1)
    t_max = float(np.max(np.abs(tau))) if tau.size else 0.0
    if t_max == 0:
        return pts.copy()
    n = max(min_steps, _steps(X, t_max, cfg))
    base = _stacked(X.array, X.grid_shape)
    out, _ = _rk4(lambda p: tau * base(p), pts, None, 1.0 / n, n)
    return out


def flow(X: VectorField, t: float, cfg: FlowConfig = _DEFAULT) -> DiffeoGrid:
    """The time-t flow map e^{tX} as a displacement field."""
    if t == 0 or not np.any(X.array):
        return DiffeoGrid.identity(X.grid_shape)
    nodes = node_points(X.grid_shape)
    n = _steps(X, t, cfg)
    images = flow_points(X, nodes, t, cfg, steps=n)
    phi = DiffeoGrid.from_array((images - nodes).T.reshape((X.dim,) + X.grid_shape))
    det = phi.jacobian_det()
    if np.min(det) <= 0:
        raise FlowError(
            f"flow lost orientation (min Jacobian {np.min(det):.3e}) after {n} steps; "
            "reduce t or the field strength",
            stage="flow",
        )
    logger.debug("flow t=%g |X|=%.3g steps=%d", t, X.sup_norm(), n)
    return phi


def scaled_flow(b: GridFunction, X: VectorField, cfg: FlowConfig = _DEFAULT) -> DiffeoGrid:
    """One factor e^{bX}: the time-1 flow of the field b·X."""
    return flow(X.scaled(b), 1.0, cfg)


def differential(phi: DiffeoGrid, points: np.ndarray | None = None) -> np.ndarray:
    """Dφ = I + D(displacement) at ``points`` (the nodes by default), shape (M, dim, dim)."""
    dim = phi.dim
    grads = [[spectral_derivative(d.samples, [int(j == k) for k in range(dim)]) for j in range(dim)]
             for d in phi.displacement]
    if points is None:
        vals = [[g.ravel() for g in row] for row in grads]
        m = phi.array[0].size
    else:
        ev = FourierEvaluator(points, phi.grid_shape)
        vals = [[ev(g) for g in row] for row in grads]
        m = len(ev.points)
    jac = np.empty((m, dim, dim))
    for i in range(dim):
        for j in range(dim):
            jac[:, i, j] = vals[i][j] + (1.0 if i == j else 0.0)
    return jac


def pushforward(phi: DiffeoGrid, X: VectorField, cfg: FlowConfig = _DEFAULT) -> VectorField:
    """(φ_*X)(y) = Dφ(z)·X(z) with z = φ⁻¹(y)."""
    if phi.grid_shape != X.grid_shape:
        raise FlowError(f"grid mismatch {phi.grid_shape} vs {X.grid_shape}", stage="pushforward")
    if phi.is_identity():
        return X
    nodes = node_points(X.grid_shape)
    pre = invert_points(phi, nodes, tol=cfg.inverse_tol, max_iters=cfg.inverse_max_iters)
    moved = np.einsum("mij,mj->mi", differential(phi, pre), X.evaluate(pre))
    return VectorField.from_array(moved.T.reshape((X.dim,) + X.grid_shape))


def integrate_along_flow(
    field: VectorField,
    points: np.ndarray,
    t: float,
    integrand: Callable[[np.ndarray, np.ndarray | None], np.ndarray],
    rate: GridFunction | None = None,
    cfg: FlowConfig = _DEFAULT,
) -> np.ndarray:
    """∫₀ᵗ integrand(p(τ), G(τ)) dτ along the flow of ``field`` from each point.

    G(τ) = ∫₀^τ rate(p(s)) ds is carried as an extra RK4 state when ``rate`` is
    given. The outer integral is composite Simpson, panel count doubled from
    ``cfg.quad_panels`` until successive values agree to ``cfg.quad_tol``.
    """
    arrays = list(field.array)
    if rate is not None:
        arrays.append(rate.samples)
    rhs = _stacked(arrays, field.grid_shape)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    acc0 = np.zeros((len(pts), 1)) if rate is not None else None

    panels = cfg.quad_panels
    total = _steps(field, t, cfg)
    sub = max(1, math.ceil(total / panels))
    traj = [(pts, acc0)]
    for _ in range(panels):
        traj.append(_rk4(rhs, *traj[-1], t / (panels * sub), sub))
    values = [integrand(p, a) for p, a in traj]
    result = simpson(np.stack(values), dx=t / panels, axis=0)

    while panels < cfg.max_quad_panels:
        sub = max(1, math.ceil(sub / 2))
        mids = [_rk4(rhs, p, a, t / (2 * panels * sub), sub) for p, a in traj[:-1]]
        mid_values = [integrand(p, a) for p, a in mids]
        traj = [s for pair in zip(traj[:-1], mids) for s in pair] + [traj[-1]]
        values = [v for pair in zip(values[:-1], mid_values) for v in pair] + [values[-1]]
        panels *= 2
        refined = simpson(np.stack(values), dx=t / panels, axis=0)
        change = float(np.max(np.abs(refined - result)))
        result = refined
        if change < cfg.quad_tol:
            break
    else:
        logger.debug("quadrature stopped at the %d-panel cap", panels)
    return result


def pushforward_factor_along_scaled_flow(
    a: GridFunction,
    X: VectorField,
    t: float,
    cfg: FlowConfig = _DEFAULT,
) -> GridFunction:
    """The scalar c with (e^{taX})_* X = c·X, i.e. exp ∫₀ᵗ <da,X>∘e^{-τaX} dτ."""
    g = X.directional(a)
    if t == 0 or not np.any(g.samples):
        return GridFunction.constant(a.grid_shape, 1.0)
    nodes = node_points(a.grid_shape)
    g_eval = lambda p, _acc: g.evaluate(p)  # noqa: E731
    log_factor = integrate_along_flow(X.scaled(-a), nodes, t, g_eval, cfg=cfg)
    return GridFunction(np.exp(log_factor).reshape(a.grid_shape))


def operator_A(
    a: GridFunction,
    X: VectorField,
    b: GridFunction,
    cfg: FlowConfig = _DEFAULT,
) -> GridFunction:
    """A(a,X)b = ∫₀¹ exp(-∫₀ᵗ <da,X>∘e^{τaX} dτ) · b∘e^{taX} dt."""
    if not np.any(b.samples):
        return b
    if not np.any(a.samples):
        return b
    g = X.directional(a)
    nodes = node_points(a.grid_shape)

    def integrand(p: np.ndarray, acc: np.ndarray) -> np.ndarray:
        return np.exp(-acc[:, 0]) * b.evaluate(p)

    values = integrate_along_flow(X.scaled(a), nodes, 1.0, integrand, rate=g, cfg=cfg)
    return GridFunction(values.reshape(a.grid_shape))


def operator_A_matrix(
    a: GridFunction,
    X: VectorField,
    rows: np.ndarray | None = None,
    cfg: FlowConfig = _DEFAULT,
) -> np.ndarray:
    """Dense matrix of b ↦ A(a,X)b on the grid, restricted to the node indices ``rows``.

    Uses ``cfg.quad_panels`` Simpson panels with no refinement.
    """
    shape = a.grid_shape
    nodes = node_points(shape)
    if rows is not None:
        nodes = nodes[rows]
    field = X.scaled(a)
    rhs = _stacked(list(field.array) + [X.directional(a).samples], shape)
    panels = cfg.quad_panels
    sub = max(1, math.ceil(_steps(field, 1.0, cfg) / panels))
    weights = simpson(np.eye(panels + 1), dx=1.0 / panels, axis=0)

    p, acc = nodes, np.zeros((len(nodes), 1))
    matrix = weights[0] * FourierEvaluator(p, shape).matrix()
    for k in range(1, panels + 1):
        p, acc = _rk4(rhs, p, acc, 1.0 / (panels * sub), sub)
        matrix += weights[k] * np.exp(-acc[:, :1]) * FourierEvaluator(p, shape).matrix()
    return matrix


def exp_directional_derivative(
    a: GridFunction,
    X: VectorField,
    b: GridFunction,
    cfg: FlowConfig = _DEFAULT,
) -> VectorField:
    """d/ds e^{(a+sb)X} at s=0, as a displacement perturbation on the nodes.

    Equals e^{aX}_*((A(a,X)b)·X)∘e^{aX} = De^{aX}(x)·X(x)·(A(a,X)b)(x).
    """
    if not np.any(b.samples):
        return VectorField.constant(b.grid_shape, [0.0] * X.dim)
    ab = operator_A(a, X, b, cfg)
    phi = scaled_flow(a, X, cfg)
    tangent = X.array.reshape(X.dim, -1).T * ab.samples.reshape(-1, 1)
    moved = np.einsum("mij,mj->mi", differential(phi), tangent)
    return VectorField.from_array(moved.T.reshape((X.dim,) + X.grid_shape))
