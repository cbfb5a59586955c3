"""Factor a near-identity diffeomorphism into flows e^{a·f} of family fields.

Pipeline: fragment P over a cover of charts; in each chart fix the chart
centre q, then solve Φ(b⃗) = Φ(ā)∘P′ by smoothed Newton near hyperbolic
seeds ā; finally rewrite every factor e^{bXᵢ} in terms of the family.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .config import Config, FactorizeConfig, FlowConfig, NewtonConfig
from .errors import (
    ConjugationError,
    ConvergenceError,
    FixPointError,
    FlowFactorError,
    FragmentError,
    InvalidDiffeoError,
)
from .flow import flow_points, scaled_flow
from .grid import (
    TWO_PI,
    DiffeoGrid,
    GridFunction,
    Region,
    VectorField,
    box_bump,
    bump,
    ck_norm,
    compose_with_map,
    dilate_periodic,
    invert_points,
    node_points,
    torus_offset,
)
from .hyperbolic import ALPHA_MIN, inverse_DPhi, rectify
from .models import Factor, FactorList, Family, Frame, FrameElement, Provenance
from .orbit import find_frame

logger = logging.getLogger(__name__)

_FLOW = FlowConfig()


@dataclass(frozen=True)
class Chart:
    """A cover element: O = inner box ⊂ U = outer box around ``center``."""

    center: tuple[float, ...]
    inner: tuple[float, ...]
    outer: tuple[float, ...]

    def __post_init__(self) -> None:
        for lo, hi in zip(self.inner, self.outer):
            if not 0 < lo < hi < np.pi:
                raise FragmentError(f"chart needs 0 < inner < outer < π, got {lo}, {hi}")

    @property
    def dim(self) -> int:
        return len(self.center)

    def cutoff(self, grid_shape: tuple[int, ...]) -> GridFunction:
        """1 on O, support inside U with a two-cell margin."""
        h = TWO_PI / min(grid_shape)
        return box_bump(self.center, self.inner, [w - 2 * h for w in self.outer], grid_shape)

    def region(self, grid_shape: tuple[int, ...]) -> Region:
        offsets = torus_offset(node_points(grid_shape), self.center)
        inside = np.all(np.abs(offsets) < np.asarray(self.outer), axis=1)
        return Region(inside.reshape(grid_shape))

    def inner_region(self, grid_shape: tuple[int, ...]) -> Region:
        offsets = torus_offset(node_points(grid_shape), self.center)
        inside = np.all(np.abs(offsets) <= np.asarray(self.inner), axis=1)
        return Region(inside.reshape(grid_shape))

    def sample_points(self, fraction: float = 0.85) -> np.ndarray:
        """Corners and edge midpoints of the scaled outer box."""
        steps = [(-1.0, 0.0, 1.0)] * self.dim
        grid = np.array(np.meshgrid(*steps, indexing="ij")).reshape(self.dim, -1).T
        grid = grid[np.any(grid != 0, axis=1)]
        return np.asarray(self.center) + fraction * grid * np.asarray(self.outer)


def _tile(centers: Sequence[Sequence[float]], inner: Sequence[float], margin: float) -> list[Chart]:
    return [Chart(tuple(c), tuple(inner), tuple(w + margin for w in inner)) for c in centers]


def cover(name: str, dim: int) -> list[Chart]:
    """The fixed covers: arcs3 (T¹), rect2x2 and rect3x2 (T²)."""
    overlap = 0.05
    if name == "arcs3" and dim == 1:
        return _tile([[TWO_PI * k / 3] for k in range(3)], [np.pi / 3 + overlap], 0.6)
    if name == "rect2x2" and dim == 2:
        centers = [[np.pi / 2 + i * np.pi, np.pi / 2 + j * np.pi] for i in range(2) for j in range(2)]
        return _tile(centers, [np.pi / 2 + overlap] * 2, 0.5)
    if name == "rect3x2" and dim == 2:
        centers = [[np.pi / 2 + i * TWO_PI / 3, np.pi / 2 + j * np.pi] for i in range(3) for j in range(2)]
        return _tile(centers, [np.pi / 3 + overlap, np.pi / 2 + overlap], 0.45)
    raise FragmentError(f"unknown cover {name!r} for dimension {dim}")


def default_cover(family: Family, cfg: FactorizeConfig) -> list[Chart]:
    """arcs3 on T¹; on T², rect3x2 when some field vanishes somewhere, else rect2x2."""
    dim = family.dim
    if cfg.cover != "auto":
        return cover(cfg.cover, dim)
    if dim == 1:
        return cover("arcs3", dim)
    degenerate = any(np.min(np.sqrt(np.sum(f.array ** 2, axis=0))) < 1e-8 for f in family.fields)
    return cover("rect3x2" if degenerate else "rect2x2", dim)


def recompose(factors: FactorList, family: Family, cfg: FlowConfig = _FLOW) -> DiffeoGrid:
    """F₁∘…∘F_k, composed from the right (F_k is applied first)."""
    acc = DiffeoGrid.identity(family.grid_shape)
    for factor in reversed(factors.factors):
        if factor.is_trivial():
            continue
        acc = scaled_flow(factor.a, family[factor.field_index], cfg).compose(acc)
    return acc


def compose_all(maps: Sequence[DiffeoGrid]) -> DiffeoGrid:
    """M₁∘…∘M_k composed from the right."""
    acc = DiffeoGrid.identity(maps[0].grid_shape)
    for m in reversed(maps):
        acc = m.compose(acc)
    return acc


def phi_map(
    b: Sequence[GridFunction],
    fields: Sequence[VectorField],
    q: Sequence[float] | None = None,
    cfg: FlowConfig = _FLOW,
) -> DiffeoGrid:
    """Φ(b⃗) = e^{b₁X₁}∘…∘e^{bₙXₙ}."""
    if q is not None:
        point = np.asarray(q, dtype=float)[None]
        worst = max(abs(float(bi.evaluate(point)[0])) for bi in b)
        if worst > 1e-10:
            raise FlowFactorError(f"profiles must vanish at q (|b(q)| = {worst:.3e})", stage="phi")
    return compose_all([scaled_flow(bi, X, cfg) for bi, X in zip(b, fields)])


def support(P: DiffeoGrid, threshold: float = 1e-12) -> Region:
    """Nodes where P moves points by more than ``threshold``, grown by one cell."""
    magnitude = np.sqrt(np.sum(P.array ** 2, axis=0))
    return Region(dilate_periodic(magnitude > threshold))


def _seed_radii(chart: Chart, ncfg: NewtonConfig) -> tuple[float, float]:
    width = min(chart.outer)
    return ncfg.seed_inner * width, ncfg.seed_outer * width


def seed_profiles(
    frame: Frame,
    eps: float,
    chart: Chart,
    ncfg: NewtonConfig = NewtonConfig(),
) -> list[GridFunction]:
    """aᵢ = −ε·ℓᵢ·bump_q with ℓᵢ the linear coordinate along Xᵢ(q).

    ℓᵢ(x) = <x − q, Xᵢ(q)>/|Xᵢ(q)|². The sampled profile is then shifted by a
    multiple of the bump and rescaled so that its interpolant has aᵢ(q) = 0 and
    <d_q aᵢ, Xᵢ(q)> = −ε exactly, also when q is not a grid node.
    """
    if eps <= 0:
        raise FlowFactorError(f"seed scale must be positive, got {eps}", stage="seed")
    shape = frame.fields[0].grid_shape
    r_in, r_out = _seed_radii(chart, ncfg)
    cut = bump(frame.q, r_in, r_out, shape)
    offsets = torus_offset(node_points(shape), frame.q)
    point = frame.q[None]
    cut_q = float(cut.evaluate(point)[0])
    seeds = []
    for X in frame.fields:
        v = X.evaluate(point)[0]
        ell = (offsets @ v / float(v @ v)).reshape(shape)
        a = GridFunction(-eps * ell * cut.samples)
        a = a - cut * (float(a.evaluate(point)[0]) / cut_q)
        slope = float(X.directional(a).evaluate(point)[0])
        if slope < -ALPHA_MIN * eps:
            a = a * (-eps / slope)
        value = float(a.evaluate(point)[0])
        if abs(value) > 1e-10 or slope >= -ALPHA_MIN * eps:
            raise FlowFactorError(
                f"seed fails its hypotheses at q (a(q)={value:.2e}, <da,X>(q)={slope:.3e})",
                stage="seed",
            )
        seeds.append(a)
    return seeds


def _local_charts(
    b: Sequence[GridFunction],
    frame: Frame,
    chart: Chart,
    ncfg: NewtonConfig,
    fcfg: FlowConfig,
):
    r_in, _ = _seed_radii(chart, ncfg)
    charts = []
    for bi, X in zip(b, frame.fields):
        speed = float(np.linalg.norm(X.evaluate(frame.q[None])[0]))
        charts.append(rectify(X, bi, frame.q, 0.5 * r_in / speed, 0.5 * r_in, fcfg))
    return charts


def solve_local(
    target: DiffeoGrid,
    frame: Frame,
    abar: Sequence[GridFunction],
    chart: Chart,
    eps: float,
    ncfg: NewtonConfig = NewtonConfig(),
    fcfg: FlowConfig = _FLOW,
) -> tuple[list[GridFunction], list[float]]:
    """Smoothed Newton for Φ(b⃗) = target starting from ā.

    Each update is low-passed with the scheduled cutoff and corrected so that
    every bᵢ keeps vanishing at q. Returns the profiles and residual history.
    """
    shape = target.grid_shape
    r_in, r_out = _seed_radii(chart, ncfg)
    pin = bump(frame.q, r_in, r_out, shape)
    point = frame.q[None]
    pin_q = float(pin.evaluate(point)[0])
    margin = 0.5 * ALPHA_MIN * eps
    b = list(abar)
    history: list[float] = []
    for it in range(ncfg.max_iters):
        phi = phi_map(b, frame.fields, cfg=fcfg)
        residual = target.difference(phi)
        r0 = float(np.max(np.abs(residual.array)))
        history.append(r0)
        r1 = max(ck_norm(c, 1) for c in residual.components)
        logger.debug("newton iter %d: C0 %.3e C1 %.3e", it, r0, r1)
        if r0 <= ncfg.residual_c0 and r1 <= ncfg.residual_c1:
            return b, history
        if len(history) >= 3 and history[-1] > history[-2] > history[-3]:
            raise ConvergenceError(
                f"residual increased twice in a row at iteration {it}",
                history=history,
                stage="solve_local",
            )
        charts = _local_charts(b, frame, chart, ncfg, fcfg)
        delta = inverse_DPhi(b, frame.fields, residual, charts, frame.q, fcfg, margin)
        cutoff = ncfg.cutoff(it)
        for i, d in enumerate(delta):
            d = d.low_pass(cutoff)
            d = d - pin * (float(d.evaluate(point)[0]) / pin_q)
            b[i] = b[i] + d
    raise ConvergenceError(
        f"no convergence in {ncfg.max_iters} iterations (last residual {history[-1]:.3e})",
        history=history,
        stage="solve_local",
    )


def _fixing_fields(frame: Frame, chart: Chart, ncfg: NewtonConfig) -> tuple[GridFunction, list[VectorField]]:
    shape = frame.fields[0].grid_shape
    r_in, r_out = _seed_radii(chart, ncfg)
    cut = bump(frame.q, r_in, r_out, shape)
    return cut, [X.scaled(cut) for X in frame.fields]


def fix_point(
    P: DiffeoGrid,
    frame: Frame,
    chart: Chart,
    family: Family,
    ncfg: NewtonConfig = NewtonConfig(),
    fcfg: FlowConfig = _FLOW,
    conjugation_tol: float = 1e-8,
    max_iters: int = 50,
) -> tuple[FactorList, DiffeoGrid]:
    """Split P = Q(s⃗)∘P′ with Q(s⃗) = e^{s₁bX₁}∘…∘e^{sₙbXₙ} and P′(q) = q."""
    q = frame.q
    target = P(q[None])[0]
    offset = torus_offset(target[None], q)[0]
    if np.max(np.abs(offset)) <= 1e-13:
        return FactorList(), P

    cut, fields = _fixing_fields(frame, chart, ncfg)
    jac0 = frame.vectors_at_q()
    s = np.linalg.solve(jac0, offset)
    speed = max(f.sup_norm() for f in fields)
    steps = max(fcfg.min_steps, fcfg.step_count(speed, 2.0 * float(np.max(np.abs(s))), TWO_PI / max(P.grid_shape)))
    fixed = replace(fcfg, steps=steps)

    def Q_at_q(s_vec: np.ndarray) -> np.ndarray:
        p = q[None]
        for si, X in zip(reversed(s_vec), reversed(fields)):
            p = flow_points(X, p, float(si), fixed, steps=steps)
        return p[0]

    def residual(s_vec: np.ndarray) -> np.ndarray:
        return torus_offset(Q_at_q(s_vec)[None], target)[0]

    h = 1e-6
    for it in range(max_iters):
        r = residual(s)
        if np.max(np.abs(r)) <= 1e-13:
            break
        jac = np.stack(
            [(residual(s + h * e) - residual(s - h * e)) / (2 * h) for e in np.eye(len(s))], axis=-1
        )
        s = s - np.linalg.solve(jac, r)
    else:
        raise FixPointError(
            f"point-fixing Newton failed (residual {np.max(np.abs(r)):.3e}); fragment more finely",
            stage="fix_point",
        )

    profiles = [cut * float(si) for si in s]
    Q = phi_map(profiles, frame.fields, cfg=fixed)
    shape = P.grid_shape
    nodes = node_points(shape)
    pre = invert_points(Q, P.image_points, tol=fcfg.inverse_tol, max_iters=fcfg.inverse_max_iters)
    P_fixed = DiffeoGrid.from_array((pre - nodes).T.reshape((P.dim,) + shape))

    prefix = FactorList()
    for profile, element in zip(profiles, frame.elements):
        prefix = prefix + conjugate_factor(profile, element, family, fixed, conjugation_tol, Provenance.POINT_FIX)
    logger.debug("fix_point: s=%s after %d iterations", np.round(s, 12).tolist(), it)
    return prefix, P_fixed


def conjugate_factor(
    a: GridFunction,
    element: FrameElement,
    family: Family,
    cfg: FlowConfig = _FLOW,
    tol: float = 1e-8,
    provenance: Provenance = Provenance.LOCAL_SOLVE,
) -> FactorList:
    """e^{aXᵢ} = Pᵢ∘e^{(a∘Pᵢ)fᵢ}∘Pᵢ⁻¹ as family factors.

    Pᵢ⁻¹ is the reversed list of negated factors; e^{−cf} inverts e^{cf}
    exactly for an autonomous field cf.
    """
    if not element.prefix.factors:
        return FactorList([Factor(a, element.field_index, provenance)])
    P = recompose(element.prefix, family, cfg)
    middle = Factor(compose_with_map(a, P), element.field_index, provenance)
    out = element.prefix + FactorList([middle]) + element.prefix.inverse()
    err = recompose(out, family, cfg).c0_distance(scaled_flow(a, element.field, cfg))
    if err > tol:
        raise ConjugationError(f"conjugated factor misses e^(aX) by {err:.3e}", stage="conjugate")
    return out


def fragment(
    P: DiffeoGrid,
    charts: Sequence[Chart],
    near_identity: float = 0.05,
) -> list[DiffeoGrid]:
    """Peel P = P₁∘…∘P_k with Pᵢ(x) = x + aᵢ(x)φ_R(x), R the remainder so far."""
    c1 = max(ck_norm(d, 1) for d in P.displacement)
    if c1 > near_identity:
        raise FragmentError(
            f"‖φ_P‖_C1 = {c1:.3e} exceeds {near_identity}; factor a smaller P",
            stage="fragment",
        )
    shape = P.grid_shape
    nodes = node_points(shape)
    remainder = P
    pieces = []
    for i, chart in enumerate(charts):
        cut = chart.cutoff(shape)
        piece = DiffeoGrid(tuple(cut * d for d in remainder.displacement))
        try:
            piece.validate()
        except InvalidDiffeoError as exc:
            raise FragmentError(f"{exc}; use a smaller P or a finer cover", stage="fragment", fragment=i) from exc
        pieces.append(piece)
        if piece.is_identity():
            continue
        logger.debug("fragment %d: support arcs %s", i, support(piece).bbox)
        pre = invert_points(piece, remainder.image_points)
        remainder = DiffeoGrid.from_array((pre - nodes).T.reshape((P.dim,) + shape))
    left = float(np.max(np.abs(remainder.array)))
    if left > 1e-9:
        arcs = support(remainder).bbox
        raise FragmentError(f"cover leaves displacement {left:.3e} uncovered on {arcs}", stage="fragment")
    return pieces


def _factor_piece(
    piece: DiffeoGrid,
    chart: Chart,
    family: Family,
    config: Config,
    index: int,
) -> tuple[FactorList, dict]:
    fcfg, ncfg, zcfg = config.flow, config.newton, config.factorize
    stats = {"retries": 0, "timings": {}, "iterations": 0}
    if piece.is_identity():
        return FactorList(), stats

    def timed(stage: str, fn, *args, **kwargs):
        start = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        except FlowFactorError as exc:
            raise exc.with_context(stage=stage, fragment=index)
        finally:
            stats["timings"][stage] = stats["timings"].get(stage, 0.0) + time.perf_counter() - start

    q = np.asarray(chart.center)
    frame = timed("frame", find_frame, q, family, zcfg.frame_depth, chart.sample_points(), cfg=fcfg)
    prefix, fixed = timed("fix_point", fix_point, piece, frame, chart, family, ncfg, fcfg, zcfg.conjugation_tol)

    eps = ncfg.eps
    while True:
        abar = timed("seed", seed_profiles, frame, eps, chart, ncfg)
        target = phi_map(abar, frame.fields, cfg=fcfg).compose(fixed)
        try:
            b, history = timed("solve_local", solve_local, target, frame, abar, chart, eps, ncfg, fcfg)
            break
        except ConvergenceError as exc:
            stats["retries"] += 1
            eps *= 0.5
            logger.warning("fragment %d: Newton diverged, retrying with eps=%g", index, eps)
            if eps < ncfg.eps_floor:
                raise ConvergenceError(
                    f"Newton failed down to eps floor {ncfg.eps_floor}",
                    history=exc.history,
                    stage="solve_local",
                    fragment=index,
                ) from exc
    stats["iterations"] = len(history)

    body = FactorList()
    for a, element in reversed(list(zip(abar, frame.elements))):
        body = body + timed(
            "conjugate", conjugate_factor, -a, element, family, fcfg, zcfg.conjugation_tol, Provenance.SEED_UNDO
        )
    for bi, element in zip(b, frame.elements):
        body = body + timed(
            "conjugate", conjugate_factor, bi, element, family, fcfg, zcfg.conjugation_tol, Provenance.LOCAL_SOLVE
        )
    return prefix + body, stats


def factorize(P: DiffeoGrid, family: Family, config: Config | None = None) -> FactorList:
    """FactorList whose recomposition matches P; per-run stats land in ``.stats``."""
    config = config or Config()
    zcfg = config.factorize
    if P.grid_shape != family.grid_shape:
        raise FragmentError(f"grid mismatch {P.grid_shape} vs family {family.grid_shape}", stage="input")
    if P.is_identity():
        return FactorList(stats={"retries": 0, "timings": {}, "fragments": 0})

    start = time.perf_counter()
    charts = default_cover(family, zcfg)
    pieces = fragment(P, charts, zcfg.near_identity)
    fragment_time = time.perf_counter() - start

    jobs = [(piece, chart, i) for i, (piece, chart) in enumerate(zip(pieces, charts))]
    if zcfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=zcfg.jobs) as pool:
            results = list(pool.map(lambda job: _factor_piece(job[0], job[1], family, config, job[2]), jobs))
    else:
        results = [_factor_piece(piece, chart, family, config, i) for piece, chart, i in jobs]

    out = FactorList()
    timings = {"fragment": fragment_time}
    retries = 0
    for factors, stats in results:
        out = out + factors
        retries += stats["retries"]
        for stage, seconds in stats["timings"].items():
            timings[stage] = timings.get(stage, 0.0) + seconds
    out.stats = {
        "retries": retries,
        "timings": timings,
        "fragments": sum(not p.is_identity() for p in pieces),
    }
    logger.info("factorized into %d factors over %d fragments", len(out), out.stats["fragments"])
    return out
