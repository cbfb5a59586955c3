"""Orbit-rank certification: does the group generated by the family act transitively?

Candidate vectors are P_*f(q) where P runs over words of flows e^{±t f_j}
with t from a fixed ladder. Pushed-forward fields are built one letter at a
time on the grid, so evaluating them at many sample points is cheap.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np

from .config import FlowConfig
from .errors import FrameError
from .flow import differential, pushforward, scaled_flow
from .grid import DiffeoGrid, FourierEvaluator, GridFunction, VectorField, axis_nodes
from .models import (
    FRAME_CONDITION_MAX,
    Family,
    FactorList,
    Frame,
    FrameElement,
    RankEntry,
    RankReport,
    Witness,
)

logger = logging.getLogger(__name__)

LADDER = (0.1, 0.3, 0.7)
_DEFAULT = FlowConfig()

Letter = tuple[int, float]


@dataclass(frozen=True, eq=False)
class Candidate:
    letters: tuple[Letter, ...]
    field_index: int
    field: VectorField


def word_map(letters: Sequence[Letter], family: Family, cfg: FlowConfig = _DEFAULT) -> DiffeoGrid:
    """e^{t₁f_{j₁}}∘…∘e^{t_k f_{j_k}} on the grid."""
    acc = DiffeoGrid.identity(family.grid_shape)
    for j, t in reversed(letters):
        step = scaled_flow(GridFunction.constant(family.grid_shape, t), family[j], cfg)
        acc = step.compose(acc)
    return acc


class WordSearch:
    """Pushed-forward family fields grouped by word length, built lazily."""

    def __init__(self, family: Family, cfg: FlowConfig = _DEFAULT, ladder: Sequence[float] = LADDER) -> None:
        self.family = family
        self.cfg = cfg
        self.letters: list[Letter] = [
            (j, sign * t) for j in range(len(family)) for t in ladder for sign in (1.0, -1.0)
        ]
        self._letter_data: dict[Letter, tuple[FourierEvaluator, np.ndarray]] = {}
        self.levels: list[list[Candidate]] = [
            [Candidate((), i, f) for i, f in enumerate(family.fields)]
        ]

    def _prepare(self, letter: Letter) -> tuple[FourierEvaluator, np.ndarray]:
        if letter not in self._letter_data:
            j, t = letter
            shape = self.family.grid_shape
            forward = scaled_flow(GridFunction.constant(shape, t), self.family[j], self.cfg)
            backward = scaled_flow(GridFunction.constant(shape, -t), self.family[j], self.cfg)
            pre = backward.image_points
            self._letter_data[letter] = (FourierEvaluator(pre, shape), differential(forward, pre))
        return self._letter_data[letter]

    def push(self, letter: Letter, Y: VectorField) -> VectorField:
        """(e^{t f_j})_* Y."""
        ev, jac = self._prepare(letter)
        values = np.stack([ev(c.samples) for c in Y.components], axis=-1)
        moved = np.einsum("mij,mj->mi", jac, values)
        return VectorField.from_array(moved.T.reshape((Y.dim,) + Y.grid_shape))

    def level(self, k: int) -> list[Candidate]:
        while len(self.levels) <= k:
            grown = []
            for cand in self.levels[-1]:
                for letter in self.letters:
                    if cand.letters and _cancels(letter, cand.letters[0]):
                        continue
                    grown.append(Candidate((letter,) + cand.letters, cand.field_index, self.push(letter, cand.field)))
            logger.debug("word level %d: %d candidates", len(self.levels), len(grown))
            self.levels.append(grown)
        return self.levels[k]

    def upto(self, depth: int, budget: int | None = None) -> list[Candidate]:
        out: list[Candidate] = []
        for k in range(depth + 1):
            out.extend(self.level(k))
            if budget is not None and len(out) >= budget:
                return out[:budget]
        return out


def _cancels(a: Letter, b: Letter) -> bool:
    return a[0] == b[0] and np.isclose(a[1], -b[1])


def greedy_select(vectors: np.ndarray, dim: int, condition_max: float = FRAME_CONDITION_MAX) -> list[int]:
    """Indices chosen by greedy volume maximization over unit vectors."""
    norms = np.linalg.norm(vectors, axis=1)
    usable = norms > 1e-12
    units = np.zeros_like(vectors)
    units[usable] = vectors[usable] / norms[usable, None]
    basis = np.zeros((0, vectors.shape[1]))
    chosen: list[int] = []
    while len(chosen) < dim:
        residual = units - (units @ basis.T) @ basis
        gain = np.where(usable, np.linalg.norm(residual, axis=1), 0.0)
        best = int(np.argmax(gain))
        if gain[best] <= 1.0 / condition_max:
            break
        chosen.append(best)
        basis = np.vstack([basis, residual[best] / gain[best]])
    return chosen


def _condition(vectors: np.ndarray) -> float:
    if len(vectors) == 0:
        return float("inf")
    units = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    sv = np.linalg.svd(units.T, compute_uv=False)
    return float(np.inf if sv[-1] == 0 else sv[0] / sv[-1])


def _entry(point: np.ndarray, cands: list[Candidate], vectors: np.ndarray, dim: int) -> RankEntry:
    chosen = greedy_select(vectors, dim)
    picked = vectors[chosen]
    cond = _condition(picked)
    witnesses = [Witness(list(cands[i].letters), cands[i].field_index, vectors[i].copy()) for i in chosen]
    return RankEntry(
        point=tuple(float(x) for x in point),
        rank=len(chosen),
        condition=cond,
        witnesses=witnesses,
        flagged=len(chosen) == dim and cond > 0.1 * FRAME_CONDITION_MAX,
    )


def rank_at(
    q: Sequence[float],
    family: Family,
    search_depth: int,
    budget: int | None = None,
    search: WordSearch | None = None,
) -> RankEntry:
    """Greedy rank of span{P_*f(q)} over words of length <= search_depth."""
    search = search or WordSearch(family)
    point = np.asarray(q, dtype=float).reshape(1, -1)
    entry = None
    for k in range(search_depth + 1):
        cands = search.upto(k, budget)
        vectors = np.stack([c.field.evaluate(point)[0] for c in cands])
        entry = _entry(point[0], cands, vectors, family.dim)
        if entry.rank == family.dim or (budget is not None and len(cands) >= budget):
            break
    return entry


def sample_lattice(dim: int, samples: int) -> np.ndarray:
    return np.array(list(product(axis_nodes(samples), repeat=dim)))


def is_transitive(
    family: Family,
    samples: int = 16,
    depth: int = 1,
    budget: int | None = None,
    search: WordSearch | None = None,
) -> tuple[bool, RankReport]:
    """Rank test on a samples^dim lattice; a numerical certificate only."""
    search = search or WordSearch(family)
    points = sample_lattice(family.dim, samples)
    entries: list[RankEntry | None] = [None] * len(points)
    pending = np.arange(len(points))
    for k in range(depth + 1):
        cands = search.upto(k, budget)
        values = np.stack([c.field.evaluate(points[pending]) for c in cands], axis=1)
        still = []
        for row, idx in enumerate(pending):
            entry = _entry(points[idx], cands, values[row], family.dim)
            entries[idx] = entry
            if entry.rank < family.dim:
                still.append(idx)
        pending = np.array(still, dtype=int)
        if len(pending) == 0:
            break
    report = RankReport(family.dim, depth, [e for e in entries if e is not None])
    logger.info(
        "transitivity: %d/%d points at full rank (depth %d)",
        sum(e.rank == family.dim for e in report.entries),
        len(report.entries),
        depth,
    )
    return report.transitive, report


def _robust_choice(values: np.ndarray, dim: int) -> tuple[tuple[int, ...], float]:
    """Best dim-subset by min over sample points of |det| normalized at q (row 0)."""
    norms = np.linalg.norm(values[:, 0], axis=1)
    ok = np.flatnonzero(norms > 1e-12)
    if len(ok) < dim:
        return (), 0.0
    vals = values[ok] / norms[ok, None, None]
    if dim == 1:
        score = np.min(np.abs(vals[:, :, 0]), axis=1)
        best = int(np.argmax(score))
        return (int(ok[best]),), float(score[best])
    det = vals[:, None, :, 0] * vals[None, :, :, 1] - vals[:, None, :, 1] * vals[None, :, :, 0]
    score = np.min(np.abs(det), axis=2)
    flat = int(np.argmax(score))
    i, j = np.unravel_index(flat, score.shape)
    return (int(ok[i]), int(ok[j])), float(score[i, j])


def find_frame(
    q: Sequence[float],
    family: Family,
    search_depth: int,
    region_points: np.ndarray | None = None,
    budget: int | None = 512,
    cfg: FlowConfig = _DEFAULT,
    search: WordSearch | None = None,
) -> Frame:
    """Frame at q from pushed-forward family fields.

    With ``region_points`` the subset is chosen to stay well conditioned on
    those points too, not only at q.
    """
    q = np.asarray(q, dtype=float).reshape(-1)
    search = search or WordSearch(family, cfg)
    cands = search.upto(search_depth, budget)
    pts = q[None] if region_points is None else np.vstack([q[None], np.asarray(region_points, dtype=float)])
    values = np.stack([c.field.evaluate(pts) for c in cands])

    if region_points is None:
        chosen = tuple(greedy_select(values[:, 0], family.dim))
        good = len(chosen) == family.dim
    else:
        chosen, score = _robust_choice(values, family.dim)
        good = len(chosen) == family.dim and score > 1.0 / FRAME_CONDITION_MAX
    if not good:
        raise FrameError(
            f"family reaches rank < {family.dim} at q={q.tolist()} within depth {search_depth}",
            stage="frame",
        )

    elements = []
    for i in chosen:
        cand = cands[i]
        prefix = FactorList.word(list(cand.letters), family.grid_shape)
        X = pushforward(word_map(cand.letters, family, cfg), family[cand.field_index], cfg)
        elements.append(FrameElement(prefix, cand.field_index, X, cand.letters))
    at_q = np.stack([e.field.evaluate(q[None])[0] for e in elements], axis=-1)
    sv = np.linalg.svd(at_q, compute_uv=False)
    condition = float(np.inf if sv[-1] == 0 else sv[0] / sv[-1])
    logger.debug("frame at %s: words %s, condition %.3g", q.tolist(), [e.letters for e in elements], condition)
    return Frame(q, tuple(elements), condition)
