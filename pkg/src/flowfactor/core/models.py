"""Data models for flowfactor."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator

import numpy as np

from .errors import FrameError, GridError
from .grid import GridFunction, VectorField, ck_norm

FRAME_CONDITION_MAX = 1e6


class Provenance(Enum):
    """Which construction produced a factor."""

    INPUT = "input"
    POINT_FIX = "point-fix"
    SEED_UNDO = "seed-undo"
    LOCAL_SOLVE = "local-solve"
    WORD = "word"

    @classmethod
    def from_str(cls, value: str) -> Provenance:
        normalized = value.lower().strip()
        for member in cls:
            if member.value == normalized:
                return member
        return cls.INPUT


@dataclass
class Family:
    """The named vector fields f₁, …, f_m whose flows are the allowed moves."""

    fields: list[VectorField]
    names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.fields:
            raise GridError("a family needs at least one field")
        shape = self.fields[0].grid_shape
        if any(f.grid_shape != shape for f in self.fields):
            raise GridError("family fields must share one grid")
        if not self.names:
            self.names = [f"f{i + 1}" for i in range(len(self.fields))]
        if len(self.names) != len(self.fields) or len(set(self.names)) != len(self.names):
            raise GridError("family names must be unique, one per field")

    def __len__(self) -> int:
        return len(self.fields)

    def __getitem__(self, index: int) -> VectorField:
        return self.fields[index]

    @property
    def dim(self) -> int:
        return self.fields[0].dim

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return self.fields[0].grid_shape

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise GridError(f"unknown family field {name!r}; known: {', '.join(self.names)}") from None

    def scaled(self, factor: float) -> Family:
        return Family([f * factor for f in self.fields], list(self.names))


@dataclass(frozen=True, eq=False)
class Factor:
    """The diffeomorphism e^{a·f} with f = family[field_index]."""

    a: GridFunction
    field_index: int
    provenance: Provenance = Provenance.INPUT

    @property
    def c1_norm(self) -> float:
        return ck_norm(self.a, 1)

    def negated(self) -> Factor:
        """The exact inverse e^{-a·f}."""
        return Factor(-self.a, self.field_index, self.provenance)

    def is_trivial(self) -> bool:
        return not np.any(self.a.samples)


@dataclass
class FactorList:
    """Factors [F₁, …, F_k] meaning F₁∘…∘F_k: F_k is applied first."""

    ORDER = "left-applied-last"

    factors: list[Factor] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.factors)

    def __iter__(self) -> Iterator[Factor]:
        return iter(self.factors)

    def __add__(self, other: FactorList) -> FactorList:
        return FactorList(self.factors + other.factors)

    def inverse(self) -> FactorList:
        """F_k⁻¹∘…∘F₁⁻¹."""
        return FactorList([f.negated() for f in reversed(self.factors)])

    def provenance_counts(self) -> dict[str, int]:
        return dict(Counter(f.provenance.value for f in self.factors))

    @classmethod
    def word(cls, letters: list[tuple[int, float]], grid_shape: tuple[int, ...]) -> FactorList:
        """Constant-time flows e^{t f_j} for letters (j, t), leftmost applied last."""
        return cls([
            Factor(GridFunction.constant(grid_shape, t), j, Provenance.WORD) for j, t in letters
        ])


@dataclass(frozen=True, eq=False)
class FrameElement:
    """Xᵢ = (Pᵢ)_* f_{field_index} with Pᵢ the recomposition of ``prefix``."""

    prefix: FactorList
    field_index: int
    field: VectorField
    letters: tuple[tuple[int, float], ...] = ()


@dataclass(frozen=True, eq=False)
class Frame:
    """Fields X₁, …, Xₙ forming a basis of the tangent space at q."""

    q: np.ndarray
    elements: tuple[FrameElement, ...]
    condition: float

    def __post_init__(self) -> None:
        if self.condition > FRAME_CONDITION_MAX:
            raise FrameError(f"frame condition number {self.condition:.3e} exceeds {FRAME_CONDITION_MAX:.0e}")

    @property
    def fields(self) -> list[VectorField]:
        return [e.field for e in self.elements]

    @property
    def dim(self) -> int:
        return len(self.elements)

    def vectors_at_q(self) -> np.ndarray:
        """Columns X_i(q)."""
        return np.stack([f.evaluate(self.q[None])[0] for f in self.fields], axis=-1)


@dataclass
class Witness:
    """One selected vector P_*f(q) and the word P that produced it."""

    letters: list[tuple[int, float]]
    field_index: int
    vector: np.ndarray


@dataclass
class RankEntry:
    """Rank certificate at one sample point."""

    point: tuple[float, ...]
    rank: int
    condition: float
    witnesses: list[Witness] = field(default_factory=list)
    flagged: bool = False

    @property
    def gram(self) -> np.ndarray:
        if not self.witnesses:
            return np.zeros((0, 0))
        vectors = np.stack([w.vector for w in self.witnesses], axis=-1)
        return vectors.T @ vectors


@dataclass
class RankReport:
    """Per-point ranks; a numerical certificate, not a proof of transitivity."""

    dim: int
    depth: int
    entries: list[RankEntry] = field(default_factory=list)

    @property
    def transitive(self) -> bool:
        return bool(self.entries) and all(e.rank == self.dim for e in self.entries)

    @property
    def min_rank(self) -> int:
        return min((e.rank for e in self.entries), default=0)

    @property
    def worst_condition(self) -> float:
        full = [e.condition for e in self.entries if e.rank == self.dim]
        return max(full, default=float("inf"))
