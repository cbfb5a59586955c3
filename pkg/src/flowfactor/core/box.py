"""Functions on a small coordinate box [-η, η] × [-ρ, ρ] around a chart point.

Box functions are Chebyshev interpolants on a tensor Gauss-Lobatto grid. The
x₁ axis always has a node at 0, which the hyperbolic operators rely on.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.integrate import simpson

from .errors import GridError


@dataclass(frozen=True, eq=False)
class BoxGrid:
    """Chebyshev nodes on [-half_width, half_width] (× [-y_half_width, y_half_width])."""

    half_width: float
    y_half_width: float | None = None
    nodes: int = 33

    def __post_init__(self) -> None:
        if self.nodes < 5 or self.nodes % 2 == 0:
            raise GridError(f"box node count must be odd and >= 5, got {self.nodes}")
        if self.half_width <= 0 or (self.y_half_width is not None and self.y_half_width <= 0):
            raise GridError("box half-widths must be positive")

    @property
    def degree(self) -> int:
        return self.nodes - 1

    @property
    def is_2d(self) -> bool:
        return self.y_half_width is not None

    @cached_property
    def unit_nodes(self) -> np.ndarray:
        # sin form is symmetric and puts an exact 0 in the middle
        j = np.arange(self.nodes)
        return np.sin(np.pi * (2 * j - self.degree) / (2 * self.degree))

    @cached_property
    def x1(self) -> np.ndarray:
        return self.half_width * self.unit_nodes

    @cached_property
    def y(self) -> np.ndarray:
        if not self.is_2d:
            return np.zeros(1)
        return self.y_half_width * self.unit_nodes

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nodes, len(self.y))

    @cached_property
    def vander(self) -> np.ndarray:
        return C.chebvander(self.unit_nodes, self.degree)

    @cached_property
    def vander_inv(self) -> np.ndarray:
        return np.linalg.inv(self.vander)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x1, self.y, indexing="ij")

    def with_half_width(self, half_width: float) -> BoxGrid:
        return BoxGrid(half_width, self.y_half_width, self.nodes)

    def sample_x1(self, count: int = 257) -> np.ndarray:
        """Dense x₁ sample used for sup norms; includes 0 and both ends."""
        return np.linspace(-self.half_width, self.half_width, count)


@dataclass(frozen=True, eq=False)
class BoxFunction:
    """Values at the box nodes, shape (nx, ny); ny == 1 on a 1-D box."""

    grid: BoxGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(vals)):
            raise GridError("box function has non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_callable(cls, grid: BoxGrid, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> BoxFunction:
        x1, y = grid.mesh()
        return cls(grid, np.broadcast_to(np.asarray(fn(x1, y), dtype=float), grid.shape))

    @classmethod
    def from_coefficients(cls, grid: BoxGrid, coef: np.ndarray) -> BoxFunction:
        """Values from x₁-Chebyshev coefficients; rows beyond the grid degree are dropped."""
        coef = np.asarray(coef, dtype=float)
        if coef.ndim == 1:
            coef = coef[:, None]
        coef = coef[: grid.nodes]
        return cls(grid, grid.vander[:, : len(coef)] @ coef)

    @classmethod
    def of_y(cls, grid: BoxGrid, column: np.ndarray) -> BoxFunction:
        """A function of y only."""
        return cls(grid, np.broadcast_to(np.asarray(column, dtype=float).reshape(1, -1), grid.shape))

    @cached_property
    def coefficients(self) -> np.ndarray:
        """x₁-Chebyshev coefficients per y column, shape (nx, ny)."""
        return self.grid.vander_inv @ self.values

    def along_x1(self, x1: np.ndarray) -> np.ndarray:
        """Evaluate column j at x1[..., j]; returns an array shaped like x1."""
        x1 = np.asarray(x1, dtype=float)
        out = np.empty(x1.shape)
        for j in range(self.grid.shape[1]):
            out[..., j] = C.chebval(x1[..., j] / self.grid.half_width, self.coefficients[:, j])
        return out

    def evaluate(self, x1: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
        u = np.asarray(x1, dtype=float) / self.grid.half_width
        if not self.grid.is_2d:
            return C.chebval(u, self.coefficients[:, 0])
        full = self.coefficients @ self.grid.vander_inv.T
        return C.chebval2d(u, np.asarray(y, dtype=float) / self.grid.y_half_width, full)

    def at_x1_zero(self) -> np.ndarray:
        return self.values[self.grid.nodes // 2]

    def d_x1(self, order: int = 1) -> BoxFunction:
        coef = C.chebder(self.coefficients, m=order, axis=0) / self.grid.half_width ** order
        return BoxFunction.from_coefficients(self.grid, coef)

    def d_y(self) -> BoxFunction:
        if not self.grid.is_2d:
            raise GridError("a 1-D box has no y direction")
        ycoef = self.grid.vander_inv @ self.values.T
        dy = C.chebder(ycoef, axis=0) / self.grid.y_half_width
        return BoxFunction(self.grid, (self.grid.vander[:, : len(dy)] @ dy).T)

    def times_x1_then_dx1(self) -> BoxFunction:
        """∂/∂x₁(x₁·f), computed on coefficients so no degree is lost."""
        # x₁ = η·u, so ∂x₁(x₁ f) = ∂u(u f)
        coef = C.chebder(_mulx(self.coefficients), axis=0)
        return BoxFunction.from_coefficients(self.grid, coef)

    def ck0_norm(self, k: int) -> float:
        """max over j <= k of sup |∂^j f / ∂x₁^j| on a dense x₁ sample of every column."""
        xs = self.grid.sample_x1()[:, None] * np.ones(self.grid.shape[1])
        best = 0.0
        f = self
        for j in range(k + 1):
            if j:
                f = f.d_x1()
            best = max(best, float(np.max(np.abs(f.along_x1(xs)))))
        return best

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def _coerce(self, other: BoxFunction | np.ndarray | float) -> np.ndarray:
        if isinstance(other, BoxFunction):
            return other.values
        return np.asarray(other, dtype=float)

    def __add__(self, other: BoxFunction | float) -> BoxFunction:
        return BoxFunction(self.grid, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other: BoxFunction | float) -> BoxFunction:
        return BoxFunction(self.grid, self.values - self._coerce(other))

    def __mul__(self, other: BoxFunction | float) -> BoxFunction:
        return BoxFunction(self.grid, self.values * self._coerce(other))

    __rmul__ = __mul__

    def __neg__(self) -> BoxFunction:
        return BoxFunction(self.grid, -self.values)


def _mulx(coef: np.ndarray) -> np.ndarray:
    """Coefficients of u·p(u) for every column (one extra degree)."""
    return _mulx_matrix(coef.shape[0]) @ coef


def _mulx_matrix(n: int) -> np.ndarray:
    # u·T₀ = T₁, u·T_k = (T_{k+1} + T_{k-1}) / 2
    m = np.zeros((n + 1, n))
    m[1, 0] = 1.0
    k = np.arange(1, n)
    m[k + 1, k] = 0.5
    m[k - 1, k] += 0.5
    return m


def simpson_unit(
    integrand: Callable[[np.ndarray], np.ndarray],
    panels: int = 64,
    tol: float = 1e-11,
    max_panels: int = 4096,
) -> np.ndarray:
    """∫₀¹ integrand(t) dt; the integrand maps a vector of t to shape (len(t), ...).

    Composite Simpson, panels doubled until successive values differ by < tol.
    """
    t = np.linspace(0.0, 1.0, panels + 1)
    values = integrand(t)
    result = simpson(values, dx=1.0 / panels, axis=0)
    while panels < max_panels:
        mids = integrand(0.5 * (t[:-1] + t[1:]))
        merged = np.empty((2 * panels + 1,) + values.shape[1:])
        merged[0::2] = values
        merged[1::2] = mids
        t = np.linspace(0.0, 1.0, 2 * panels + 1)
        values, panels = merged, 2 * panels
        refined = simpson(values, dx=1.0 / panels, axis=0)
        done = np.max(np.abs(refined - result)) < tol
        result = refined
        if done:
            break
    return result
