"""Periodic calculus on the flat tori T¹ and T².

Functions are stored as samples on the uniform grid x_k = 2πk/N (row-major,
``indexing="ij"``) and are evaluated off-grid by trigonometric interpolation.
Every value type here is immutable; operations return new objects.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import GridError, InvalidDiffeoError, MapInversionError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
MIN_SAMPLES = 16
# a point whose index coordinate is this close to an integer is treated as a node
_NODE_SNAP = 1e-11
_EVAL_CHUNK = 65536


def check_grid_shape(grid_shape: Sequence[int]) -> tuple[int, ...]:
    """Validate a grid shape: 1 or 2 axes, each a power of two >= 16."""
    shape = tuple(int(n) for n in grid_shape)
    if len(shape) not in (1, 2):
        raise GridError(f"only T^1 and T^2 are supported, got grid {shape}")
    for n in shape:
        if n < MIN_SAMPLES or n & (n - 1):
            raise GridError(f"grid size {n} is not a power of two >= {MIN_SAMPLES}")
    return shape


def axis_nodes(n: int) -> np.ndarray:
    return TWO_PI * np.arange(n) / n


def node_mesh(grid_shape: Sequence[int]) -> tuple[np.ndarray, ...]:
    """Coordinate arrays of the grid nodes, one per axis."""
    return tuple(np.meshgrid(*(axis_nodes(n) for n in grid_shape), indexing="ij"))


def node_points(grid_shape: Sequence[int]) -> np.ndarray:
    """Grid nodes as an (M, dim) array in row-major order."""
    return np.stack([m.ravel() for m in node_mesh(grid_shape)], axis=-1)


def wrap(points: np.ndarray) -> np.ndarray:
    return np.mod(points, TWO_PI)


def torus_offset(points: np.ndarray, center: Sequence[float]) -> np.ndarray:
    """Shortest signed per-axis offset from ``center`` to ``points``, in [-π, π)."""
    return np.mod(np.asarray(points) - np.asarray(center, dtype=float) + np.pi, TWO_PI) - np.pi


def _wavenumbers(n: int) -> np.ndarray:
    return np.fft.fftfreq(n, d=1.0 / n)


def _axis_basis(x: np.ndarray, n: int) -> np.ndarray:
    """exp(ikx) for the FFT wavenumbers; the Nyquist column is cos so the interpolant is real."""
    basis = np.exp(1j * np.outer(x, _wavenumbers(n)))
    basis[:, n // 2] = np.cos(0.5 * n * x)
    return basis


class FourierEvaluator:
    """Trigonometric interpolation at a fixed point set, reusable across functions.

    Points that sit on grid nodes return the stored sample exactly.
    """

    def __init__(self, points: np.ndarray, grid_shape: Sequence[int]) -> None:
        self.grid_shape = check_grid_shape(grid_shape)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[-1] != len(self.grid_shape):
            raise GridError(f"points have dimension {pts.shape[-1]}, grid has {len(self.grid_shape)}")
        if not np.all(np.isfinite(pts)):
            raise GridError("evaluation points must be finite")
        self.points = wrap(pts)

        idx = self.points * np.asarray(self.grid_shape) / TWO_PI
        nearest = np.rint(idx)
        on_node = np.all(np.abs(idx - nearest) < _NODE_SNAP, axis=1)
        self._node_mask = on_node
        self._node_index = tuple(
            (nearest[on_node, ax].astype(int) % n) for ax, n in enumerate(self.grid_shape)
        )
        off = self.points[~on_node]
        self._bases = [
            [_axis_basis(off[s:s + _EVAL_CHUNK, ax], n) for ax, n in enumerate(self.grid_shape)]
            for s in range(0, len(off), _EVAL_CHUNK)
        ]

    def __call__(self, samples: np.ndarray) -> np.ndarray:
        out = np.empty(len(self.points))
        out[self._node_mask] = samples[self._node_index]
        if self._bases:
            coef = np.fft.fftn(samples) / samples.size
            parts = []
            for bases in self._bases:
                if len(bases) == 1:
                    parts.append((bases[0] @ coef).real)
                else:
                    parts.append(np.sum((bases[0] @ coef) * bases[1], axis=1).real)
            out[~self._node_mask] = np.concatenate(parts)
        return out

    def matrix(self) -> np.ndarray:
        """Interpolation weights W with W @ samples.ravel() == self(samples)."""
        size = int(np.prod(self.grid_shape))
        out = np.zeros((len(self.points), size))
        rows = np.flatnonzero(self._node_mask)
        out[rows, np.ravel_multi_index(self._node_index, self.grid_shape)] = 1.0
        dft = [np.fft.fft(np.eye(n), axis=0) for n in self.grid_shape]
        parts = []
        for bases in self._bases:
            mixed = [b @ f for b, f in zip(bases, dft)]
            if len(mixed) == 1:
                parts.append(mixed[0].real)
            else:
                parts.append(np.einsum("mi,mj->mij", mixed[0], mixed[1]).real.reshape(len(mixed[0]), -1))
        if parts:
            out[~self._node_mask] = np.concatenate(parts) / size
        return out


def spectral_derivative(samples: np.ndarray, orders: Sequence[int]) -> np.ndarray:
    """Mixed spectral derivative; odd orders drop the Nyquist mode."""
    if not any(orders):
        return np.array(samples, dtype=float)
    coeffs = np.fft.fftn(samples)
    for ax, order in enumerate(orders):
        if order == 0:
            continue
        n = samples.shape[ax]
        mult = (1j * _wavenumbers(n)) ** order
        if order % 2:
            mult[n // 2] = 0.0
        shape = [1] * samples.ndim
        shape[ax] = n
        coeffs = coeffs * mult.reshape(shape)
    return np.fft.ifftn(coeffs).real


def spectral_refine(samples: np.ndarray, factor: int = 2) -> np.ndarray:
    """Zero-padded trigonometric upsampling by an integer factor per axis."""
    coeffs = np.fft.fftshift(np.fft.fftn(samples))
    new_shape = tuple(n * factor for n in samples.shape)
    padded = np.zeros(new_shape, dtype=complex)
    slices = tuple(slice(m // 2 - n // 2, m // 2 - n // 2 + n) for n, m in zip(samples.shape, new_shape))
    padded[slices] = coeffs
    return np.fft.ifftn(np.fft.ifftshift(padded)).real * (factor ** samples.ndim)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GridFunction:
    """A smooth real function on T^dim stored as grid samples."""

    samples: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.samples, dtype=float)
        check_grid_shape(arr.shape)
        if not np.all(np.isfinite(arr)):
            bad = tuple(int(i) for i in np.argwhere(~np.isfinite(arr))[0])
            raise GridError(f"non-finite sample at node {bad}")
        object.__setattr__(self, "samples", _freeze(arr))

    @classmethod
    def zeros(cls, grid_shape: Sequence[int]) -> GridFunction:
        return cls(np.zeros(check_grid_shape(grid_shape)))

    @classmethod
    def constant(cls, grid_shape: Sequence[int], value: float) -> GridFunction:
        return cls(np.full(check_grid_shape(grid_shape), float(value)))

    @property
    def dim(self) -> int:
        return self.samples.ndim

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return self.samples.shape

    @property
    def h_min(self) -> float:
        return TWO_PI / max(self.grid_shape)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        return FourierEvaluator(points, self.grid_shape)(self.samples)

    def derivative(self, axis: int, order: int = 1) -> GridFunction:
        if not 0 <= axis < self.dim:
            raise GridError(f"axis {axis} out of range for dim {self.dim}")
        orders = [0] * self.dim
        orders[axis] = order
        return GridFunction(spectral_derivative(self.samples, orders))

    def low_pass(self, fraction: float) -> GridFunction:
        """Zero every Fourier mode above ``fraction`` of the Nyquist wavenumber."""
        if fraction >= 1.0:
            return self
        coeffs = np.fft.fftn(self.samples)
        keep = np.ones(self.grid_shape, dtype=bool)
        for ax, n in enumerate(self.grid_shape):
            k = np.abs(_wavenumbers(n))
            shape = [1] * self.dim
            shape[ax] = n
            keep &= (k <= fraction * n / 2).reshape(shape)
        return GridFunction(np.fft.ifftn(coeffs * keep).real)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.samples)))

    def _coerce(self, other: GridFunction | float) -> np.ndarray | float:
        if isinstance(other, GridFunction):
            if other.grid_shape != self.grid_shape:
                raise GridError(f"grid mismatch {self.grid_shape} vs {other.grid_shape}")
            return other.samples
        return float(other)

    def __add__(self, other: GridFunction | float) -> GridFunction:
        return GridFunction(self.samples + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other: GridFunction | float) -> GridFunction:
        return GridFunction(self.samples - self._coerce(other))

    def __rsub__(self, other: GridFunction | float) -> GridFunction:
        return GridFunction(self._coerce(other) - self.samples)

    def __mul__(self, other: GridFunction | float) -> GridFunction:
        return GridFunction(self.samples * self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> GridFunction:
        return GridFunction(self.samples / float(other))

    def __neg__(self) -> GridFunction:
        return GridFunction(-self.samples)


@dataclass(frozen=True, eq=False)
class VectorField:
    """dim GridFunction components on a shared grid."""

    components: tuple[GridFunction, ...]

    def __post_init__(self) -> None:
        comps = tuple(self.components)
        if not comps:
            raise GridError("a vector field needs at least one component")
        shape = comps[0].grid_shape
        if any(c.grid_shape != shape for c in comps) or len(comps) != len(shape):
            raise GridError("vector field components must share one grid of matching dimension")
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_array(cls, array: np.ndarray) -> VectorField:
        return cls(tuple(GridFunction(a) for a in np.asarray(array, dtype=float)))

    @classmethod
    def constant(cls, grid_shape: Sequence[int], vector: Sequence[float]) -> VectorField:
        return cls(tuple(GridFunction.constant(grid_shape, v) for v in vector))

    @property
    def dim(self) -> int:
        return len(self.components)

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return self.components[0].grid_shape

    @cached_property
    def array(self) -> np.ndarray:
        return _freeze(np.stack([c.samples for c in self.components]))

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        ev = FourierEvaluator(points, self.grid_shape)
        return np.stack([ev(c.samples) for c in self.components], axis=-1)

    def scaled(self, factor: GridFunction) -> VectorField:
        """The field factor·X."""
        return VectorField(tuple(factor * c for c in self.components))

    def __mul__(self, scalar: float) -> VectorField:
        return VectorField(tuple(c * float(scalar) for c in self.components))

    __rmul__ = __mul__

    def sup_norm(self) -> float:
        return float(np.max(np.sqrt(np.sum(self.array ** 2, axis=0))))

    def directional(self, f: GridFunction) -> GridFunction:
        """<df, X> = sum_i X_i ∂_i f."""
        total = GridFunction.zeros(self.grid_shape)
        for ax, comp in enumerate(self.components):
            total = total + comp * f.derivative(ax)
        return total


@dataclass(frozen=True, eq=False)
class DiffeoGrid:
    """A diffeomorphism x ↦ x + φ(x) of the torus with periodic displacement φ."""

    displacement: tuple[GridFunction, ...]
    orientation: int = 1

    def __post_init__(self) -> None:
        comps = tuple(self.displacement)
        shape = comps[0].grid_shape
        if any(c.grid_shape != shape for c in comps) or len(comps) != len(shape):
            raise GridError("displacement components must share one grid of matching dimension")
        if self.orientation not in (1, -1):
            raise GridError(f"orientation must be 1 or -1, got {self.orientation}")
        object.__setattr__(self, "displacement", comps)

    @classmethod
    def identity(cls, grid_shape: Sequence[int]) -> DiffeoGrid:
        shape = check_grid_shape(grid_shape)
        return cls(tuple(GridFunction.zeros(shape) for _ in shape))

    @classmethod
    def from_array(cls, array: np.ndarray) -> DiffeoGrid:
        return cls(tuple(GridFunction(a) for a in np.asarray(array, dtype=float)))

    @classmethod
    def translation(cls, grid_shape: Sequence[int], shift: Sequence[float]) -> DiffeoGrid:
        return cls(tuple(GridFunction.constant(grid_shape, s) for s in shift))

    @property
    def dim(self) -> int:
        return len(self.displacement)

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return self.displacement[0].grid_shape

    @cached_property
    def array(self) -> np.ndarray:
        return _freeze(np.stack([c.samples for c in self.displacement]))

    @cached_property
    def image_points(self) -> np.ndarray:
        """Unwrapped images of the grid nodes, (M, dim)."""
        return node_points(self.grid_shape) + self.array.reshape(self.dim, -1).T

    def is_identity(self) -> bool:
        return not np.any(self.array)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ev = FourierEvaluator(pts, self.grid_shape)
        return pts + np.stack([ev(c.samples) for c in self.displacement], axis=-1)

    def jacobian_det(self, refine: int = 2) -> np.ndarray:
        """det(I + Dφ) on a ``refine``-times finer grid."""
        fine = [spectral_refine(c.samples, refine) if refine > 1 else c.samples for c in self.displacement]
        jac = np.empty((self.dim, self.dim) + fine[0].shape)
        for i, comp in enumerate(fine):
            for j in range(self.dim):
                orders = [0] * self.dim
                orders[j] = 1
                jac[i, j] = spectral_derivative(comp, orders) + (1.0 if i == j else 0.0)
        if self.dim == 1:
            return jac[0, 0]
        return jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]

    def validate(self, margin: float = 1e-8) -> DiffeoGrid:
        """Check the near-identity invariants; returns self for chaining."""
        if self.orientation != 1:
            raise InvalidDiffeoError("an orientation-reversing map is not near the identity")
        if np.max(np.abs(self.array)) > np.pi:
            raise InvalidDiffeoError("displacement exceeds π: not in the near-identity regime")
        det = self.jacobian_det()
        if np.min(det) <= margin:
            raise InvalidDiffeoError(f"Jacobian determinant {np.min(det):.3e} is not positive")
        return self

    def compose(self, inner: DiffeoGrid) -> DiffeoGrid:
        """self ∘ inner."""
        _match(self, inner)
        if inner.is_identity():
            return self
        ev = FourierEvaluator(inner.image_points, self.grid_shape)
        comps = [
            inner.array[i] + ev(self.displacement[i].samples).reshape(self.grid_shape)
            for i in range(self.dim)
        ]
        return DiffeoGrid.from_array(np.stack(comps))

    def inverse(self, tol: float = 1e-12, max_iters: int = 50) -> DiffeoGrid:
        nodes = node_points(self.grid_shape)
        pre = invert_points(self, nodes, tol=tol, max_iters=max_iters)
        return DiffeoGrid.from_array((pre - nodes).T.reshape((self.dim,) + self.grid_shape))

    def difference(self, other: DiffeoGrid) -> VectorField:
        """Displacement difference self ⊖ other."""
        _match(self, other)
        return VectorField.from_array(self.array - other.array)

    def c0_distance(self, other: DiffeoGrid) -> float:
        _match(self, other)
        diff = self.array - other.array
        return float(np.max(np.sqrt(np.sum(diff ** 2, axis=0))))

    def c1_distance(self, other: DiffeoGrid) -> float:
        _match(self, other)
        diff = self.difference(other)
        return max(ck_norm(c, 1) for c in diff.components)


def _match(a: DiffeoGrid, b: DiffeoGrid) -> None:
    if a.grid_shape != b.grid_shape:
        raise GridError(f"grid mismatch {a.grid_shape} vs {b.grid_shape}")


def invert_points(
    phi: DiffeoGrid,
    targets: np.ndarray,
    tol: float = 1e-12,
    max_iters: int = 50,
) -> np.ndarray:
    """Solve phi(y) = target for every target by damped Newton (unwrapped y)."""
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    dim = phi.dim
    disp = phi.displacement
    grads = [[d.derivative(j).samples for j in range(dim)] for d in disp]

    def residual_and_jac(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ev = FourierEvaluator(y, phi.grid_shape)
        res = y + np.stack([ev(d.samples) for d in disp], axis=-1) - targets
        jac = np.empty((len(y), dim, dim))
        for i in range(dim):
            for j in range(dim):
                jac[:, i, j] = ev(grads[i][j]) + (1.0 if i == j else 0.0)
        return res, jac

    y = targets - np.stack([d.evaluate(targets) for d in disp], axis=-1)
    res, jac = residual_and_jac(y)
    err = np.max(np.abs(res))
    for it in range(max_iters):
        if err <= tol:
            return y
        step = np.linalg.solve(jac, res[..., None])[..., 0]
        damping = 1.0
        for _ in range(12):
            trial = y - damping * step
            trial_res, trial_jac = residual_and_jac(trial)
            trial_err = np.max(np.abs(trial_res))
            if trial_err < err or trial_err <= tol:
                break
            damping *= 0.5
        y, res, jac, err = trial, trial_res, trial_jac, trial_err
        logger.debug("map inversion iter %d residual %.3e", it, err)
    if err <= tol:
        return y
    raise MapInversionError(f"Newton inversion stalled at residual {err:.3e} after {max_iters} iterations")


def sample_function(
    dim: int,
    grid_shape: Sequence[int],
    rule: Callable[..., np.ndarray | float],
) -> GridFunction:
    """Sample ``rule(x)`` (T¹) or ``rule(x, y)`` (T²) at the grid nodes."""
    shape = check_grid_shape(grid_shape)
    if dim != len(shape):
        raise GridError(f"dim {dim} does not match grid {shape}")
    mesh = node_mesh(shape)
    values = np.broadcast_to(np.asarray(rule(*mesh), dtype=float), shape)
    bad = np.argwhere(~np.isfinite(values))
    if len(bad):
        idx = tuple(int(i) for i in bad[0])
        where = tuple(round(float(m[idx]), 6) for m in mesh)
        raise GridError(f"rule is not finite at node {idx} (coordinates {where})")
    return GridFunction(np.array(values))


def evaluate(f: GridFunction, points: np.ndarray) -> np.ndarray:
    return f.evaluate(points)


def derivative(f: GridFunction, axis: int) -> GridFunction:
    return f.derivative(axis)


def compose_with_map(
    f: GridFunction,
    phi: DiffeoGrid | Callable[[np.ndarray], np.ndarray],
) -> GridFunction:
    """f ∘ phi sampled on phi's grid (or f's grid for a coordinate map)."""
    if isinstance(phi, DiffeoGrid):
        phi.validate()
        if phi.is_identity() and phi.grid_shape == f.grid_shape:
            return f
        shape, images = phi.grid_shape, phi.image_points
    else:
        shape = f.grid_shape
        images = np.asarray(phi(node_points(shape)), dtype=float)
    return GridFunction(f.evaluate(images).reshape(shape))


def _multi_indices(dim: int, k: int, axes: Iterable[int] | None) -> list[tuple[int, ...]]:
    allowed = set(range(dim) if axes is None else axes)
    out = []
    for idx in product(range(k + 1), repeat=dim):
        if sum(idx) <= k and all(o == 0 or ax in allowed for ax, o in enumerate(idx)):
            out.append(idx)
    return out


def ck_norm(f: GridFunction, k: int, axes: Iterable[int] | None = None) -> float:
    """Grid-sup C^k norm: max over derivative orders <= k of max |∂^α f| on the nodes.

    ``axes=(0,)`` restricts to x₁-derivatives (the C^{k,0} norm).
    """
    if not 0 <= k <= 8:
        raise GridError(f"ck_norm supports 0 <= k <= 8, got {k}")
    return max(
        float(np.max(np.abs(spectral_derivative(f.samples, idx))))
        for idx in _multi_indices(f.dim, k, axes)
    )


def smooth_step(t: np.ndarray) -> np.ndarray:
    """C^∞ step: 0 for t <= 0, 1 for t >= 1, built from exp(-1/t)."""
    t = np.asarray(t, dtype=float)

    def psi(s: np.ndarray) -> np.ndarray:
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = np.exp(-1.0 / s[pos])
        return out

    up, down = psi(t), psi(1.0 - t)
    return up / (up + down)


def plateau(r: np.ndarray, r_inner: float, r_outer: float) -> np.ndarray:
    """1 for r <= r_inner, 0 for r >= r_outer, smooth and monotone between."""
    return 1.0 - smooth_step((np.asarray(r) - r_inner) / (r_outer - r_inner))


def _check_radii(r_inner: float, r_outer: float) -> None:
    if not 0.0 < r_inner < r_outer < np.pi:
        raise GridError(f"need 0 < r_inner < r_outer < π, got {r_inner}, {r_outer}")


def bump(
    center: Sequence[float],
    r_inner: float,
    r_outer: float,
    grid_shape: Sequence[int],
) -> GridFunction:
    """Radial plateau bump around ``center`` (Euclidean distance in the chart)."""
    _check_radii(r_inner, r_outer)
    shape = check_grid_shape(grid_shape)
    offsets = torus_offset(node_points(shape), center)
    r = np.sqrt(np.sum(offsets ** 2, axis=1))
    return GridFunction(plateau(r, r_inner, r_outer).reshape(shape))


def box_bump(
    center: Sequence[float],
    inner: Sequence[float],
    outer: Sequence[float],
    grid_shape: Sequence[int],
) -> GridFunction:
    """Tensor-product plateau: 1 on the box of half-widths ``inner``, 0 beyond ``outer``."""
    shape = check_grid_shape(grid_shape)
    offsets = torus_offset(node_points(shape), center)
    values = np.ones(len(offsets))
    for ax in range(len(shape)):
        _check_radii(inner[ax], outer[ax])
        values *= plateau(np.abs(offsets[:, ax]), inner[ax], outer[ax])
    return GridFunction(values.reshape(shape))


def dilate_periodic(mask: np.ndarray) -> np.ndarray:
    """Grow a boolean mask by one cell in every axis direction, wrapping around."""
    out = mask.copy()
    for ax in range(mask.ndim):
        out |= np.roll(mask, 1, axis=ax) | np.roll(mask, -1, axis=ax)
    return out


def _arc(hits: np.ndarray) -> tuple[float, float] | None:
    """Smallest arc [lo, hi] (hi may exceed 2π) covering the True entries of a periodic axis."""
    n = len(hits)
    idx = np.flatnonzero(hits)
    if len(idx) == 0:
        return None
    if len(idx) == n:
        return (0.0, TWO_PI)
    gaps = np.diff(np.append(idx, idx[0] + n))
    cut = int(np.argmax(gaps))
    start = idx[(cut + 1) % len(idx)]
    end = idx[cut] if idx[cut] >= start else idx[cut] + n
    return (TWO_PI * start / n, TWO_PI * end / n)


@dataclass(frozen=True, eq=False)
class Region:
    """A set of grid nodes with its periodic bounding box in chart coordinates."""

    mask: np.ndarray
    bbox: tuple[tuple[float, float], ...] = field(default=())

    def __post_init__(self) -> None:
        mask = np.array(self.mask, dtype=bool)
        object.__setattr__(self, "mask", _freeze(mask))
        if not self.bbox and mask.any():
            box = []
            for ax in range(mask.ndim):
                other = tuple(a for a in range(mask.ndim) if a != ax)
                box.append(_arc(mask.any(axis=other) if other else mask))
            object.__setattr__(self, "bbox", tuple(box))

    @property
    def is_empty(self) -> bool:
        return not self.mask.any()

    @property
    def is_full(self) -> bool:
        return bool(self.mask.all())

    def contains(self, other: Region) -> bool:
        return bool(np.all(self.mask | ~other.mask))
