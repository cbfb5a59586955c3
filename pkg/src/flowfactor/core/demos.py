"""Fixture generators: small scaled-flow compositions, rotations, localized bumps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InputError
from .flow import scaled_flow
from .grid import DiffeoGrid, GridFunction, VectorField, bump, sample_function
from .models import Family

logger = logging.getLogger(__name__)

DEFAULT_GRID = {1: 64, 2: 32}


@dataclass
class Demo:
    name: str
    family: Family
    targets: dict[str, DiffeoGrid] = field(default_factory=dict)


def _compose(*maps: DiffeoGrid) -> DiffeoGrid:
    acc = DiffeoGrid.identity(maps[0].grid_shape)
    for m in reversed(maps):
        acc = m.compose(acc)
    return acc


def _random_profile(rng: np.random.Generator, shape: tuple[int, ...], amplitude: float) -> GridFunction:
    """Low-mode trigonometric profile with random coefficients, sup <= amplitude."""
    dim = len(shape)
    coef = rng.uniform(-1.0, 1.0, size=(3, 2) if dim == 1 else (3, 3, 2))

    def rule(*xs: np.ndarray) -> np.ndarray:
        total = np.zeros_like(xs[0])
        for idx in np.ndindex(coef.shape[:-1]):
            modes = (idx[0] + 1,) if dim == 1 else idx
            phase = sum(k * x for k, x in zip(modes, xs))
            total = total + coef[idx + (0,)] * np.cos(phase) + coef[idx + (1,)] * np.sin(phase)
        return total

    f = sample_function(dim, shape, rule)
    return f * (amplitude / max(f.max_abs(), 1e-300))


def t1_basic(n: int, seed: int) -> Demo:
    shape = (n,)
    dx = VectorField.constant(shape, [1.0])
    family = Family([dx], ["dx"])
    rng = np.random.default_rng(seed)
    smooth = _compose(
        scaled_flow(sample_function(1, shape, lambda x: 0.008 * np.sin(x)), dx),
        scaled_flow(sample_function(1, shape, lambda x: 0.004 * np.cos(2 * x)), dx),
    )
    localized = scaled_flow(bump([np.pi], 0.6, 1.4, shape) * 0.006, dx)
    return Demo(
        "t1-basic",
        family,
        {
            "identity": DiffeoGrid.identity(shape),
            "rotation": DiffeoGrid.translation(shape, [0.01]),
            "smooth": smooth,
            "localized": localized,
            "random": scaled_flow(_random_profile(rng, shape, 0.005), dx),
        },
    )


def t2_translations(n: int, seed: int) -> Demo:
    shape = (n, n)
    dx = VectorField.constant(shape, [1.0, 0.0])
    dy = VectorField.constant(shape, [0.0, 1.0])
    family = Family([dx, dy], ["dx", "dy"])
    rng = np.random.default_rng(seed)
    smooth = _compose(
        scaled_flow(sample_function(2, shape, lambda x, y: 0.006 * np.sin(y)), dx),
        scaled_flow(sample_function(2, shape, lambda x, y: 0.006 * np.cos(x)), dy),
    )
    return Demo(
        "t2-translations",
        family,
        {
            "identity": DiffeoGrid.identity(shape),
            "smooth": smooth,
            "random": _compose(
                scaled_flow(_random_profile(rng, shape, 0.004), dx),
                scaled_flow(_random_profile(rng, shape, 0.004), dy),
            ),
        },
    )


def t2_frame(n: int, seed: int) -> Demo:
    shape = (n, n)
    dx = VectorField.constant(shape, [1.0, 0.0])
    sy = VectorField((GridFunction.zeros(shape), sample_function(2, shape, lambda x, y: np.sin(x))))
    family = Family([dx, sy], ["dx", "sinx_dy"])
    rng = np.random.default_rng(seed)
    # moves y near the line sin(x) = 0 too, so the frame needs bracket directions
    shear = sample_function(2, shape, lambda x, y: 0.004 * np.cos(y))
    dy_anywhere = VectorField((GridFunction.zeros(shape), GridFunction.constant(shape, 1.0)))
    return Demo(
        "t2-frame",
        family,
        {
            "identity": DiffeoGrid.identity(shape),
            "smooth": _compose(
                scaled_flow(sample_function(2, shape, lambda x, y: 0.005 * np.cos(y)), dx),
                scaled_flow(shear, dy_anywhere),
            ),
            "random": scaled_flow(_random_profile(rng, shape, 0.004), sy),
        },
    )


DEMOS: dict[str, Callable[[int, int], Demo]] = {
    "t1-basic": t1_basic,
    "t2-translations": t2_translations,
    "t2-frame": t2_frame,
}

_DIMS = {"t1-basic": 1, "t2-translations": 2, "t2-frame": 2}


def build_demo(name: str, grid: int | None = None, seed: int = 0) -> Demo:
    if name not in DEMOS:
        raise InputError(f"unknown demo {name!r}; available: {', '.join(DEMOS)}")
    n = grid or DEFAULT_GRID[_DIMS[name]]
    demo = DEMOS[name](n, seed)
    logger.info("demo %s: %d targets on grid %s", name, len(demo.targets), demo.family.grid_shape)
    return demo
