"""JSON codecs for diffeomorphism, family, factor and report files.

Floats are written with 17 significant digits so write→read is value-exact.
"""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Any

import numpy as np

from .errors import GridError, InputError
from .grid import DiffeoGrid, GridFunction, VectorField, check_grid_shape, node_points
from .models import Factor, FactorList, Family, Provenance

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def format_float(value: float) -> str:
    value = float(value)
    if not math.isfinite(value):
        raise InputError(f"cannot write non-finite value {value}")
    text = format(value, ".17g")
    if "e" not in text and "." not in text and "n" not in text:
        text += ".0"
    return text


def dumps(obj: Any, indent: int = 0) -> str:
    """Deterministic JSON text; numeric lists stay on one line."""
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist(), indent)
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.floating, np.integer)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_scalar(v) for v in obj) + "]"
        items = [inner + dumps(v, indent + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    return _scalar(obj)


def _scalar(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)) or value is None or isinstance(value, str):
        return json.dumps(value if not isinstance(value, np.bool_) else bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(float(value)):
            return json.dumps(str(value))
        return format_float(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


def loads(text: str, source: str = "<input>") -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = _byte_offset(text, exc.pos)
        raise InputError(f"{source}: malformed JSON at byte {offset}: {exc.msg}", offset=offset) from None


def read_text(path: Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except UnicodeDecodeError as exc:
        raise InputError(f"{path}: not UTF-8 text at byte {exc.start}", offset=exc.start) from None


def _require(data: dict, key: str, source: str) -> Any:
    if not isinstance(data, dict) or key not in data:
        raise InputError(f"{source}: missing key {key!r}")
    return data[key]


def _grid(data: dict, source: str) -> tuple[int, ...]:
    raw = _require(data, "grid", source)
    dim = _require(data, "dim", source)
    if not isinstance(raw, list) or len(raw) != dim or dim not in (1, 2):
        raise InputError(f"{source}: 'grid' must list {dim} sizes and dim must be 1 or 2")
    try:
        return check_grid_shape(raw)
    except GridError as exc:
        raise InputError(f"{source}: {exc}") from None


def _components(raw: Any, grid_shape: tuple[int, ...], source: str, what: str) -> np.ndarray:
    dim = len(grid_shape)
    size = int(np.prod(grid_shape))
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        raise InputError(f"{source}: {what} must be numeric arrays") from None
    if arr.shape != (dim, size):
        raise InputError(f"{source}: {what} has shape {arr.shape}, expected ({dim}, {size})")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{source}: {what} contains non-finite values")
    return arr.reshape((dim,) + grid_shape)


def _values(raw: Any, grid_shape: tuple[int, ...], source: str, what: str) -> GridFunction:
    size = int(np.prod(grid_shape))
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError):
        raise InputError(f"{source}: {what} must be a numeric array") from None
    if arr.shape != (size,) or not np.all(np.isfinite(arr)):
        raise InputError(f"{source}: {what} must hold {size} finite values")
    return GridFunction(arr.reshape(grid_shape))


# -- diffeomorphisms ---------------------------------------------------------


def diffeo_to_dict(P: DiffeoGrid) -> dict:
    return {
        "dim": P.dim,
        "grid": list(P.grid_shape),
        "displacement": [d.samples.ravel() for d in P.displacement],
    }


def diffeo_from_dict(data: Any, source: str = "<diffeo>") -> DiffeoGrid:
    shape = _grid(data, source)
    arr = _components(_require(data, "displacement", source), shape, source, "displacement")
    return DiffeoGrid.from_array(arr)


def write_diffeo(path: Path, P: DiffeoGrid) -> None:
    Path(path).write_text(dumps(diffeo_to_dict(P)) + "\n", encoding="utf-8")


def read_diffeo(path: Path) -> DiffeoGrid:
    return diffeo_from_dict(loads(read_text(path), str(path)), str(path))


# -- families ----------------------------------------------------------------


def family_to_dict(family: Family) -> dict:
    return {"dim": family.dim, "grid": list(family.grid_shape), "fields": _field_specs(family)}


def _field_specs(family: Family) -> list[dict]:
    return [
        {"name": name, "components": [c.samples.ravel() for c in f.components]}
        for name, f in zip(family.names, family.fields)
    ]


def family_from_dict(data: Any, source: str = "<family>") -> Family:
    return _family_from_specs(_require(data, "fields", source), _grid(data, source), source)


def _family_from_specs(raw: Any, shape: tuple[int, ...], source: str) -> Family:
    if not isinstance(raw, list) or not raw:
        raise InputError(f"{source}: the field list must be non-empty")
    names, fields = [], []
    for i, entry in enumerate(raw):
        name = _require(entry, "name", f"{source} field {i}")
        arr = _components(_require(entry, "components", source), shape, source, f"field {name!r}")
        names.append(str(name))
        fields.append(VectorField.from_array(arr))
    try:
        return Family(fields, names)
    except GridError as exc:
        raise InputError(f"{source}: {exc}") from None


def write_family(path: Path, family: Family) -> None:
    Path(path).write_text(dumps(family_to_dict(family)) + "\n", encoding="utf-8")


def read_family(path: Path) -> Family:
    return family_from_dict(loads(read_text(path), str(path)), str(path))


# -- factor lists ------------------------------------------------------------


def factors_to_dict(factors: FactorList, family: Family) -> dict:
    return {
        "version": FORMAT_VERSION,
        "order": FactorList.ORDER,
        "dim": family.dim,
        "grid": list(family.grid_shape),
        "family": _field_specs(family),
        "factors": [
            {
                "field": family.names[f.field_index],
                "provenance": f.provenance.value,
                "a": f.a.samples.ravel(),
            }
            for f in factors
        ],
    }


def factors_from_dict(data: Any, source: str = "<factors>") -> tuple[FactorList, Family]:
    order = _require(data, "order", source)
    if order != FactorList.ORDER:
        raise InputError(f"{source}: unsupported order {order!r}, expected {FactorList.ORDER!r}")
    family = _family_from_specs(_require(data, "family", source), _grid(data, source), f"{source} family")
    raw = _require(data, "factors", source)
    if not isinstance(raw, list):
        raise InputError(f"{source}: 'factors' must be a list")
    out = []
    for i, entry in enumerate(raw):
        where = f"{source} factor {i}"
        name = _require(entry, "field", where)
        try:
            index = family.index(str(name))
        except GridError as exc:
            raise InputError(f"{where}: {exc}") from None
        a = _values(_require(entry, "a", where), family.grid_shape, where, "'a'")
        out.append(Factor(a, index, Provenance.from_str(str(entry.get("provenance", "input")))))
    return FactorList(out), family


def write_factors(path: Path, factors: FactorList, family: Family) -> None:
    Path(path).write_text(dumps(factors_to_dict(factors, family)) + "\n", encoding="utf-8")


def read_factors(path: Path) -> tuple[FactorList, Family]:
    return factors_from_dict(loads(read_text(path), str(path)), str(path))


# -- reports and dumps -------------------------------------------------------


def write_report(path: Path, report: dict) -> None:
    Path(path).write_text(dumps(report) + "\n", encoding="utf-8")


def write_csv(path: Path, P: DiffeoGrid) -> None:
    """One row per node: coordinates then displacement components."""
    points = node_points(P.grid_shape)
    disp = np.stack([d.samples.ravel() for d in P.displacement], axis=1)
    coords = ["x", "y"][: P.dim]
    header = ",".join(coords + [f"d{c}" for c in coords])
    np.savetxt(path, np.hstack([points, disp]), delimiter=",", header=header, comments="", fmt="%.17g")
    logger.debug("wrote %d rows to %s", len(points), path)
