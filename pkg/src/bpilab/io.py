"""File formats: model JSON, trace/steady CSVs, golden JSON, sweep CSV.

Floats are serialized with ``repr`` (shortest round-trip form, >= 17
significant digits when needed), so save/load is bit-exact for models and
within 1e-12 relative for CSVs, and identical inputs produce byte-identical
files — which the CLI determinism contract depends on.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .models import (
    PowerTrace,
    SteadyStateDataset,
    SystemModel,
    ThermalTrace,
    ValidationError,
)

FORMAT_VERSION = 1

__all__ = [
    "ParseError",
    "save_model",
    "load_model",
    "save_thermal_csv",
    "load_thermal_csv",
    "save_power_csv",
    "load_power_csv",
    "save_steady_csv",
    "load_steady_csv",
]


class ParseError(ValidationError):
    """Raised when a file cannot be interpreted as its documented format."""


def _fmt(x: float) -> str:
    return repr(float(x))


def _matrix_from_json(obj: dict, name: str, n: int) -> np.ndarray:
    if name not in obj:
        raise ParseError(f"model file is missing required field '{name}'")
    raw = obj[name]
    try:
        mat = np.array(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"field '{name}' is not a numeric matrix: {exc}") from None
    if mat.ndim != 2 or mat.shape != (n, n):
        raise ParseError(
            f"field '{name}' must be an {n}x{n} matrix, got shape {mat.shape}"
        )
    return mat


def save_model(m: SystemModel, path) -> Path:
    path = Path(path)
    doc = {
        "format_version": FORMAT_VERSION,
        "n": m.n,
        "a": m.a.tolist(),
        "b": m.b.tolist(),
        "r": m.r.tolist(),
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def load_model(path) -> SystemModel:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: expected a JSON object")
    version = obj.get("format_version")
    if version != FORMAT_VERSION:
        raise ParseError(
            f"{path}: unknown format_version {version!r} (supported: {FORMAT_VERSION})"
        )
    if "n" not in obj:
        raise ParseError(f"{path}: model file is missing required field 'n'")
    n = int(obj["n"])
    mats = {name: _matrix_from_json(obj, name, n) for name in ("a", "b", "r")}
    return SystemModel(n=n, **mats)


# ---------------------------------------------------------------------------
# CSV helpers. Metadata rides in leading "# key=value" comment lines so a
# thermal CSV is self-describing (dt, ambient) while staying plain CSV.
# ---------------------------------------------------------------------------


def _read_csv(path) -> tuple[dict[str, str], list[str], list[list[str]]]:
    path = Path(path)
    meta: dict[str, str] = {}
    header: list[str] | None = None
    rows: list[list[str]] = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line.lstrip("#").strip()
            if "=" in body:
                key, _, val = body.partition("=")
                meta[key.strip()] = val.strip()
            continue
        cells = [c.strip() for c in line.split(",")]
        if header is None:
            header = cells
        else:
            if len(cells) != len(header):
                raise ParseError(
                    f"{path}:{lineno}: row has {len(cells)} cells, header has {len(header)}"
                )
            rows.append(cells)
    if header is None:
        raise ParseError(f"{path}: no header line found")
    return meta, header, rows


def _parse_float(cell: str, path, context: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise ParseError(f"{path}: {context}: not a number: {cell!r}") from None


def save_thermal_csv(t: ThermalTrace, path) -> Path:
    path = Path(path)
    lines = [f"# dt={_fmt(t.dt)}", f"# ambient={_fmt(t.ambient)}"]
    lines.append("k," + ",".join(f"t_{i + 1}" for i in range(t.n)))
    for k, row in enumerate(t.samples):
        lines.append(f"{k}," + ",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def load_thermal_csv(path, *, dt: float | None = None, ambient: float | None = None,
                     validate: bool = True) -> ThermalTrace:
    meta, header, rows = _read_csv(path)
    if header[0] != "k" or len(header) < 2 or not header[1].startswith("t_"):
        raise ParseError(f"{path}: expected thermal header 'k,t_1,...', got {header}")
    n = len(header) - 1
    expected = ["k"] + [f"t_{i + 1}" for i in range(n)]
    if header != expected:
        raise ParseError(f"{path}: malformed thermal header {header}")
    if dt is None:
        dt = _parse_float(meta["dt"], path, "metadata dt") if "dt" in meta else 0.1
    if ambient is None:
        ambient = (
            _parse_float(meta["ambient"], path, "metadata ambient")
            if "ambient" in meta
            else 298.15
        )
    samples = np.array(
        [[_parse_float(c, path, f"row {i}") for c in row[1:]] for i, row in enumerate(rows)]
    )
    if samples.size == 0:
        raise ParseError(f"{path}: thermal trace has no data rows")
    return ThermalTrace(n=n, dt=dt, ambient=ambient, samples=samples, validate=validate)


def save_power_csv(p: PowerTrace, path) -> Path:
    path = Path(path)
    if p.blind:
        lines = ["k,p_total"]
        for k, tot in enumerate(p.totals):
            lines.append(f"{k},{_fmt(tot)}")
    else:
        lines = ["k," + ",".join(f"p_{i + 1}" for i in range(p.n)) + ",p_total"]
        for k, row in enumerate(p.samples):
            cells = ",".join(_fmt(v) for v in row)
            lines.append(f"{k},{cells},{_fmt(p.totals[k])}")
    path.write_text("\n".join(lines) + "\n")
    return path


def load_power_csv(path) -> PowerTrace:
    _, header, rows = _read_csv(path)
    if header[:1] != ["k"] or header[-1] != "p_total":
        raise ParseError(f"{path}: expected power header 'k,[p_1,...,p_N,]p_total'")
    n = len(header) - 2
    expected = ["k"] + [f"p_{i + 1}" for i in range(n)] + ["p_total"]
    if header != expected:
        raise ParseError(f"{path}: malformed power header {header}")
    vals = np.array(
        [[_parse_float(c, path, f"row {i}") for c in row[1:]] for i, row in enumerate(rows)]
    )
    if vals.size == 0:
        raise ParseError(f"{path}: power trace has no data rows")
    if np.any(vals < 0):
        raise ValidationError(f"{path}: negative power entry found")
    if n == 0:
        # Blind trace: totals only. The unit count is not recoverable from
        # the file; callers that need it take it from the model instead.
        return PowerTrace(n=0, samples=np.empty((vals.shape[0], 0)), totals=vals[:, 0])
    return PowerTrace(n=n, samples=vals[:, :-1], totals=vals[:, -1])


def save_steady_csv(ds: SteadyStateDataset, path) -> Path:
    path = Path(path)
    lines = ["exp," + ",".join(f"ts_{i + 1}" for i in range(ds.n)) + ",p_total"]
    for j in range(ds.m):
        cells = ",".join(_fmt(v) for v in ds.t_s[j])
        lines.append(f"{j},{cells},{_fmt(ds.p_total[j])}")
    path.write_text("\n".join(lines) + "\n")
    return path


def load_steady_csv(path, *, validate: bool = True) -> SteadyStateDataset:
    _, header, rows = _read_csv(path)
    if header[:1] != ["exp"] or header[-1] != "p_total":
        raise ParseError(f"{path}: expected steady header 'exp,ts_1,...,ts_N,p_total'")
    n = len(header) - 2
    expected = ["exp"] + [f"ts_{i + 1}" for i in range(n)] + ["p_total"]
    if header != expected or n == 0:
        raise ParseError(f"{path}: malformed steady-state header {header}")
    vals = np.array(
        [[_parse_float(c, path, f"row {i}") for c in row[1:]] for i, row in enumerate(rows)]
    )
    if vals.size == 0:
        raise ParseError(f"{path}: steady-state dataset has no rows")
    return SteadyStateDataset(t_s=vals[:, :-1], p_total=vals[:, -1], validate=validate)
