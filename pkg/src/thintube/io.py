"""Plain-text readers and writers.

All writers format reals with 17 significant digits, so a write/read round
trip reproduces every float exactly and identical inputs give identical
bytes. All readers reject NaN and Inf.

Formats
-------
curve
    ``closed <true|false>`` and ``n <count>`` header lines, then ``n`` records
    ``s x y z`` (knot and control point).
far field
    Header lines ``N``, ``k``, ``theta x y z``, ``A_re x y z``, ``A_im x y z``,
    ``eps_r``, ``mu_r``, ``rho``, then ``2N(N-1)`` records
    ``j l yx yy yz ReEx ImEx ReEy ImEy ReEz ImEz`` with ``l`` fastest.
tensor dump
    One record ``s m11 m12 m13 m22 m23 m33`` per node.
series
    ``# label``, optional ``# slope`` comment, then ``x y`` records.
iteration log
    One JSON object per line.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DimensionError, FormatError
from .forward import FarFieldGrid, PlaneWave, rel_diff
from .geometry import (INITIAL_SEGMENTS, CurveSpline, Partition,
                       segment_spline, spline_fit)
from .polarization import EPS0, MU0, Material, TensorField

PathLike = Union[str, Path]


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _line(values) -> str:
    return " ".join(fmt(v) for v in values)


def _write(path: PathLike, lines: list[str]) -> None:
    # fixed newline so files are byte-identical across platforms
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _lines(path: PathLike) -> list[tuple[int, list[str]]]:
    """Non-empty, non-comment lines as ``(line number, tokens)``."""
    out = []
    with open(path, encoding="ascii") as fh:
        for no, raw in enumerate(fh, start=1):
            text = raw.strip()
            if text and not text.startswith("#"):
                out.append((no, text.split()))
    return out


def _floats(tokens, count: int, path, line) -> list[float]:
    if len(tokens) != count:
        raise FormatError(f"expected {count} values, found {len(tokens)}", path, line)
    try:
        values = [float(t) for t in tokens]
    except ValueError:
        raise FormatError(f"not a number in {' '.join(tokens)!r}", path, line) from None
    if not all(math.isfinite(v) for v in values):
        raise FormatError("non-finite value", path, line)
    return values


def _int(token: str, path, line) -> int:
    try:
        return int(token)
    except ValueError:
        raise FormatError(f"expected an integer, found {token!r}", path, line) from None


def _header(entries, key: str, count: int, path):
    if not entries:
        raise FormatError(f"missing header field {key!r}", path)
    line, tokens = entries.pop(0)
    if tokens[0] != key:
        raise FormatError(f"expected header field {key!r}, found {tokens[0]!r}", path, line)
    if count == 0:
        return line, tokens[1:]
    values = _floats(tokens[1:], count, path, line)
    return line, values


# -- curves ---------------------------------------------------------------

def write_curve(path: PathLike, spline: CurveSpline) -> None:
    pts = spline.coefficients.reshape(-1, 3)
    lines = [f"closed {'true' if spline.closed else 'false'}", f"n {spline.n}"]
    lines += [_line([s, *p]) for s, p in zip(spline.partition.knots, pts)]
    _write(path, lines)


def read_curve(path: PathLike) -> CurveSpline:
    entries = _lines(path)
    line, rest = _header(entries, "closed", 0, path)
    if rest not in (["true"], ["false"]):
        raise FormatError("closed must be true or false", path, line)
    closed = rest == ["true"]
    line, rest = _header(entries, "n", 0, path)
    if len(rest) != 1:
        raise FormatError("n takes one value", path, line)
    n = _int(rest[0], path, line)
    if len(entries) != n:
        raise DimensionError(f"header declares {n} control points, found {len(entries)}", path)
    rows = np.array([_floats(tokens, 4, path, no) for no, tokens in entries])
    try:
        return spline_fit(Partition(rows[:, 0]), rows[:, 1:], closed)
    except ValueError as exc:
        raise FormatError(str(exc), path) from exc


# -- far fields -----------------------------------------------------------

@dataclass(frozen=True)
class FarFieldData:
    """A sampled far field together with the wave and material that produced it."""

    grid: FarFieldGrid
    wave: PlaneWave
    material: Material


def write_far_field(path: PathLike, grid: FarFieldGrid, wave: PlaneWave, material: Material) -> None:
    if grid.samples is None:
        raise ValueError("grid carries no samples")
    if not np.all(np.isfinite(grid.samples)):
        raise ValueError("far-field samples must be finite")
    lines = [
        f"N {grid.N}",
        f"k {fmt(wave.k)}",
        "theta " + _line(wave.theta),
        "A_re " + _line(wave.A.real),
        "A_im " + _line(wave.A.imag),
        f"eps_r {fmt(material.eps_r)}",
        f"mu_r {fmt(material.mu_r)}",
        f"rho {fmt(material.rho)}",
    ]
    E = grid.samples
    parts = np.stack([E.real, E.imag], axis=-1).reshape(-1, 6)
    for (j, l), y, e in zip(grid.indices, grid.directions, parts):
        lines.append(f"{j} {l} " + _line(y) + " " + _line(e))
    _write(path, lines)


def read_far_field(path: PathLike) -> FarFieldData:
    entries = _lines(path)
    line, rest = _header(entries, "N", 0, path)
    if len(rest) != 1:
        raise FormatError("N takes one value", path, line)
    N = _int(rest[0], path, line)
    if N < 2:
        raise FormatError("N must be at least 2", path, line)
    _, (k,) = _header(entries, "k", 1, path)
    _, theta = _header(entries, "theta", 3, path)
    _, A_re = _header(entries, "A_re", 3, path)
    line, A_im = _header(entries, "A_im", 3, path)
    _, (eps_r,) = _header(entries, "eps_r", 1, path)
    _, (mu_r,) = _header(entries, "mu_r", 1, path)
    line, (rho,) = _header(entries, "rho", 1, path)
    try:
        wave = PlaneWave(k, np.array(theta), np.array(A_re) + 1j * np.array(A_im))
        material = Material(eps_r, mu_r, rho)
    except ValueError as exc:
        raise FormatError(str(exc), path, line) from exc

    grid = FarFieldGrid(N)
    expected = grid.indices
    samples = np.empty((grid.size, 3), dtype=complex)
    for i, (no, tokens) in enumerate(entries):
        if i >= grid.size:
            raise DimensionError(f"N = {N} allows {grid.size} records; extra record", path, no)
        j, l = expected[i]
        if len(tokens) != 11:
            raise FormatError(f"record ({j}, {l}): expected 11 fields, found {len(tokens)}", path, no)
        if (_int(tokens[0], path, no), _int(tokens[1], path, no)) != (j, l):
            raise DimensionError(f"expected record ({j}, {l}), found ({tokens[0]}, {tokens[1]})", path, no)
        values = _floats(tokens[2:], 9, path, no)
        if np.max(np.abs(np.array(values[:3]) - grid.directions[i])) > 1e-12:
            # a direction off the grid means the header N disagrees with the records
            raise DimensionError(f"direction of record ({j}, {l}) does not match the N = {N} grid",
                                 path, no)
        samples[i] = np.array(values[3::2]) + 1j * np.array(values[4::2])
    if len(entries) < grid.size:
        j, l = expected[len(entries)]
        raise DimensionError(f"N = {N} requires {grid.size} records, file ends before record ({j}, {l})",
                             path, entries[-1][0] if entries else None)
    return FarFieldData(grid.with_samples(samples), wave, material)


# -- tensors --------------------------------------------------------------

_UPPER = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


def write_tensor_field(path: PathLike, tensors: TensorField) -> None:
    lines = [_line([s] + [m[i, j] for i, j in _UPPER])
             for s, m in zip(tensors.nodes, tensors.matrices)]
    _write(path, lines)


def read_tensor_field(path: PathLike) -> TensorField:
    rows = [_floats(tokens, 7, path, no) for no, tokens in _lines(path)]
    if not rows:
        raise FormatError("no tensor records", path)
    rows = np.array(rows)
    mats = np.empty((len(rows), 3, 3))
    for c, (i, j) in enumerate(_UPPER):
        mats[:, i, j] = mats[:, j, i] = rows[:, c + 1]
    return TensorField(rows[:, 0], mats)


# -- plot series ----------------------------------------------------------

@dataclass(frozen=True)
class PlotSeries:
    """Two-column data for a convergence plot, with an optional fitted slope."""

    label: str
    x: np.ndarray
    y: np.ndarray
    slope: Optional[float] = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError("x and y must be 1D arrays of equal length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("series values must be finite")
        if "\n" in self.label:
            raise ValueError("label must be a single line")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)


def loglog_slope(x, y) -> Optional[float]:
    """Least-squares slope of ``log y`` against ``log x``; None if undefined."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    keep = (x > 0.0) & (y > 0.0)
    if keep.sum() < 2 or np.ptp(np.log(x[keep])) == 0.0:
        return None
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


def convergence_series(grid: FarFieldGrid, runs: Sequence, reference, label: str = "RelDiff") -> PlotSeries:
    """RelDiff of each ``(parameter, samples)`` run against ``reference``."""
    if len(runs) < 2:
        raise ValueError("a convergence series needs at least two runs")
    x = [float(p) for p, _ in runs]
    y = [rel_diff(grid, samples, reference) for _, samples in runs]
    return PlotSeries(label, np.array(x), np.array(y), loglog_slope(x, y))


def write_series(path: PathLike, series: PlotSeries) -> None:
    lines = [f"# {series.label}"]
    if series.slope is not None:
        lines.append(f"# slope {fmt(series.slope)}")
    lines += [_line(pair) for pair in zip(series.x, series.y)]
    _write(path, lines)


def read_series(path: PathLike) -> PlotSeries:
    label, slope = "", None
    with open(path, encoding="ascii") as fh:
        for no, raw in enumerate(fh, start=1):
            if not raw.startswith("#"):
                continue
            text = raw[1:].strip()
            if text.startswith("slope "):
                slope = _floats(text.split()[1:], 1, path, no)[0]
            elif not label:
                label = text
    rows = [_floats(tokens, 2, path, no) for no, tokens in _lines(path)]
    rows = np.array(rows).reshape(-1, 2)
    return PlotSeries(label, rows[:, 0], rows[:, 1], slope)


def export_convergence_series(path: PathLike, grid: FarFieldGrid, runs: Sequence, reference,
                              label: str = "RelDiff") -> PlotSeries:
    """Compute RelDiff for each run, fit the log-log slope and write the series."""
    series = convergence_series(grid, runs, reference, label)
    write_series(path, series)
    return series


# -- run configuration ----------------------------------------------------

# material parameters of the built-in examples
EXAMPLE_MATERIALS = {
    "torus": (2.5, 1.6),
    "figure": (1.0, 2.1),
    "helix": (2.1, 1.0),
}


@dataclass
class RunConfig:
    """Settings for a forward/reconstruction run, stored as JSON.

    ``curve`` names the curve used by ``forward`` (a built-in name or a curve
    file). ``initial`` is a built-in name, whose straight-segment guess is
    used, or a list of control points on a uniform partition.
    """

    material: dict = field(default_factory=lambda: {"eps_r": 2.5, "mu_r": 1.6, "rho": 0.03})
    wave: dict = field(default_factory=lambda: {
        "frequency": 100e6, "theta": [1.0, -1.0, 1.0],
        "A": [[-1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]})
    N: int = 10
    M: int = 11
    n: int = 30
    data_M: int = 21
    curve: str = "torus"
    initial: Union[str, list] = "torus"
    closed: bool = False
    alpha1: float = 0.2
    alpha2: float = 0.9
    s_max: float = 1.0
    line_search_steps: int = 10
    max_iterations: int = 250
    improvement: float = 1e-3
    seed: int = 0

    @classmethod
    def example(cls, name: str) -> "RunConfig":
        if name not in EXAMPLE_MATERIALS:
            raise ValueError(f"unknown example {name!r}; choose from {sorted(EXAMPLE_MATERIALS)}")
        eps_r, mu_r = EXAMPLE_MATERIALS[name]
        return cls(material={"eps_r": eps_r, "mu_r": mu_r, "rho": 0.03}, curve=name, initial=name)

    @classmethod
    def from_dict(cls, data: dict, path=None) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise FormatError(f"unknown configuration keys {unknown}", path)
        cfg = cls(**data)
        try:
            cfg.build_material()
            cfg.build_wave()
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"invalid material or wave: {exc}", path) from exc
        for name in ("N", "M", "n", "data_M", "line_search_steps", "max_iterations", "seed"):
            if not isinstance(getattr(cfg, name), int) or isinstance(getattr(cfg, name), bool):
                raise FormatError(f"{name} must be an integer", path)
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def build_material(self) -> Material:
        m = self.material
        return Material(float(m["eps_r"]), float(m["mu_r"]), float(m["rho"]),
                        float(m.get("eps0", EPS0)), float(m.get("mu0", MU0)))

    def build_wave(self) -> PlaneWave:
        w = self.wave
        theta = np.asarray(w["theta"], dtype=float)
        theta = theta / np.linalg.norm(theta)
        A = np.asarray(w["A"], dtype=float)
        if A.shape != (3, 2):
            raise ValueError("A must list three [re, im] pairs")
        A = A[:, 0] + 1j * A[:, 1]
        if "k" in w:
            return PlaneWave(float(w["k"]), theta, A)
        return PlaneWave.from_frequency(float(w["frequency"]), theta, A, self.build_material())

    def initial_spline(self) -> CurveSpline:
        if isinstance(self.initial, str):
            if self.initial not in INITIAL_SEGMENTS:
                raise ValueError(f"no initial guess named {self.initial!r}")
            return segment_spline(*INITIAL_SEGMENTS[self.initial], n=self.n)
        pts = np.asarray(self.initial, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("initial control points must be a list of 3-vectors")
        return spline_fit(Partition.uniform(len(pts)), pts, self.closed)


def write_config(path: PathLike, config: RunConfig) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_config(path: PathLike) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(exc.msg, path, exc.lineno) from exc
    if not isinstance(data, dict):
        raise FormatError("configuration must be a JSON object", path)
    return RunConfig.from_dict(data, path)


# -- iteration log --------------------------------------------------------

def write_iteration_log(path: PathLike, records) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.as_dict(), sort_keys=True, allow_nan=False) + "\n")


def read_iteration_log(path: PathLike) -> list[dict]:
    out = []
    with open(path, encoding="ascii") as fh:
        for no, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                out.append(json.loads(raw, parse_constant=_reject_constant))
            except (json.JSONDecodeError, ValueError) as exc:
                raise FormatError(str(exc), path, no) from exc
    return out


def _reject_constant(name: str):
    raise ValueError(f"non-finite value {name}")
