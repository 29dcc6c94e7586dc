"""Uniform grids, fields on them, finite-difference calculus and phase unwrapping.

All operators are pure: they never modify their inputs.  Fields are thin
dataclasses around numpy arrays laid out with ``indexing='ij'`` so that
axis 0 is x and axis 1 is y.
"""
from __future__ import annotations

import csv
import io
import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import AllBelowThreshold, GridMismatch, LoopThroughNode, MultivaluedPhase

AXIS_NAMES = ("x", "y")
NODE_EPS_REL = 1e-6


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid in one or two dimensions plus a time step."""

    extents: tuple[tuple[float, float], ...]
    n: tuple[int, ...]
    dt: float

    def __post_init__(self):
        extents = tuple((float(lo), float(hi)) for lo, hi in self.extents)
        n = tuple(int(k) for k in self.n)
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "dt", float(self.dt))
        if len(extents) not in (1, 2) or len(n) != len(extents):
            raise ValueError("grid must be 1D or 2D with one point count per axis")
        for (lo, hi), k in zip(extents, n):
            if not hi > lo:
                raise ValueError(f"empty extent [{lo}, {hi}]")
            if k < 8:
                raise ValueError(f"need at least 8 points per axis, got {k}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @classmethod
    def line(cls, lo: float, hi: float, n: int, dt: float = 1e-3) -> Grid:
        return cls(((lo, hi),), (n,), dt)

    @classmethod
    def square(cls, lo: float, hi: float, n: int, dt: float = 1e-3) -> Grid:
        return cls(((lo, hi), (lo, hi)), (n, n), dt)

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((hi - lo) / (k - 1) for (lo, hi), k in zip(self.extents, self.n))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, k) for (lo, hi), k in zip(self.extents, self.n)]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes, indexing="ij")

    def with_dt(self, dt: float) -> Grid:
        return Grid(self.extents, self.n, dt)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "extents": [list(e) for e in self.extents],
            "n": list(self.n),
            "dt": self.dt,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Grid:
        return cls(tuple(tuple(e) for e in d["extents"]), tuple(d["n"]), d["dt"])


def _check_same_grid(*fields_) -> Grid:
    grid = fields_[0].grid
    for f in fields_[1:]:
        if f.grid != grid:
            raise GridMismatch(f"fields live on different grids: {grid} vs {f.grid}")
    return grid


@dataclass(frozen=True)
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise ValueError(f"values shape {values.shape} != grid shape {self.grid.shape}")
        object.__setattr__(self, "values", values)

    def integrate(self) -> float:
        return float(np.sum(self.values) * self.grid.cell_volume)

    def __add__(self, other):
        if isinstance(other, ScalarField):
            _check_same_grid(self, other)
            return ScalarField(self.grid, self.values + other.values)
        return ScalarField(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, ScalarField):
            _check_same_grid(self, other)
            return ScalarField(self.grid, self.values - other.values)
        return ScalarField(self.grid, self.values - other)

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            _check_same_grid(self, other)
            return ScalarField(self.grid, self.values * other.values)
        return ScalarField(self.grid, self.values * other)

    __rmul__ = __mul__
    __radd__ = __add__


@dataclass(frozen=True)
class VectorField:
    """Per-point d-vectors; ``values`` has shape ``(dim, *grid.shape)``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.dim, *self.grid.shape):
            raise ValueError(f"vector values shape {values.shape} does not match grid")
        object.__setattr__(self, "values", values)

    def magnitude(self) -> ScalarField:
        return ScalarField(self.grid, np.sqrt(np.sum(self.values**2, axis=0)))

    def dot(self, other: VectorField) -> ScalarField:
        _check_same_grid(self, other)
        return ScalarField(self.grid, np.sum(self.values * other.values, axis=0))


@dataclass(frozen=True)
class ComplexField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        if values.shape != self.grid.shape:
            raise ValueError(f"values shape {values.shape} != grid shape {self.grid.shape}")
        object.__setattr__(self, "values", values)

    def density(self) -> ScalarField:
        return ScalarField(self.grid, np.abs(self.values) ** 2)

    def norm(self) -> float:
        """Discrete probability ``sum |psi|^2 * cell volume``."""
        return float(np.sum(np.abs(self.values) ** 2) * self.grid.cell_volume)

    def normalized(self) -> ComplexField:
        nrm = self.norm()
        if not nrm > 0:
            raise ValueError("cannot normalize a zero field")
        return ComplexField(self.grid, self.values / np.sqrt(nrm))

    def node_threshold(self, rel: float = NODE_EPS_REL) -> float:
        """Absolute amplitude below which a point counts as a node."""
        return rel * float(np.max(np.abs(self.values)))

    def conj(self) -> ComplexField:
        return ComplexField(self.grid, np.conj(self.values))

    def __mul__(self, other):
        return ComplexField(self.grid, self.values * other)

    __rmul__ = __mul__


# ---------------------------------------------------------------------------
# finite differences


def _first_derivative(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    return np.gradient(values, h, axis=axis, edge_order=2)


def _second_derivative(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    f = np.moveaxis(values, axis, 0)
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / h**2
    # one-sided, exact for cubics
    out[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / h**2
    out[-1] = (2.0 * f[-1] - 5.0 * f[-2] + 4.0 * f[-3] - f[-4]) / h**2
    return np.moveaxis(out, 0, axis)


def gradient(f: ScalarField) -> VectorField:
    """Second-order central differences, one-sided second order at the edges."""
    comps = [
        _first_derivative(f.values, ax, h) for ax, h in enumerate(f.grid.spacing)
    ]
    return VectorField(f.grid, np.stack(comps))


def laplacian(f: ScalarField) -> ScalarField:
    out = np.zeros_like(f.values)
    for ax, h in enumerate(f.grid.spacing):
        out += _second_derivative(f.values, ax, h)
    return ScalarField(f.grid, out)


def divergence(v: VectorField) -> ScalarField:
    out = np.zeros(v.grid.shape)
    for ax, h in enumerate(v.grid.spacing):
        out += _first_derivative(v.values[ax], ax, h)
    return ScalarField(v.grid, out)


def _wrap(angle: np.ndarray) -> np.ndarray:
    """Map to the half-open interval (-pi, pi]."""
    out = np.angle(np.exp(1j * angle)) if np.isrealobj(angle) else np.angle(angle)
    return np.where(out <= -np.pi, out + 2 * np.pi, out)


def _edge_phase(values: np.ndarray, axis: int) -> np.ndarray:
    """Principal-branch phase increment across every edge along ``axis``."""
    f = np.moveaxis(values, axis, 0)
    d = _wrap(f[1:] * np.conj(f[:-1]))
    return np.moveaxis(d, 0, axis)


def phase_gradient(psi: ComplexField, hbar: float = 1.0) -> VectorField:
    """Gradient of ``hbar * arg(psi)`` built from wrapped edge increments.

    Agrees with ``gradient(unwrap_phase(psi))`` wherever the unwrapping is
    defined, but needs no global unwrap and is defined on every point.
    """
    comps = []
    for ax, h in enumerate(psi.grid.spacing):
        d = np.moveaxis(_edge_phase(psi.values, ax), ax, 0)
        g = np.empty((d.shape[0] + 1, *d.shape[1:]))
        g[1:-1] = (d[1:] + d[:-1]) / (2.0 * h)
        g[0] = (3.0 * d[0] - d[1]) / (2.0 * h)
        g[-1] = (3.0 * d[-1] - d[-2]) / (2.0 * h)
        comps.append(np.moveaxis(g, 0, ax) * hbar)
    return VectorField(psi.grid, np.stack(comps))


# ---------------------------------------------------------------------------
# phase unwrapping and winding


def _neighbors(idx: tuple[int, ...], shape: tuple[int, ...]) -> Iterable[tuple[int, ...]]:
    for ax in range(len(shape)):
        for step in (-1, 1):
            k = idx[ax] + step
            if 0 <= k < shape[ax]:
                yield idx[:ax] + (k,) + idx[ax + 1 :]


def winding_number(psi: ComplexField, loop: list[tuple[int, ...]], eps: float | None = None) -> int:
    """Number of 2*pi turns of arg(psi) around a closed cycle of grid indices.

    The cycle is closed implicitly (last point connects back to the first).
    """
    if eps is None:
        eps = psi.node_threshold()
    vals = np.array([psi.values[tuple(p)] for p in loop])
    if np.any(np.abs(vals) <= eps):
        raise LoopThroughNode("loop passes through a point with |psi| below the node threshold")
    total = np.sum(_wrap(np.roll(vals, -1) * np.conj(vals)))
    return int(np.rint(total / (2 * np.pi)))


def circle_loop(grid: Grid, center: tuple[float, float], radius: float, samples: int | None = None) -> list[tuple[int, int]]:
    """Counter-clockwise cycle of nearest grid points along a circle."""
    if grid.dim != 2:
        raise ValueError("circle loops need a 2D grid")
    if samples is None:
        samples = max(64, int(16 * radius / min(grid.spacing)))
    theta = np.linspace(0.0, 2 * np.pi, samples, endpoint=False)
    (x0, _), (y0, _) = grid.extents
    hx, hy = grid.spacing
    ix = np.rint((center[0] + radius * np.cos(theta) - x0) / hx).astype(int)
    iy = np.rint((center[1] + radius * np.sin(theta) - y0) / hy).astype(int)
    loop: list[tuple[int, int]] = []
    for p in zip(ix.tolist(), iy.tolist()):
        if not loop or loop[-1] != p:
            loop.append(p)
    while len(loop) > 1 and loop[-1] == loop[0]:
        loop.pop()
    return loop


def _signed_area(loop: list[tuple[int, ...]]) -> float:
    pts = np.array(loop, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _path_to_root(idx, parent) -> list:
    path = [idx]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return path


def _cycle_through_edge(i, j, parent) -> list:
    pi, pj = _path_to_root(i, parent), _path_to_root(j, parent)
    on_j = {p: k for k, p in enumerate(pj)}
    for k, p in enumerate(pi):
        if p in on_j:
            # i -> ... -> lca -> ... -> j, closed by the edge j -> i
            return pi[: k + 1] + pj[: on_j[p]][::-1]
    raise AssertionError("BFS tree is disconnected")


def _unwrap_1d(psi: ComplexField, eps: float, hbar: float) -> np.ndarray:
    amp = np.abs(psi.values)
    seed = int(np.argmax(amp))
    ok = amp > eps
    d = _edge_phase(psi.values, 0)
    out = np.full(psi.grid.n[0], np.nan)
    hi = seed
    while hi + 1 < len(ok) and ok[hi + 1]:
        hi += 1
    lo = seed
    while lo - 1 >= 0 and ok[lo - 1]:
        lo -= 1
    base = float(np.angle(psi.values[seed]))
    out[seed] = base
    out[seed + 1 : hi + 1] = base + np.cumsum(d[seed:hi])
    out[lo:seed] = (base - np.cumsum(d[lo:seed][::-1]))[::-1]
    return out * hbar


def _unwrap_2d(psi: ComplexField, eps: float, hbar: float, check: bool = True) -> np.ndarray:
    vals = psi.values
    shape = vals.shape
    amp = np.abs(vals)
    ok = amp > eps
    seed = np.unravel_index(int(np.argmax(amp)), shape)
    seed = tuple(int(k) for k in seed)
    phase = np.full(shape, np.nan)
    phase[seed] = float(np.angle(vals[seed]))
    parent: dict = {seed: None}
    queue = deque([seed])
    while queue:
        cur = queue.popleft()
        for nb in _neighbors(cur, shape):
            if ok[nb] and nb not in parent:
                parent[nb] = cur
                phase[nb] = phase[cur] + float(_wrap(vals[nb] * np.conj(vals[cur])))
                queue.append(nb)

    # every non-tree edge must agree with its own principal increment
    for ax in range(2 if check else 0):
        d = _edge_phase(vals, ax)
        sl_lo = [slice(None)] * 2
        sl_hi = [slice(None)] * 2
        sl_lo[ax] = slice(0, -1)
        sl_hi[ax] = slice(1, None)
        diff = phase[tuple(sl_hi)] - phase[tuple(sl_lo)] - d
        with np.errstate(invalid="ignore"):
            bad = np.argwhere(np.abs(diff) > np.pi)
        if len(bad):
            i = tuple(int(k) for k in bad[0])
            j = list(i)
            j[ax] += 1
            cycle = _cycle_through_edge(i, tuple(j), parent)
            if _signed_area(cycle) < 0:
                cycle = cycle[::-1]
            raise MultivaluedPhase(winding_number(psi, cycle, eps), cycle)
    return phase * hbar


def unwrap_phase(
    psi: ComplexField, hbar: float = 1.0, eps: float | None = None, *, check: bool = True
) -> ScalarField:
    """Single-valued action ``S = hbar * arg(psi)`` by flood fill from max |psi|.

    Points with ``|psi| <= eps`` (default ``1e-6 * max|psi|``) and points not
    connected to the seed through such points are unreachable and come back
    as NaN.  Raises :class:`MultivaluedPhase` when the result would depend on
    the path taken, i.e. some loop in the reachable region winds; with
    ``check=False`` the breadth-first result is returned regardless.
    """
    if eps is None:
        eps = psi.node_threshold()
    if not np.any(np.abs(psi.values) > eps):
        raise AllBelowThreshold("no grid point exceeds the node threshold")
    if psi.grid.dim == 1:
        return ScalarField(psi.grid, _unwrap_1d(psi, eps, hbar))
    return ScalarField(psi.grid, _unwrap_2d(psi, eps, hbar, check))


# ---------------------------------------------------------------------------
# serialization


def _fmt(v: float) -> str:
    v = float(v)
    if np.isnan(v):
        return "NaN"
    if np.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    return format(v, ".17g")


def _kind(f) -> str:
    return {ScalarField: "scalar", ComplexField: "complex", VectorField: "vector"}[type(f)]


def field_to_ndjson(f, meta: dict | None = None) -> str:
    """Header line with grid and axis coordinates, then one record per point."""
    grid = f.grid
    header = {
        "kind": _kind(f),
        "grid": grid.to_dict(),
        "axes": {AXIS_NAMES[a]: "__AXIS%d__" % a for a in range(grid.dim)},
    }
    if meta:
        header["meta"] = meta
    text = json.dumps(header)
    for a, ax in enumerate(grid.axes):
        text = text.replace('"__AXIS%d__"' % a, "[" + ", ".join(_fmt(c) for c in ax) + "]")
    lines = [text]
    coords = [c.ravel() for c in grid.mesh()]
    if isinstance(f, ComplexField):
        re, im = f.values.real.ravel(), f.values.imag.ravel()
    elif isinstance(f, VectorField):
        comps = [c.ravel() for c in f.values]
    else:
        flat = f.values.ravel()
    for i in range(grid.size):
        parts = [f'"index": {i}']
        parts += [f'"{AXIS_NAMES[a]}": {_fmt(coords[a][i])}' for a in range(grid.dim)]
        if isinstance(f, ComplexField):
            parts += [f'"re": {_fmt(re[i])}', f'"im": {_fmt(im[i])}']
        elif isinstance(f, VectorField):
            parts.append('"value": [' + ", ".join(_fmt(c[i]) for c in comps) + "]")
        else:
            parts.append(f'"value": {_fmt(flat[i])}')
        lines.append("{" + ", ".join(parts) + "}")
    return "\n".join(lines) + "\n"


def field_from_ndjson(text: str):
    """Inverse of :func:`field_to_ndjson`; returns ``(field, meta)``."""
    rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    header, records = rows[0], rows[1:]
    grid = Grid.from_dict(header["grid"])
    records.sort(key=lambda r: r["index"])
    kind = header["kind"]
    if kind == "complex":
        vals = np.array([complex(r["re"], r["im"]) for r in records]).reshape(grid.shape)
        f = ComplexField(grid, vals)
    elif kind == "vector":
        vals = np.array([r["value"] for r in records], dtype=float).T
        f = VectorField(grid, vals.reshape(grid.dim, *grid.shape))
    else:
        vals = np.array([r["value"] for r in records], dtype=float)
        f = ScalarField(grid, vals.reshape(grid.shape))
    return f, header.get("meta", {})


def field_to_csv(f) -> str:
    grid = f.grid
    cols = list(AXIS_NAMES[: grid.dim])
    coords = [c.ravel() for c in grid.mesh()]
    if isinstance(f, ComplexField):
        cols += ["re", "im"]
        data = [f.values.real.ravel(), f.values.imag.ravel()]
    elif isinstance(f, VectorField):
        cols += [f"v{AXIS_NAMES[a]}" for a in range(grid.dim)]
        data = [c.ravel() for c in f.values]
    else:
        cols += ["value"]
        data = [f.values.ravel()]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in zip(*coords, *data):
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def field_from_csv(text: str, dt: float = 1e-3):
    """Rebuild a field from CSV; the grid is inferred from the coordinates."""
    reader = csv.reader(io.StringIO(text))
    cols = next(reader)
    data = np.array([[float(v) for v in row] for row in reader if row])
    dim = sum(1 for c in cols if c in AXIS_NAMES)
    axes = [np.unique(data[:, a]) for a in range(dim)]
    grid = Grid(tuple((ax[0], ax[-1]) for ax in axes), tuple(len(ax) for ax in axes), dt)
    # rows were written in C order of the ij mesh
    rest = {c: data[:, k].reshape(grid.shape) for k, c in enumerate(cols) if c not in AXIS_NAMES}
    if "re" in rest:
        return ComplexField(grid, rest["re"] + 1j * rest["im"])
    if "value" in rest:
        return ScalarField(grid, rest["value"])
    return VectorField(grid, np.stack([rest[f"v{AXIS_NAMES[a]}"] for a in range(dim)]))


def read_field(path: str | Path, dt: float = 1e-3):
    """Load a field from ``.ndjson`` or ``.csv`` by extension."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".csv":
        return field_from_csv(text, dt=dt)
    return field_from_ndjson(text)[0]


def write_field(path: str | Path, f, meta: dict | None = None) -> None:
    path = Path(path)
    if path.suffix == ".csv":
        path.write_text(field_to_csv(f))
    else:
        path.write_text(field_to_ndjson(f, meta))
