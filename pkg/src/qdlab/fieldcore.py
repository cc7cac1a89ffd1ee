"""Uniform node-centred grids, fields on them, finite differences and the QDF1 file format.

Every grid used in this package places the hyperplane ``x_n = 0`` exactly on a
node layer, so measures supported on that hyperplane and the reflection
symmetry of the potential are both representable without interpolation.

Arrays are stored with shape ``grid.dims`` (axis ``k`` is coordinate ``x_{k+1}``),
vector fields carry a trailing axis of length ``n`` and tensor fields a
trailing ``(n, n)`` block.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

MAGIC = b"QDF1"


class FieldFormatError(ValueError):
    """File is not a QDF1 field file (wrong magic or malformed header)."""


class FieldCorruptionError(ValueError):
    """Header and payload of a QDF1 file disagree."""


class OutOfGridError(ValueError):
    """A query point lies outside the grid box."""


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular node grid of a box in R^n, n in {2, 3}."""

    dims: tuple[int, ...]
    h: tuple[float, ...]
    origin: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "h", tuple(float(v) for v in self.h))
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        n = len(self.dims)
        if n not in (2, 3):
            raise ValueError(f"grid dimension must be 2 or 3, got {n}")
        if len(self.h) != n or len(self.origin) != n:
            raise ValueError("dims, h and origin must have the same length")
        if min(self.dims) < 3:
            raise ValueError(f"need at least 3 nodes per axis, got {self.dims}")
        if min(self.h) <= 0:
            raise ValueError(f"spacing must be positive, got {self.h}")
        k = -self.origin[-1] / self.h[-1]
        if abs(k - round(k)) > 1e-9 or not 0 <= round(k) < self.dims[-1]:
            raise ValueError("the hyperplane x_n = 0 must coincide with a node layer")

    @classmethod
    def box(cls, lo: Sequence[float], hi: Sequence[float], h: float | Sequence[float]) -> "Grid":
        """Smallest grid with spacing ``h`` covering ``[lo, hi]`` with a node on x_n = 0.

        Nodes are laid out symmetrically about 0 along the last axis whenever the
        box itself is symmetric.
        """
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        hs = np.broadcast_to(np.asarray(h, dtype=float), lo.shape)
        origin = np.floor(lo / hs + 1e-9) * hs
        top = np.ceil(hi / hs - 1e-9) * hs
        dims = np.rint((top - origin) / hs).astype(int) + 1
        return cls(tuple(dims), tuple(hs), tuple(origin))

    @property
    def n(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def layer(self) -> int:
        """Index of the node layer x_n = 0 along the last axis."""
        return int(round(-self.origin[-1] / self.h[-1]))

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.origin)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.origin) + (np.asarray(self.dims) - 1) * np.asarray(self.h)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    def axes(self) -> list[np.ndarray]:
        return [o + h * np.arange(d) for o, h, d in zip(self.origin, self.h, self.dims)]

    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes(), indexing="ij"))

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``dims + (n,)``."""
        return np.stack(self.mesh(), axis=-1)

    def contains(self, p, pad: float = 0.0) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.lo - pad) and np.all(p <= self.hi + pad))

    def nearest_index(self, p) -> tuple[int, ...]:
        p = np.asarray(p, dtype=float)
        idx = np.rint((p - self.lo) / np.asarray(self.h)).astype(int)
        return tuple(int(i) for i in idx)

    def upper(self) -> "Grid":
        """The sub-grid of nodes with x_n >= 0."""
        k0 = self.layer
        dims = self.dims[:-1] + (self.dims[-1] - k0,)
        origin = self.origin[:-1] + (0.0,)
        return Grid(dims, self.h, origin)

    def xprime_axes(self) -> list[np.ndarray]:
        return self.axes()[:-1]

    def to_dict(self) -> dict:
        return {"n": self.n, "dims": list(self.dims), "h": list(self.h), "origin": list(self.origin)}


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray
    name: str = "u"

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != self.grid.dims:
            if v.size != self.grid.size:
                raise ValueError(f"value count {v.size} != node count {self.grid.size}")
            v = _frozen(v.reshape(self.grid.dims))
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", v)

    kind = "scalar"

    @cached_property
    def interpolator(self) -> RegularGridInterpolator:
        return RegularGridInterpolator(self.grid.axes(), self.values, method="linear")


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: Grid
    values: np.ndarray
    name: str = "v"

    def __post_init__(self):
        v = _frozen(self.values)
        shape = self.grid.dims + (self.grid.n,)
        if v.shape != shape:
            if v.size != self.grid.size * self.grid.n:
                raise ValueError("component count must be n times the node count")
            v = _frozen(v.reshape(shape))
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", v)

    kind = "vector"

    def component(self, k: int) -> ScalarField:
        return ScalarField(self.grid, self.values[..., k], name=f"{self.name}_{k + 1}")

    @cached_property
    def interpolator(self) -> RegularGridInterpolator:
        return RegularGridInterpolator(self.grid.axes(), self.values, method="linear")


@dataclass(frozen=True, eq=False)
class TensorField:
    grid: Grid
    values: np.ndarray
    name: str = "H"
    symmetric: bool = field(default=True)

    def __post_init__(self):
        n = self.grid.n
        v = _frozen(self.values)
        shape = self.grid.dims + (n, n)
        if v.shape != shape:
            if v.size != self.grid.size * n * n:
                raise ValueError("tensor field needs n*n values per node")
            v = _frozen(v.reshape(shape))
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        if self.symmetric and not np.array_equal(v, np.swapaxes(v, -1, -2)):
            raise ValueError("symmetric tensor field is not symmetric")
        object.__setattr__(self, "values", v)

    kind = "tensor"

    def trace(self) -> ScalarField:
        return ScalarField(self.grid, np.trace(self.values, axis1=-2, axis2=-1), name=f"tr{self.name}")

    @cached_property
    def interpolator(self) -> RegularGridInterpolator:
        return RegularGridInterpolator(self.grid.axes(), self.values, method="linear")


def sample(grid: Grid, fn, name: str = "u") -> ScalarField:
    """Evaluate ``fn(x)`` (x of shape ``(..., n)``) at every node."""
    return ScalarField(grid, fn(grid.coords()), name=name)


def interior_mask(grid: Grid, margin: int = 1) -> np.ndarray:
    """Boolean mask of nodes at least ``margin`` nodes away from every box face."""
    m = np.zeros(grid.dims, dtype=bool)
    m[tuple(slice(margin, d - margin) for d in grid.dims)] = True
    return m


def gradient(f: ScalarField) -> VectorField:
    """Central differences inside, second-order one-sided differences on the box faces."""
    g = np.gradient(f.values, *f.grid.h, edge_order=2)
    return VectorField(f.grid, np.stack(g, axis=-1), name=f"grad{f.name}")


def _second_difference(a: np.ndarray, axis: int, h: float) -> np.ndarray:
    out = np.empty_like(a)
    a = np.moveaxis(a, axis, 0)
    o = np.moveaxis(out, axis, 0)
    o[1:-1] = (a[2:] - 2.0 * a[1:-1] + a[:-2]) / h**2
    # first-order one-sided on the faces; callers mask these nodes out
    o[0] = (a[0] - 2.0 * a[1] + a[2]) / h**2
    o[-1] = (a[-1] - 2.0 * a[-2] + a[-3]) / h**2
    return out


def laplacian(f: ScalarField) -> ScalarField:
    """(2n+1)-point Laplacian. Values on box faces are low order; exclude them with
    :func:`interior_mask`."""
    lap = sum(_second_difference(f.values, k, h) for k, h in enumerate(f.grid.h))
    return ScalarField(f.grid, lap, name=f"lap{f.name}")


def hessian_field(f: ScalarField) -> TensorField:
    """Compact second differences on the diagonal, central mixed differences off it.

    The trace equals :func:`laplacian` at interior nodes up to rounding.
    """
    n = f.grid.n
    H = np.zeros(f.grid.dims + (n, n))
    for i, hi in enumerate(f.grid.h):
        H[..., i, i] = _second_difference(f.values, i, hi)
    for i in range(n):
        di = np.gradient(f.values, f.grid.h[i], axis=i, edge_order=2)
        for j in range(i + 1, n):
            dij = np.gradient(di, f.grid.h[j], axis=j, edge_order=2)
            H[..., i, j] = dij
            H[..., j, i] = dij
    return TensorField(f.grid, H, name=f"hess{f.name}")


def interpolate(f: ScalarField | VectorField | TensorField, p) -> np.ndarray | float:
    """Multilinear interpolation at one point ``p`` or an array of points ``(..., n)``."""
    p = np.asarray(p, dtype=float)
    pts = p.reshape(-1, f.grid.n)
    tol = 1e-12 * np.max(np.abs(f.grid.hi - f.grid.lo))
    if np.any(pts < f.grid.lo - tol) or np.any(pts > f.grid.hi + tol):
        raise OutOfGridError("interpolation point outside the grid box")
    pts = np.clip(pts, f.grid.lo, f.grid.hi)
    out = f.interpolator(pts)
    if p.ndim == 1:
        out = out[0]
        return float(out) if np.ndim(out) == 0 else out
    return out.reshape(p.shape[:-1] + out.shape[1:])


def _payload(f) -> np.ndarray:
    if isinstance(f, TensorField) and f.symmetric:
        iu = np.triu_indices(f.grid.n)
        return f.values[..., iu[0], iu[1]]
    return f.values


def write_field(f: ScalarField | VectorField | TensorField, path, extra: dict | None = None) -> None:
    header = {**f.grid.to_dict(), "kind": f.kind, "name": f.name}
    if isinstance(f, TensorField):
        header["symmetric"] = bool(f.symmetric)
    if extra:
        header.update(extra)
    hb = json.dumps(header, sort_keys=True).encode()
    data = np.ascontiguousarray(_payload(f), dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        fh.write(data)


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh)[0]


def _read_header(fh):
    if fh.read(4) != MAGIC:
        raise FieldFormatError("bad magic: not a QDF1 file")
    raw = fh.read(4)
    if len(raw) != 4:
        raise FieldCorruptionError("truncated header length")
    (length,) = struct.unpack("<I", raw)
    hb = fh.read(length)
    if len(hb) != length:
        raise FieldCorruptionError("truncated header")
    try:
        header = json.loads(hb)
    except json.JSONDecodeError as exc:
        raise FieldFormatError(f"malformed header: {exc}") from exc
    return header, fh


def read_field(path) -> ScalarField | VectorField | TensorField:
    with open(path, "rb") as fh:
        header, fh = _read_header(fh)
        payload = fh.read()
    try:
        n, dims = int(header["n"]), tuple(header["dims"])
        grid = Grid(dims, header["h"], header["origin"])
        kind = header["kind"]
    except (KeyError, TypeError) as exc:
        raise FieldFormatError(f"incomplete header: {exc}") from exc
    if grid.n != n:
        raise FieldCorruptionError(f"header n={n} but dims has {grid.n} entries")
    sym = bool(header.get("symmetric", False))
    per_node = {"scalar": 1, "vector": n, "tensor": n * (n + 1) // 2 if sym else n * n}.get(kind)
    if per_node is None:
        raise FieldFormatError(f"unknown field kind {kind!r}")
    if len(payload) != 8 * per_node * grid.size:
        raise FieldCorruptionError(
            f"payload holds {len(payload) // 8} values, header implies {per_node * grid.size}")
    data = np.frombuffer(payload, dtype="<f8").astype(float)
    name = header.get("name", "")
    if kind == "scalar":
        return ScalarField(grid, data, name=name)
    if kind == "vector":
        return VectorField(grid, data, name=name)
    if sym:
        iu = np.triu_indices(n)
        full = np.zeros(grid.dims + (n, n))
        packed = data.reshape(grid.dims + (len(iu[0]),))
        full[..., iu[0], iu[1]] = packed
        full[..., iu[1], iu[0]] = packed
        return TensorField(grid, full, name=name, symmetric=True)
    return TensorField(grid, data, name=name, symmetric=False)


def write_csv(f: ScalarField | VectorField | TensorField, path) -> None:
    """One row per node: coordinates then value(s)."""
    n = f.grid.n
    xs = f.grid.coords().reshape(-1, n)
    vals = np.asarray(f.values).reshape(f.grid.size, -1)
    if vals.shape[1] == 1:
        vcols = [f.name or "value"]
    else:
        vcols = [f"{f.name}_{k}" for k in range(vals.shape[1])]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x_{k + 1}" for k in range(n)] + vcols)
        for x, v in zip(xs, vals):
            w.writerow([repr(float(c)) for c in x] + [repr(float(c)) for c in v])
