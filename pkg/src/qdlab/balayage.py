"""Partial balayage of a hyperplane measure by a discrete obstacle problem.

The modified Schwarz potential ``u`` of the quadrature domain generated by a
measure ``mu`` on ``{x_n = 0}`` solves the complementarity system

    u >= 0,   L_h u <= 1 - mu_h,   u * (1 - mu_h - L_h u) = 0,

where ``L_h`` is the standard (2n+1)-point Laplacian and ``mu_h`` is the
measure deposited on the node layer ``x_n = 0`` as a volume source
(density ``f`` becomes ``f / h_n``). It is solved with red-black projected SOR.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

from .fieldcore import Grid, ScalarField, gradient, interpolate

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """Projected SOR did not reach the residual tolerance."""


class SupportError(ValueError):
    """Measure support too close to (or outside) the grid box."""


class StructuralError(RuntimeError):
    """The computed potential violates a structural property (solver fault)."""


class EmptySliceError(ValueError):
    """A localization slice does not meet the domain."""


@dataclass(frozen=True, eq=False)
class MeasureSpec:
    """A positive measure on the hyperplane x_n = 0 of R^n.

    ``kind == "density"``: either ``fn`` (vectorized over points of shape
    ``(..., n-1)``) or tabulated ``samples`` on ``axes``; mass per unit
    (n-1)-volume. ``kind == "points"``: ``points`` is a tuple of
    ``(location, mass)`` pairs with ``location`` in R^{n-1}.
    """

    kind: str
    n: int
    fn: Callable | None = None
    axes: tuple[np.ndarray, ...] | None = None
    samples: np.ndarray | None = None
    points: tuple = ()
    support_lo: tuple[float, ...] = ()
    support_hi: tuple[float, ...] = ()
    mass: float | None = None
    name: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("density", "points"):
            raise ValueError(f"unknown measure kind {self.kind!r}")
        if self.n not in (2, 3):
            raise ValueError("n must be 2 or 3")
        if self.kind == "points":
            pts = []
            for loc, m in self.points:
                loc = tuple(float(c) for c in np.atleast_1d(loc))
                if len(loc) != self.n - 1:
                    raise ValueError("point mass location must lie in R^{n-1}")
                if m < 0:
                    raise ValueError("point masses must be nonnegative")
                pts.append((loc, float(m)))
            object.__setattr__(self, "points", tuple(pts))
            if pts:
                locs = np.array([p[0] for p in pts])
                object.__setattr__(self, "support_lo", tuple(locs.min(0)))
                object.__setattr__(self, "support_hi", tuple(locs.max(0)))
        elif self.samples is not None:
            s = np.array(self.samples, dtype=float)
            axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
            if s.shape != tuple(len(a) for a in axes):
                raise ValueError("density samples must match their axes")
            if np.any(s < 0) or not np.all(np.isfinite(s)):
                raise ValueError("density must be finite and nonnegative")
            s.setflags(write=False)
            object.__setattr__(self, "samples", s)
            object.__setattr__(self, "axes", axes)
            if np.any(s > 0):
                nz = np.nonzero(s > 0)
                lo = tuple(float(a[i.min()]) for a, i in zip(axes, nz))
                hi = tuple(float(a[i.max()]) for a, i in zip(axes, nz))
            else:
                lo = hi = tuple(0.0 for _ in axes)
            object.__setattr__(self, "support_lo", lo)
            object.__setattr__(self, "support_hi", hi)
        elif self.fn is None:
            raise ValueError("density measure needs fn or samples")

    # -- constructors --------------------------------------------------------

    @classmethod
    def from_samples(cls, axes: Sequence[np.ndarray], samples, **kw) -> "MeasureSpec":
        return cls("density", len(axes) + 1, axes=tuple(axes), samples=samples, **kw)

    @classmethod
    def point_masses(cls, points, n: int = 2, **kw) -> "MeasureSpec":
        return cls("points", n, points=tuple(points), **kw)

    @classmethod
    def zero(cls, n: int = 2) -> "MeasureSpec":
        return cls("points", n, points=(), name="zero")

    @classmethod
    def ellipse_focal(cls, a: float = 5.0, b: float = 3.0) -> "MeasureSpec":
        """Density on the focal segment whose quadrature domain is the ellipse
        x^2/a^2 + y^2/b^2 < 1 (n = 2)."""
        c = np.sqrt(a * a - b * b)

        def f(x):
            x = np.asarray(x, dtype=float)[..., 0]
            return 2 * a * b / c**2 * np.sqrt(np.clip(c * c - x * x, 0.0, None))

        return cls("density", 2, fn=f, support_lo=(-c,), support_hi=(c,),
                   mass=np.pi * a * b, name="ellipse_focal", params={"a": a, "b": b})

    @classmethod
    def uniform_disk(cls, radius: float = 1.0, value: float = 1.0, n: int = 3) -> "MeasureSpec":
        """Constant density ``value`` on the (n-1)-ball of given radius."""
        def f(x):
            x = np.asarray(x, dtype=float)
            return np.where(np.sum(x * x, axis=-1) <= radius**2, value, 0.0)

        vol = 2 * radius if n == 2 else np.pi * radius**2
        return cls("density", n, fn=f, support_lo=(-radius,) * (n - 1), support_hi=(radius,) * (n - 1),
                   mass=value * vol, name="uniform_disk", params={"radius": radius, "value": value})

    # -- evaluation ----------------------------------------------------------

    @property
    def is_zero(self) -> bool:
        if self.kind == "points":
            return all(m == 0 for _, m in self.points)
        if self.samples is not None:
            return not np.any(self.samples > 0)
        return self.mass == 0

    @property
    def total_mass(self) -> float:
        if self.kind == "points":
            return float(sum(m for _, m in self.points))
        if self.samples is not None:
            cell = np.prod([a[1] - a[0] for a in self.axes]) if all(len(a) > 1 for a in self.axes) else 0.0
            return float(self.samples.sum() * cell)
        if self.mass is not None:
            return float(self.mass)
        raise ValueError("density given by a function needs an explicit mass")

    def density_at(self, xp) -> np.ndarray:
        """Density at points ``xp`` of shape ``(..., n-1)`` (zero for point measures)."""
        xp = np.asarray(xp, dtype=float)
        if self.kind == "points":
            return np.zeros(xp.shape[:-1])
        if self.fn is not None:
            return np.asarray(self.fn(xp), dtype=float)
        ip = RegularGridInterpolator(self.axes, self.samples, bounds_error=False, fill_value=0.0)
        return ip(xp.reshape(-1, self.n - 1)).reshape(xp.shape[:-1])

    def layer_source(self, grid: Grid) -> np.ndarray:
        """The discrete measure mu_h as a volume source on the node layer x_n = 0."""
        if grid.n != self.n:
            raise ValueError(f"measure lives in R^{self.n} but grid is {grid.n}-dimensional")
        mu = np.zeros(grid.dims)
        k0 = grid.layer
        if self.kind == "points":
            for loc, m in self.points:
                idx = grid.nearest_index(tuple(loc) + (0.0,))
                mu[idx] += m / grid.cell_volume
            return mu
        xp = np.stack(np.meshgrid(*grid.xprime_axes(), indexing="ij"), axis=-1)
        if self.samples is not None and _same_axes(self.axes, grid.xprime_axes()):
            f = np.array(self.samples)
        else:
            f = self.density_at(xp)
        mu[..., k0] = f / grid.h[-1]
        return mu

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "n": self.n, "name": self.name, "params": self.params}
        if self.kind == "points":
            d["points"] = [[list(loc), m] for loc, m in self.points]
        return d


def _same_axes(a, b) -> bool:
    return len(a) == len(b) and all(len(x) == len(y) and np.allclose(x, y, rtol=0, atol=1e-12) for x, y in zip(a, b))


@dataclass(frozen=True)
class SolverConfig:
    omega: float = 1.8
    tol: float = 1e-6
    max_iter: int = 200_000
    margin: int = 3
    grow_factor: float = 0.25
    max_grows: int = 4
    coarse_levels: int = 3
    check_every: int = 20

    def __post_init__(self):
        if not 1.0 < self.omega < 2.0:
            raise ValueError("relaxation factor must lie in (1, 2)")
        if self.tol <= 0:
            raise ValueError("residual tolerance must be positive")
        if self.margin < 2:
            raise ValueError("auto-grow margin must be at least 2 cells")


@dataclass(frozen=True, eq=False)
class PotentialSolution:
    u: ScalarField
    measure: MeasureSpec | None
    omega_mask: np.ndarray
    eps_h: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.u.grid

    @classmethod
    def from_field(cls, u: ScalarField, measure: MeasureSpec | None = None, tol: float = 1e-10,
                   **diag) -> "PotentialSolution":
        """Wrap an externally computed potential (e.g. a closed form sampled on a grid)."""
        eps_h = max(10 * tol, max(u.grid.h) ** 2)
        mask = u.values > eps_h
        if measure is not None and not measure.is_zero:
            mask |= measure.layer_source(u.grid) > 0
        return cls(u, measure, mask, eps_h, {"source": "injected", **diag})

    def upper(self) -> ScalarField:
        """The potential restricted to the closed upper half space."""
        k0 = self.grid.layer
        return ScalarField(self.grid.upper(), self.u.values[..., k0:], name=self.u.name)

    def symmetry_defect(self) -> float:
        v = self.u.values
        k0 = self.grid.layer
        m = min(k0, v.shape[-1] - 1 - k0)
        if m == 0:
            return 0.0
        up = v[..., k0 + 1:k0 + m + 1]
        dn = v[..., k0 - 1:k0 - m - 1 if k0 - m - 1 >= 0 else None:-1]
        return float(np.max(np.abs(up - dn)))


# -- solver -------------------------------------------------------------------


def _interior(n: int):
    return tuple(slice(1, -1) for _ in range(n))


def _neighbour_sum(u: np.ndarray, inv_h2) -> np.ndarray:
    n = u.ndim
    out = None
    for k in range(n):
        lo = [slice(1, -1)] * n
        hi = [slice(1, -1)] * n
        lo[k] = slice(0, -2)
        hi[k] = slice(2, None)
        term = (u[tuple(lo)] + u[tuple(hi)]) * inv_h2[k]
        out = term if out is None else out + term
    return out


def discrete_laplacian(u: np.ndarray, h) -> np.ndarray:
    """L_h u on interior nodes (shape of the interior block)."""
    inv = 1.0 / np.asarray(h, dtype=float) ** 2
    return _neighbour_sum(u, inv) - 2.0 * inv.sum() * u[_interior(u.ndim)]


def complementarity_residual(u: np.ndarray, rhs: np.ndarray, h) -> float:
    """max |min(u, rhs - L_h u)| over interior nodes; rhs = 1 - mu_h on the interior block."""
    w = rhs - discrete_laplacian(u, h)
    return float(np.max(np.abs(np.minimum(u[_interior(u.ndim)], w))))


def _psor(u: np.ndarray, rhs: np.ndarray, h, cfg: SolverConfig) -> tuple[int, float]:
    inv = 1.0 / np.asarray(h, dtype=float) ** 2
    diag = 2.0 * inv.sum()
    inner = u[_interior(u.ndim)]  # view
    idx = np.indices(inner.shape).sum(axis=0)
    colours = [(idx % 2) == 0, (idx % 2) == 1]
    omega = cfg.omega
    res = np.inf
    for it in range(1, cfg.max_iter + 1):
        for c in colours:
            gs = (_neighbour_sum(u, inv) - rhs) / diag
            new = np.maximum(0.0, inner + omega * (gs - inner))
            np.copyto(inner, new, where=c)
        if it % cfg.check_every == 0:
            res = complementarity_residual(u, rhs, h)
            if res <= cfg.tol:
                return it, res
    raise ConvergenceError(f"projected SOR stalled at residual {res:.3e} after {cfg.max_iter} iterations")


def _check_support(measure: MeasureSpec, grid: Grid, cells: int = 2) -> None:
    if measure.is_zero:
        return
    lo = np.asarray(measure.support_lo, dtype=float)
    hi = np.asarray(measure.support_hi, dtype=float)
    glo, ghi = grid.lo[:-1], grid.hi[:-1]
    pad = cells * np.asarray(grid.h[:-1])
    if np.any(lo < glo + pad) or np.any(hi > ghi - pad):
        raise SupportError("measure support must lie strictly inside the grid with a margin of 2 cells")
    if grid.layer < cells or grid.dims[-1] - 1 - grid.layer < cells:
        raise SupportError("grid must extend at least 2 cells on both sides of x_n = 0")


def _touches_margin(u: np.ndarray, margin: int) -> bool:
    pos = u > 0
    for k in range(u.ndim):
        a = np.moveaxis(pos, k, 0)
        if a[:margin].any() or a[-margin:].any():
            return True
    return False


def _coarse_grid(grid: Grid) -> Grid | None:
    h2 = tuple(2 * h for h in grid.h)
    g = Grid.box(grid.lo, grid.hi, h2)
    if min(g.dims) < 9 or g.layer < 2 or g.dims[-1] - 1 - g.layer < 2:
        return None
    return g


def _prolong(uc: np.ndarray, coarse: Grid, fine: Grid) -> np.ndarray:
    ip = RegularGridInterpolator(coarse.axes(), uc, bounds_error=False, fill_value=0.0)
    out = ip(fine.coords().reshape(-1, fine.n)).reshape(fine.dims)
    return np.maximum(out, 0.0)


def _solve_on(measure: MeasureSpec, grid: Grid, cfg: SolverConfig, levels: int, stats: dict) -> np.ndarray:
    u0 = np.zeros(grid.dims)
    if levels > 0:
        coarse = _coarse_grid(grid)
        if coarse is not None:
            try:
                _check_support(measure, coarse)
                uc = _solve_on(measure, coarse, cfg, levels - 1, stats)
                u0 = _prolong(uc, coarse, grid)
            except SupportError:
                pass
    for k in range(grid.n):
        a = np.moveaxis(u0, k, 0)
        a[0] = 0.0
        a[-1] = 0.0
    rhs = (1.0 - measure.layer_source(grid))[_interior(grid.n)]
    iters, res = _psor(u0, rhs, grid.h, cfg)
    stats.setdefault("level_iterations", []).append(iters)
    stats["iterations"] = iters
    stats["residual"] = res
    return u0


def _grow(grid: Grid, factor: float) -> Grid:
    ext = grid.hi - grid.lo
    return Grid.box(grid.lo - factor * ext, grid.hi + factor * ext, grid.h)


def solve_partial_balayage(measure: MeasureSpec, grid: Grid, cfg: SolverConfig | None = None) -> PotentialSolution:
    """Solve the discrete obstacle problem for the partial balayage of ``measure``.

    The grid is enlarged (and the solve restarted) whenever the positivity set
    comes within ``cfg.margin`` cells of the box.
    """
    cfg = cfg or SolverConfig()
    if measure.n != grid.n:
        raise ValueError(f"measure lives in R^{measure.n} but grid is {grid.n}-dimensional")
    _check_support(measure, grid)
    eps_h = max(10 * cfg.tol, max(grid.h) ** 2)
    if measure.is_zero:
        u = ScalarField(grid, np.zeros(grid.dims))
        diag = {"iterations": 0, "residual": 0.0, "grows": 0, "empty": True}
        return PotentialSolution(u, measure, np.zeros(grid.dims, dtype=bool), eps_h, diag)
    grows = 0
    while True:
        stats: dict = {}
        values = _solve_on(measure, grid, cfg, cfg.coarse_levels, stats)
        if not _touches_margin(values, cfg.margin):
            break
        if grows >= cfg.max_grows:
            raise ConvergenceError("domain keeps reaching the box faces; enlarge the grid")
        grows += 1
        grid = _grow(grid, cfg.grow_factor)
        log.info("domain touches the box margin, growing grid to %s", grid.dims)
    u = ScalarField(grid, values, name="u")
    mask = (values > eps_h) | (measure.layer_source(grid) > 0)
    diag = {
        "iterations": stats["iterations"],
        "level_iterations": stats["level_iterations"],
        "residual": stats["residual"],
        "grows": grows,
        "eps_h": eps_h,
        "omega": cfg.omega,
        "tol": cfg.tol,
        "grid": grid.to_dict(),
        "empty": False,
    }
    return PotentialSolution(u, measure, mask, eps_h, diag)


# -- free boundary ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DomainGraph:
    """The free boundary (dOmega)^+ as the graph x_n = g(x') over D."""

    axes: tuple[np.ndarray, ...]
    mask: np.ndarray
    g: np.ndarray
    f: np.ndarray
    connected: bool = True

    @property
    def m(self) -> int:
        return len(self.axes)

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(float(a[1] - a[0]) for a in self.axes)

    @property
    def is_empty(self) -> bool:
        return not self.mask.any()

    def coords(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def boundary_points(self) -> np.ndarray:
        """Points (x', g(x')) of the graph over D, shape (k, m+1)."""
        xp = self.coords()[self.mask]
        return np.column_stack([xp, self.g[self.mask]])

    def grad_g(self) -> np.ndarray:
        """Central-difference table of grad g, shape mask.shape + (m,)."""
        return np.stack(np.gradient(self.g, *self.h, edge_order=2), axis=-1)

    def hess_g(self) -> np.ndarray:
        gr = np.gradient(self.g, *self.h, edge_order=2)
        m = self.m
        H = np.zeros(self.g.shape + (m, m))
        for i in range(m):
            a = np.moveaxis(self.g, i, 0)
            d2 = np.zeros_like(a)
            hi = self.h[i]
            d2[1:-1] = (a[2:] - 2 * a[1:-1] + a[:-2]) / hi**2
            H[..., i, i] = np.moveaxis(d2, 0, i)
            for j in range(i + 1, m):
                H[..., i, j] = H[..., j, i] = np.gradient(gr[i], self.h[j], axis=j, edge_order=2)
        return H

    def g_at(self, xp) -> np.ndarray:
        """Piecewise-linear g (zero outside the tabulated box)."""
        ip = RegularGridInterpolator(self.axes, self.g, bounds_error=False, fill_value=0.0)
        xp = np.asarray(xp, dtype=float)
        return ip(xp.reshape(-1, self.m)).reshape(xp.shape[:-1])

    def volume_upper(self) -> float:
        """m(Omega^+) = integral of g over D."""
        return float(self.g.sum() * np.prod(self.h))


def extract_domain(sol: PotentialSolution, method: str = "sqrt", mono_tol: float | None = None) -> DomainGraph:
    """Read the graph g and the density f = -2 du/dx_n(0+) off a converged potential.

    ``method="threshold"`` interpolates linearly where u crosses eps_h;
    ``method="sqrt"`` (default) extrapolates sqrt(2u), which is affine in x_n near
    the free boundary because u vanishes quadratically there.
    """
    grid = sol.grid
    k0 = grid.layer
    hn = grid.h[-1]
    up = sol.u.values[..., k0:]
    eps = sol.eps_h
    axes = tuple(grid.xprime_axes())
    shape = up.shape[:-1]
    above = up > eps
    count = np.cumprod(above, axis=-1).sum(axis=-1)
    mask = count > 0
    g = np.zeros(shape)
    f = np.zeros(shape)
    if not mask.any():
        return DomainGraph(axes, mask, g, f, connected=True)
    if mono_tol is None:
        mono_tol = max(10 * sol.diagnostics.get("tol", 1e-10), 1e-12)
    inc = np.diff(up, axis=-1) > mono_tol
    kk = np.arange(up.shape[-1] - 1)
    before = kk[(None,) * len(shape)] < count[..., None]
    bad = inc & before & above[..., :-1]
    if bad.any():
        where = np.argwhere(bad)[0]
        raise StructuralError(f"u increases in x_n inside Omega+ at column {tuple(where[:-1])}")
    kl = np.where(mask, count - 1, 0)
    ul = np.take_along_axis(up, kl[..., None], -1)[..., 0]
    un = np.take_along_axis(up, np.minimum(kl + 1, up.shape[-1] - 1)[..., None], -1)[..., 0]
    frac = np.clip((ul - eps) / np.where(ul - un > 0, ul - un, 1.0), 0.0, 1.0)
    g_thr = hn * (kl + frac)
    if method == "threshold":
        g = np.where(mask, g_thr, 0.0)
    elif method == "sqrt":
        # anchor on the last nodes above the solver noise floor, not eps_h
        floor = max(100 * sol.diagnostics.get("tol", 1e-10), 1e-12)
        kl = np.maximum(kl, np.cumprod(up > floor, axis=-1).sum(axis=-1) - 1)
        ul = np.take_along_axis(up, kl[..., None], -1)[..., 0]
        um = np.take_along_axis(up, np.maximum(kl - 1, 0)[..., None], -1)[..., 0]
        sl, sm = np.sqrt(2 * np.maximum(ul, 0)), np.sqrt(2 * np.maximum(um, 0))
        ok = mask & (kl >= 1) & (sm > sl)
        ext = hn * (kl + sl / np.where(ok, sm - sl, 1.0))
        ext = np.clip(ext, hn * kl, hn * (kl + 3))
        g = np.where(ok, ext, np.where(mask, g_thr, 0.0))
    else:
        raise ValueError(f"unknown extraction method {method!r}")
    if up.shape[-1] >= 3:
        dudn = (-3 * up[..., 0] + 4 * up[..., 1] - up[..., 2]) / (2 * hn)
        f = np.where(mask, -2 * dudn, 0.0)
    _, ncomp = ndimage.label(mask)
    return DomainGraph(axes, mask, g, f, connected=ncomp <= 1)


def localize(sol: PotentialSolution, b: float) -> tuple[MeasureSpec, PotentialSolution]:
    """Cut Omega^+ at x_n = b and return the localized measure and solution.

    The new density is ``-2 du/dx_n(x', b)``; the solution keeps u for x_n > b,
    reflects it below and is shifted so that the slice becomes x_n = 0.
    """
    grid = sol.grid
    hn = grid.h[-1]
    if b == 0:
        return sol.measure, sol
    kb_f = b / hn
    kb = int(round(kb_f))
    if b < 0 or abs(kb_f - kb) > 1e-9:
        raise ValueError("slice height must be a positive multiple of the grid spacing")
    kb += grid.layer
    v = sol.u.values
    if kb + 1 >= v.shape[-1]:
        raise EmptySliceError("slice lies above the grid")
    slice_vals = v[..., kb]
    inside = slice_vals > sol.eps_h
    if not inside.any():
        raise EmptySliceError(f"slice x_n = {b} does not meet the domain")
    dudn = (v[..., kb + 1] - v[..., kb - 1]) / (2 * hn)
    fb = np.where(inside, np.maximum(-2 * dudn, 0.0), 0.0)
    axes = tuple(grid.xprime_axes())
    measure = MeasureSpec.from_samples(axes, fb, name="localized", params={"b": b})
    top = v[..., kb:]
    J = top.shape[-1] - 1
    mirrored = np.concatenate([top[..., :0:-1], top], axis=-1)
    new_grid = Grid(grid.dims[:-1] + (2 * J + 1,), grid.h, grid.origin[:-1] + (-J * hn,))
    u = ScalarField(new_grid, mirrored, name="u")
    mask = (mirrored > sol.eps_h) | (measure.layer_source(new_grid) > 0)
    diag = {**sol.diagnostics, "localized_at": b}
    return measure, PotentialSolution(u, measure, mask, sol.eps_h, diag)


def _line_fractions(v: np.ndarray, thr: float, axis: int) -> np.ndarray:
    """Fraction of each node's 1D cell (along ``axis``) lying inside {u > 0}.

    Crossings are located by extrapolating sqrt(2u) from the last two nodes
    above ``thr`` on each line.
    """
    a = np.moveaxis(v, axis, -1)
    s = np.sqrt(2 * np.maximum(a, 0.0))
    inside = a > thr
    out = inside.astype(float)
    N = a.shape[-1]
    for flip in (False, True):
        aa = (lambda z: z[..., ::-1]) if flip else (lambda z: z)
        ins, ss, fr = aa(inside), aa(s), aa(out)
        for i in range(1, N - 1):
            edge = ins[..., i] & ~ins[..., i + 1]
            if not edge.any():
                continue
            two = edge & ins[..., i - 1] & (ss[..., i - 1] > ss[..., i])
            ext = np.where(two, ss[..., i] / np.where(two, ss[..., i - 1] - ss[..., i], 1.0), 0.5)
            ext = np.clip(ext, 0.0, 3.0)
            fr[..., i] = np.where(edge, np.minimum(fr[..., i], np.clip(ext + 0.5, 0.0, 1.0)), fr[..., i])
            for j in range(1, 4):
                if i + j >= N:
                    break
                cell = np.clip(ext - (j - 0.5), 0.0, 1.0)
                fr[..., i + j] = np.where(edge & ~ins[..., i + j], np.maximum(fr[..., i + j], cell), fr[..., i + j])
    return np.moveaxis(out, -1, axis)


def omega_fractions(sol: PotentialSolution) -> np.ndarray:
    """Per-node inside fraction of the node's cell, for sub-cell volumes of Omega.

    Each node contributes the inside fraction of its cell measured along the
    coordinate axis best aligned with grad u nearby; the crossing on that axis
    comes from the affine behaviour of sqrt(2u) at the free boundary.
    """
    v = sol.u.values
    h = sol.grid.h
    n = v.ndim
    fr = np.stack([_line_fractions(v, sol.eps_h, k) for k in range(n)], axis=-1)
    gr = np.gradient(v, *h, edge_order=2)
    ag = np.stack([ndimage.maximum_filter(np.abs(gk), size=3) for gk in gr], axis=-1)
    kstar = np.argmax(ag, axis=-1)
    return np.take_along_axis(fr, kstar[..., None], axis=-1)[..., 0]


def omega_volume(sol: PotentialSolution) -> float:
    """Sub-cell estimate of m(Omega), see :func:`omega_fractions`."""
    return float(omega_fractions(sol).sum() * np.prod(sol.grid.h))


def interior_upper_mask(sol: PotentialSolution, cells: int = 2) -> np.ndarray:
    """Nodes of the upper half grid (x_n > 0) at least ``cells`` nodes inside Omega."""
    k0 = sol.grid.layer
    om = sol.omega_mask[..., k0:]
    inner = ndimage.binary_erosion(om, iterations=cells, border_value=0) if cells > 0 else om
    inner = inner.copy()
    inner[..., 0] = False
    return inner


def residual_report(sol: PotentialSolution, graph: DomainGraph | None = None, cells: int = 2) -> dict:
    """Residuals of the overdetermined system plus the global mass balance."""
    grid = sol.grid
    if sol.measure is not None and sol.measure.is_zero and not sol.omega_mask.any():
        return {"pde_residual": 0.0, "boundary_u": 0.0, "boundary_grad": 0.0, "mass_defect": 0.0,
                "mass_defect_rel": 0.0, "volume": 0.0, "mass": 0.0}
    graph = graph if graph is not None else extract_domain(sol)
    lap = np.zeros(grid.dims)
    lap[_interior(grid.n)] = discrete_laplacian(sol.u.values, grid.h)
    k0 = grid.layer
    inner = interior_upper_mask(sol, cells)
    pde = float(np.max(np.abs(lap[..., k0:][inner] - 1.0))) if inner.any() else 0.0
    if graph.is_empty:
        bu = bg = 0.0
    else:
        pts = graph.boundary_points()
        bu = float(np.max(np.abs(interpolate(sol.u, pts))))
        grad = gradient(sol.u)
        bg = float(np.max(np.linalg.norm(interpolate(grad, pts), axis=-1)))
    volume = omega_volume(sol)
    mass = sol.measure.total_mass if sol.measure is not None else float("nan")
    defect = abs(volume - mass)
    return {
        "pde_residual": pde,
        "boundary_u": bu,
        "boundary_grad": bg,
        "volume": volume,
        "volume_columns": 2 * graph.volume_upper(),
        "mass": mass,
        "mass_defect": defect,
        "mass_defect_rel": defect / mass if mass else 0.0,
    }


def wide_stencil_residual(sol: PotentialSolution, band: float) -> float:
    """max |L_{2h} u - 1| over upper-half nodes at distance >= ``band`` from dOmega^+.

    The solver satisfies its own stencil to the SOR tolerance; the 2h-stencil
    residual measures consistency with Delta u = 1 and shrinks as O(h^2).
    """
    grid = sol.grid
    v = sol.u.values
    n = grid.n
    lap = np.zeros(grid.dims)
    core = tuple(slice(2, -2) for _ in range(n))
    acc = np.zeros([d - 4 for d in grid.dims])
    for k, h in enumerate(grid.h):
        lo = [slice(2, -2)] * n
        hi = [slice(2, -2)] * n
        lo[k] = slice(0, -4)
        hi[k] = slice(4, None)
        acc += (v[tuple(lo)] + v[tuple(hi)] - 2 * v[core]) / (2 * h) ** 2
    lap[core] = acc
    k0 = grid.layer
    dist = ndimage.distance_transform_edt(sol.omega_mask[..., k0:], sampling=grid.h)
    yy = grid.upper().mesh()[-1]
    ok = (dist >= band) & (yy >= band)
    ok &= interior_upper_mask(sol, 3)
    if not ok.any():
        return 0.0
    return float(np.max(np.abs(lap[..., k0:][ok] - 1.0)))


def with_config(sol: PotentialSolution, **diag) -> PotentialSolution:
    return replace(sol, diagnostics={**sol.diagnostics, **diag})
