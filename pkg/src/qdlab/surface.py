"""Differential geometry of the graph x_n = g(u) over D.

Shapes expose ``g``, ``grad`` and ``hess`` on points of shape ``(..., m)`` with
``m = n - 1``; ``contains`` tells where jets may be evaluated and ``height``
extends g by zero off D.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

from .balayage import DomainGraph


class OutsideDomainError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AnalyticShape:
    """A closed-form graph. ``inside(u)`` must be True exactly on D."""

    name: str
    m: int
    fn: Callable
    grad_fn: Callable
    hess_fn: Callable
    inside: Callable
    lo: tuple
    hi: tuple
    scale: float = 1.0
    params: dict | None = None

    def contains(self, u) -> np.ndarray:
        return np.asarray(self.inside(np.asarray(u, dtype=float)))

    def g(self, u):
        return self.fn(np.asarray(u, dtype=float))

    def grad(self, u):
        return self.grad_fn(np.asarray(u, dtype=float))

    def hess(self, u):
        return self.hess_fn(np.asarray(u, dtype=float))

    def height(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        ins = self.contains(u)
        safe = np.where(ins[..., None], u, 0.0 * u)
        return np.where(ins, self.fn(safe) if np.any(ins) else 0.0, 0.0)

    @property
    def max_height(self) -> float:
        return float(self.params.get("gmax", self.scale)) if self.params else self.scale


def hemisphere(R: float = 1.0, m: int = 1) -> AnalyticShape:
    def g(u):
        return np.sqrt(np.maximum(R * R - np.sum(u * u, axis=-1), 0.0))

    def grad(u):
        return -u / g(u)[..., None]

    def hess(u):
        gg = g(u)[..., None, None]
        eye = np.eye(m)
        return -eye / gg - u[..., :, None] * u[..., None, :] / gg**3

    return AnalyticShape("hemisphere", m, g, grad, hess, lambda u: np.sum(u * u, axis=-1) < R * R,
                         (-R,) * m, (R,) * m, R, {"R": R, "gmax": R})


def ellipse_arch(a=5.0, b: float = 3.0, m: int = 1) -> AnalyticShape:
    """Upper half of an ellipsoid with horizontal semi-axes ``a`` and height ``b``."""
    a = np.broadcast_to(np.asarray(a, dtype=float), (m,)).copy()
    ia2 = 1.0 / a**2

    def w(u):
        return 1.0 - np.sum(u * u * ia2, axis=-1)

    def g(u):
        return b * np.sqrt(np.maximum(w(u), 0.0))

    def grad(u):
        return -b * (u * ia2) / np.sqrt(w(u))[..., None]

    def hess(u):
        ww = w(u)[..., None, None]
        v = u * ia2
        return -b * (np.diag(ia2) / np.sqrt(ww) + v[..., :, None] * v[..., None, :] / ww**1.5)

    return AnalyticShape("ellipse_arch", m, g, grad, hess, lambda u: w(u) > 0,
                         tuple(-a), tuple(a), float(max(a.max(), b)), {"a": a.tolist(), "b": b, "gmax": b})


def tall_cap(m: int = 1) -> AnalyticShape:
    """g(u) = 1 - |u|^2 on the unit ball: too tall to be a ball union."""
    def g(u):
        return 1.0 - np.sum(u * u, axis=-1)

    def grad(u):
        return -2.0 * u

    def hess(u):
        return np.broadcast_to(-2.0 * np.eye(m), u.shape[:-1] + (m, m)).copy()

    return AnalyticShape("tall_cap", m, g, grad, hess, lambda u: np.sum(u * u, axis=-1) < 1.0,
                         (-1.0,) * m, (1.0,) * m, 1.0, {"gmax": 1.0})


def _quadratic_fit(q: np.ndarray, mask: np.ndarray, h, radius: int):
    """Masked local least-squares quadratic fit of q around every node.

    Returns value, gradient (..., m) and Hessian (..., m, m) tables; only nodes
    of ``mask`` enter the fits.
    """
    m = q.ndim
    offs = np.arange(-radius, radius + 1, dtype=float)
    D = np.meshgrid(*([offs] * m), indexing="ij")
    basis = [np.ones_like(D[0])] + list(D)
    pairs = [(i, j) for i in range(m) for j in range(i, m)]
    basis += [D[i] * D[j] for i, j in pairs]
    nb = len(basis)
    w = mask.astype(float)
    wq = w * q
    M = np.empty(q.shape + (nb, nb))
    r = np.empty(q.shape + (nb,))
    for a in range(nb):
        r[..., a] = ndimage.correlate(wq, basis[a], mode="constant")
        for b in range(a, nb):
            M[..., a, b] = M[..., b, a] = ndimage.correlate(w, basis[a] * basis[b], mode="constant")
    ok = np.abs(np.linalg.det(M)) > 1e-9
    Msafe = np.where(ok[..., None, None], M, np.eye(nb))
    c = np.linalg.solve(Msafe, np.where(ok[..., None], r, 0.0)[..., None])[..., 0]
    hs = np.asarray(h, dtype=float)
    val = c[..., 0]
    grad = c[..., 1:m + 1] / hs
    H = np.zeros(q.shape + (m, m))
    for k, (i, j) in enumerate(pairs):
        coef = c[..., m + 1 + k]
        if i == j:
            H[..., i, i] = 2 * coef / hs[i] ** 2
        else:
            H[..., i, j] = H[..., j, i] = coef / (hs[i] * hs[j])
    return val, grad, H, ok


class GraphShape:
    """Jets of a tabulated graph.

    Derivatives are taken of q = g^2/2, which stays smooth up to the rim of D
    where g itself has square-root behaviour; then grad g = grad q / g and
    hess g = (hess q - grad g grad g^T) / g. With ``fit_radius > 0`` q is
    replaced by a local quadratic least-squares fit over a window of that many
    cells (this damps the node-to-node jitter of the extracted heights);
    ``fit_radius = 0`` gives plain central differences.

    Jets are only offered on the core of D: nodes whose distance to the edge of
    D is at least ``rim`` times the largest such distance (and at least
    ``1 + inset`` cells). Near a vertical rim the column-wise heights lose
    accuracy, so that band is left out.
    """

    def __init__(self, graph: DomainGraph, inset: int = 1, fit_radius: int = 8, rim: float = 0.1):
        if graph.is_empty:
            raise OutsideDomainError("empty domain graph")
        self.graph = graph
        self.m = graph.m
        self.name = "graph"
        hs = graph.h
        q = 0.5 * graph.g**2
        if fit_radius > 0:
            qf, gqa, H, ok = _quadratic_fit(q, graph.mask, hs, fit_radius)
            qf = np.where(graph.mask & ok, np.maximum(qf, 0.0), 0.0)
            gq = [gqa[..., i] for i in range(self.m)]
        else:
            qf = q
            gq = np.gradient(q, *hs, edge_order=2) if self.m > 1 else [np.gradient(q, hs[0], edge_order=2)]
            H = np.zeros(q.shape + (self.m, self.m))
            for i in range(self.m):
                a = np.moveaxis(q, i, 0)
                d2 = np.zeros_like(a)
                d2[1:-1] = (a[2:] - 2 * a[1:-1] + a[:-2]) / hs[i] ** 2
                H[..., i, i] = np.moveaxis(d2, 0, i)
                for j in range(i + 1, self.m):
                    H[..., i, j] = H[..., j, i] = np.gradient(gq[i], hs[j], axis=j, edge_order=2)
        self.fit_radius = fit_radius
        gt = np.sqrt(2 * qf)
        axes = graph.axes
        self._g = RegularGridInterpolator(axes, gt, bounds_error=False, fill_value=0.0)
        self._gq = RegularGridInterpolator(axes, np.stack(gq, axis=-1), bounds_error=False, fill_value=0.0)
        self._hq = RegularGridInterpolator(axes, H, bounds_error=False, fill_value=0.0)
        # jets need a full stencil inside D: erode once for the stencil plus `inset`
        inner = graph.mask & (gt > 0)
        dist = ndimage.distance_transform_edt(np.pad(inner, 1), sampling=hs)[(slice(1, -1),) * self.m]
        ok = inner & (dist >= max((1 + inset + 1) * max(hs), rim * dist.max()))
        self.valid = ok
        self._ok = RegularGridInterpolator(axes, ok.astype(float), bounds_error=False, fill_value=0.0)
        self._in = RegularGridInterpolator(axes, graph.mask.astype(float), bounds_error=False, fill_value=0.0)
        self.lo = tuple(float(a[0]) for a in axes)
        self.hi = tuple(float(a[-1]) for a in axes)
        self.h = max(hs)
        self.scale = float(gt.max())
        self.max_height = self.scale

    def _flat(self, u):
        u = np.asarray(u, dtype=float)
        return u.reshape(-1, self.m), u.shape[:-1]

    def contains(self, u) -> np.ndarray:
        """True where the cell around u lies in the eroded domain."""
        f, sh = self._flat(u)
        return (self._ok(f) > 1 - 1e-12).reshape(sh)

    def in_domain(self, u) -> np.ndarray:
        f, sh = self._flat(u)
        return (self._in(f) > 1 - 1e-12).reshape(sh)

    def g(self, u):
        f, sh = self._flat(u)
        return self._g(f).reshape(sh)

    height = g

    def grad(self, u):
        f, sh = self._flat(u)
        return (self._gq(f) / self._g(f)[:, None]).reshape(sh + (self.m,))

    def hess(self, u):
        f, sh = self._flat(u)
        gg = self._g(f)
        dg = self._gq(f) / gg[:, None]
        H = (self._hq(f) - dg[:, :, None] * dg[:, None, :]) / gg[:, None, None]
        return H.reshape(sh + (self.m, self.m))

    def node_points(self) -> np.ndarray:
        """Grid nodes where jets are valid, shape (k, m)."""
        return self.graph.coords()[self.valid]


def as_shape(obj, **kw):
    if isinstance(obj, DomainGraph):
        return GraphShape(obj, **kw)
    return obj


@dataclass(frozen=True)
class SurfaceJet:
    u: np.ndarray
    g: float
    grad: np.ndarray
    hess: np.ndarray

    @property
    def m(self) -> int:
        return len(self.u)

    @property
    def phi(self) -> float:
        return 0.5 * (self.u @ self.u + self.g**2)

    @property
    def p(self) -> np.ndarray:
        return self.u + self.g * self.grad

    @property
    def slope(self) -> float:
        return float(np.sqrt(1.0 + self.grad @ self.grad))

    @property
    def N_len(self) -> float:
        return self.g * self.slope

    @property
    def A(self) -> np.ndarray:
        return np.eye(self.m) + np.outer(self.grad, self.grad)

    @property
    def B(self) -> np.ndarray:
        return self.hess / self.slope

    @property
    def hess_phi(self) -> np.ndarray:
        return np.eye(self.m) + np.outer(self.grad, self.grad) + self.g * self.hess

    @property
    def normal(self) -> np.ndarray:
        return np.append(self.grad, -1.0) / self.slope


@dataclass(frozen=True)
class ShiftedJet:
    jet: SurfaceJet
    a: np.ndarray
    b: float

    @property
    def grad_phi(self) -> np.ndarray:
        j = self.jet
        return j.u - self.a + (j.g - self.b) * j.grad

    @property
    def hess_phi(self) -> np.ndarray:
        return self.jet.hess_phi - self.b * self.jet.hess


def surface_jet(shape, u) -> SurfaceJet:
    shape = as_shape(shape)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if not bool(shape.contains(u)):
        raise OutsideDomainError(f"point {u} is not inside D")
    return SurfaceJet(u, float(shape.g(u)), np.asarray(shape.grad(u), dtype=float).reshape(-1),
                      np.asarray(shape.hess(u), dtype=float).reshape(len(u), len(u)))


def jets_batch(shape, U: np.ndarray) -> dict:
    """Vectorized jet quantities at points ``U`` (k, m) all inside D."""
    shape = as_shape(shape)
    U = np.asarray(U, dtype=float)
    g = np.asarray(shape.g(U), dtype=float)
    dg = np.asarray(shape.grad(U), dtype=float)
    H = np.asarray(shape.hess(U), dtype=float)
    m = U.shape[-1]
    outer = dg[..., :, None] * dg[..., None, :]
    A = np.eye(m) + outer
    slope = np.sqrt(1.0 + np.sum(dg * dg, axis=-1))
    return {
        "u": U, "g": g, "grad": dg, "hess": H,
        "A": A, "B": H / slope[..., None, None],
        "hess_phi": A + g[..., None, None] * H,
        "p": U + g[..., None] * dg,
        "N_len": g * slope,
        "phi": 0.5 * (np.sum(U * U, axis=-1) + g * g),
    }


def principal_curvatures(jet: SurfaceJet) -> np.ndarray:
    """Eigenvalues of B v = kappa A v, ascending (Cholesky of A, then eigh)."""
    return generalized_eigs(jet.B, jet.A)


def generalized_eigs(B: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of B v = k A v for symmetric B and SPD A (batched)."""
    L = np.linalg.cholesky(A)
    Li = np.linalg.inv(L)
    M = Li @ B @ np.swapaxes(Li, -1, -2)
    return np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, -1, -2)))


def shifted_jet(shape, u, c) -> ShiftedJet:
    jet = surface_jet(shape, u)
    c = np.asarray(c, dtype=float)
    a, b = c[:-1], float(c[-1])
    if b < 0:
        raise ValueError("center height must be nonnegative")
    if jet.g <= b:
        raise OutsideDomainError(f"g(u) = {jet.g:.6g} does not exceed b = {b:.6g}")
    return ShiftedJet(jet, a, b)


def poincare_transform(x, direction: str = "forward") -> np.ndarray:
    """T(u, v) = (u, (|u|^2 + v^2)/2) on the upper half space, or its inverse."""
    x = np.asarray(x, dtype=float)
    s, t = x[..., :-1], x[..., -1]
    r2 = np.sum(s * s, axis=-1)
    if direction == "forward":
        if np.any(t <= 0):
            raise ValueError("forward transform needs v > 0")
        return np.concatenate([s, (0.5 * (r2 + t * t))[..., None]], axis=-1)
    if direction == "inverse":
        if np.any(2 * t - r2 <= 0):
            raise ValueError("inverse transform needs t > |s|^2/2")
        return np.concatenate([s, np.sqrt(2 * t - r2)[..., None]], axis=-1)
    raise ValueError(f"unknown direction {direction!r}")
