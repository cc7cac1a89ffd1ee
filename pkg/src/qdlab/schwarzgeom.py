"""Schwarz-potential fields built from a solved potential u on the upper half space.

With r measured from an origin on the hyperplane:
    rho      = r^2/2 - x . grad u - (n-2) u
    omega_ij = x_i du/dx_j - x_j du/dx_i
    xi       = grad rho
    sigma    = (omega_1n, ..., omega_{n-1,n}, rho)
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize
from scipy.stats import qmc

from .balayage import DomainGraph, PotentialSolution, extract_domain, interior_upper_mask, omega_fractions
from .fieldcore import Grid, ScalarField, TensorField, VectorField, hessian_field, interpolate
from .surface import GraphShape


class OriginError(ValueError):
    """Origin shift outside the grid box or off the hyperplane."""


class StreamlineError(RuntimeError):
    """An integral curve of grad u left the grid."""


def _grad(a: np.ndarray, h) -> np.ndarray:
    # central inside, second-order one-sided on faces (incl. the layer x_n = 0)
    return np.stack(np.gradient(a, *h, edge_order=2), axis=-1)


def _lap(a: np.ndarray, h) -> np.ndarray:
    out = np.zeros_like(a)
    core = tuple(slice(1, -1) for _ in range(a.ndim))
    for k, hk in enumerate(h):
        lo = [slice(1, -1)] * a.ndim
        hi = [slice(1, -1)] * a.ndim
        lo[k] = slice(0, -2)
        hi[k] = slice(2, None)
        out[core] += (a[tuple(lo)] + a[tuple(hi)] - 2 * a[core]) / hk**2
    return out


@dataclass
class SchwarzState:
    source: PotentialSolution
    origin: np.ndarray
    grid: Grid  # upper half grid, original coordinates
    x: np.ndarray  # node coordinates relative to origin, dims + (n,)
    u: np.ndarray
    grad_u: np.ndarray
    rho: ScalarField
    omega: np.ndarray  # dims + (n, n)
    xi: VectorField
    sigma: VectorField
    J: TensorField  # J[..., i, k] = d sigma_i / d x_k
    interior: np.ndarray

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def h(self) -> float:
        return max(self.grid.h)

    def field(self, name: str):
        if name == "rho":
            return self.rho
        if name == "xi":
            return self.xi
        if name == "sigma":
            return self.sigma
        if name == "grad_u":
            return VectorField(self.grid, self.grad_u, name="gradu")
        if name == "u":
            return ScalarField(self.grid, self.u, name="u")
        if name == "J":
            return self.J
        raise KeyError(name)

    def at(self, name: str, pts) -> np.ndarray:
        """Multilinear interpolation of a stored field at points given in shifted coordinates."""
        p = np.asarray(pts, dtype=float) + self.origin
        return interpolate(self.field(name), p)

    def omega_en(self, e) -> np.ndarray:
        """Component sum_i e_i omega_in for a unit direction e in the hyperplane."""
        e = np.asarray(e, dtype=float)
        n = self.n
        return sum(e[i] * self.omega[..., i, n - 1] for i in range(n - 1))


def build_schwarz_state(sol: PotentialSolution, origin_shift=None, cells: int = 2) -> SchwarzState:
    grid = sol.grid
    n = grid.n
    a = np.zeros(n) if origin_shift is None else np.asarray(origin_shift, dtype=float).ravel()
    if a.size == n - 1:
        a = np.append(a, 0.0)
    if a.size != n or abs(a[-1]) > 0:
        raise OriginError("origin must be a point of the hyperplane x_n = 0")
    if not np.all((a[:-1] > grid.lo[:-1]) & (a[:-1] < grid.hi[:-1])):
        raise OriginError(f"origin {a.tolist()} outside the grid box")
    up = sol.upper()
    g = up.grid
    h = g.h
    U = up.values
    X = g.coords() - a
    G = _grad(U, h)
    r2 = np.sum(X * X, axis=-1)
    rho = 0.5 * r2 - np.sum(X * G, axis=-1) - (n - 2) * U
    om = X[..., :, None] * G[..., None, :] - X[..., None, :] * G[..., :, None]
    xi = _grad(rho, h)
    sig = np.stack([om[..., i, n - 1] for i in range(n - 1)] + [rho], axis=-1)
    J = np.stack([_grad(sig[..., i], h) for i in range(n)], axis=-2)
    inner = interior_upper_mask(sol, cells)
    inner[..., :cells] = False
    return SchwarzState(
        source=sol, origin=a, grid=g, x=X, u=U, grad_u=G,
        rho=ScalarField(g, rho, name="rho"), omega=om,
        xi=VectorField(g, xi, name="xi"), sigma=VectorField(g, sig, name="sigma"),
        J=TensorField(g, J, name="Jsigma", symmetric=False), interior=inner,
    )


def band_mask(state: SchwarzState, band: float | None = None) -> np.ndarray:
    """Interior nodes at physical distance >= band from dOmega^+ and from the hyperplane."""
    if band is None:
        return state.interior
    om = state.source.omega_mask[..., state.source.grid.layer:]
    dist = ndimage.distance_transform_edt(om, sampling=state.grid.h)
    return state.interior & (dist >= band) & (state.grid.mesh()[-1] >= band)


def _stats(a: np.ndarray, mask: np.ndarray) -> dict:
    v = np.abs(a[mask])
    if v.size == 0:
        return {"max": 0.0, "mean": 0.0}
    return {"max": float(v.max()), "mean": float(v.mean())}


def cr_residual(state: SchwarzState, band: float | None = None) -> dict:
    """Residuals of d rho/dx_k = sum_j d omega_kj/dx_j and of the harmonicity of rho, omega."""
    n = state.n
    h = state.grid.h
    mask = band_mask(state, band)
    rho = state.rho.values
    om = state.omega
    xi = state.xi.values
    out: dict = {"nodes": int(mask.sum()), "band": band}
    dom = {(k, j): _grad(om[..., k, j], h) for k in range(n) for j in range(n) if k != j}
    worst = 0.0
    for k in range(n):
        rhs = sum(dom[(k, j)][..., j] for j in range(n) if j != k)
        s = _stats(xi[..., k] - rhs, mask)
        out[f"components_{k + 1}"] = s
        worst = max(worst, s["max"])
    out["components_max"] = worst
    out["lap_rho"] = _stats(_lap(rho, h), mask)
    lw = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            s = _stats(_lap(om[..., i, j], h), mask)
            out[f"lap_omega_{i + 1}{j + 1}"] = s
            lw = max(lw, s["max"])
    out["lap_omega_max"] = lw
    sig = state.sigma.values
    div_sigma = sum(np.gradient(sig[..., i], h[i], axis=i, edge_order=2) for i in range(n))
    out["div_sigma"] = _stats(div_sigma, mask)
    out["trace_J"] = _stats(np.trace(state.J.values, axis1=-2, axis2=-1), mask)
    if n == 3:
        w = np.stack([om[..., 1, 2], om[..., 2, 0], om[..., 0, 1]], axis=-1)
        dw = [_grad(w[..., i], h) for i in range(3)]
        div_w = dw[0][..., 0] + dw[1][..., 1] + dw[2][..., 2]
        curl = np.stack([dw[2][..., 1] - dw[1][..., 2], dw[0][..., 2] - dw[2][..., 0],
                         dw[1][..., 0] - dw[0][..., 1]], axis=-1)
        dxi = [_grad(xi[..., i], h) for i in range(3)]
        out["div_omega_vec"] = _stats(div_w, mask)
        out["xi_minus_curl"] = _stats(np.linalg.norm(xi - curl, axis=-1), mask)
        out["div_xi"] = _stats(dxi[0][..., 0] + dxi[1][..., 1] + dxi[2][..., 2], mask)
    out["max"] = max(worst, out["lap_rho"]["max"], lw)
    return out


def omega_cylindrical_on_D(state: SchwarzState, graph: DomainGraph) -> dict:
    """n = 3: radial and angular components of (omega_23, omega_31, omega_12) on D."""
    if state.n != 3:
        raise ValueError("cylindrical check needs n = 3")
    om = state.omega[:, :, 0]
    x = state.x[:, :, 0, :2]
    r = np.linalg.norm(x, axis=-1)
    w1, w2 = om[..., 1, 2], om[..., 2, 0]
    ok = graph.mask & (r > 2 * state.h)
    er = x / np.where(r > 0, r, 1.0)[..., None]
    w_r = w1 * er[..., 0] + w2 * er[..., 1]
    w_phi = -w1 * er[..., 1] + w2 * er[..., 0]
    return {"omega_r": _stats(w_r, ok), "omega_phi_minus": _stats(w_phi - 0.5 * r * graph.f, ok)}


# -- boundary samples ------------------------------------------------------------


def boundary_samples(graph: DomainGraph, origin=None, rim: float = 0.1):
    """Points (x', g) on the core of the graph with unit upward normals, shifted coordinates."""
    shape = GraphShape(graph, rim=rim)
    xp = shape.node_points()
    gv = shape.g(xp)
    dg = shape.grad(xp)
    N = np.column_stack([-dg, np.ones(len(xp))])
    N /= np.linalg.norm(N, axis=1, keepdims=True)
    P = np.column_stack([xp, gv])
    if origin is not None:
        P = P - np.asarray(origin, dtype=float)
    return P, N


def _inward(state: SchwarzState, name: str, P, N, d1: float, d2: float):
    # linear extrapolation to the boundary from two inward offsets
    f1 = state.at(name, P - d1 * N)
    f2 = state.at(name, P - d2 * N)
    return (d2 * f1 - d1 * f2) / (d2 - d1)


def boundary_tangency_check(state: SchwarzState, graph: DomainGraph, offsets=(2, 3), tol: float | None = None) -> dict:
    """xi . n and xi minus the tangential projection of x on core boundary samples."""
    h = state.h
    P, N = boundary_samples(graph, state.origin)
    d1, d2 = offsets[0] * h, offsets[1] * h
    xi = _inward(state, "xi", P, N, d1, d2)
    xn = np.sum(xi * N, axis=1)
    xl = np.linalg.norm(xi, axis=1)
    proj = P - np.sum(P * N, axis=1, keepdims=True) * N
    tol = 10 * h if tol is None else tol
    big = xl > tol
    rho = _inward(state, "rho", P, N, d1, d2)
    r2 = np.sum(P * P, axis=1)
    return {
        "samples": len(P),
        "offsets": [d1, d2],
        "extrapolation_order": 1,
        "normal_ratio_max": float(np.max(np.abs(xn[big]) / xl[big])) if big.any() else 0.0,
        "normal_abs_max": float(np.max(np.abs(xn))),
        "projection_defect_max": float(np.max(np.linalg.norm(xi - proj, axis=1))),
        "rho_minus_half_r2_max": float(np.max(np.abs(rho - 0.5 * r2))),
        "points": P,
        "xi": xi,
    }


def xi_at(state: SchwarzState, graph: DomainGraph, point, offsets=(2, 3)) -> np.ndarray:
    """xi at one boundary point (shifted coordinates) by inward extrapolation along the normal."""
    P, N = boundary_samples(graph, state.origin)
    k = int(np.argmin(np.linalg.norm(P - np.asarray(point, dtype=float), axis=1)))
    h = state.h
    return _inward(state, "xi", P[k:k + 1], N[k:k + 1], offsets[0] * h, offsets[1] * h)[0]


def stationary_boundary_points(graph: DomainGraph, origin=None, tol: float | None = None) -> np.ndarray:
    """Local extrema of r^2/2 along the tabulated boundary (n = 2: over the graph nodes)."""
    P, _ = boundary_samples(graph, origin)
    r2 = np.sum(P * P, axis=1)
    if graph.m != 1:
        return P[[int(np.argmin(r2)), int(np.argmax(r2))]]
    k = np.arange(1, len(P) - 1)
    ext = ((r2[k] <= r2[k - 1]) & (r2[k] <= r2[k + 1])) | ((r2[k] >= r2[k - 1]) & (r2[k] >= r2[k + 1]))
    return P[k[ext]]


# -- gamma -----------------------------------------------------------------------


@dataclass
class GammaTrace:
    points: np.ndarray
    radii: np.ndarray
    residuals: np.ndarray
    zeros_per_shell: list
    branch: bool = False
    endpoint: str = "empty"
    reason: str = ""
    certificate: float | None = None
    degenerate: bool = False
    start_angle: float | None = None
    xi_alignment: float | None = None
    r0: float | None = None
    extras: dict = field(default_factory=dict)

    @property
    def is_empty(self) -> bool:
        return len(self.points) == 0

    def to_dict(self) -> dict:
        return {
            "points": np.asarray(self.points).tolist(),
            "radii": np.asarray(self.radii).tolist(),
            "residuals": np.asarray(self.residuals).tolist(),
            "zeros_per_shell": list(self.zeros_per_shell),
            "branch": self.branch,
            "endpoint": self.endpoint,
            "reason": self.reason,
            "certificate": self.certificate,
            "degenerate": self.degenerate,
            "start_angle": self.start_angle,
            "xi_alignment": self.xi_alignment,
            "r0": self.r0,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = np.asarray(self.points).shape[1] if len(self.points) else 0
        w.writerow(["r"] + [f"x{i + 1}" for i in range(n)] + ["residual", "zeros"])
        for r, p, res, z in zip(self.radii, self.points, self.residuals, self.zeros_per_shell):
            w.writerow([repr(float(r))] + [repr(float(v)) for v in p] + [repr(float(res)), z])
        return buf.getvalue()


class _Spline:
    """Cubic spline of grad u on the upper grid, evaluated in shifted coordinates."""

    def __init__(self, state: SchwarzState):
        self.state = state
        self.lo = state.grid.lo - state.origin
        self.h = np.asarray(state.grid.h)
        self.coef = [ndimage.spline_filter(state.grad_u[..., k], order=3, mode="nearest")
                     for k in range(state.n)]
        self.ucoef = ndimage.spline_filter(state.u, order=3, mode="nearest")

    def _idx(self, p):
        return ((np.atleast_2d(p) - self.lo) / self.h).T

    def grad(self, p):
        c = self._idx(p)
        return np.stack([ndimage.map_coordinates(cf, c, order=3, mode="nearest", prefilter=False)
                         for cf in self.coef], axis=-1)

    def u(self, p):
        return ndimage.map_coordinates(self.ucoef, self._idx(p), order=3, mode="nearest", prefilter=False)


def _sphere_point(v):
    v = np.atleast_1d(v)
    e = np.append(v, 1.0)
    return e / np.linalg.norm(e)


def _tangential(sp: _Spline, p: np.ndarray):
    r = np.linalg.norm(p, axis=-1, keepdims=True)
    e = p / r
    G = sp.grad(p)
    gr = np.sum(G * e, axis=-1, keepdims=True)
    T = G - gr * e
    return T, gr[..., 0], np.linalg.norm(G, axis=-1)


def _hull_direction(graph: DomainGraph, origin) -> tuple[np.ndarray | None, float]:
    # unit e in the hyperplane with max_{D} e . x' < 0, if any
    xp = graph.coords()[graph.mask] - np.asarray(origin)[:-1]
    if graph.m == 1:
        cands = np.array([[1.0], [-1.0]])
    else:
        t = np.linspace(0, 2 * np.pi, 720, endpoint=False)
        cands = np.column_stack([np.cos(t), np.sin(t)])
    worst = (xp @ cands.T).max(axis=0) + 0.5 * max(graph.h)
    k = int(np.argmin(worst))
    return (cands[k], float(-worst[k])) if worst[k] < 0 else (None, float(-worst[k]))


def trace_gamma(state: SchwarzState, graph: DomainGraph | None = None, n_starts: int = 32,
                growth: float = 1.05, r_min_cells: float = 5.0, cluster_cells: float = 3.0,
                residual_tol: float = 1e-4, seed: int = 0) -> GammaTrace:
    """Follow the zero of the tangential gradient of u on hemispheres of growing radius."""
    sol = state.source
    graph = graph if graph is not None else extract_domain(sol)
    n = state.n
    h = state.h
    empty = dict(points=np.zeros((0, n)), radii=np.zeros(0), residuals=np.zeros(0), zeros_per_shell=[])
    if graph.is_empty:
        return GammaTrace(**empty, reason="empty domain")
    Pb = graph.boundary_points() - state.origin
    r_all = np.linalg.norm(Pb, axis=1)
    r0 = float(r_all.min())
    e, slack = _hull_direction(graph, state.origin)
    if e is not None:
        w = state.omega_en(e)
        cert = float(w[state.interior].min()) if state.interior.any() else float("nan")
        return GammaTrace(**empty, reason="origin outside the convex hull", certificate=cert, r0=r0,
                          extras={"direction": e.tolist(), "hull_slack": slack})
    u0 = float(state.at("u", np.zeros(n)))
    f0 = float(graph.f[tuple(np.rint((state.origin[:-1] - [ax[0] for ax in graph.axes]) / graph.h).astype(int))])
    if u0 <= sol.eps_h:
        return GammaTrace(**empty, reason="origin outside Omega", r0=r0)
    if f0 <= 0:
        return GammaTrace(**empty, reason="density vanishes at the origin", r0=r0)
    # |omega_in| / (|x| |grad u|) is the sine of the angle between x and grad u
    scale = np.linalg.norm(state.x, axis=-1) * np.linalg.norm(state.grad_u, axis=-1)
    ok = state.interior & (scale > 0)
    sines = np.sqrt(sum(state.omega[..., i, n - 1] ** 2 for i in range(n - 1)))[ok] / scale[ok]
    # finite differences leave O((h/r0)^2) sines in the radial case
    if sines.size == 0 or np.quantile(sines, 0.95) <= max(1e-3, 10 * (h / r0) ** 2):
        return GammaTrace(**empty, reason="omega vanishes identically (radial case)", degenerate=True, r0=r0)

    sp = _Spline(state)
    halton = qmc.Halton(d=max(n - 1, 1), scramble=True, seed=seed).random(n_starts)
    # starts spread over the open hemisphere via the gnomonic chart
    if n == 2:
        th = (halton[:, 0] - 0.5) * np.pi * 0.96
        starts = np.tan(th)[:, None]
    else:
        col = np.arccos(1 - halton[:, 0] * 0.97)
        az = 2 * np.pi * halton[:, 1]
        starts = np.tan(col)[:, None] * np.column_stack([np.cos(az), np.sin(az)])

    def obj(v, r):
        p = r * _sphere_point(v)
        T, gr, gl = _tangential(sp, p[None, :])
        if gl[0] <= 1e-300:
            return 1.0
        return float(np.sum(T * T) / gl[0] ** 2)

    radii = []
    r = r_min_cells * h
    while r < r0 - h:
        radii.append(r)
        r *= growth
    radii.append(r0 - h)
    pts, res, zeros = [], [], []
    branch = False
    endpoint = "reached boundary"
    for r in radii:
        found = []
        for v0 in starts:
            o = optimize.minimize(obj, v0, args=(r,), method="Nelder-Mead",
                                  options={"xatol": 1e-10, "fatol": 1e-16, "maxiter": 400})
            p = r * _sphere_point(o.x)
            T, gr, gl = _tangential(sp, p[None, :])
            if gr[0] >= 0 or np.sqrt(o.fun) > residual_tol or p[-1] <= 0:
                continue
            found.append((p, float(np.linalg.norm(T[0]))))
        cl: list = []
        for p, t in sorted(found, key=lambda z: z[1]):
            if all(np.linalg.norm(p - q) > cluster_cells * h for q, _ in cl):
                cl.append((p, t))
        zeros.append(len(cl))
        if not cl:
            endpoint = "stalled"
            break
        if len(cl) > 1:
            branch = True
            endpoint = "multiple zeros on shell"
        pts.append(cl[0][0])
        res.append(cl[0][1])
    P = np.array(pts).reshape(-1, n)
    trace = GammaTrace(points=P, radii=np.array(radii[:len(P)]), residuals=np.array(res),
                       zeros_per_shell=zeros, branch=branch, endpoint=endpoint, r0=r0,
                       reason="" if len(P) else "no zero found on the first shell")
    if len(P):
        x0 = state.at("xi", np.zeros(n))
        d0 = P[0] / np.linalg.norm(P[0])
        trace.start_angle = float(np.arccos(np.clip(d0 @ x0 / np.linalg.norm(x0), -1, 1)))
        trace.extras["xi0"] = x0.tolist()
        if len(P) > 2:
            tang = np.diff(P, axis=0)
            mid = 0.5 * (P[1:] + P[:-1])
            xm = state.at("xi", mid)
            c = np.sum(tang * xm, axis=1) / (np.linalg.norm(tang, axis=1) * np.linalg.norm(xm, axis=1) + 1e-300)
            trace.xi_alignment = float(np.max(np.arccos(np.clip(np.abs(c), -1, 1))))
        k = int(np.argmin(np.linalg.norm(Pb - P[-1], axis=1)))
        trace.extras["nearest_boundary"] = Pb[k].tolist()
        trace.extras["endpoint_gap"] = float(np.linalg.norm(Pb[k] - P[-1]))
    return trace


# -- Hessian identities ------------------------------------------------------------


def hessian_checks(sol: PotentialSolution, graph: DomainGraph | None = None, state: SchwarzState | None = None,
                   offsets=(1, 3, 4, 6, 8, 12, 16), cells: int = 3, band: float | None = None) -> dict:
    """tr H = 1 inside; H -> n n^T, H n -> n, H x -> x - xi on inward offsets from the boundary."""
    graph = graph if graph is not None else extract_domain(sol)
    state = state if state is not None else build_schwarz_state(sol)
    up = sol.upper()
    H = hessian_field(up)
    h = max(up.grid.h)
    inner = interior_upper_mask(sol, cells)
    inner[..., :cells] = False
    if band is not None:
        inner &= band_mask(state, band)
    tr = np.trace(H.values, axis1=-2, axis2=-1)
    out = {"trace_max": float(np.max(np.abs(tr[inner] - 1))) if inner.any() else 0.0, "h": h}
    if graph.is_empty:
        return out
    P, N = boundary_samples(graph)
    rows = []
    for k in offsets:
        d = k * h
        q = P - d * N
        Hq = interpolate(H, q)
        nnT = N[:, :, None] * N[:, None, :]
        xi = state.at("xi", q - state.origin)
        x = q - state.origin
        rows.append({
            "offset": d,
            "H_minus_nnT": float(np.max(np.abs(Hq - nnT))),
            "Hn_minus_n": float(np.max(np.linalg.norm(np.einsum("kij,kj->ki", Hq, N) - N, axis=1))),
            "Hx_minus_x_xi": float(np.max(np.linalg.norm(np.einsum("kij,kj->ki", Hq, x) - (x - xi), axis=1))),
        })
    out["offsets"] = rows
    far = [r for r in rows if r["offset"] >= 3 * h]
    if len(far) >= 2:
        lx = np.log([r["offset"] for r in far])
        ly = np.log([max(r["H_minus_nnT"], 1e-300) for r in far])
        out["slope"] = float(np.polyfit(lx, ly, 1)[0])
    return out


def hessian_integrals(sol: PotentialSolution) -> np.ndarray:
    """Integrals of the Hessian of u over the open upper half space (trapezoid weight 1/2 on x_n = 0)."""
    up = sol.upper()
    n = up.grid.n
    if not np.any(up.values > 0):
        return np.zeros((n, n))
    H = hessian_field(up).values
    w = np.ones(up.grid.dims)
    w[..., 0] = 0.5
    return np.tensordot(w, H, axes=n) * up.grid.cell_volume


# -- tube mass ---------------------------------------------------------------------


def tube_mass_check(sol: PotentialSolution, base_region=None, graph: DomainGraph | None = None,
                    step: float = 0.5, max_steps: int | None = None) -> dict:
    """Volume of the tube over a base region of D against half the mass on that base.

    ``base_region`` is a boolean mask over the nodes of D, a predicate on x'
    arrays of shape (k, n-1), or None for all of D. Every upper-half node with
    a nonzero inside fraction (see :func:`omega_fractions`) is carried down the
    integral curve of grad u to its foot on the hyperplane; the tube volume
    collects the fractions of the nodes whose foot lies in the base.
    """
    graph = graph if graph is not None else extract_domain(sol)
    grid = sol.grid
    n = grid.n
    hs = graph.h
    if base_region is None:
        inbase = lambda xp: np.ones(len(xp), dtype=bool)
        base_nodes = graph.mask
    elif callable(base_region):
        inbase = base_region
        base_nodes = graph.mask & base_region(graph.coords().reshape(-1, n - 1)).reshape(graph.mask.shape)
    else:
        bm = np.asarray(base_region, dtype=bool) & graph.mask
        base_lo = np.array([a[0] for a in graph.axes])

        def inbase(xp):
            idx = np.rint((xp - base_lo) / np.array(hs)).astype(int)
            idx = np.clip(idx, 0, np.array(bm.shape) - 1)
            return bm[tuple(idx.T)]
        base_nodes = bm
    if not base_nodes.any():
        return {"volume": 0.0, "half_mass": 0.0, "defect": 0.0, "unterminated": 0}
    dens = sol.measure.density_at(graph.coords()) if sol.measure is not None else graph.f
    half = 0.5 * float(np.sum(np.where(base_nodes, dens, 0.0)) * np.prod(hs))

    up = sol.upper()
    fr = omega_fractions(sol)[..., grid.layer:].copy()
    fr[..., 0] *= 0.5  # the hyperplane splits the cells of the layer nodes
    sel = fr > 0
    X = up.grid.coords()[sel]
    W = fr[sel] * grid.cell_volume
    G = VectorField(up.grid, _grad(up.values, up.grid.h))
    ds = step * max(hs)
    if max_steps is None:
        max_steps = int(4 * np.max(grid.hi - grid.lo) / ds)
    live = X[:, -1] > 0
    foot = X[:, :-1].copy()
    lo, hi = up.grid.lo, up.grid.hi
    down_dir = np.zeros(n)
    down_dir[-1] = -1.0

    def direction(p):
        if np.any(p < lo - 1e-12) or np.any(p > hi + 1e-12):
            raise StreamlineError("integral curve left the grid")
        v = interpolate(G, p)
        nv = np.linalg.norm(v, axis=1, keepdims=True)
        # outside Omega grad u vanishes; drop straight down until it picks up
        return np.where(nv > 1e-12, v / np.maximum(nv, 1e-300), down_dir)

    for _ in range(max_steps):
        if not live.any():
            break
        p = X[live]
        mid = p + 0.5 * ds * direction(p)
        mid[:, -1] = np.maximum(mid[:, -1], 0.0)
        q = p + ds * direction(mid)
        down = q[:, -1] <= 0
        if down.any():
            s = p[down, -1] / np.maximum(p[down, -1] - q[down, -1], 1e-300)
            idx = np.flatnonzero(live)[down]
            foot[idx] = p[down, :-1] + s[:, None] * (q[down, :-1] - p[down, :-1])
        X[live] = q
        live[np.flatnonzero(live)[down]] = False
    if live.any():
        foot[live] = X[live, :-1]
    vol = float(np.sum(W[inbase(foot)]))
    return {"volume": vol, "half_mass": half, "defect": abs(vol - half) / half if half else 0.0,
            "unterminated": int(live.sum())}
