"""Mapping degree of sigma on the upper half domain, and the planar Schwarz function."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

from .balayage import DomainGraph, PotentialSolution, extract_domain
from .schwarzgeom import SchwarzState, _grad, band_mask, boundary_samples, build_schwarz_state
from .surface import GraphShape


class DegreeError(RuntimeError):
    """The degree could not be computed reliably (mesh too coarse, target on the image, ...)."""


@dataclass
class BoundaryMesh:
    """Closed oriented boundary of the upper half domain with sigma at the vertices.

    n = 2: ``faces`` are edges (i, j) of counterclockwise loops; n = 3: triangles
    ordered so that the right-hand normal points out of the domain.
    """

    vertices: np.ndarray
    sigma: np.ndarray
    faces: np.ndarray

    @property
    def n(self) -> int:
        return self.vertices.shape[1]

    def reversed(self) -> "BoundaryMesh":
        return BoundaryMesh(self.vertices, self.sigma, self.faces[:, ::-1].copy())

    def to_csv(self) -> tuple[str, str]:
        n = self.n
        head = ",".join([f"x{i + 1}" for i in range(n)] + [f"s{i + 1}" for i in range(n)])
        vrows = [",".join(repr(float(v)) for v in np.concatenate([p, s])) for p, s in zip(self.vertices, self.sigma)]
        frows = [",".join(str(int(i)) for i in f) for f in self.faces]
        return head + "\n" + "\n".join(vrows) + "\n", "\n".join(frows) + "\n"


def winding_number_2d(path, y, tol: float = 1e-12) -> int:
    """Winding number of a closed polyline about y (edge-wise argument increments)."""
    v = np.asarray(path, dtype=float) - np.asarray(y, dtype=float)
    if np.allclose(v[0], v[-1]):
        v = v[:-1]
    a, b = v, np.roll(v, -1, axis=0)
    if np.min(_seg_dist(a, b)) <= tol:
        raise DegreeError("target lies on the path")
    ang = np.arctan2(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0], np.sum(a * b, axis=1))
    if np.any(np.abs(ang) >= np.pi * (1 - 1e-12)):
        raise DegreeError("edge turn reaches pi; refine the path")
    return int(np.rint(ang.sum() / (2 * np.pi)))


def _seg_dist(a, b):
    # distance from the origin to segments [a, b]
    d = b - a
    t = np.clip(-np.sum(a * d, axis=1) / np.maximum(np.sum(d * d, axis=1), 1e-300), 0, 1)
    return np.linalg.norm(a + t[:, None] * d, axis=1)


def _raw_degree(mesh: BoundaryMesh, y) -> float:
    s = mesh.sigma - np.asarray(y, dtype=float)
    if mesh.n == 2:
        a, b = s[mesh.faces[:, 0]], s[mesh.faces[:, 1]]
        ang = np.arctan2(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0], np.sum(a * b, axis=1))
        return float(ang.sum() / (2 * np.pi))
    a, b, c = (s[mesh.faces[:, k]] for k in range(3))
    la, lb, lc = (np.linalg.norm(v, axis=1) for v in (a, b, c))
    num = np.einsum("ij,ij->i", a, np.cross(b, c))
    den = la * lb * lc + np.einsum("ij,ij->i", a, b) * lc + np.einsum("ij,ij->i", a, c) * lb \
        + np.einsum("ij,ij->i", b, c) * la
    return float(np.sum(2 * np.arctan2(num, den)) / (4 * np.pi))


def kronecker_degree_3d(mesh: BoundaryMesh, y, tol: float = 1e-12) -> tuple[int, float]:
    """Degree about y from the signed solid angles of the image triangles; returns (degree, residual)."""
    if mesh.n != 3:
        raise ValueError("kronecker_degree_3d needs a triangulated surface in R^3")
    if np.min(np.linalg.norm(mesh.sigma - np.asarray(y), axis=1)) <= tol:
        raise DegreeError("target coincides with an image vertex")
    raw = _raw_degree(mesh, y)
    d = int(np.rint(raw))
    res = abs(raw - d)
    if res > 0.1:
        raise DegreeError(f"rounding residual {res:.3f} > 0.1: mesh too coarse")
    return d, res


def sphere_mesh(n_lat: int = 24, n_lon: int = 48) -> BoundaryMesh:
    """Unit sphere triangulation with outward orientation (identity map as sigma)."""
    th = np.linspace(0, np.pi, n_lat + 1)[1:-1]
    ph = np.linspace(0, 2 * np.pi, n_lon, endpoint=False)
    T, P = np.meshgrid(th, ph, indexing="ij")
    V = np.column_stack([np.sin(T).ravel() * np.cos(P).ravel(), np.sin(T).ravel() * np.sin(P).ravel(),
                         np.cos(T).ravel()])
    V = np.vstack([[0, 0, 1], V, [0, 0, -1]])
    idx = lambda i, j: 1 + i * n_lon + (j % n_lon)
    F = []
    for j in range(n_lon):
        F.append((0, idx(0, j), idx(0, j + 1)))
        F.append((len(V) - 1, idx(n_lat - 2, j + 1), idx(n_lat - 2, j)))
        for i in range(n_lat - 2):
            F.append((idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)))
            F.append((idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)))
    return BoundaryMesh(V, V.copy(), np.array(F))


# -- boundary of the upper half domain -------------------------------------------


def _layer_tables(state: SchwarzState, graph: DomainGraph):
    rho0 = state.rho.values[..., 0]
    return graph.g, graph.f, rho0


def _refine(axes, tables, mask, k: int):
    if k == 1:
        return axes, tables, mask
    fine = [np.linspace(a[0], a[-1], (len(a) - 1) * k + 1) for a in axes]
    pts = np.stack(np.meshgrid(*fine, indexing="ij"), axis=-1)
    out = [RegularGridInterpolator(axes, t)(pts) for t in tables]
    m = RegularGridInterpolator(axes, mask.astype(float))(pts) > 0.5
    return fine, out, m


def build_boundary_mesh(state: SchwarzState, graph: DomainGraph, refine: int = 1) -> BoundaryMesh:
    """Boundary of the upper half domain: the graph over D and D itself in the hyperplane.

    sigma on the graph is (0, ..., 0, r^2/2); on D it is (-x_j f/2, ..., rho(x', 0)).
    """
    n = state.n
    a = state.origin[:-1]
    g, f, rho0 = _layer_tables(state, graph)
    axes, (g, f, rho0), mask = _refine(list(graph.axes), [g, f, rho0], graph.mask, refine)
    if n == 2:
        return _mesh_2d(axes[0] - a[0], g, f, rho0, mask)
    return _mesh_3d([ax - ai for ax, ai in zip(axes, a)], g, f, rho0, mask)


def _mesh_2d(x, g, f, rho0, mask) -> BoundaryMesh:
    lab, nc = ndimage.label(mask)
    V, S, E = [], [], []
    for c in range(1, nc + 1):
        idx = np.flatnonzero(lab == c)
        xs, gs, fs, rs = x[idx], g[idx], f[idx], rho0[idx]
        bottom = np.column_stack([xs, np.zeros_like(xs)])
        sb = np.column_stack([-0.5 * xs * fs, rs])
        top = np.column_stack([xs, gs])[::-1]
        st = np.column_stack([np.zeros_like(xs), 0.5 * (xs**2 + gs**2)])[::-1]
        start = len(V)
        V.extend(bottom)
        V.extend(top)
        S.extend(sb)
        S.extend(st)
        k = 2 * len(xs)
        E.extend((start + i, start + (i + 1) % k) for i in range(k))
    return BoundaryMesh(np.array(V).reshape(-1, 2), np.array(S).reshape(-1, 2), np.array(E, dtype=int).reshape(-1, 2))


def _mesh_3d(axes, g, f, rho0, mask) -> BoundaryMesh:
    shell = ndimage.binary_dilation(mask, structure=np.ones((3, 3), dtype=bool))
    X1, X2 = np.meshgrid(*axes, indexing="ij")
    bid = -np.ones(mask.shape, dtype=int)
    bid[shell] = np.arange(shell.sum())
    nb = int(shell.sum())
    tid = bid.copy()
    tid[mask] = nb + np.arange(mask.sum())
    fz = np.where(mask, f, 0.0)
    bottom = np.column_stack([X1[shell], X2[shell], np.zeros(nb)])
    sb = np.column_stack([-0.5 * X1[shell] * fz[shell], -0.5 * X2[shell] * fz[shell], rho0[shell]])
    top = np.column_stack([X1[mask], X2[mask], g[mask]])
    st = np.column_stack([np.zeros(mask.sum()), np.zeros(mask.sum()),
                          0.5 * (X1[mask] ** 2 + X2[mask] ** 2 + g[mask] ** 2)])
    c = shell[:-1, :-1] & shell[1:, :-1] & shell[1:, 1:] & shell[:-1, 1:]
    c &= mask[:-1, :-1] | mask[1:, :-1] | mask[1:, 1:] | mask[:-1, 1:]
    i, j = np.nonzero(c)
    F = []
    for ids, sign in ((bid, -1), (tid, 1)):
        v00, v10, v11, v01 = ids[i, j], ids[i + 1, j], ids[i + 1, j + 1], ids[i, j + 1]
        if sign > 0:
            F += [np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])]
        else:
            F += [np.column_stack([v00, v11, v10]), np.column_stack([v00, v01, v11])]
    return BoundaryMesh(np.vstack([bottom, top]), np.vstack([sb, st]), np.vstack(F))


def boundary_degree(state: SchwarzState, graph: DomainGraph, y, max_rounds: int = 3) -> tuple[int, float, int]:
    """Degree about y from the boundary image; refines the mesh 2x per round. Returns (degree, residual, refine)."""
    k = 1
    for _ in range(max_rounds + 1):
        mesh = build_boundary_mesh(state, graph, refine=k)
        raw = _raw_degree(mesh, y)
        d = int(np.rint(raw))
        if abs(raw - d) <= 0.1:
            return d, abs(raw - d), k
        k *= 2
    raise DegreeError(f"degree did not settle (residual {abs(raw - d):.3f})")


# -- preimages ------------------------------------------------------------------


def preimage_degree(state: SchwarzState, y, stride: int = 3, iters: int = 60, tol: float | None = None,
                    perturb: float = 1e-3, _retry: bool = True) -> dict:
    """Sum of sign det J_sigma over the solutions of sigma(x) = y found by Newton from a seed lattice."""
    n = state.n
    y = np.asarray(y, dtype=float)
    h = state.h
    sig = state.sigma.values
    scale = max(1.0, float(np.max(np.abs(sig[state.interior])))) if state.interior.any() else 1.0
    tol = 1e-9 * scale if tol is None else tol
    sl = tuple(slice(None, None, stride) for _ in range(n))
    seeds = state.x[sl][state.interior[sl]]
    res0 = np.linalg.norm(sig[sl][state.interior[sl]] - y, axis=1)
    # a root lies within about |J|^-1 * residual of its seed; keep the promising ones
    keep = res0 <= np.quantile(res0, 0.1) if len(res0) > 50 else np.ones(len(res0), dtype=bool)
    X = seeds[keep].copy()
    lo = state.grid.lo - state.origin
    hi = state.grid.hi - state.origin
    mask_i = RegularGridInterpolator(state.grid.axes(), state.interior.astype(float), bounds_error=False, fill_value=0.0)
    for _ in range(iters):
        F = state.at("sigma", X) - y
        J = state.at("J", X)
        try:
            dx = np.linalg.solve(J, F[..., None])[..., 0]
        except np.linalg.LinAlgError:
            dx = np.linalg.lstsq(J.reshape(-1, n), F.reshape(-1), rcond=None)[0].reshape(F.shape)
        ln = np.linalg.norm(dx, axis=1, keepdims=True)
        dx = np.where(ln > 4 * h, dx * (4 * h) / np.maximum(ln, 1e-300), dx)
        X = np.clip(X - dx, lo, hi)
    F = np.linalg.norm(state.at("sigma", X) - y, axis=1)
    conv = F <= max(tol, 1e-6 * scale)
    roots = []
    for p in X[conv]:
        if all(np.linalg.norm(p - q) > 2 * h for q in roots):
            roots.append(p)
    roots = np.array(roots).reshape(-1, n)
    if len(roots) == 0:
        return {"degree": 0, "roots": roots, "signs": [], "inconclusive": False, "perturbed": False}
    J = state.at("J", roots)
    det = np.linalg.det(J.reshape(-1, n, n))
    jscale = np.linalg.norm(J.reshape(-1, n, n), axis=(1, 2)) ** n
    if np.any(np.abs(det) <= 1e-8 * np.maximum(jscale, 1e-300)):
        if not _retry:
            raise DegreeError("singular Jacobian at a root after perturbation")
        yp = y.copy()
        yp[-1] += perturb * scale
        out = preimage_degree(state, yp, stride, iters, tol, perturb, _retry=False)
        out["perturbed"] = True
        return out
    edge = mask_i(roots + state.origin) < 1 - 1e-9
    signs = np.sign(det).astype(int).tolist()
    return {"degree": int(sum(signs)), "roots": roots, "signs": signs, "inconclusive": bool(edge.any()),
            "perturbed": False}


# -- scan over the axis ------------------------------------------------------------


@dataclass
class DegreeResult:
    targets: list
    boundary: list
    preimage: list
    residuals: list
    interval: tuple
    agree: bool
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"targets": [list(map(float, t)) for t in self.targets], "boundary": self.boundary,
                "preimage": self.preimage, "residuals": self.residuals,
                "interval": [float(v) for v in self.interval], "agree": self.agree, "extras": self.extras}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def degree_interval(state: SchwarzState, graph: DomainGraph) -> tuple[float, float]:
    n = state.n
    u0 = float(state.at("u", np.zeros(n)))
    P = graph.boundary_points() - state.origin
    r0 = float(np.linalg.norm(P, axis=1).min())
    return -(n - 2) * u0, 0.5 * r0 * r0


def default_t_samples(lo: float, hi: float, k: int = 5, shrink: float = 0.05) -> np.ndarray:
    w = hi - lo
    return np.linspace(lo + shrink * w, hi - shrink * w, k)


def degree_scan(state: SchwarzState, graph: DomainGraph | None = None, t_samples=None,
                sigma_tol: float | None = None) -> DegreeResult:
    n = state.n
    graph = graph if graph is not None else extract_domain(state.source)
    lo, hi = degree_interval(state, graph)
    ts = default_t_samples(lo, hi) if t_samples is None else np.asarray(t_samples, dtype=float)
    if np.any(ts <= lo) or np.any(ts >= hi):
        raise ValueError(f"t samples must lie in the open interval ({lo:.6g}, {hi:.6g})")
    P, N = boundary_samples(graph, state.origin)
    h = state.h
    field = (2 * state.at("sigma", P - 2 * h * N) - state.at("sigma", P - 3 * h * N))
    exact = np.zeros_like(field)
    exact[:, -1] = 0.5 * np.sum(P * P, axis=1)
    mismatch = float(np.max(np.abs(field - exact)))
    sigma_tol = 0.05 * max(1.0, hi) if sigma_tol is None else sigma_tol
    if mismatch > sigma_tol:
        raise DegreeError(f"sigma on the boundary graph differs from r^2/2 by {mismatch:.3g}")
    J = state.at("J", P - 2 * h * N)
    sv = np.linalg.svd(J, compute_uv=False)
    ranks = np.sum(sv > 1e-2 * sv[:, :1], axis=1)
    fpos = bool(np.all(graph.f[graph.mask] > 0))
    B, Q, R, targets = [], [], [], []
    for t in ts:
        y = np.zeros(n)
        y[-1] = t
        targets.append(y)
        d, res, k = boundary_degree(state, graph, y)
        pre = preimage_degree(state, y)
        B.append(d)
        R.append(res)
        Q.append(None if pre["inconclusive"] else pre["degree"])
    agree = all(q is None or q == b for b, q in zip(B, Q))
    return DegreeResult(targets, B, Q, R, (lo, hi), agree,
                        extras={"sigma_mismatch": mismatch, "f_positive_on_D": fpos,
                                "boundary_rank_max": int(ranks.max()), "boundary_rank_counts":
                                {str(int(r)): int(np.sum(ranks == r)) for r in np.unique(ranks)}})


# -- planar Schwarz function ---------------------------------------------------------


def schwarz_function_2d(sol: PotentialSolution, state: SchwarzState | None = None,
                        graph: DomainGraph | None = None, exact=None, band: float | None = None) -> dict:
    """S = conj(z) - 4 du/dz on the upper half domain, with its boundary and interior checks.

    ``exact`` is an optional callable z -> S(z) compared on the interior mask.
    """
    if sol.grid.n != 2:
        raise ValueError("the Schwarz function is planar (n = 2)")
    state = state if state is not None else build_schwarz_state(sol)
    graph = graph if graph is not None else extract_domain(sol)
    X = state.x
    G = state.grad_u
    Sre = X[..., 0] - 2 * G[..., 0]
    Sim = -X[..., 1] + 2 * G[..., 1]
    S = Sre + 1j * Sim
    inner = band_mask(state, band)
    out: dict = {"S": S}
    z = X[..., 0] + 1j * X[..., 1]
    half = 0.5 * z * S
    out["half_zS_defect"] = float(np.max(np.abs(half - (state.rho.values + 1j * state.omega[..., 0, 1]))[inner]))
    h = state.grid.h
    dre = _grad(Sre, h)
    dim = _grad(Sim, h)
    cr = np.hypot(dre[..., 0] - dim[..., 1], dre[..., 1] + dim[..., 0])
    out["cauchy_riemann"] = float(np.max(cr[inner]))
    P, _ = boundary_samples(graph, state.origin)
    gb = state.at("grad_u", P)
    Sb = (P[:, 0] - 2 * gb[:, 0]) + 1j * (-P[:, 1] + 2 * gb[:, 1])
    out["boundary_defect"] = float(np.max(np.abs(Sb - (P[:, 0] - 1j * P[:, 1]))))
    xs = X[:, 0, 0]
    dom = graph.mask
    xd = xs[dom]
    lo, hi = xd.min(), xd.max()
    c, w = 0.5 * (lo + hi), 0.45 * (hi - lo)
    inn = dom & (np.abs(xs - c) <= w)
    f = sol.measure.density_at(graph.coords()) if sol.measure is not None else graph.f
    im_up = Sim[:, 0]
    fmax = float(np.max(np.abs(f[inn]))) or 1.0
    # from above Im S = 2 du/dy(x, 0+) = -f; u is even in y, so from below Im S = +f
    out["imag_plus_f_above"] = float(np.max(np.abs(im_up[inn] + f[inn])) / fmax)
    out["imag_minus_f_below"] = float(np.max(np.abs(-im_up[inn] - f[inn])) / fmax)
    if exact is not None:
        Se = exact(z[inner])
        out["exact_defect"] = float(np.max(np.abs(S[inner] - Se)))
    return out


def nearest_point_check_2d(state: SchwarzState, graph: DomainGraph, trace=None, tol: float | None = None) -> dict:
    """Boundary samples closest to the origin: one cluster expected, matching the end of gamma."""
    if state.n != 2:
        raise ValueError("nearest point check is planar (n = 2)")
    h = state.h
    tol = h * h if tol is None else tol
    # smoothed heights: the raw column heights jitter by more than h^2
    xp = graph.coords()[graph.mask]
    P = np.column_stack([xp, GraphShape(graph).g(xp)]) - state.origin
    r = np.linalg.norm(P, axis=1)
    r0 = float(r.min())
    near = P[r <= r0 + tol]
    order = np.argsort(near[:, 0])
    near = near[order]
    gaps = np.linalg.norm(np.diff(near, axis=0), axis=1)
    clusters = 1 + int(np.sum(gaps > 3 * h))
    degenerate = len(near) > 0.5 * len(P)
    k = int(np.argmin(r))
    out = {"r0": r0, "nearest": P[k].tolist(), "clusters": clusters, "degenerate": degenerate,
           "unique": clusters == 1 and not degenerate}
    if trace is not None and len(trace.points):
        # the trace stops one shell short of r0: project its end radially onto r = r0 and
        # compare with the near set, which is where the nearest point is resolved to
        end = np.asarray(trace.points[-1], dtype=float)
        end = end * (r0 / np.linalg.norm(end))
        out["nearest_gap"] = float(np.linalg.norm(end - P[k]))
        out["endpoint_gap"] = float(np.min(np.linalg.norm(near - end, axis=1)))
        out["endpoint_match"] = out["endpoint_gap"] <= 2 * h
    return out
