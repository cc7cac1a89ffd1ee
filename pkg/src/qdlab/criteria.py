"""Sampled verdicts for ten equivalent characterisations of graphs that are
unions of balls centred on the hyperplane (inner-ball condition).

Every check returns a signed margin: ``margin >= -tol`` means pass. Samples come
from scrambled Halton sequences so a fixed seed reproduces a report exactly.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .surface import GraphShape, as_shape, generalized_eigs, jets_batch

CRITERIA = ("i", "ii", "iii", "iv", "v", "vi", "vii", "viii", "ix", "x")


@dataclass
class CriterionVerdict:
    id: str
    verdict: str
    margin: float
    witness: list | None = None
    samples: int = 0
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


@dataclass
class CriteriaReport:
    verdicts: list
    tol: float
    shape: str
    seed: int
    sign_agreement: bool = True
    extras: dict = field(default_factory=dict)

    @property
    def equivalent(self) -> bool:
        return len({v.verdict for v in self.verdicts}) == 1

    @property
    def all_pass(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def by_id(self, cid: str) -> CriterionVerdict:
        for v in self.verdicts:
            if v.id == cid:
                return v
        raise KeyError(cid)

    def to_dict(self) -> dict:
        return {
            "shape": self.shape,
            "tol": self.tol,
            "seed": self.seed,
            "equivalent": self.equivalent,
            "sign_agreement": self.sign_agreement,
            "verdicts": [asdict(v) for v in self.verdicts],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_jsonable)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["criterion", "verdict", "margin", "samples"])
        for v in self.verdicts:
            w.writerow([v.id, v.verdict, repr(float(v.margin)), v.samples])
        return buf.getvalue()


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(type(x))


@dataclass
class Context:
    """A shape plus its shared tolerance and sampling parameters."""

    shape: object
    tol: float
    seed: int = 0
    n_samples: int = 256
    min_sep: float = 0.0
    is_grid: bool = False

    @property
    def m(self) -> int:
        return self.shape.m

    @property
    def scale(self) -> float:
        return float(self.shape.scale)


def make_context(shape, seed: int = 0, n_samples: int = 256, tol: float | None = None, C: float = 5.0) -> Context:
    shape = as_shape(shape)
    grid = isinstance(shape, GraphShape)
    if tol is None:
        tol = C * shape.h if grid else 1e-8 * shape.scale**2
    min_sep = 4 * shape.h if grid else 0.02 * shape.scale
    return Context(shape, tol, seed, n_samples, min_sep, grid)


def _verdict(cid, margin, tol, witness=None, samples=0, note=""):
    margin = float(margin)
    return CriterionVerdict(cid, "pass" if margin >= -tol else "fail", margin,
                            None if witness is None else np.asarray(witness, dtype=float).ravel().tolist(),
                            int(samples), note)


def halton(dim: int, k: int, seed: int) -> np.ndarray:
    return qmc.Halton(d=dim, scramble=True, seed=seed).random(k)


def sample_domain(ctx: Context, k: int | None = None, shrink: float = 1.0, salt: int = 0) -> np.ndarray:
    """Low-discrepancy points of D where jets are valid."""
    k = k or ctx.n_samples
    lo, hi = np.array(ctx.shape.lo), np.array(ctx.shape.hi)
    c = 0.5 * (lo + hi)
    lo, hi = c + shrink * (lo - c), c + shrink * (hi - c)
    pts = []
    got = 0
    batch = 4 * k
    s = ctx.seed * 7919 + salt
    while got < k and s < ctx.seed * 7919 + salt + 20:
        raw = lo + (hi - lo) * halton(ctx.m, batch, s)
        ok = raw[ctx.shape.contains(raw)]
        pts.append(ok)
        got += len(ok)
        s += 1
    pts = np.concatenate(pts)[:k] if pts else np.zeros((0, ctx.m))
    if len(pts) == 0:
        raise ValueError("no valid sample points inside D")
    return pts


def _surface_grid(ctx: Context):
    """A regular u-grid over the bounding box of D with heights (0 off D)."""
    lo, hi = np.array(ctx.shape.lo), np.array(ctx.shape.hi)
    if ctx.m == 1:
        k = 6001 if not ctx.is_grid else int(8 * (hi - lo)[0] / ctx.shape.h) + 1
    else:
        k = 301 if not ctx.is_grid else int(3 * (hi - lo).max() / ctx.shape.h) + 1
    ax = [np.linspace(lo[i], hi[i], k) for i in range(ctx.m)]
    U = np.stack(np.meshgrid(*ax, indexing="ij"), -1)
    g = ctx.shape.height(U.reshape(-1, ctx.m)).reshape(U.shape[:-1])
    return U, g


def _surface_cloud(ctx: Context) -> np.ndarray:
    """Dense samples (u, g(u)) of the upper boundary."""
    U, g = _surface_grid(ctx)
    inside = g > 0
    return np.column_stack([U[inside], g[inside]])


# -- (i), (ii), (vii) -----------------------------------------------------------


def check_convexity(shape_or_ctx, samples: np.ndarray | None = None) -> tuple[CriterionVerdict, CriterionVerdict]:
    ctx = _ctx(shape_or_ctx)
    U = sample_domain(ctx) if samples is None else samples
    J = jets_batch(ctx.shape, U)
    lam = np.linalg.eigvalsh(J["hess_phi"])[:, 0]
    k = int(np.argmin(lam))
    v1 = _verdict("i", lam[k], ctx.tol, U[k], len(U))
    gmax = float(np.max(J["g"])) if not hasattr(ctx.shape, "max_height") else float(ctx.shape.max_height)
    worst, wit, count = np.inf, None, 0
    lo, hi = np.array(ctx.shape.lo), np.array(ctx.shape.hi)
    a_lat = lo + (hi - lo) * halton(ctx.m, 5, ctx.seed + 11)
    for frac in (0.25, 0.5, 0.75):
        b = frac * gmax
        sel = J["g"] > b
        if not sel.any():
            continue
        Hc = J["hess_phi"][sel] - b * J["hess"][sel]
        lc = np.linalg.eigvalsh(Hc)[:, 0]
        count += int(sel.sum()) * len(a_lat)
        j = int(np.argmin(lc))
        if lc[j] < worst:
            # the Hessian of Phi_c does not depend on a; report the lattice center nearest the witness
            a = a_lat[np.argmin(np.linalg.norm(a_lat - U[sel][j], axis=-1))]
            worst, wit = lc[j], np.concatenate([U[sel][j], a, [b]])
    if wit is None:
        raise ValueError("no sample lies above the center lattice")
    v2 = _verdict("ii", worst, ctx.tol, wit, count)
    return v1, v2


def check_curvature_bound(shape_or_ctx, samples: np.ndarray | None = None) -> CriterionVerdict:
    ctx = _ctx(shape_or_ctx)
    U = sample_domain(ctx) if samples is None else samples
    J = jets_batch(ctx.shape, U)
    kmin = generalized_eigs(J["B"], J["A"])[:, 0]
    margin = (kmin + 1.0 / J["N_len"]) * J["N_len"]
    k = int(np.argmin(margin))
    return _verdict("vii", margin[k], ctx.tol, U[k], len(U))


# -- (iii) ------------------------------------------------------------------------


def _foot(shape, U):
    return U + shape.g(U)[..., None] * shape.grad(U)


def _segment_inside(ctx: Context, U1, U2, k: int = 16) -> np.ndarray:
    t = np.linspace(0, 1, k)[None, :, None]
    P = U1[:, None, :] * (1 - t) + U2[:, None, :] * t
    return ctx.shape.contains(P.reshape(-1, ctx.m)).reshape(len(U1), k).all(axis=1)


def check_footpoint_monotone(shape_or_ctx, samples: np.ndarray | None = None) -> CriterionVerdict:
    ctx = _ctx(shape_or_ctx)
    U = sample_domain(ctx) if samples is None else samples
    shape = ctx.shape
    # Jacobian of the foot point map by central differences of p itself
    d = shape.h if ctx.is_grid else 1e-5 * ctx.scale
    lo = np.array(shape.lo) + d
    hi = np.array(shape.hi) - d
    U = U[np.all((U > lo) & (U < hi), axis=1)]
    Jac = np.zeros((len(U), ctx.m, ctx.m))
    ok = np.ones(len(U), dtype=bool)
    for j in range(ctx.m):
        e = np.zeros(ctx.m)
        e[j] = d
        ok &= shape.contains(U + e) & shape.contains(U - e)
        Jac[:, :, j] = (_foot(shape, U + e) - _foot(shape, U - e)) / (2 * d)
    Jac, Uj = Jac[ok], U[ok]
    lam = np.linalg.eigvalsh(0.5 * (Jac + np.swapaxes(Jac, 1, 2)))[:, 0]
    kj = int(np.argmin(lam))
    jac_margin = float(lam[kj])
    # pairwise monotonicity over segments inside D
    n = len(U)
    i1, i2 = np.triu_indices(n, 1)
    du = U[i1] - U[i2]
    dist2 = np.sum(du * du, axis=1)
    keep = dist2 >= ctx.min_sep**2
    i1, i2, du, dist2 = i1[keep], i2[keep], du[keep], dist2[keep]
    seg = _segment_inside(ctx, U[i1], U[i2])
    i1, i2, du, dist2 = i1[seg], i2[seg], du[seg], dist2[seg]
    P = _foot(shape, U)
    ratio = np.sum((P[i1] - P[i2]) * du, axis=1) / dist2
    kp = int(np.argmin(ratio)) if len(ratio) else None
    pair_margin = float(ratio[kp]) if kp is not None else np.inf
    if pair_margin < jac_margin:
        return _verdict("iii", pair_margin, ctx.tol, np.concatenate([U[i1[kp]], U[i2[kp]]]), len(ratio) + len(lam),
                        note=f"jacobian margin {jac_margin:.6g}")
    return _verdict("iii", jac_margin, ctx.tol, Uj[kj], len(ratio) + len(lam),
                    note=f"pairwise margin {pair_margin:.6g}")


# -- (iv), (v), (ix) --------------------------------------------------------------


def _sphere_dirs(n: int, k: int) -> np.ndarray:
    if n == 2:
        t = np.linspace(0, 2 * np.pi, k, endpoint=False)
        return np.column_stack([np.cos(t), np.sin(t)])
    kk = int(np.sqrt(k))
    z = np.linspace(-1, 1, kk)
    ph = np.linspace(0, 2 * np.pi, 2 * kk, endpoint=False)
    Z, P = np.meshgrid(z, ph, indexing="ij")
    r = np.sqrt(1 - Z**2)
    return np.stack([r * np.cos(P), r * np.sin(P), Z], -1).reshape(-1, 3)


def _nearest_dist(points: np.ndarray, cloud: np.ndarray, chunk: int = 256) -> np.ndarray:
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        d = points[s:s + chunk, None, :] - cloud[None, :, :]
        out[s:s + chunk] = np.sqrt(np.min(np.sum(d * d, axis=-1), axis=1))
    return out


def check_ball_union(shape_or_ctx, samples: np.ndarray | None = None):
    ctx = _ctx(shape_or_ctx)
    shape = ctx.shape
    U = sample_domain(ctx) if samples is None else samples
    J = jets_batch(shape, U)
    n = ctx.m + 1
    dirs = _sphere_dirs(n, 256 if n == 2 else 400)
    # (iv) inclusion: the ball surface stays inside the closure of Omega
    worst, wit = np.inf, None
    for k in range(len(U)):
        c = np.append(J["p"][k], 0.0)
        X = c + J["N_len"][k] * dirs
        gap = (shape.height(X[:, :-1]) - np.abs(X[:, -1])) / ctx.scale
        j = int(np.argmin(gap))
        if gap[j] < worst:
            worst, wit = gap[j], np.concatenate([U[k], X[j]])
    v4 = _verdict("iv", worst, ctx.tol, wit, len(U) * len(dirs))
    cloud = _surface_cloud(ctx)
    # (ix): every boundary point is the nearest point of its foot point p(u)
    feet = np.column_stack([J["p"], np.zeros(len(U))])
    dist = _nearest_dist(feet, cloud)
    r9 = dist / J["N_len"] - 1.0
    k9 = int(np.argmin(r9))
    v9 = _verdict("ix", r9[k9], ctx.tol, U[k9], len(U))
    # (v): balls B(a, r(a)) of maximal radius centred on D cover Omega^+
    A = sample_domain(ctx, 4 * ctx.n_samples, salt=101)
    A = np.vstack([A, U, J["p"][shape.contains(J["p"])]])
    rA = _nearest_dist(np.column_stack([A, np.zeros(len(A))]), cloud)
    Uv = sample_domain(ctx, ctx.n_samples, salt=202)
    t = halton(1, len(Uv), ctx.seed + 303)[:, 0]
    # interior points plus points just inside the boundary along the normals
    X = np.vstack([np.column_stack([Uv, 0.95 * t * shape.g(Uv)]),
                   np.column_stack([U, J["g"]]) + 0.05 * (feet - np.column_stack([U, J["g"]]))])
    Ac = np.column_stack([A, np.zeros(len(A))])
    cov = np.empty(len(X))
    for s in range(0, len(X), 128):
        d = np.linalg.norm(X[s:s + 128, None, :] - Ac[None], axis=-1)
        cov[s:s + 128] = np.max(rA[None, :] - d, axis=1)
    cov /= ctx.scale
    k5 = int(np.argmin(cov))
    v5 = _verdict("v", cov[k5], ctx.tol, X[k5], len(X) * len(A))
    return v4, v5, v9


# -- (vi), (viii) -----------------------------------------------------------------


def _segment_closest(P0, P1, Q0, Q1):
    """Closest points between segments P0P1 and Q0Q1 (batched). Returns (dist, s, t)."""
    d1, d2, r = P1 - P0, Q1 - Q0, P0 - Q0
    a = np.sum(d1 * d1, -1)
    e = np.sum(d2 * d2, -1)
    f = np.sum(d2 * r, -1)
    c = np.sum(d1 * r, -1)
    b = np.sum(d1 * d2, -1)
    den = a * e - b * b
    s = np.where(den > 1e-14 * a * e, np.clip((b * f - c * e) / np.where(den > 0, den, 1), 0, 1), 0.0)
    t = (b * s + f) / np.where(e > 0, e, 1)
    t_c = np.clip(t, 0, 1)
    s = np.where(t != t_c, np.clip((b * t_c - c) / np.where(a > 0, a, 1), 0, 1), s)
    t = t_c
    X = P0 + s[..., None] * d1
    Y = Q0 + t[..., None] * d2
    return np.linalg.norm(X - Y, axis=-1), s, t


def check_normals(shape_or_ctx, samples: np.ndarray | None = None):
    ctx = _ctx(shape_or_ctx)
    shape = ctx.shape
    U = sample_domain(ctx, min(ctx.n_samples, 200)) if samples is None else samples
    J = jets_batch(shape, U)
    top = np.column_stack([U, J["g"]])
    foot = np.column_stack([J["p"], np.zeros(len(U))])
    L = J["N_len"]
    i1, i2 = np.triu_indices(len(U), 1)
    keep = np.linalg.norm(U[i1] - U[i2], axis=1) >= ctx.min_sep
    i1, i2 = i1[keep], i2[keep]
    d, s, t = _segment_closest(top[i1], foot[i1], top[i2], foot[i2])
    depth = np.minimum.reduce([s * L[i1], (1 - s) * L[i1], t * L[i2], (1 - t) * L[i2]])
    eta = (ctx.shape.h if ctx.is_grid else 1e-3 * ctx.scale) if ctx.m > 1 else 0.0
    crossing = d <= eta
    pair = np.where(crossing, -depth, d) / ctx.scale
    k = int(np.argmin(pair))
    v6 = _verdict("vi", pair[k], ctx.tol, np.concatenate([U[i1[k]], U[i2[k]]]), len(pair))
    v8 = _unique_nearest(ctx)
    return v6, v8


class _Nearest:
    """Nearest points on the upper boundary.

    A scan of a fine u-grid gives the near-minimal set; a few mutually distant
    points of that set are polished by a local search restricted to D, and
    polished minimizers that are far apart yet equally near are competitors.
    """

    def __init__(self, ctx: Context, starts: int = 5):
        self.ctx = ctx
        self.U, self.g = _surface_grid(ctx)
        self.inside = self.g > 0
        self.Uf = self.U.reshape(-1, ctx.m)[self.inside.ravel()]
        self.gf = self.g[self.inside]
        lo, hi = np.array(ctx.shape.lo), np.array(ctx.shape.hi)
        self.spacing = float(np.max(hi - lo)) / (self.U.shape[0] - 1)
        self.radius = (4 * ctx.shape.h) if ctx.is_grid else 0.01 * ctx.scale
        self.tie = ctx.shape.h if ctx.is_grid else 1e-7 * ctx.scale
        self.starts = starts

    def _dist(self, x):
        return np.sqrt(np.sum((self.Uf - x[:-1]) ** 2, axis=1) + (self.gf - x[-1]) ** 2)

    def _polish(self, x, u0):
        shape = self.ctx.shape
        inside = shape.in_domain if hasattr(shape, "in_domain") else shape.contains

        def f(u):
            if not inside(u[None])[0]:
                return np.inf
            return float(np.sum((u - x[:-1]) ** 2) + (shape.g(u[None])[0] - x[-1]) ** 2)

        step = self.spacing
        simplex = np.vstack([u0] + [u0 + step * e for e in np.eye(self.ctx.m)])
        with np.errstate(invalid="ignore"):
            r = minimize(f, u0, method="Nelder-Mead",
                         options={"initial_simplex": simplex, "xatol": 1e-11 * self.ctx.scale,
                                  "fatol": 1e-15 * self.ctx.scale**2, "maxiter": 2000})
        f0 = f(u0)
        if not np.isfinite(r.fun) or r.fun > f0:
            return u0, float(np.sqrt(f0))
        return r.x, float(np.sqrt(r.fun))

    def minima(self, x: np.ndarray):
        """Distinct (polished) minimizers within the tie tolerance of the best, best first."""
        d = self._dist(x)
        k0 = int(np.argmin(d))
        near = np.nonzero(d <= d[k0] + self.spacing)[0]
        chosen = [k0]
        if len(near) > 1:
            far = np.linalg.norm(self.Uf[near] - self.Uf[k0], axis=1)
            for _ in range(self.starts - 1):
                j = int(np.argmax(far))
                if far[j] <= self.radius:
                    break
                chosen.append(int(near[j]))
                far = np.minimum(far, np.linalg.norm(self.Uf[near] - self.Uf[near[j]], axis=1))
        pol = [self._polish(x, self.Uf[k]) for k in chosen]
        pol.sort(key=lambda t: t[1])
        best = pol[0][1]
        keep, dists = [], []
        for u, dd in pol:
            if dd > best + self.tie:
                continue
            if all(np.linalg.norm(u - k) > self.radius for k in keep):
                keep.append(u)
                dists.append(dd)
        return np.array(keep), np.array(dists)

    def argmin(self, x):
        """Grid minimizer without polishing (used while bisecting)."""
        return self.Uf[int(np.argmin(self._dist(x)))], 1


def _unique_nearest(ctx: Context) -> CriterionVerdict:
    shape = ctx.shape
    near = _Nearest(ctx)
    k = 24 if ctx.m == 1 else 8
    lo, hi = np.array(shape.lo), np.array(shape.hi)
    axes = [np.linspace(lo[i], hi[i], k + 2)[1:-1] for i in range(ctx.m)]
    U = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, ctx.m)
    U = U[shape.contains(U)]
    heights = np.linspace(0.1, 0.9, 9 if ctx.m == 1 else 4)
    worst, wit, count = 0.0, None, 0

    def record(x, us):
        nonlocal worst, wit
        if len(us) > 1:
            sep = float(np.max(np.linalg.norm(us - us[0], axis=1))) / ctx.scale
            if -sep < worst:
                worst, wit = -sep, x

    X = np.array([np.append(u, t * float(shape.g(u[None])[0])) for u in U for t in heights])
    feet = []
    for x in X:
        us, _ = near.minima(x)
        count += 1
        feet.append(us[0])
        record(x, us)
    feet = np.array(feet)
    # jumps of the nearest-point map between nearby samples (and between samples
    # mirrored through the centre of D) are bisected towards a tie
    c = 0.5 * (lo + hi)
    pairs = []
    du = np.linalg.norm(X[:, None, :-1] - X[None, :, :-1], axis=-1)
    dh = np.abs(X[:, None, -1] - X[None, :, -1])
    step = float(np.max(hi - lo)) / (k + 1)
    i1, i2 = np.nonzero(np.triu((du <= 1.5 * step) & (dh <= 0.5 * float(np.max(X[:, -1]))), 1))
    pairs += list(zip(i1, i2))
    mirror = 2 * c - X[:, :-1]
    dm = np.linalg.norm(mirror[:, None, :] - X[None, :, :-1], axis=-1)
    j = np.argmin(dm + 1e3 * (np.abs(X[:, None, -1] - X[None, :, -1]) > 1e-9 * ctx.scale), axis=1)
    pairs += [(i, int(j[i])) for i in range(len(X)) if j[i] > i]
    for i, jj in pairs:
        x, y = X[i], X[jj]
        fa, fb = feet[i], feet[jj]
        if np.linalg.norm(fa - fb) <= 2 * np.linalg.norm(x - y) + 2 * near.radius:
            continue
        lo_x, hi_x, flo, fhi = x, y, fa, fb
        for _ in range(24):
            mid = 0.5 * (lo_x + hi_x)
            fm, _ = near.argmin(mid)
            if np.linalg.norm(fm - flo) > np.linalg.norm(fm - fhi):
                hi_x, fhi = mid, fm
            else:
                lo_x, flo = mid, fm
        mid = 0.5 * (lo_x + hi_x)
        count += 1
        if mid[-1] > 0 and shape.g(mid[None, :-1])[0] > mid[-1]:
            us, _ = near.minima(mid)
            record(mid, us)
    return _verdict("viii", worst, ctx.tol, wit, count,
                    note="margin is minus the separation of competing nearest points")


# -- (x) ----------------------------------------------------------------------------


def extended_phi(shape, S: np.ndarray) -> np.ndarray:
    """Phi extended by |s|^2/2 outside D (g = 0 there)."""
    return 0.5 * (np.sum(S * S, axis=-1) + shape.height(S) ** 2)


def check_poincare_convex(shape_or_ctx, samples: int | None = None) -> CriterionVerdict:
    ctx = _ctx(shape_or_ctx)
    shape = ctx.shape
    k = samples or 4 * ctx.n_samples
    lo, hi = np.array(shape.lo), np.array(shape.hi)
    c, half = 0.5 * (lo + hi), 0.6 * (hi - lo)
    H = halton(2 * ctx.m, k, ctx.seed + 404)
    mids = c + half * (2 * H[:, :ctx.m] - 1)
    lmin = max(ctx.min_sep, 4 * shape.h) if ctx.is_grid else 0.02 * ctx.scale
    lmax = 0.5 * float(np.max(hi - lo))
    if ctx.m == 1:
        dirs = np.ones((k, 1))
    else:
        th = 2 * np.pi * H[:, ctx.m]
        dirs = np.column_stack([np.cos(th), np.sin(th)])
    length = lmin + (lmax - lmin) * H[:, -1]
    S1 = mids - 0.5 * length[:, None] * dirs
    S2 = mids + 0.5 * length[:, None] * dirs
    if ctx.is_grid:
        # tabulated heights are only trusted on the core of D
        keep = shape.contains(S1) & shape.contains(S2) & shape.contains(mids)
        S1, S2, mids, length = S1[keep], S2[keep], mids[keep], length[keep]
        if not len(length):
            raise ValueError("no chord lies in the core of D")
    gap = 0.5 * (extended_phi(shape, S1) + extended_phi(shape, S2)) - extended_phi(shape, mids)
    margin = 8 * gap / length**2
    j = int(np.argmin(margin))
    return _verdict("x", margin[j], ctx.tol, np.concatenate([S1[j], S2[j]]), len(margin))


# -- report -------------------------------------------------------------------------


def _ctx(obj) -> Context:
    return obj if isinstance(obj, Context) else make_context(obj)


def equivalence_report(shape, seed: int = 0, n_samples: int = 256, tol: float | None = None) -> CriteriaReport:
    ctx = make_context(shape, seed=seed, n_samples=n_samples, tol=tol)
    U = sample_domain(ctx)
    v1, v2 = check_convexity(ctx, U)
    v3 = check_footpoint_monotone(ctx, U)
    v4, v5, v9 = check_ball_union(ctx, U)
    v6, v8 = check_normals(ctx)
    v7 = check_curvature_bound(ctx, U)
    v10 = check_poincare_convex(ctx)
    # margins of (i) and (vii) must agree in sign sample by sample
    J = jets_batch(ctx.shape, U)
    lam = np.linalg.eigvalsh(J["hess_phi"])[:, 0]
    kap = (generalized_eigs(J["B"], J["A"])[:, 0] + 1.0 / J["N_len"]) * J["N_len"]
    agree = bool(np.all((lam >= -ctx.tol) == (kap >= -ctx.tol)))
    verdicts = [v1, v2, v3, v4, v5, v6, v7, v8, v9, v10]
    name = getattr(ctx.shape, "name", "shape")
    return CriteriaReport(verdicts, ctx.tol, name, seed, agree)
