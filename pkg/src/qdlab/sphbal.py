"""Balayage of a hyperplane measure onto a sphere, and potentials restricted to hemispheres."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.stats import qmc

from .balayage import MeasureSpec, SupportError


def sphere_area(n: int) -> float:
    """|S^{n-1}|."""
    return float(2 * np.pi ** (n / 2) / gamma_fn(n / 2))


def measure_quadrature(measure: MeasureSpec, nodes: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Nodes y' (k, n-1) and weights (k,) representing mu.

    Point masses are used as given and tabulated densities by the midpoint rule.
    Densities given as functions use Gauss-Legendre after the substitution
    y = c + w sin(pi t / 2) on the support box, which also absorbs square-root
    endpoint behaviour.
    """
    m = measure.n - 1
    if measure.kind == "points":
        if not measure.points:
            return np.zeros((0, m)), np.zeros(0)
        return np.array([p[0] for p in measure.points], dtype=float), np.array([p[1] for p in measure.points])
    if measure.samples is not None:
        pts = np.stack(np.meshgrid(*measure.axes, indexing="ij"), axis=-1)
        cell = np.prod([a[1] - a[0] for a in measure.axes])
        s = measure.samples
        return pts[s > 0], s[s > 0] * cell
    k = nodes if nodes is not None else (400 if m == 1 else 160)
    t, wt = np.polynomial.legendre.leggauss(k)
    axes, wts = [], []
    for lo, hi in zip(measure.support_lo, measure.support_hi):
        c, w = 0.5 * (lo + hi), 0.5 * (hi - lo)
        axes.append(c + w * np.sin(0.5 * np.pi * t))
        wts.append(wt * w * 0.5 * np.pi * np.cos(0.5 * np.pi * t))
    Y = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
    W = np.prod(np.stack(np.meshgrid(*wts, indexing="ij"), axis=-1), axis=-1).ravel()
    W = W * measure.density_at(Y)
    keep = W > 0
    return Y[keep], W[keep]


def _check_support(Y, a, R):
    if len(Y) and np.max(np.linalg.norm(Y - a, axis=1)) >= R * (1 - 1e-9):
        raise SupportError("support of the measure reaches the sphere")


@dataclass
class SphereDensity:
    center: np.ndarray  # a' in R^{n-1}
    R: float
    n: int
    theta: np.ndarray  # colatitude from +x_n (n = 3) or polar angle (n = 2)
    phi: np.ndarray
    beta: np.ndarray  # shape (len(theta), len(phi)) for n = 3, (len(phi),) for n = 2
    weights: np.ndarray  # surface-area quadrature weights, same shape as beta

    def total(self) -> float:
        return float(np.sum(self.beta * self.weights))

    def points(self) -> np.ndarray:
        a = np.append(self.center, 0.0)
        if self.n == 2:
            return a + self.R * np.column_stack([np.cos(self.phi), np.sin(self.phi)])
        T, P = np.meshgrid(self.theta, self.phi, indexing="ij")
        return a + self.R * np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["colatitude", "longitude", "beta0"])
        if self.n == 2:
            for p, b in zip(self.phi, self.beta):
                w.writerow([repr(0.0), repr(float(p)), repr(float(b))])
        else:
            for i, t in enumerate(self.theta):
                for j, p in enumerate(self.phi):
                    w.writerow([repr(float(t)), repr(float(p)), repr(float(self.beta[i, j]))])
        return buf.getvalue()


def _beta_kernel(xp, Y, W, a, R, n) -> np.ndarray:
    # beta0 depends on x' only: |x - y|^2 = R^2 + |y' - a|^2 - 2 (x' - a).(y' - a)
    xp = np.atleast_2d(np.asarray(xp, dtype=float)) - a
    Yc = Y - a
    L = R * R + np.sum(Yc * Yc, axis=1)[None, :] - 2 * xp @ Yc.T
    num = R * R - np.sum(Yc * Yc, axis=1)
    return (L ** (-n / 2) * num[None, :]) @ W / (sphere_area(n) * R)


def beta_at(measure: MeasureSpec, a, R: float, xp, quad=None) -> np.ndarray:
    """beta0 at sphere points with hyperplane coordinates x' (upper and lower points agree)."""
    n = measure.n
    a = np.asarray(a, dtype=float).ravel()[: n - 1]
    Y, W = quad if quad is not None else measure_quadrature(measure)
    _check_support(Y, a, R)
    return _beta_kernel(xp, Y, W, a, R, n)


def poisson_balayage_density(measure: MeasureSpec, a, R: float, n_theta: int = 64, n_phi: int = 128,
                             quad_nodes: int | None = None) -> SphereDensity:
    n = measure.n
    a = np.asarray(a, dtype=float).ravel()[: n - 1]
    Y, W = measure_quadrature(measure, quad_nodes)
    _check_support(Y, a, R)
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    if n == 2:
        theta = np.zeros(1)
        X = np.column_stack([a[0] + R * np.cos(phi)])
        beta = _beta_kernel(X, Y, W, a, R, n)
        wts = np.full(n_phi, 2 * np.pi * R / n_phi)
    else:
        c, wc = np.polynomial.legendre.leggauss(n_theta)
        theta = np.arccos(c[::-1])
        wc = wc[::-1]
        T, P = np.meshgrid(theta, phi, indexing="ij")
        X = a + R * np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P)], axis=-1).reshape(-1, 2)
        beta = _beta_kernel(X, Y, W, a, R, n).reshape(T.shape)
        wts = (R * R * wc[:, None] * (2 * np.pi / n_phi)) * np.ones_like(T)
    return SphereDensity(a, float(R), n, theta, phi, beta, wts)


def _disk_samples(a, R, m, count, frac, seed):
    if m == 1:
        return a + np.linspace(-frac * R, frac * R, count)[:, None]
    u = qmc.Halton(d=2, scramble=True, seed=seed).random(count)
    r = frac * R * np.sqrt(u[:, 0])
    t = 2 * np.pi * u[:, 1]
    return a + np.column_stack([r * np.cos(t), r * np.sin(t)])


def _directions(m, count):
    if m == 1:
        return np.ones((1, 1))
    t = np.pi * np.arange(count) / count
    return np.column_stack([np.cos(t), np.sin(t)])


def _second_differences(fn, a, R, m, samples, dirs, step, frac, seed):
    X = _disk_samples(a, R, m, samples, frac, seed)
    out = []
    for d in dirs:
        ok = (np.linalg.norm(X + step * d - a, axis=1) < R) & (np.linalg.norm(X - step * d - a, axis=1) < R)
        Z = X[ok]
        out.append((fn(Z + step * d) - 2 * fn(Z) + fn(Z - step * d)) / step**2)
    v = np.concatenate(out)
    return v


def beta_convexity(measure: MeasureSpec, a, R: float, samples: int = 200, n_dirs: int = 12,
                   step: float | None = None, frac: float = 0.95, seed: int = 0) -> dict:
    """Minimal second difference of beta0(x') along sampled directions in the open disk."""
    m = measure.n - 1
    a = np.asarray(a, dtype=float).ravel()[:m]
    quad = measure_quadrature(measure)
    step = 0.02 * R if step is None else step
    fn = lambda Z: beta_at(measure, a, R, Z, quad)
    v = _second_differences(fn, a, R, m, samples, _directions(m, n_dirs), step, frac, seed)
    # fourth differences (even order) as well
    X = _disk_samples(a, R, m, samples, frac * 0.9, seed + 1)
    d4 = []
    for d in _directions(m, n_dirs):
        vals = [fn(X + k * step * d) for k in (-2, -1, 0, 1, 2)]
        d4.append((vals[0] - 4 * vals[1] + 6 * vals[2] - 4 * vals[3] + vals[4]) / step**4)
    return {"margin": float(v.min()), "fourth_margin": float(np.concatenate(d4).min()), "step": step,
            "samples": int(v.size)}


def hemisphere_potential(measure: MeasureSpec, a, R: float, xp, quad=None) -> np.ndarray:
    """U^mu at (x', sqrt(R^2 - |x' - a|^2)); logarithmic kernel for n = 2."""
    n = measure.n
    a = np.asarray(a, dtype=float).ravel()[: n - 1]
    xp = np.atleast_2d(np.asarray(xp, dtype=float))
    if np.any(np.linalg.norm(xp - a, axis=1) >= R):
        raise ValueError("hemisphere sample outside the open disk |x' - a| < R")
    Y, W = quad if quad is not None else measure_quadrature(measure)
    xn = np.sqrt(R * R - np.sum((xp - a) ** 2, axis=1))
    d2 = np.sum((xp[:, None, :] - Y[None, :, :]) ** 2, axis=-1) + xn[:, None] ** 2
    if n == 2:
        return -(np.log(d2) / (4 * np.pi)) @ W
    return (d2 ** (-(n - 2) / 2) / ((n - 2) * sphere_area(n))) @ W


def hemisphere_potential_convexity(measure: MeasureSpec, a, R: float, samples: int = 200, n_dirs: int = 12,
                                   step: float | None = None, frac: float = 0.95, seed: int = 0) -> dict:
    m = measure.n - 1
    a = np.asarray(a, dtype=float).ravel()[:m]
    quad = measure_quadrature(measure)
    step = 0.02 * R if step is None else step
    fn = lambda Z: hemisphere_potential(measure, a, R, Z, quad)
    v = _second_differences(fn, a, R, m, samples, _directions(m, n_dirs), step, frac, seed)
    return {"margin": float(v.min()), "step": step, "samples": int(v.size)}


def second_derivative_check(measure: MeasureSpec, a, R: float, xp, axis: int = 0, step: float = 1e-3) -> dict:
    """d^2 U / dx_k^2 on the hemisphere by finite differences against the closed-form integrand
    n (y_k - a_k)^2 L^{-(n+2)/2} / |S^{n-1}|, L = R^2 + |y' - a|^2 - 2 (x' - a).(y' - a)."""
    n = measure.n
    a = np.asarray(a, dtype=float).ravel()[: n - 1]
    xp = np.asarray(xp, dtype=float).ravel()
    quad = measure_quadrature(measure)
    e = np.zeros(n - 1)
    e[axis] = step
    vals = [hemisphere_potential(measure, a, R, xp + k * e, quad)[0] for k in (-2, -1, 0, 1, 2)]
    fd = (-vals[0] + 16 * vals[1] - 30 * vals[2] + 16 * vals[3] - vals[4]) / (12 * step * step)
    Y, W = quad
    Yc = Y - a
    L = R * R + np.sum(Yc * Yc, axis=1) - 2 * (xp - a) @ Yc.T
    integrand = n * Yc[:, axis] ** 2 * L ** (-(n + 2) / 2) / sphere_area(n)
    exact = float(integrand @ W)
    return {"finite_difference": float(fd), "integral": exact, "abs_error": float(abs(fd - exact)),
            "integrand_min": float(integrand.min()) if len(integrand) else 0.0}
