"""Closed-form potentials used as oracles and as injected test fields."""

from __future__ import annotations

import numpy as np

from .balayage import MeasureSpec, PotentialSolution
from .fieldcore import Grid, ScalarField


def _w(z, c):
    # sqrt(z^2 - c^2) with the cut on [-c, c], ~ z at infinity
    return np.sqrt(z - c) * np.sqrt(z + c)


def ellipse_schwarz(z, a: float = 5.0, b: float = 3.0):
    """Schwarz function of the ellipse x^2/a^2 + y^2/b^2 = 1 (upper half plane branch)."""
    c = np.sqrt(a * a - b * b)
    z = np.asarray(z, dtype=complex)
    return ((a * a + b * b) * z - 2 * a * b * _w(z, c)) / c**2


def _ellipse_F(z, a, b):
    # antiderivative of the Schwarz function, continuous on the closed upper half plane
    c = np.sqrt(a * a - b * b)
    w = _w(z, c)
    s = z + w
    log_s = np.log(np.abs(s)) + 1j * np.arctan2(np.maximum(s.imag, 0.0), s.real)
    return (a * a + b * b) / (2 * c**2) * z**2 - (2 * a * b / c**2) * 0.5 * (z * w - c**2 * log_s)


def ellipse_potential_values(x, y, a: float = 5.0, b: float = 3.0) -> np.ndarray:
    """u = |z|^2/4 - Re F(z)/2 + C inside the ellipse (even in y), zero outside."""
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    z = x + 1j * y
    C = 0.5 * _ellipse_F(np.array([1j * b]), a, b).real[0] - 0.25 * b * b
    u = 0.25 * (x * x + y * y) - 0.5 * _ellipse_F(z, a, b).real + C
    inside = (x / a) ** 2 + (y / b) ** 2 < 1
    return np.where(inside, np.maximum(u, 0.0), 0.0)


def ellipse_potential(grid: Grid, a: float = 5.0, b: float = 3.0) -> PotentialSolution:
    X, Y = grid.mesh()
    u = ScalarField(grid, ellipse_potential_values(X, Y, a, b), name="u")
    return PotentialSolution.from_field(u, MeasureSpec.ellipse_focal(a, b), tol=1e-12, analytic="ellipse")


def disk_potential_values(r, R: float) -> np.ndarray:
    """n = 2 point mass pi R^2 at the origin: u = (r^2 - R^2)/4 - (R^2/2) log(r/R) for r < R."""
    r = np.asarray(r, dtype=float)
    rs = np.maximum(r, 1e-300)
    return np.where(r < R, (rs**2 - R * R) / 4 - 0.5 * R * R * np.log(rs / R), 0.0)


def disk_potential(grid: Grid, R: float = 1.0) -> PotentialSolution:
    X, Y = grid.mesh()
    r = np.hypot(X, Y)
    vals = disk_potential_values(r, R)
    vals[~np.isfinite(vals)] = 0.0
    k = grid.nearest_index((0.0, 0.0))
    # the log singularity at the mass is replaced by the neighbouring maximum
    vals[k] = vals.max() if np.isinf(disk_potential_values(np.array([0.0]), R)[0]) else vals[k]
    m = MeasureSpec.point_masses([((0.0,), np.pi * R * R)], n=2)
    return PotentialSolution.from_field(ScalarField(grid, vals, name="u"), m, tol=1e-12, analytic="disk")


def ball_potential_values(r, R: float) -> np.ndarray:
    """n = 3 point mass (4/3) pi R^3 at the origin: u = r^2/6 + R^3/(3r) - R^2/2 for r < R."""
    r = np.asarray(r, dtype=float)
    rs = np.maximum(r, 1e-300)
    return np.where(r < R, rs**2 / 6 + R**3 / (3 * rs) - R * R / 2, 0.0)


def radial_test_field(grid: Grid, R: float = 1.0) -> ScalarField:
    """u = (|x|^2 - R^2)/(2n): Laplacian 1 everywhere (not a quadrature-domain potential)."""
    X = grid.mesh()
    r2 = sum(x * x for x in X)
    return ScalarField(grid, (r2 - R * R) / (2 * grid.n), name="u")
