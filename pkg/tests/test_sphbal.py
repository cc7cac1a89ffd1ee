import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qdlab.balayage import MeasureSpec, SupportError
from qdlab.sphbal import (beta_at, beta_convexity, hemisphere_potential, hemisphere_potential_convexity,
                          measure_quadrature, poisson_balayage_density, second_derivative_check, sphere_area)


def test_sphere_area():
    assert np.isclose(sphere_area(2), 2 * np.pi)
    assert np.isclose(sphere_area(3), 4 * np.pi)


@pytest.mark.parametrize("n", [2, 3])
def test_point_mass_at_centre_is_uniform(n):
    R, m = 2.0, 1.7
    mu = MeasureSpec.point_masses([((0.0,) * (n - 1), m)], n=n)
    dens = poisson_balayage_density(mu, np.zeros(n - 1), R, n_theta=16, n_phi=32)
    expected = m / (sphere_area(n) * R ** (n - 1))
    assert np.max(np.abs(dens.beta - expected)) <= 1e-10
    assert abs(dens.total() - m) <= 1e-10


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 0.8), st.floats(0.0, 2 * np.pi), st.floats(0.1, 3.0))
def test_point_mass_conserved_off_centre(r, t, m):
    mu = MeasureSpec.point_masses([((r * np.cos(t), r * np.sin(t)), m)], n=3)
    dens = poisson_balayage_density(mu, (0.0, 0.0), 1.0, n_theta=64, n_phi=128)
    assert abs(dens.total() - m) / m < 1e-6
    assert np.all(dens.beta > 0)


def test_ellipse_mass_conservation():
    mu = MeasureSpec.ellipse_focal()
    Y, W = measure_quadrature(mu)
    assert abs(W.sum() - np.pi * 15) < 1e-6
    dens = poisson_balayage_density(mu, (0.0,), 6.0, n_phi=512)
    assert abs(dens.total() - np.pi * 15) <= 1e-6 * np.pi * 15


def test_ellipse_convexity_margins():
    mu = MeasureSpec.ellipse_focal()
    assert beta_convexity(mu, (0.0,), 6.0)["margin"] >= -1e-8
    assert hemisphere_potential_convexity(mu, (0.0,), 6.0)["margin"] >= -1e-8


def test_uniform_disk_convexity_3d():
    mu = MeasureSpec.uniform_disk(1.0, 1.0, n=3)
    assert beta_convexity(mu, (0.0, 0.0), 2.0, samples=64, n_dirs=6)["margin"] >= -1e-8
    assert hemisphere_potential_convexity(mu, (0.0, 0.0), 2.0, samples=64, n_dirs=6)["margin"] >= -1e-8


def test_second_derivative_formula():
    mu = MeasureSpec.uniform_disk(1.0, 1.0, n=3)
    out = second_derivative_check(mu, (0.0, 0.0), 2.0, (0.3, -0.4), axis=1)
    assert out["abs_error"] < 1e-6 * abs(out["integral"]) + 1e-8
    assert out["integrand_min"] >= 0
    out = second_derivative_check(MeasureSpec.ellipse_focal(), (0.0,), 6.0, (1.0,))
    assert out["abs_error"] < 1e-6 * abs(out["integral"])


def test_beta_symmetric_for_symmetric_measure():
    mu = MeasureSpec.ellipse_focal()
    b = beta_at(mu, (0.0,), 6.0, np.array([[-2.0], [2.0]]))
    assert np.isclose(b[0], b[1], rtol=1e-12)


def test_tabulated_density_matches_function():
    axes = [np.linspace(-5, 5, 2001)]
    mu_f = MeasureSpec.ellipse_focal()
    mu_s = MeasureSpec.from_samples(axes, mu_f.density_at(axes[0][:, None]))
    b_f = beta_at(mu_f, (0.0,), 6.0, np.array([[1.0]]))
    b_s = beta_at(mu_s, (0.0,), 6.0, np.array([[1.0]]))
    assert np.isclose(b_f, b_s, rtol=1e-4)


def test_support_must_lie_inside_sphere():
    with pytest.raises(SupportError):
        poisson_balayage_density(MeasureSpec.ellipse_focal(), (0.0,), 3.0)
    with pytest.raises(ValueError):
        hemisphere_potential(MeasureSpec.ellipse_focal(), (0.0,), 6.0, np.array([[7.0]]))


def test_csv_layout():
    mu = MeasureSpec.point_masses([((0.0, 0.0), 1.0)], n=3)
    dens = poisson_balayage_density(mu, (0.0, 0.0), 1.0, n_theta=4, n_phi=8)
    rows = dens.to_csv().strip().splitlines()
    assert rows[0] == "colatitude,longitude,beta0" and len(rows) == 1 + 32
    assert dens.points().shape == (4, 8, 3)
