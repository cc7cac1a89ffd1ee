import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qdlab.surface import (GraphShape, OutsideDomainError, ellipse_arch, generalized_eigs, hemisphere,
                           jets_batch, poincare_transform, principal_curvatures, shifted_jet, surface_jet,
                           tall_cap)

from conftest import ellipse_g


@pytest.mark.parametrize("m", [1, 2])
def test_hemisphere_curvatures_are_minus_one_over_R(m):
    R = 2.0
    jet = surface_jet(hemisphere(R, m), np.full(m, 0.3))
    assert np.allclose(principal_curvatures(jet), -1 / R)
    # phi = |p|^2/2 is constant R^2/2 on a sphere about the origin
    assert np.isclose(jet.phi, R * R / 2)
    assert np.allclose(jet.p, 0.0)
    assert np.isclose(np.linalg.norm(jet.normal), 1.0)


def test_analytic_derivatives_match_finite_differences():
    shape = ellipse_arch(5.0, 3.0, m=2)
    u = np.array([1.2, -0.7])
    e = 1e-5
    for k in range(2):
        d = np.zeros(2)
        d[k] = e
        fd = (shape.g(u + d) - shape.g(u - d)) / (2 * e)
        assert np.isclose(shape.grad(u)[k], fd, atol=1e-7)
        fdh = (shape.grad(u + d) - shape.grad(u - d)) / (2 * e)
        assert np.allclose(shape.hess(u)[:, k], fdh, atol=1e-6)


def test_tall_cap_is_not_sphere():
    jet = surface_jet(tall_cap(1), [0.5])
    k = principal_curvatures(jet)[0]
    assert np.isclose(k, -2 / (1 + 1.0) ** 1.5)


def test_outside_domain():
    with pytest.raises(OutsideDomainError):
        surface_jet(hemisphere(1.0), [1.2])
    with pytest.raises(OutsideDomainError):
        shifted_jet(hemisphere(1.0), [0.0], [0.0, 1.5])
    with pytest.raises(ValueError):
        shifted_jet(hemisphere(1.0), [0.0], [0.0, -0.1])


def test_shifted_jet_of_hemisphere():
    sj = shifted_jet(hemisphere(1.0), [0.4], [0.0, 0.0])
    assert np.allclose(sj.grad_phi, 0.0, atol=1e-12)
    assert np.allclose(sj.hess_phi, 0.0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(-0.95, 0.95), st.floats(-1.5, 1.5), st.floats(0.05, 2.0))
def test_poincare_roundtrip(s, t, v):
    x = np.array([s, t, v])
    y = poincare_transform(x)
    assert np.allclose(poincare_transform(y, "inverse"), x)


def test_poincare_errors():
    with pytest.raises(ValueError):
        poincare_transform([0.0, -1.0])
    with pytest.raises(ValueError):
        poincare_transform([1.0, 0.1], "inverse")
    with pytest.raises(ValueError):
        poincare_transform([1.0, 1.0], "sideways")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.floats(0.1, 3), st.floats(0.1, 3))
def test_generalized_eigs_match_scipy(b, a1, a2):
    from scipy.linalg import eigh
    B = np.array([[b[0], b[1]], [b[1], b[2]]])
    A = np.array([[a1 + 1, 0.3], [0.3, a2 + 1]])
    assert np.allclose(generalized_eigs(B, A), eigh(B, A, eigvals_only=True), atol=1e-9)


def test_jets_batch_consistent():
    shape = ellipse_arch(5.0, 3.0, 2)
    U = np.array([[0.0, 0.0], [1.0, 2.0], [-3.0, 1.0]])
    J = jets_batch(shape, U)
    for i, u in enumerate(U):
        jet = surface_jet(shape, u)
        assert np.allclose(J["A"][i], jet.A)
        assert np.allclose(J["hess_phi"][i], jet.hess_phi)


def test_graph_shape_matches_ellipse(ellipse_graph):
    gs = GraphShape(ellipse_graph)
    U = gs.node_points()
    assert len(U)
    x = U[:, 0]
    assert np.max(np.abs(gs.g(U) - ellipse_g(x))) < 2 * 0.04
    exact = ellipse_arch(5.0, 3.0, 1)
    core = np.abs(x) < 3.5
    assert np.max(np.abs(gs.grad(U[core])[:, 0] - exact.grad(U[core])[:, 0])) < 0.05
    err = gs.hess(U[core])[:, 0, 0] - exact.hess(U[core])[:, 0, 0]
    assert np.sqrt(np.mean(err**2)) < 0.05
    assert np.all(gs.hess(U)[:, 0, 0] < 0)
    assert not gs.contains([[5.2]])[0]
    assert gs.in_domain([[4.9]])[0]
