import numpy as np
import pytest

from qdlab.balayage import PotentialSolution, extract_domain
from qdlab.exact import disk_potential, ellipse_potential, radial_test_field
from qdlab.fieldcore import Grid
from qdlab.schwarzgeom import (OriginError, band_mask, boundary_tangency_check, build_schwarz_state, cr_residual,
                               hessian_checks, hessian_integrals, omega_cylindrical_on_D,
                               stationary_boundary_points, trace_gamma, tube_mass_check, xi_at)


@pytest.mark.parametrize("n", [2, 3])
def test_cr_system_exact_for_radial_field(n):
    lo = (-1.0,) * (n - 1) + (-1.0,)
    grid = Grid.box(lo, (1.0,) * n, 0.1 if n == 2 else 0.2)
    sol = PotentialSolution.from_field(radial_test_field(grid, 2.0))
    st = build_schwarz_state(sol)
    res = cr_residual(st)
    assert res["max"] < 1e-9


def test_state_fields_on_ellipse(ellipse_state):
    st = ellipse_state
    assert st.n == 2
    assert np.allclose(st.origin, 0.0)
    # rho = x.grad(u)... is even; omega is antisymmetric
    w = st.omega[st.interior]
    assert np.allclose(w, -np.swapaxes(w, -1, -2))
    assert st.field("rho").values.shape == st.grid.dims
    with pytest.raises(OriginError):
        build_schwarz_state(st.source, origin_shift=(20.0, 0.0))


def test_cr_residual_converges_on_exact_ellipse():
    out = []
    for h in (0.04, 0.02):
        sol = ellipse_potential(Grid.box((-5.5, -3.5), (5.5, 3.5), h))
        out.append(cr_residual(build_schwarz_state(sol), band=0.3)["max"])
    assert out[1] <= 10 * 0.02
    assert out[0] / out[1] >= 1.8


def test_band_mask_is_nested(ellipse_state):
    a = band_mask(ellipse_state, 0.2)
    b = band_mask(ellipse_state, 0.4)
    assert b.sum() < a.sum() and not np.any(b & ~a)


def test_tangency_on_solver_ellipse(ellipse_state, ellipse_graph):
    t = boundary_tangency_check(ellipse_state, ellipse_graph)
    assert t["rho_minus_half_r2_max"] < 0.05
    assert t["normal_ratio_max"] < 0.5
    xi = xi_at(ellipse_state, ellipse_graph, [0.0, 3.0])
    assert np.linalg.norm(xi) < 0.05
    st = stationary_boundary_points(ellipse_graph)
    assert np.any(np.linalg.norm(st - [0.0, 3.0], axis=1) < 0.1)


@pytest.fixture(scope="module")
def gamma(ellipse_state, ellipse_graph):
    return trace_gamma(ellipse_state, ellipse_graph)


def test_gamma_centred(gamma):
    h = 0.04
    assert not gamma.is_empty and not gamma.branch and not gamma.degenerate
    assert np.max(np.abs(gamma.points[:, 0])) <= 2 * h
    assert np.linalg.norm(gamma.points[-1] - [0.0, 3.0]) <= 2 * h
    assert set(gamma.zeros_per_shell) == {1}
    assert np.all(np.diff(gamma.radii) > 0)
    lines = gamma.to_csv().strip().splitlines()
    assert len(lines) == 1 + len(gamma.points)


def test_gamma_shifted_origin_certificate(ellipse_solution, ellipse_graph):
    st = build_schwarz_state(ellipse_solution, origin_shift=(5.3, 0.0))
    tr = trace_gamma(st, ellipse_graph)
    assert tr.is_empty and tr.certificate is not None and tr.certificate > 0


def test_gamma_degenerate_disk():
    sol = disk_potential(Grid.box((-1.3, -1.3), (1.3, 1.3), 0.02))
    tr = trace_gamma(build_schwarz_state(sol))
    assert tr.degenerate


def test_hessian_checks_on_ellipse(ellipse_solution, ellipse_graph, ellipse_state):
    hc = hessian_checks(ellipse_solution, ellipse_graph, ellipse_state)
    assert hc["trace_max"] <= 10 * 0.04**2
    rows = hc["offsets"]
    assert rows[0]["H_minus_nnT"] < rows[-1]["H_minus_nnT"]


def test_hessian_integrals_match_exact(ellipse_solution):
    I = hessian_integrals(ellipse_solution)
    exact = hessian_integrals(ellipse_potential(ellipse_solution.grid))
    assert np.allclose(I, exact, atol=0.02 * np.abs(exact).max())
    assert abs(I[0, 1]) < 1e-6 and abs(I[0, 0]) < 0.02 * I[1, 1]


def test_hessian_integral_closed_form(ellipse_solution):
    # the integral of u_yy over the upper half is -u_y(x, 0+) integrated: half the mass
    I = hessian_integrals(ellipse_solution)
    assert abs(I[1, 1] - 0.5 * np.pi * 15) / (0.5 * np.pi * 15) < 0.02


def test_tube_mass(ellipse_solution, ellipse_graph):
    whole = tube_mass_check(ellipse_solution, graph=ellipse_graph)
    assert whole["defect"] < 0.01 and whole["unterminated"] == 0
    left = tube_mass_check(ellipse_solution, lambda xp: xp[:, 0] < 0, graph=ellipse_graph)
    assert left["defect"] < 0.01
    mid = tube_mass_check(ellipse_solution, np.abs(ellipse_graph.coords()[..., 0]) < 2, graph=ellipse_graph)
    assert mid["defect"] < 0.02


def test_blob_cylindrical_components(blob_state, blob_graph):
    c = omega_cylindrical_on_D(blob_state, blob_graph)
    assert c["omega_r"]["max"] < 1e-8
    assert c["omega_phi_minus"]["max"] < 1e-8


def test_blob_cr_and_tube(blob_solution, blob_state, blob_graph):
    res = cr_residual(blob_state, band=0.3)
    assert res["max"] < 10 * 0.05
    tm = tube_mass_check(blob_solution, graph=blob_graph)
    assert tm["defect"] < 0.01
