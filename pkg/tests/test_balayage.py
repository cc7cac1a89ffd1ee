import numpy as np
import pytest

from qdlab.balayage import (ConvergenceError, EmptySliceError, MeasureSpec, SolverConfig, StructuralError,
                            SupportError, extract_domain, localize, omega_volume, residual_report,
                            solve_partial_balayage, wide_stencil_residual)
from qdlab.exact import ellipse_potential
from qdlab.fieldcore import Grid, ScalarField
from qdlab.balayage import PotentialSolution

from conftest import ellipse_g


@pytest.fixture(scope="module")
def disk2():
    g = Grid.box((-1.5, -1.5), (1.5, 1.5), 0.05)
    return solve_partial_balayage(MeasureSpec.point_masses([((0.0,), np.pi)], n=2), g)


def test_zero_measure_gives_empty_domain():
    sol = solve_partial_balayage(MeasureSpec.zero(2), Grid.box((-1, -1), (1, 1), 0.1))
    assert not sol.omega_mask.any()
    assert np.all(sol.u.values == 0)
    graph = extract_domain(sol)
    assert graph.is_empty
    assert residual_report(sol)["mass_defect"] == 0.0


def test_point_mass_gives_disk(disk2):
    graph = extract_domain(disk2)
    x = graph.axes[0]
    m = graph.mask & (np.abs(x) < 0.9)
    assert np.max(np.abs(graph.g[m] - np.sqrt(1 - x[m] ** 2))) <= 2 * 0.05
    assert disk2.symmetry_defect() < 1e-9
    assert abs(omega_volume(disk2) - np.pi) / np.pi < 0.01


def test_point_mass_gives_ball():
    g = Grid.box((-1.4, -1.4, -1.4), (1.4, 1.4, 1.4), 0.1)
    sol = solve_partial_balayage(MeasureSpec.point_masses([((0.0, 0.0), 4 / 3 * np.pi)], n=3), g)
    graph = extract_domain(sol)
    r = np.linalg.norm(graph.coords(), axis=-1)
    m = graph.mask & (r < 0.9)
    assert np.max(np.abs(graph.g[m] - np.sqrt(1 - r[m] ** 2))) <= 2 * 0.1
    assert abs(omega_volume(sol) - 4 / 3 * np.pi) / (4 / 3 * np.pi) < 0.01


def test_ellipse_extraction(ellipse_solution, ellipse_graph):
    x = ellipse_graph.axes[0]
    inner = np.abs(x) <= 0.9 * 5
    assert np.max(np.abs(ellipse_graph.g[inner] - ellipse_g(x[inner]))) <= 2 * 0.04
    assert ellipse_graph.connected
    rep = residual_report(ellipse_solution, ellipse_graph)
    assert rep["pde_residual"] < 1e-4
    assert rep["mass_defect_rel"] < 0.01
    # recorded density matches the focal density where it is positive
    c = 4.0
    core = np.abs(x) < 0.8 * c
    f_exact = 2 * 15 / 16 * np.sqrt(c * c - x[core] ** 2)
    assert np.max(np.abs(ellipse_graph.f[core] - f_exact)) < 0.1 * f_exact.max()


def test_threshold_extraction_is_coarser(ellipse_solution, ellipse_graph):
    thr = extract_domain(ellipse_solution, method="threshold")
    x = thr.axes[0]
    inner = np.abs(x) <= 4.5
    e_thr = np.max(np.abs(thr.g[inner] - ellipse_g(x[inner])))
    e_sqrt = np.max(np.abs(ellipse_graph.g[inner] - ellipse_g(x[inner])))
    assert e_sqrt < e_thr
    with pytest.raises(ValueError):
        extract_domain(ellipse_solution, method="spline")


def test_wide_stencil_residual_on_exact_field():
    r = [wide_stencil_residual(ellipse_potential(Grid.box((-5.5, -3.5), (5.5, 3.5), h)), 0.3) for h in (0.1, 0.05)]
    assert r[0] / r[1] > 3.0  # second order


def test_blob_mass_balance(blob_solution, blob_graph):
    assert abs(omega_volume(blob_solution) - np.pi) / np.pi < 0.01
    assert blob_graph.connected
    assert blob_solution.symmetry_defect() < 1e-9


def test_support_and_config_errors():
    grid = Grid.box((-1, -1), (1, 1), 0.1)
    with pytest.raises(SupportError):
        solve_partial_balayage(MeasureSpec.point_masses([((0.95,), 1.0)]), grid)
    with pytest.raises(ValueError):
        solve_partial_balayage(MeasureSpec.point_masses([((0.0, 0.0), 1.0)], n=3), grid)
    with pytest.raises(ValueError):
        SolverConfig(omega=2.5)
    with pytest.raises(ValueError):
        MeasureSpec.point_masses([((0.0,), -1.0)])
    with pytest.raises(ValueError):
        MeasureSpec.from_samples([np.linspace(0, 1, 3)], [1.0, -1.0, 0.0])


def test_nonconvergence_raises():
    grid = Grid.box((-1.5, -1.5), (1.5, 1.5), 0.05)
    cfg = SolverConfig(max_iter=20, coarse_levels=0)
    with pytest.raises(ConvergenceError):
        solve_partial_balayage(MeasureSpec.point_masses([((0.0,), np.pi)]), grid, cfg)


def test_growth_when_domain_reaches_box():
    grid = Grid.box((-0.8, -0.8), (0.8, 0.8), 0.05)
    sol = solve_partial_balayage(MeasureSpec.point_masses([((0.0,), np.pi)]), grid)
    assert sol.diagnostics["grows"] >= 1
    assert sol.grid.hi[0] > 1.0


def test_structural_error_on_non_monotone_column():
    grid = Grid.box((-1, -1), (1, 1), 0.1)
    X, Y = grid.mesh()
    v = np.where(np.abs(X) < 0.5, 0.2 + 0.1 * np.cos(8 * Y) ** 2, 0.0)
    with pytest.raises(StructuralError):
        extract_domain(PotentialSolution.from_field(ScalarField(grid, v)))


def test_localize(ellipse_solution):
    mb, sb = localize(ellipse_solution, 1.0)
    assert mb.name == "localized"
    assert np.isclose(sb.grid.axes()[-1][sb.grid.layer], 0.0)
    # mass of the slice measure equals the part of Omega above the slice (both sides)
    gb = extract_domain(sb)
    assert gb.mask.sum() < extract_domain(ellipse_solution).mask.sum()
    with pytest.raises(EmptySliceError):
        localize(ellipse_solution, 3.2)
    with pytest.raises(ValueError):
        localize(ellipse_solution, 1.01)
    m0, s0 = localize(ellipse_solution, 0.0)
    assert s0 is ellipse_solution
