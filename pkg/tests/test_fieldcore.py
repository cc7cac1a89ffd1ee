import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qdlab.fieldcore import (FieldCorruptionError, FieldFormatError, Grid, OutOfGridError, ScalarField,
                             TensorField, VectorField, gradient, hessian_field, interior_mask, interpolate,
                             laplacian, read_field, read_header, sample, write_csv, write_field)


def quad_field(grid):
    return sample(grid, lambda x: x[..., 0] ** 2 + 2 * x[..., 0] * x[..., 1] - 0.5 * x[..., 1] ** 2 + 3)


def test_grid_box_and_layer():
    g = Grid.box((-1, -1), (1, 1), 0.1)
    assert g.dims == (21, 21)
    assert g.n == 2
    assert np.isclose(g.axes()[-1][g.layer], 0.0)
    up = g.upper()
    assert up.origin[-1] == 0.0 and up.dims == (21, 11)
    assert np.isclose(g.cell_volume, 0.01)


def test_gradient_and_laplacian_exact_on_quadratics():
    g = Grid.box((-1, -1), (1, 1), 0.1)
    f = quad_field(g)
    X, Y = g.mesh()
    G = gradient(f).values
    assert np.allclose(G[..., 0], 2 * X + 2 * Y)
    assert np.allclose(G[..., 1], 2 * X - Y)
    lap = laplacian(f).values
    assert np.allclose(lap[interior_mask(g)], 1.0)
    H = hessian_field(f)
    m = interior_mask(g, 2)
    assert np.allclose(H.values[m], [[2, 2], [2, -1]])
    assert np.allclose(H.trace().values[m], lap[m])


def test_interpolation_and_bounds():
    g = Grid.box((-1, -1), (1, 1), 0.1)
    f = sample(g, lambda x: 2 * x[..., 0] - x[..., 1])
    assert np.isclose(interpolate(f, (0.33, -0.21)), 0.87)
    pts = np.array([[0.1, 0.2], [-0.5, 0.5]])
    assert np.allclose(interpolate(f, pts), [0.0, -1.5])
    with pytest.raises(OutOfGridError):
        interpolate(f, (1.5, 0.0))


@pytest.mark.parametrize("kind", ["scalar", "vector", "tensor"])
def test_qdf_roundtrip(tmp_path, kind):
    g = Grid.box((-1, -0.5, -0.5), (1, 0.5, 0.5), 0.25)
    f = quad_field(Grid.box((-1, -1), (1, 1), 0.25))
    if kind == "scalar":
        fld = sample(g, lambda x: np.sin(x[..., 0]) * x[..., 2])
    elif kind == "vector":
        fld = gradient(sample(g, lambda x: x[..., 0] * x[..., 1] * x[..., 2]))
    else:
        fld = hessian_field(f)
    p = tmp_path / "f.qdf"
    write_field(fld, p, extra={"config_hash": "abc"})
    back = read_field(p)
    assert type(back) is type(fld)
    assert np.array_equal(back.values, fld.values)
    assert read_header(p)["config_hash"] == "abc"


def test_qdf_errors(tmp_path):
    p = tmp_path / "f.qdf"
    p.write_bytes(b"NOPE")
    with pytest.raises(FieldFormatError):
        read_field(p)
    g = Grid.box((0, 0), (1, 1), 0.5)
    write_field(sample(g, lambda x: x[..., 0]), p)
    data = p.read_bytes()
    p.write_bytes(data[:-8])
    with pytest.raises(FieldCorruptionError):
        read_field(p)


def test_write_csv(tmp_path):
    g = Grid.box((0, 0), (1, 1), 0.5)
    p = tmp_path / "f.csv"
    write_csv(sample(g, lambda x: x[..., 0] + x[..., 1]), p)
    rows = p.read_text().strip().splitlines()
    assert len(rows) == 1 + 9


@settings(max_examples=25, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_laplacian_of_linear_plus_radial(a, b, c):
    g = Grid.box((-1, -1), (1, 1), 0.125)
    f = sample(g, lambda x: a * x[..., 0] + b * x[..., 1] + c + 0.25 * (x[..., 0] ** 2 + x[..., 1] ** 2))
    assert np.allclose(laplacian(f).values[interior_mask(g)], 1.0)


def test_field_shapes_validated():
    g = Grid.box((0, 0), (1, 1), 0.5)
    with pytest.raises(ValueError):
        ScalarField(g, np.zeros(5))
    with pytest.raises(ValueError):
        VectorField(g, np.zeros((3, 3, 3)))
    with pytest.raises(ValueError):
        TensorField(g, np.zeros((3, 3, 2, 3)))
