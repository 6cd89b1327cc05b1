import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eqlab.fields import (
    ComplexField, FieldError, Grid2D, RealField, expectation_momentum, from_momentum,
    inner_product, momentum_density, normalize, to_momentum,
)
from eqlab.propagation import make_gaussian_packet


def random_field(grid, seed):
    r = np.random.default_rng(seed)
    return ComplexField(grid, r.normal(size=grid.shape) + 1j * r.normal(size=grid.shape))


GRID = Grid2D(32, 24, -3.0, -2.0, 0.2, 0.25)


def test_grid_rejects_small_or_bad_spacing():
    with pytest.raises(FieldError):
        Grid2D(4, 16, 0, 0, 1, 1)
    with pytest.raises(FieldError):
        Grid2D(16, 16, 0, 0, 0.0, 1)


def test_momentum_spacing():
    g = Grid2D(64, 32, 0, 0, 0.5, 0.25)
    assert g.dkx == pytest.approx(2 * np.pi / 32)
    assert g.dky == pytest.approx(2 * np.pi / 8)
    assert np.all(np.diff(g.kx) > 0) and g.kx[0] < 0


def test_normalize_constant_field():
    g = Grid2D(8, 8, 0, 0, 0.125, 0.125)  # unit area
    f = normalize(ComplexField(g, np.full(g.shape, 2.0)))
    assert np.allclose(f.values, 1.0)
    assert abs(f.norm_sq - 1) < 1e-12


def test_normalize_idempotent_on_gaussian():
    g = Grid2D(64, 64, -8, -8, 0.25, 0.25)
    psi = make_gaussian_packet(1.0, (0, 0), (1, 0.5), g)
    again = normalize(psi)
    assert np.max(np.abs(again.values - psi.values)) < 1e-12


def test_normalize_zero_field_is_an_error():
    with pytest.raises(FieldError, match="degenerate"):
        normalize(ComplexField(GRID, np.zeros(GRID.shape)))


def test_inner_product_of_normalized_field_is_one():
    f = normalize(random_field(GRID, 1))
    assert inner_product(f, f) == pytest.approx(1.0, abs=1e-12)


def test_plane_waves_orthogonal():
    g = Grid2D(32, 32, 0, 0, 1 / 32, 1 / 32)
    X, Y = g.mesh()
    a = ComplexField(g, np.exp(2j * np.pi * (3 * X + Y)))
    b = ComplexField(g, np.exp(2j * np.pi * (-2 * X + 5 * Y)))
    assert abs(inner_product(a, b)) < 1e-10


def test_inner_product_grid_mismatch():
    other = Grid2D(32, 24, -3.0, -2.0, 0.2, 0.3)
    with pytest.raises(FieldError):
        inner_product(random_field(GRID, 1), random_field(other, 2))


@given(st.integers(0, 2**31), st.integers(0, 2**31),
       st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False))
def test_inner_product_symmetry_and_linearity(s1, s2, c):
    f, g = random_field(GRID, s1), random_field(GRID, s2)
    assert abs(inner_product(f, g) - np.conj(inner_product(g, f))) < 1e-12 * GRID.nx * GRID.ny * 10
    cg = ComplexField(GRID, c * g.values)
    assert abs(inner_product(f, cg) - c * inner_product(f, g)) <= 1e-9 * (1 + abs(c) * abs(inner_product(f, g)))
    cf = ComplexField(GRID, c * f.values)
    assert abs(inner_product(cf, g) - np.conj(c) * inner_product(f, g)) <= 1e-9 * (1 + abs(c) * abs(inner_product(f, g)))


@given(st.integers(0, 2**31))
def test_parseval_and_round_trip(seed):
    f = normalize(random_field(GRID, seed))
    ft = to_momentum(f)
    assert abs(ft.norm_sq - f.norm_sq) < 1e-10
    back = from_momentum(ft, GRID)
    assert np.max(np.abs(back.values - f.values)) < 1e-10


def test_plane_wave_single_peak():
    g = Grid2D(32, 32, -1.0, 0.5, 0.1, 0.1)
    p = (g.dkx * 5, -g.dky * 3)
    X, Y = g.mesh()
    f = normalize(ComplexField(g, np.exp(1j * (p[0] * X + p[1] * Y))))
    n = momentum_density(f).values
    i, j = np.unravel_index(np.argmax(n), n.shape)
    assert g.kx[i] == pytest.approx(p[0]) and g.ky[j] == pytest.approx(p[1])
    assert n[i, j] * g.dkx * g.dky == pytest.approx(1.0, abs=1e-10)


def test_gaussian_momentum_distribution():
    alpha, p_i = 1.3, (2.0, -1.0)
    g = Grid2D(128, 128, -12.8, -12.8, 0.2, 0.2)
    psi = make_gaussian_packet(alpha, (0.3, -0.4), p_i, g)
    nk = momentum_density(psi)
    KX, KY = np.meshgrid(g.kx, g.ky, indexing="ij")
    exact = np.exp(-((KX - p_i[0]) ** 2 + (KY - p_i[1]) ** 2) / alpha ** 2) / (np.pi * alpha ** 2)
    assert np.max(np.abs(nk.values - exact)) < 1e-8
    # width alpha/sqrt(2) per axis
    w = nk.values * g.dkx * g.dky
    var_x = np.sum(w.sum(axis=1) * (g.kx - p_i[0]) ** 2)
    assert np.sqrt(var_x) == pytest.approx(alpha / np.sqrt(2), rel=1e-6)


def test_expectation_momentum_of_packet():
    g = Grid2D(128, 128, -12.8, -12.8, 0.2, 0.2)
    psi = make_gaussian_packet(1.0, (0, 0), (5.0, 0.0), g)
    px, py = expectation_momentum(psi)
    assert abs(px - 5) < 1e-6 and abs(py) < 1e-6


@given(st.integers(0, 2**31))
def test_real_field_has_no_current(seed):
    r = np.random.default_rng(seed)
    f = normalize(ComplexField(GRID, r.normal(size=GRID.shape)))
    px, py = expectation_momentum(f)
    assert abs(px) < 1e-10 and abs(py) < 1e-10


def test_fields_are_immutable():
    f = random_field(GRID, 3)
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0


def test_density_field_rejects_negative_values():
    with pytest.raises(FieldError):
        RealField(GRID, -np.ones(GRID.shape), is_density=True)
