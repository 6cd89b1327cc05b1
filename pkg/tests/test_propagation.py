import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eqlab.fields import ComplexField, Grid2D, expectation_momentum
from eqlab.models import HenonHeilesParams, RippleBilliardParams
from eqlab.propagation import (
    InsufficientCoverageError, billiard_cross_check, NumericalToleranceError, PacketFitError, PropagationSchedule,
    SplitStepPropagator, eigenbasis_evolve, eigenbasis_run, energy_moments, hh_grid_potential,
    hh_packet_energy, make_gaussian_packet, split_step_evolve,
)
from eqlab.spectrum import SECTORS, SpectralDecomposition, expand_state, solve_eigenstates


def free_gaussian(grid, alpha, r_i, p_i, t):
    """Closed-form packet under H = p^2."""
    X, Y = grid.mesh()
    d = 1.0 + 2j * alpha ** 2 * t
    out = alpha / math.sqrt(math.pi) / d
    for R, r0, p in ((X, r_i[0], p_i[0]), (Y, r_i[1], p_i[1])):
        out = out * np.exp(-0.5 * alpha ** 2 * (R - r0 - 2 * p * t) ** 2 / d + 1j * p * R - 1j * p * p * t)
    return out


def test_schedule_invariants():
    s = PropagationSchedule(0.01, 1.0, (0.0, 0.5, 1.0), 0.1)
    assert s.n_steps == 100 and s.snapshot_steps() == [0, 50, 100] and s.sample_stride() == 10
    with pytest.raises(ValueError):
        PropagationSchedule(0.01, 1.0, (0.5, 0.2))
    with pytest.raises(ValueError):
        PropagationSchedule(0.01, 1.0, (0.503,))
    with pytest.raises(ValueError):
        PropagationSchedule(0.01, 1.0, (1.5,))
    with pytest.raises(ValueError):
        PropagationSchedule(0.0, 1.0)
    b = PropagationSchedule.build(0.01, 1.0001, (0.2049, 0.5), 0.0333)
    assert b.snapshot_times == pytest.approx((0.2, 0.5)) and b.t_end == pytest.approx(1.0)


@given(st.floats(0.6, 2.0), st.floats(-3, 3), st.floats(-3, 3), st.floats(-4, 4), st.floats(-4, 4))
def test_packet_moments(alpha, x, y, px, py):
    g = Grid2D(96, 96, -12.0, -12.0, 0.25, 0.25)
    psi = make_gaussian_packet(alpha, (x, y), (px, py), g)
    assert abs(psi.norm_sq - 1) < 1e-8
    X, Y = g.mesh()
    d = np.abs(psi.values) ** 2 * g.cell_area
    assert abs(np.sum(d * X) - x) < 1e-6 and abs(np.sum(d * Y) - y) < 1e-6
    mx, my = expectation_momentum(psi)
    assert abs(mx - px) < 1e-6 and abs(my - py) < 1e-6


def test_packet_must_fit():
    g = Grid2D(64, 64, -8.0, -8.0, 0.25, 0.25)
    with pytest.raises(PacketFitError, match="does not fit"):
        make_gaussian_packet(1.0, (5.0, 0.0), (0, 0), g)
    rb = RippleBilliardParams(6.0, 15.0)
    from functools import partial
    from eqlab.models import billiard_contains
    big = Grid2D(256, 256, -25.0, -5.0, 0.2, 0.2)
    with pytest.raises(PacketFitError, match="wall"):
        make_gaussian_packet(1.0, (0.0, 3.0), (0, 0), big, domain=partial(billiard_contains, params=rb))


def test_hh_packet_energy_matches_grid_moments():
    hp = HenonHeilesParams()
    alpha = 1.0 / (3 * hp.r_c / 40)
    r_i = (0.3 * hp.r_c, 0.0)
    ang = math.radians(10)
    p = math.sqrt(0.7) * hp.p_0
    p_i = (p * math.cos(ang), p * math.sin(ang))
    g = Grid2D(256, 256, -25.0, -25.0, 50 / 256, 50 / 256)
    V = hh_grid_potential(g, hp, box_half_width=24.0, wall_cells=0)
    E, _ = energy_moments(make_gaussian_packet(alpha, r_i, p_i, g), V)
    assert E == pytest.approx(hh_packet_energy(alpha, r_i, p_i, hp), rel=1e-8)
    # centre energy 0.97 V_c plus zero-point terms alpha^2 and U/(2 alpha^2)
    centre = 0.7 * hp.V_c + float(0.5 * (r_i[0] ** 2))
    assert centre == pytest.approx(0.97 * hp.V_c, rel=1e-12)
    assert E == pytest.approx(centre + alpha ** 2 + 0.5 / alpha ** 2, rel=1e-12)


def test_free_propagation_matches_closed_form():
    g = Grid2D(256, 256, -20.0, -20.0, 40 / 256, 40 / 256)
    alpha, r_i, p_i = 1.0, (-3.0, 1.0), (1.5, -0.5)
    psi = make_gaussian_packet(alpha, r_i, p_i, g)
    res = split_step_evolve(psi, None, PropagationSchedule(0.01, 1.0, (1.0,)))
    exact = free_gaussian(g, alpha, r_i, p_i, 1.0)
    err = math.sqrt(np.sum(np.abs(res.final.values - exact) ** 2) * g.cell_area)
    assert err < 1e-6


def test_harmonic_coherent_state_follows_ellipse():
    # H = p^2 + (x^2 + y^2)/2: omega = sqrt(2), coherent width alpha^2 = 1/sqrt(2)
    w = math.sqrt(2.0)
    alpha = 2 ** -0.25
    g = Grid2D(128, 128, -16.0, -16.0, 0.25, 0.25)
    X, Y = g.mesh()
    V = 0.5 * (X ** 2 + Y ** 2)
    x0, y0, px0, py0 = 2.0, -1.0, 0.5, 1.2
    psi = make_gaussian_packet(alpha, (x0, y0), (px0, py0), g)
    times = [0.25 * k for k in range(1, 9)]
    res = split_step_evolve(psi, V, PropagationSchedule(0.001, 2.0, tuple(times)))
    for t, f in res.snapshots:
        d = np.abs(f.values) ** 2 * g.cell_area
        xe = x0 * math.cos(w * t) + 2 * px0 / w * math.sin(w * t)
        ye = y0 * math.cos(w * t) + 2 * py0 / w * math.sin(w * t)
        pxe = px0 * math.cos(w * t) - 0.5 * w * x0 * math.sin(w * t)
        pye = py0 * math.cos(w * t) - 0.5 * w * y0 * math.sin(w * t)
        px, py = expectation_momentum(f)
        assert abs(np.sum(d * X) - xe) < 1e-4 and abs(np.sum(d * Y) - ye) < 1e-4
        assert abs(px - pxe) < 1e-4 and abs(py - pye) < 1e-4


def test_norm_energy_and_time_reversal():
    hp = HenonHeilesParams()
    g = Grid2D(128, 128, -50.0, -50.0, 100 / 128, 100 / 128)
    V = hh_grid_potential(g, hp)
    psi = make_gaussian_packet(0.4, (5.0, 0.0), (2.0, 1.0), g)
    fwd = SplitStepPropagator(g, V, 0.01)
    out = fwd.step(psi.values, 200)
    assert abs(np.sum(np.abs(out) ** 2) * g.cell_area - 1) < 1e-10
    back = SplitStepPropagator(g, V, -0.01).step(out, 200)
    assert np.sqrt(np.sum(np.abs(back - psi.values) ** 2) * g.cell_area) < 1e-8


def test_norm_drift_aborts():
    g = Grid2D(64, 64, -8.0, -8.0, 0.25, 0.25)
    psi = make_gaussian_packet(1.0, (0, 0), (0, 0), g)
    V = np.full(g.shape, 0.0) - 0.5j  # non-Hermitian: loses norm
    with pytest.raises(NumericalToleranceError, match="norm drifted"):
        split_step_evolve(psi, V.real, PropagationSchedule(0.01, 0.1), norm_tolerance=-1.0)


def test_leakage_warning():
    g = Grid2D(64, 64, -8.0, -8.0, 0.25, 0.25)
    psi = make_gaussian_packet(1.5, (0, 0), (8.0, 0), g)
    with pytest.warns(RuntimeWarning, match="leakage"):
        res = split_step_evolve(psi, None, PropagationSchedule(0.01, 1.0))
    assert res.leakage


def test_observable_series_columns():
    g = Grid2D(64, 64, -8.0, -8.0, 0.25, 0.25)
    psi = make_gaussian_packet(1.0, (0, 0), (1.0, 0), g)
    res = split_step_evolve(psi, None, PropagationSchedule(0.01, 0.2, (), 0.05))
    a = res.observables.as_array()
    assert a.shape == (5, 6)
    assert np.allclose(a[:, 0], [0, 0.05, 0.1, 0.15, 0.2])
    assert np.allclose(a[:, 1], 1.0, atol=1e-9)  # free momentum is conserved
    assert np.all(np.isnan(a[:, 3]))


@pytest.fixture(scope="module")
def small_billiard():
    params = RippleBilliardParams(6.0, 15.0)
    basis = solve_eigenstates(params, 100, 60, sectors=SECTORS)
    psi = make_gaussian_packet(0.6, (0.0, 15.0), (0.5, 0.25), basis.grid)
    return basis, psi, expand_state(psi, basis)


def test_eigenbasis_reconstructs_initial_state(small_billiard):
    basis, psi, dec = small_billiard
    assert dec.captured_norm > 0.999
    f0 = eigenbasis_evolve(dec, 0.0)
    err2 = np.sum(np.abs(f0.values - psi.values) ** 2) * basis.grid.cell_area
    assert err2 <= 1 - dec.captured_norm + 1e-10


def test_eigenbasis_is_unitary(small_billiard):
    basis, psi, dec = small_billiard
    res = eigenbasis_run(dec, [0.0, 3.0, 17.0, 101.0])
    assert np.allclose(res.observables.column("norm"), dec.captured_norm, atol=1e-10)
    assert np.ptp(res.observables.column("energy")) < 1e-12 * dec.mean_energy()


def test_single_eigenstate_is_stationary(small_billiard):
    basis, _, _ = small_billiard
    c = np.zeros(len(basis), complex)
    c[11] = 1.0
    dec = SpectralDecomposition(basis, c, 1.0)
    d0 = np.abs(eigenbasis_evolve(dec, 0.0).values) ** 2
    d1 = np.abs(eigenbasis_evolve(dec, 37.3).values) ** 2
    assert np.max(np.abs(d1 - d0)) < 1e-12 * d0.max()


def test_insufficient_coverage(small_billiard):
    basis, _, dec = small_billiard
    c = dec.c.copy()
    c[: len(c) // 2] = 0.0
    thin = SpectralDecomposition(basis, c, float(np.sum(np.abs(c) ** 2)))
    with pytest.raises(InsufficientCoverageError, match="captures only"):
        eigenbasis_evolve(thin, 1.0)


def test_split_step_agrees_with_eigenbasis(small_billiard):
    # one wall bounce; the full-period check lives in the acceptance suite
    basis, psi, dec = small_billiard
    report = billiard_cross_check(basis, psi, t=12.0, wall_height=200.0)
    assert report.captured_norm > 0.999
    assert abs(report.split_step_norm - 1.0) < 1e-8
    assert report.l1 < 0.02


def test_cross_check_rejects_low_wall(small_billiard):
    basis, psi, _ = small_billiard
    with pytest.raises(ValueError):
        billiard_cross_check(basis, psi, t=1.0, wall_height=1.0)
