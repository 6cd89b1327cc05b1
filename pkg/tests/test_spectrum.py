import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eqlab.fields import ComplexField
from eqlab.models import RippleBilliardParams
from eqlab.propagation import make_gaussian_packet
from eqlab.spectrum import (
    EVEN, ODD, SECTORS, BilliardLattice, ResolutionError, TooFewLevelsError, degenerate_gap_scan,
    expand_state, goe_spectrum, level_spacing_statistics, odd_y_weight, sector_weyl_count,
    solve_eigenstates, unfold_spectrum, weyl_count,
)

RIPPLE = RippleBilliardParams(6.0, 15.0)
SQUARE = RippleBilliardParams(0.0, 15.0)


@pytest.fixture(scope="module")
def square_basis():
    return solve_eigenstates(SQUARE, 12, 40, sectors=SECTORS)


@pytest.fixture(scope="module")
def ripple_basis():
    return solve_eigenstates(RIPPLE, 60, 50, sectors=SECTORS)


def square_levels(count):
    n = np.arange(1, 40)
    e = ((np.pi / 30.0) ** 2 * (n[:, None] ** 2 + n[None, :] ** 2)).ravel()
    return np.sort(e)[:count]


def test_square_first_twenty_levels(square_basis):
    assert np.all(np.diff(square_basis.energies) >= 0)
    err = np.abs(square_basis.energies[:20] / square_levels(20) - 1)
    assert err.max() < 5e-3


def test_orthonormal_basis(ripple_basis):
    assert ripple_basis.gram_deviation() < 1e-8


def test_parity_labels_by_reflection(ripple_basis):
    for k in range(0, len(ripple_basis), 7):
        phi = ripple_basis.eigenfunction(k)
        px, py = ripple_basis.sector_of(k)
        norm = np.linalg.norm(phi)
        assert np.linalg.norm(phi[::-1, :] - px * phi) / norm < 1e-6
        assert np.linalg.norm(phi[:, ::-1] - py * phi) / norm < 1e-6


def test_eigen_equation_residuals(ripple_basis):
    assert np.max(ripple_basis.residuals) < 1e-8


def test_refinement_changes_levels_little():
    coarse = solve_eigenstates(RIPPLE, 15, 40, sectors=[(EVEN, EVEN)])
    fine = solve_eigenstates(RIPPLE, 15, 80, sectors=[(EVEN, EVEN)])
    assert np.max(np.abs(coarse.energies / fine.energies - 1)) < 2e-3


def test_resolution_error_names_max_count():
    with pytest.raises(ResolutionError) as info:
        solve_eigenstates(RIPPLE, 400, 30, sectors=[(EVEN, EVEN)])
    assert 0 < info.value.max_count < 400
    assert str(info.value.max_count) in str(info.value)


def test_expand_eigenstate_is_a_unit_vector(ripple_basis):
    k = 7
    phi = ripple_basis.eigenfunction(k)
    psi = ComplexField(ripple_basis.grid, phi)
    dec = expand_state(psi, ripple_basis)
    assert abs(dec.c[k] - 1) < 1e-8
    others = np.delete(np.abs(dec.c), k)
    assert others.max() < 1e-8
    assert dec.captured_norm == pytest.approx(1.0, abs=1e-8)


def test_symmetric_packet_has_no_odd_y_weight(ripple_basis):
    lat = ripple_basis.lattice
    psi = make_gaussian_packet(0.8, (0.0, 15.0), (0.6, 0.0), lat.full_grid)
    assert odd_y_weight(psi) < 1e-12
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        dec = expand_state(psi, ripple_basis)
    odd = ripple_basis.parity_y == ODD
    assert np.sum(dec.weights[odd]) < 1e-6
    assert dec.captured_norm <= 1 + 1e-8


def test_low_capture_warns(ripple_basis):
    lat = ripple_basis.lattice
    psi = make_gaussian_packet(1.0, (0.0, 15.0), (4.0, 0.0), lat.full_grid)
    with pytest.warns(RuntimeWarning, match="captures only"):
        dec = expand_state(psi, ripple_basis)
    assert dec.warning is not None and dec.captured_norm < 0.999


def test_project_synthesize_round_trip(ripple_basis):
    r = np.random.default_rng(3)
    c = r.normal(size=len(ripple_basis)) + 1j * r.normal(size=len(ripple_basis))
    back = ripple_basis.project(ripple_basis.synthesize(c))
    assert np.max(np.abs(back - c)) < 1e-8


def test_lattice_fold_unfold_inverse():
    lat = BilliardLattice(RIPPLE, 20)
    r = np.random.default_rng(1)
    q = r.normal(size=lat.n_inside)
    for s in SECTORS:
        assert np.allclose(lat.fold(lat.unfold(q, s), s), 4 * q)


def test_sector_operators_are_symmetric():
    lat = BilliardLattice(RIPPLE, 20)
    for s in SECTORS:
        A = lat.operator(s)
        assert abs(A - A.T).max() < 1e-12


def test_weyl_sector_counts_add_up():
    E = np.linspace(1, 50, 7)
    total = sum(sector_weyl_count(E, RIPPLE, s) for s in SECTORS)
    assert np.allclose(total, weyl_count(E, RIPPLE))


def test_dispersion_correction_matches_plane_wave_average():
    lat = BilliardLattice(RIPPLE, 30)
    h = lat.h
    k = 0.9
    theta = np.linspace(0, 2 * np.pi, 4001)[:-1]
    lam = np.mean((4 - 2 * np.cos(k * h * np.cos(theta)) - 2 * np.cos(k * h * np.sin(theta))) / h ** 2)
    raw_err = abs(lam / k ** 2 - 1)
    corrected_err = abs(lat.dispersion_corrected(lam) / k ** 2 - 1)
    # leading h^2 error removed; what is left is the (kh)^4 term
    assert raw_err > 0.01
    assert corrected_err < raw_err / 30


def test_goe_spacings_follow_wigner():
    r = np.random.default_rng(5)
    s = []
    for _ in range(40):
        e = goe_spectrum(200, r)
        mid = e[50:150]  # bulk, where the semicircle unfolding is flat enough
        u = unfold_spectrum(mid, 3)
        s.append(np.diff(u))
    from scipy import stats
    from eqlab.spectrum import wigner_cdf
    assert stats.kstest(np.concatenate(s), wigner_cdf).statistic < 0.05


def test_goe_sector_closer_to_wigner():
    r = np.random.default_rng(7)
    st_ = level_spacing_statistics(goe_spectrum(600, r)[100:500])
    assert st_.ks_wigner < 0.05 and st_.closer_to == "wigner"


def test_poisson_levels_closer_to_poisson():
    r = np.random.default_rng(8)
    st_ = level_spacing_statistics(np.cumsum(r.exponential(size=600)))
    assert st_.closer_to == "poisson"


def test_too_few_levels():
    with pytest.raises(TooFewLevelsError):
        level_spacing_statistics(np.arange(50.0))


def test_gap_scan_ladder_and_random():
    d = 40
    n = degenerate_gap_scan(np.arange(d, dtype=float), tol=1e-9)
    # every gap value g occurs d - g times; all but the gap d - 1 repeat
    assert n == d * (d - 1) // 2 - 1
    r = np.random.default_rng(2)
    assert degenerate_gap_scan(r.uniform(0, 100, 300), tol=0.0) == 0


def test_gap_scan_ignores_degenerate_levels():
    # two-fold degenerate level: E_k - E_l repeats only trivially
    assert degenerate_gap_scan([0.0, 1.0, 1.0, 3.7], tol=1e-12) == 0


def test_gap_scan_size_limit():
    with pytest.raises(ValueError, match="truncate"):
        degenerate_gap_scan(np.arange(2001.0))


def test_ripple_gap_scan_near_zero(ripple_basis):
    e = ripple_basis.sector_energies((EVEN, EVEN))
    assert degenerate_gap_scan(e, tol=1e-9 * e.max()) <= 2


@given(st.lists(st.floats(0, 1000, allow_nan=False), min_size=2, max_size=60, unique=True))
def test_gap_scan_is_nonnegative_and_bounded(levels):
    d = len(levels)
    n = degenerate_gap_scan(levels, tol=0.0)
    assert 0 <= n <= d * (d - 1) // 2
