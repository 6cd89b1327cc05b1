import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special, stats

from eqlab.fields import ComplexField, FieldError, Grid2D, RealField
from eqlab.fluctuations import (
    InsufficientSamplesError, closed_form_pdfs, finite_n_pdf, fit_exponential, fit_gaussian,
    fit_porter_thomas, hypersphere_oracle, phase_map, quoted_finite_n_pdf, relative_fluctuations,
    spatial_correlation,
)


def test_relative_fluctuations_support(rng):
    g = Grid2D(50, 50, 0, 0, 1, 1)
    n_inf = np.ones(g.shape)
    n_inf[:10] = 1e-5
    n_t = rng.exponential(size=g.shape)
    u = relative_fluctuations(RealField(g, n_t), RealField(g, n_inf))
    assert u.size == 40 * 50
    assert np.array_equal(u, n_t[10:].ravel())
    with pytest.raises(InsufficientSamplesError):
        relative_fluctuations(n_t, n_inf, min_nodes=5000)
    with pytest.raises(ValueError):
        relative_fluctuations(n_t, n_inf, support_threshold=1.5)
    with pytest.raises(FieldError):
        relative_fluctuations(n_t, n_inf[:10])


def test_fit_families_pick_the_right_law(rng):
    e = rng.exponential(2.0, 20000)
    pt = rng.chisquare(1, 20000) * 0.5
    fe = fit_exponential(e)
    assert fe.parameters["rate"] == pytest.approx(0.5, rel=0.03)
    assert fe.ks_distance < 0.015
    assert fit_porter_thomas(e).ks_distance > 0.1
    fp = fit_porter_thomas(pt)
    assert fp.parameters["A"] == pytest.approx(2.0, rel=0.03)
    assert fp.ks_distance < 0.015
    assert fit_exponential(pt).ks_distance > 0.1
    fg = fit_gaussian(rng.normal(1.0, 0.3, 20000))
    assert fg.parameters["std"] == pytest.approx(0.3, rel=0.03) and fg.ks_distance < 0.015
    assert "ks_distance = " in fe.to_text()


def test_fit_input_checks():
    with pytest.raises(InsufficientSamplesError):
        fit_exponential(np.ones(10))
    with pytest.raises(ValueError):
        fit_gaussian(np.ones(2000))
    with pytest.raises(ValueError):
        fit_exponential(np.r_[np.ones(2000), -1.0])
    with pytest.raises(ValueError):
        fit_porter_thomas(np.r_[np.ones(2000), np.nan])


@given(st.floats(0.2, 5.0))
def test_closed_forms_are_normalized(scale):
    tot_e = integrate.quad(lambda n: closed_form_pdfs("exponential", n, scale), 0, np.inf)[0]
    tot_pt = integrate.quad(lambda n: closed_form_pdfs("porter-thomas", n, scale), 0, np.inf)[0]
    assert tot_e == pytest.approx(1, rel=1e-8)
    assert tot_pt == pytest.approx(1, rel=1e-6)


def test_closed_form_domains():
    with pytest.raises(ValueError):
        closed_form_pdfs("porter-thomas", [0.0])
    with pytest.raises(ValueError):
        closed_form_pdfs("exponential", [-1.0])
    with pytest.raises(ValueError):
        closed_form_pdfs("lognormal", [1.0])
    assert closed_form_pdfs("porter-thomas", 1.0) == pytest.approx(stats.chi2.pdf(1.0, 1))


@given(st.integers(2, 60), st.sampled_from(["complex", "real"]))
def test_finite_n_pdf_normalized(N, kind):
    tot = integrate.quad(lambda g: finite_n_pdf(g, N, kind), 0, 1, limit=200)[0]
    assert tot == pytest.approx(1, rel=1e-6)


def test_quoted_form_is_not_a_density():
    # integral is (N - 1) / (N - 1/2), short of one for any finite N
    for N in (2, 5, 50):
        tot = integrate.quad(lambda g: quoted_finite_n_pdf(g, N), 0, 1)[0]
        assert tot == pytest.approx((N - 1) / (N - 0.5), rel=1e-8)


def test_oracle_small_n_matches_exact_law():
    rep = hypersphere_oracle(2, "complex", 200000, seed=1)
    assert rep.samples.size == 200000
    err = rep.finite_n_bin_errors(lambda g: finite_n_pdf(g, 2))
    assert np.max(np.abs(err)) < 0.05
    real = hypersphere_oracle(3, "real", 300000, seed=2)
    assert np.max(np.abs(real.finite_n_bin_errors(lambda g: finite_n_pdf(g, 3, "real")))) < 0.05


def test_oracle_large_n_limits():
    c = hypersphere_oracle(2000, "complex", 200000, seed=3)
    r = hypersphere_oracle(2000, "real", 200000, seed=3)
    assert c.ks_exponential < 0.01 and c.ks_porter_thomas > 0.1
    assert r.ks_porter_thomas < 0.01 and r.ks_exponential > 0.1
    assert np.mean(c.samples) == pytest.approx(1.0, rel=1e-12)


def test_oracle_is_seeded():
    a = hypersphere_oracle(10, "complex", 1000, seed=7)
    b = hypersphere_oracle(10, "complex", 1000, seed=7)
    assert np.array_equal(a.samples, b.samples)
    with pytest.raises(ValueError):
        hypersphere_oracle(10, "quaternion", 10)


def test_plane_wave_correlation_is_bessel():
    g = Grid2D(160, 160, 0, 0, 0.25, 0.25)
    X, _ = g.mesh()
    k = 1.7
    n = RealField(g, 1 + np.cos(k * X))
    table = spatial_correlation(n, np.ones(g.shape, dtype=bool), r_max=6.0)
    assert table.C[0] == 1.0
    ref = special.j0(k * table.r)
    assert np.max(np.abs(table.C - ref)[table.r > 0.5]) < 0.08


def test_smoothed_noise_correlation_length(rng):
    g = Grid2D(256, 256, 0, 0, 0.25, 0.25)
    s = 1.0
    white = rng.standard_normal(g.shape)
    kx = 2 * np.pi * np.fft.fftfreq(g.nx, g.dx)
    K2 = kx[:, None] ** 2 + kx[None, :] ** 2
    smooth = np.fft.ifft2(np.fft.fft2(white) * np.exp(-0.5 * s * s * K2)).real
    table = spatial_correlation(RealField(g, smooth), np.ones(g.shape, dtype=bool), r_max=8.0)
    # Gaussian kernel of width s gives C(r) = exp(-r^2 / 4 s^2)
    assert table.decay_length() == pytest.approx(2 * s * math.sqrt(math.log(10)), abs=0.3)


def test_correlation_input_checks():
    g = Grid2D(20, 20, 0, 0, 1, 1)
    f = RealField(g, np.ones(g.shape))
    with pytest.raises(InsufficientSamplesError):
        spatial_correlation(f, np.zeros(g.shape, dtype=bool))
    with pytest.raises(ValueError):
        spatial_correlation(f, np.ones(g.shape, dtype=bool))
    with pytest.raises(FieldError):
        spatial_correlation(f, np.ones((3, 3), dtype=bool))


def test_phase_map_nodes_and_range(rng):
    g = Grid2D(16, 16, 0, 0, 1, 1)
    v = rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)
    v[3, 3] = 0
    v[4, 4] = -1.0
    ph = phase_map(ComplexField(g, v)).values
    assert np.isnan(ph[3, 3]) and ph[4, 4] == pytest.approx(np.pi)
    finite = ph[np.isfinite(ph)]
    assert np.all((finite > -np.pi) & (finite <= np.pi))
