"""Relative-fluctuation statistics, spatial correlations, phases and the hypersphere oracle.

Squared components of a random unit vector in C^N follow the exponential
law e^{-n}, those of a real unit vector follow Porter-Thomas; the
equilibrated dynamical speckle and the real eigenfunctions of a chaotic
billiard realize these two cases.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .fields import ComplexField, FieldError, RealField

SUPPORT_THRESHOLD = 1e-3
MIN_SAMPLES = 1000
FAMILIES = ("exponential", "gaussian", "porter-thomas")


class InsufficientSamplesError(ValueError):
    pass


def _values(f) -> np.ndarray:
    return np.asarray(f.values if hasattr(f, "values") else f, dtype=float)


def relative_fluctuations(n_t, n_inf, support_threshold: float = SUPPORT_THRESHOLD,
                          min_nodes: int = MIN_SAMPLES, mask: np.ndarray | None = None) -> np.ndarray:
    """u_i = n_t / n_inf over nodes where n_inf > support_threshold * max(n_inf)."""
    if not 0.0 < support_threshold < 1.0:
        raise ValueError("support_threshold must lie in (0, 1)")
    if hasattr(n_t, "grid") and hasattr(n_inf, "grid") and not n_t.grid.same_as(n_inf.grid):
        raise FieldError("fluctuation densities live on different grids")
    a, b = _values(n_t), _values(n_inf)
    if a.shape != b.shape:
        raise FieldError("fluctuation densities have different shapes")
    keep = b > support_threshold * b.max()
    if mask is not None:
        keep &= mask
    count = int(keep.sum())
    if count < min_nodes:
        raise InsufficientSamplesError(f"only {count} admissible nodes (need {min_nodes})")
    return a[keep] / b[keep]


# -- fits -------------------------------------------------------------------------

@dataclass
class FitReport:
    family: str
    parameters: dict
    ks_distance: float
    sample_count: int

    def as_dict(self) -> dict:
        d = {"family": self.family, "ks_distance": self.ks_distance, "sample_count": self.sample_count}
        d.update(self.parameters)
        return d

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.as_dict().items())


def _check_samples(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float).ravel()
    if len(x) < MIN_SAMPLES:
        raise InsufficientSamplesError(f"{len(x)} samples; need at least {MIN_SAMPLES}")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain non-finite values")
    return x


def fit_exponential(samples) -> FitReport:
    """Maximum-likelihood exponential fit (rate = 1/mean) with its KS distance."""
    x = _check_samples(samples)
    if np.any(x <= 0):
        raise ValueError("exponential fit needs strictly positive samples")
    mean = float(x.mean())
    ks = stats.kstest(x, stats.expon(scale=mean).cdf).statistic
    return FitReport("exponential", {"rate": 1.0 / mean, "mean": mean, "unit_mean_rate": 1.0},
                     float(ks), len(x))


def fit_gaussian(samples) -> FitReport:
    x = _check_samples(samples)
    mean, std = float(x.mean()), float(x.std())
    if not std > 0:
        raise ValueError("gaussian fit of constant samples is degenerate (std = 0)")
    ks = stats.kstest(x, stats.norm(loc=mean, scale=std).cdf).statistic
    return FitReport("gaussian", {"mean": mean, "std": std}, float(ks), len(x))


def fit_porter_thomas(samples) -> FitReport:
    """Porter-Thomas fit; the scale A = 1/mean is the maximum-likelihood estimate."""
    x = _check_samples(samples)
    if np.any(x < 0):
        raise ValueError("Porter-Thomas fit needs non-negative samples")
    mean = float(x.mean())
    A = 1.0 / mean
    ks = stats.kstest(x, stats.chi2(df=1, scale=mean).cdf).statistic
    return FitReport("porter-thomas", {"A": A, "mean": mean}, float(ks), len(x))


FITTERS = {"exponential": fit_exponential, "gaussian": fit_gaussian, "porter-thomas": fit_porter_thomas}


# -- closed forms -------------------------------------------------------------------

def closed_form_pdfs(kind: str, argument, scale: float = 1.0):
    """Exponential e^{-n/n0}/n0 (scale = n0) or Porter-Thomas sqrt(A/2 pi n) e^{-An/2} (scale = A)."""
    n = np.asarray(argument, dtype=float)
    if not scale > 0:
        raise ValueError("scale must be positive")
    if kind == "exponential":
        if np.any(n < 0):
            raise ValueError("exponential density is defined for n >= 0")
        return np.exp(-n / scale) / scale
    if kind == "porter-thomas":
        if np.any(n <= 0):
            raise ValueError("Porter-Thomas density is defined for n > 0")
        return np.sqrt(scale / (2.0 * np.pi * n)) * np.exp(-0.5 * scale * n)
    raise ValueError(f"unknown distribution {kind!r}")


def exponential_cdf(n):
    return stats.expon.cdf(n)


def porter_thomas_cdf(n):
    return stats.chi2.cdf(n, df=1)


def finite_n_pdf(gamma, N: int, kind: str = "complex"):
    """Exact density of gamma = |alpha_1|^2 for a uniform unit vector in C^N or R^N."""
    g = np.asarray(gamma, dtype=float)
    if kind == "complex":
        return (N - 1) * (1.0 - g) ** (N - 2)
    if kind == "real":
        return stats.beta.pdf(g, 0.5, 0.5 * (N - 1))
    raise ValueError(f"unknown field kind {kind!r}")


def quoted_finite_n_pdf(gamma, N: int):
    """The pre-limit form (N-1)(1-gamma)^{N-3/2} quoted for the complex case."""
    g = np.asarray(gamma, dtype=float)
    return (N - 1) * (1.0 - g) ** (N - 1.5)


# -- hypersphere oracle ---------------------------------------------------------------

@dataclass
class OracleReport:
    N: int
    field_kind: str
    samples: np.ndarray = field(repr=False)  # N |alpha_j|^2
    edges: np.ndarray = field(repr=False)
    density: np.ndarray = field(repr=False)
    ks_exponential: float
    ks_porter_thomas: float

    def gamma_histogram(self, bins: int = 20) -> tuple[np.ndarray, np.ndarray]:
        """Histogram density of the unscaled weights gamma = |alpha_j|^2 on [0, 1]."""
        dens, edges = np.histogram(self.samples / self.N, bins=bins, range=(0.0, 1.0), density=True)
        return edges, dens

    def finite_n_bin_errors(self, pdf, bins: int = 20) -> np.ndarray:
        """Relative per-bin deviation of the gamma histogram from the bin average of ``pdf``."""
        from scipy.integrate import quad
        edges, dens = self.gamma_histogram(bins)
        expected = np.array([quad(pdf, a, b)[0] / (b - a) for a, b in zip(edges[:-1], edges[1:])])
        return (dens - expected) / expected


def hypersphere_oracle(N: int, field_kind: str, draws: int, seed=None, bins: int = 60,
                       chunk: int = 2_000_000) -> OracleReport:
    """Scaled weights N|alpha_j|^2 of uniform random unit vectors.

    Unit vectors are Gaussian vectors divided by their norm, which is uniform
    on the (2N-1)-sphere (complex) or the (N-1)-sphere (real).  ``draws``
    counts component samples: ceil(draws / N) vectors are drawn and all their
    components are used, truncated to ``draws`` values.
    """
    if field_kind not in ("complex", "real"):
        raise ValueError("field_kind must be 'complex' or 'real'")
    if N < 1 or draws < 1:
        raise ValueError("N and draws must be positive")
    rng = np.random.default_rng(seed)
    n_vec = -(-draws // N)
    per_chunk = max(1, chunk // N)
    parts = []
    done = 0
    while done < n_vec:
        m = min(per_chunk, n_vec - done)
        if field_kind == "complex":
            z = rng.standard_normal((m, N)) + 1j * rng.standard_normal((m, N))
        else:
            z = rng.standard_normal((m, N))
        w = np.abs(z) ** 2
        w /= w.sum(axis=1, keepdims=True)
        parts.append((N * w).ravel())
        done += m
    samples = np.concatenate(parts)[:draws]
    dens, edges = np.histogram(samples, bins=bins, range=(0.0, max(10.0, float(np.quantile(samples, 0.999)))),
                               density=True)
    ks_e = stats.kstest(samples, exponential_cdf).statistic
    ks_pt = stats.kstest(samples, porter_thomas_cdf).statistic
    return OracleReport(N, field_kind, samples, edges, dens, float(ks_e), float(ks_pt))


# -- spatial structure -------------------------------------------------------------------

@dataclass
class CorrelationTable:
    r: np.ndarray
    C: np.ndarray
    pairs: np.ndarray

    def decay_length(self, level: float = 0.1) -> float:
        below = np.nonzero(self.C < level)[0]
        return float(self.r[below[0]]) if len(below) else math.inf


def spatial_correlation(n_field: RealField, region_mask: np.ndarray, r_max: float | None = None,
                        min_nodes: int = 100) -> CorrelationTable:
    """Radially averaged C(r) = <dn(0) dn(r)> / <dn^2> with dn = n - mean(n) in the mask.

    Averages run over all ordered node pairs inside the mask; the zero-lag
    value is exactly one.
    """
    g = n_field.grid
    mask = np.asarray(region_mask, dtype=bool)
    if mask.shape != g.shape:
        raise FieldError("mask shape does not match the field")
    if mask.sum() < min_nodes:
        raise InsufficientSamplesError(f"mask holds only {int(mask.sum())} nodes (need {min_nodes})")
    vals = np.asarray(n_field.values, dtype=float)
    dn = np.where(mask, vals - vals[mask].mean(), 0.0)
    var = float(np.mean(dn[mask] ** 2))
    if not var > 1e-300:
        raise ValueError("field is constant in the mask: correlation undefined")
    shape = (2 * g.nx, 2 * g.ny)
    fm = np.fft.rfft2(mask.astype(float), shape)
    fd = np.fft.rfft2(dn, shape)
    num = np.fft.irfft2(np.abs(fd) ** 2, shape)
    cnt = np.fft.irfft2(np.abs(fm) ** 2, shape)
    lx = np.fft.fftfreq(shape[0], d=1.0 / shape[0]) * g.dx
    ly = np.fft.fftfreq(shape[1], d=1.0 / shape[1]) * g.dy
    R = np.hypot(lx[:, None], ly[None, :])
    cnt = np.rint(cnt)
    if r_max is None:
        r_max = 0.25 * min(g.nx * g.dx, g.ny * g.dy)
    step = min(g.dx, g.dy)
    edges = np.concatenate([[0.0, 0.5 * step], np.arange(1.5 * step, r_max + step, step)])
    sel = (cnt > 0.5) & (R < edges[-1])
    which = np.digitize(R[sel], edges) - 1
    num_b = np.bincount(which, weights=num[sel], minlength=len(edges) - 1)
    cnt_b = np.bincount(which, weights=cnt[sel], minlength=len(edges) - 1)
    r_b = np.bincount(which, weights=R[sel] * cnt[sel], minlength=len(edges) - 1)
    ok = cnt_b > 0
    C = num_b[ok] / cnt_b[ok] / var
    r = r_b[ok] / cnt_b[ok]
    C[0] = 1.0 if r[0] == 0 else C[0]
    return CorrelationTable(r, C, cnt_b[ok])


def phase_map(psi: ComplexField, node_threshold: float = 1e-12) -> RealField:
    """arg psi in (-pi, pi]; nodes (|psi| <= threshold * max|psi|) are NaN."""
    v = psi.values
    ph = np.angle(v)
    ph = np.where(ph <= -np.pi, np.pi, ph)
    amp = np.abs(v)
    ph = np.where(amp > node_threshold * amp.max(), ph, np.nan)
    return RealField(psi.grid, ph)
