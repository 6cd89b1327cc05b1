"""Diagonal-ensemble quantities, the ergodic inequality, entropy and marginals."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .fields import ComplexField, FieldError, Grid2D, RealField, momentum_density

ENTROPY_THRESHOLD = 1e-6
MIN_WINDOW_SNAPSHOTS = 50
MIN_WINDOW_SAMPLES = 400


# -- coefficients ---------------------------------------------------------------

def normalized_weights(c) -> np.ndarray:
    c = np.asarray(c)
    if c.size == 0:
        raise ValueError("empty coefficient list")
    w = np.abs(c) ** 2
    total = w.sum()
    if not total > 0:
        raise ValueError("coefficients have zero total weight")
    return w / total


def effective_dimension(c) -> float:
    """d_eff = 1 / sum_k |c_k|^4 after renormalizing sum |c_k|^2 to one."""
    w = normalized_weights(c)
    return float(1.0 / np.sum(w * w))


# -- diagonal ensemble ------------------------------------------------------------

_POSITION_OBSERVABLES = {
    "x": lambda X, Y: X,
    "y": lambda X, Y: Y,
    "x2": lambda X, Y: X * X,
    "y2": lambda X, Y: Y * Y,
}
MOMENTUM_OBSERVABLES = ("px", "py")
VECTOR_OBSERVABLES = {"P": ("px", "py")}


class UnsupportedObservableError(ValueError):
    pass


@dataclass
class DiagonalEnsemble:
    """rho_inf = sum_k w_k |phi_k><phi_k| for a billiard spectral decomposition."""

    decomposition: object

    @property
    def weights(self) -> np.ndarray:
        return self.decomposition.weights

    @property
    def basis(self):
        return self.decomposition.basis

    def density(self) -> RealField:
        """n_inf(r) = sum_k |c_k|^2 phi_k(r)^2, integrating to the captured norm."""
        return RealField(self.basis.grid, self.basis.density_of(self.weights), is_density=True)

    def momentum_density(self, indices: Sequence[int] | None = None) -> RealField:
        """n_inf(p) = sum_k |c_k|^2 |phi~_k(p)|^2 over the given (default: all) states."""
        w = self.weights
        if indices is None:
            indices = np.nonzero(w > 1e-12 * w.max())[0]
        acc = None
        for k in indices:
            nk = momentum_density(ComplexField(self.basis.grid, self.basis.eigenfunction(int(k))))
            acc = nk.values * w[k] if acc is None else acc + nk.values * w[k]
        return RealField(nk.grid, acc, is_density=True)


def _momentum_diagonal(phi: np.ndarray, grid: Grid2D, axis: int) -> float:
    # <phi| -i d/dx |phi> with an antisymmetric difference: -i times a real sum
    d = (np.roll(phi, -1, axis=axis) - np.roll(phi, 1, axis=axis)) / (2.0 * (grid.dx if axis == 0 else grid.dy))
    value = -1j * np.sum(np.conj(phi) * d) * grid.cell_area
    return float(value.real)


def diagonal_expectation(A_spec: str, decomposition) -> float:
    """tr(A rho_inf) = sum_k |c_k|^2 <phi_k|A|phi_k> (weights renormalized to one).

    Supported: 'px', 'py' and the position moments 'x', 'y', 'x2', 'y2'.
    """
    w = normalized_weights(decomposition.c)
    basis = decomposition.basis
    if A_spec in MOMENTUM_OBSERVABLES:
        axis = 0 if A_spec == "px" else 1
        total = 0.0
        for k in np.nonzero(w)[0]:
            total += w[k] * _momentum_diagonal(basis.eigenfunction(int(k)), basis.grid, axis)
        return float(total)
    if A_spec in _POSITION_OBSERVABLES:
        X, Y = basis.grid.mesh()
        n = basis.density_of(w)
        return float(np.sum(n * _POSITION_OBSERVABLES[A_spec](X, Y)) * basis.grid.cell_area)
    raise UnsupportedObservableError(
        f"observable {A_spec!r} is not built in; choose from "
        f"{sorted(list(_POSITION_OBSERVABLES) + list(MOMENTUM_OBSERVABLES))}")


# -- ergodic inequality -------------------------------------------------------------

def integrated_autocorrelation(x) -> float:
    """1 + 2 sum rho_k, truncated at the first non-positive autocorrelation."""
    x = np.asarray(x, dtype=float)
    x = x - x.mean()
    n = len(x)
    var = np.dot(x, x) / n
    if n < 3 or var == 0:
        return 1.0
    spec = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(np.abs(spec) ** 2)[:n] / (n * var)
    tau = 1.0
    for k in range(1, n // 2):
        if acf[k] <= 0:
            break
        tau += 2.0 * acf[k]
    return float(tau)


def standard_error(x) -> float:
    """Standard error of the mean of a correlated series (effective sample size n/tau)."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 2:
        return float("nan")
    n_eff = max(1.0, n / integrated_autocorrelation(x))
    return float(np.std(x, ddof=1) / math.sqrt(n_eff))


@dataclass
class ErgodicReport:
    observable: str
    sigma_sq: float
    inv_deff: float
    time_mean: tuple
    ensemble_mean: tuple
    norm_A_sq: float
    samples: int
    standard_errors: tuple = ()

    @property
    def d_eff(self) -> float:
        return 1.0 / self.inv_deff

    @property
    def margin(self) -> float:
        return self.inv_deff / self.sigma_sq if self.sigma_sq > 0 else math.inf

    @property
    def satisfied(self) -> bool:
        return self.sigma_sq <= self.inv_deff

    def as_dict(self) -> dict:
        d = dict(observable=self.observable, sigma_sq=self.sigma_sq, inv_deff=self.inv_deff,
                 d_eff=self.d_eff, norm_A_sq=self.norm_A_sq, margin=self.margin,
                 satisfied=self.satisfied, samples=self.samples)
        for i, (tm, em) in enumerate(zip(self.time_mean, self.ensemble_mean)):
            d[f"time_mean_{i}"] = tm
            d[f"ensemble_mean_{i}"] = em
        for i, se in enumerate(self.standard_errors):
            d[f"standard_error_{i}"] = se
        return d

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.as_dict().items())


def _trajectory_arrays(A_spec: str, trajectory):
    comps = VECTOR_OBSERVABLES.get(A_spec, (A_spec,))
    if hasattr(trajectory, "column"):
        t = trajectory.column("t")
        vals = np.column_stack([trajectory.column(c) for c in comps])
    else:
        t, vals = trajectory
        t = np.asarray(t, dtype=float)
        vals = np.asarray(vals, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
    return comps, t, vals


def ergodic_inequality_check(A_spec: str, trajectory, decomposition, window: tuple[float, float],
                             norm_A_sq: float | None = None, ensemble_mean=None,
                             fraction: float = 0.999) -> ErgodicReport:
    """Windowed relative fluctuation sigma^2_A compared against 1/d_eff.

    ``trajectory`` is an ObservableSeries or a ``(t, values)`` pair.  'P'
    denotes the momentum vector (px, py); its squared deviations are summed
    before dividing by ||P||^2, which defaults to the energy below which a
    ``fraction`` of the weight lies (p^2 = H inside the billiard).  Other
    observables need ``norm_A_sq`` and, unless built in, ``ensemble_mean``.
    """
    comps, t, vals = _trajectory_arrays(A_spec, trajectory)
    t0, t1 = window
    if len(t) == 0 or t0 < t.min() - 1e-9 or t1 > t.max() + 1e-9:
        raise ValueError(f"window [{t0}, {t1}] extends beyond the trajectory")
    sel = (t >= t0 - 1e-9) & (t <= t1 + 1e-9)
    vals = vals[sel]
    if ensemble_mean is None:
        ensemble_mean = tuple(diagonal_expectation(c, decomposition) for c in comps)
    ensemble_mean = tuple(np.atleast_1d(np.asarray(ensemble_mean, dtype=float)))
    if norm_A_sq is None:
        if A_spec not in ("P", "px", "py"):
            raise ValueError(f"norm_A_sq is required for observable {A_spec!r}")
        norm_A_sq = decomposition.cumulative_energy(fraction)
    dev = vals - np.asarray(ensemble_mean)[None, :]
    sigma_sq = float(np.mean(np.sum(dev ** 2, axis=1)) / norm_A_sq)
    inv_deff = 1.0 / effective_dimension(decomposition.c)
    return ErgodicReport(
        observable=A_spec, sigma_sq=sigma_sq, inv_deff=inv_deff,
        time_mean=tuple(float(v) for v in vals.mean(axis=0)),
        ensemble_mean=tuple(float(v) for v in ensemble_mean),
        norm_A_sq=float(norm_A_sq), samples=int(len(vals)),
        standard_errors=tuple(standard_error(vals[:, i]) for i in range(vals.shape[1])))


# -- entropy ---------------------------------------------------------------------------

def relative_entropy(n_t: RealField, n_inf: RealField, threshold: float = ENTROPY_THRESHOLD,
                     region: np.ndarray | None = None) -> float:
    """S_r = -integral u ln u over the support n_inf >= threshold * max(n_inf), u = n_t / n_inf.

    ``region`` optionally restricts the support further (a boolean mask),
    e.g. to the bounded well of an open potential.
    """
    if not n_t.grid.same_as(n_inf.grid):
        raise FieldError("entropy densities live on different grids")
    ref = n_inf.values
    if region is not None:
        ref = np.where(region, ref, 0.0)
    support = ref >= threshold * ref.max()
    support &= ref > 0
    u = n_t.values[support] / ref[support]
    pos = u > 0
    return float(-np.sum(u[pos] * np.log(u[pos])) * n_t.grid.cell_area)


@dataclass
class SaturationReport:
    initial: float
    plateau_mean: float
    plateau_std: float

    @property
    def rise(self) -> float:
        return self.plateau_mean - self.initial

    @property
    def relative_spread(self) -> float:
        return self.plateau_std / abs(self.rise) if self.rise else math.inf


def entropy_saturation(t, S, t_settle: float) -> SaturationReport:
    """Rise of S from its first sample to the mean after ``t_settle``, and the plateau spread."""
    t = np.asarray(t, dtype=float)
    S = np.asarray(S, dtype=float)
    late = S[t >= t_settle]
    if len(late) < 2:
        raise ValueError("no samples after the settling time")
    return SaturationReport(float(S[0]), float(late.mean()), float(late.std(ddof=1)))


# -- long-time averages ---------------------------------------------------------------

class DensityAccumulator:
    """Streaming mean of position (and optionally momentum) densities."""

    def __init__(self, momentum: bool = False):
        self.momentum = momentum
        self.count = 0
        self.grid = None
        self._pos = None
        self._mom = None
        self._kgrid = None

    def add(self, f) -> None:
        if isinstance(f, ComplexField):
            dens = np.abs(f.values) ** 2
        else:
            dens = np.asarray(f.values, dtype=float)
        if self.grid is None:
            self.grid = f.grid
            self._pos = np.zeros(f.grid.shape)
        elif not f.grid.same_as(self.grid):
            raise FieldError("snapshots live on different grids")
        self._pos += dens
        if self.momentum:
            if not isinstance(f, ComplexField):
                raise FieldError("momentum averages need complex snapshots")
            nk = momentum_density(f)
            self._kgrid = nk.grid
            self._mom = nk.values.copy() if self._mom is None else self._mom + nk.values
        self.count += 1

    def position(self) -> RealField:
        return RealField(self.grid, self._pos / self.count, is_density=True)

    def momentum_density(self) -> RealField | None:
        if self._mom is None:
            return None
        return RealField(self._kgrid, self._mom / self.count, is_density=True)


@dataclass
class LongTimeAverage:
    position: RealField
    momentum: RealField | None
    count: int
    exact: RealField | None = None

    @property
    def l1_to_exact(self) -> float | None:
        if self.exact is None:
            return None
        return l1_density_distance(self.position, self.exact)


def l1_density_distance(a: RealField, b: RealField) -> float:
    """Integral of |a - b| with both densities normalized to unit mass."""
    if not a.grid.same_as(b.grid):
        raise FieldError("densities live on different grids")
    pa = a.values / a.values.sum()
    pb = b.values / b.values.sum()
    return float(np.abs(pa - pb).sum())


def long_time_average(snapshots: Iterable, window: tuple[float, float], momentum: bool = False,
                      diagonal: DiagonalEnsemble | None = None,
                      min_snapshots: int = MIN_WINDOW_SNAPSHOTS) -> LongTimeAverage:
    """Mean density over the (t, field) snapshots falling inside ``window``.

    With ``diagonal`` the exact diagonal-ensemble density is attached for
    cross-checking.
    """
    t0, t1 = window
    acc = DensityAccumulator(momentum=momentum)
    for t, f in snapshots:
        if t0 - 1e-9 <= t <= t1 + 1e-9:
            acc.add(f)
    if acc.count < min_snapshots:
        raise ValueError(f"only {acc.count} snapshots in window [{t0}, {t1}]; "
                         f"need at least {min_snapshots}")
    exact = diagonal.density() if diagonal is not None else None
    return LongTimeAverage(acc.position(), acc.momentum_density(), acc.count, exact)


# -- marginals -------------------------------------------------------------------------

@dataclass
class Marginal:
    kind: str
    edges: np.ndarray
    values: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def integral(self) -> float:
        return float(np.sum(self.values * self.widths))

    def l1_distance(self, other) -> float:
        """L1 distance to another marginal on the same bins, or to a callable density."""
        if callable(other):
            ref = np.asarray(other(self.centers), dtype=float)
        else:
            if not np.allclose(other.edges, self.edges):
                raise ValueError("marginals use different bins")
            ref = other.values
        return float(np.sum(np.abs(self.values - ref) * self.widths))


MARGINAL_KINDS = ("x-marginal", "y-marginal", "radial-momentum")


def _axis_edges(axis: np.ndarray, step: float) -> np.ndarray:
    return np.concatenate([axis - 0.5 * step, [axis[-1] + 0.5 * step]])


def marginals(density: RealField, kind: str, edges: np.ndarray | None = None,
              mask: np.ndarray | None = None) -> Marginal:
    """Normalized 1D marginal of a 2D density.

    x/y marginals integrate out the other coordinate on the grid's own cells
    (``edges`` then regroups cells by their centres).  'radial-momentum'
    expects a momentum-space density and includes the polar measure, so
    f(p) dp integrates to one.  ``mask`` restricts the density before
    normalization.
    """
    if kind not in MARGINAL_KINDS:
        raise ValueError(f"unknown marginal kind {kind!r}; choose from {MARGINAL_KINDS}")
    g = density.grid
    vals = np.asarray(density.values, dtype=float)
    if mask is not None:
        vals = np.where(mask, vals, 0.0)
    mass = vals * g.cell_area
    total = mass.sum()
    if not total > 0:
        raise ValueError("density has no mass")
    if kind == "radial-momentum":
        X, Y = g.mesh()
        coord = np.hypot(X, Y).ravel()
        weights = mass.ravel()
        if edges is None:
            edges = np.arange(0.0, coord.max() + g.dx, max(g.dx, g.dy))
    else:
        axis = 0 if kind == "x-marginal" else 1
        coord = g.x if axis == 0 else g.y
        weights = mass.sum(axis=1 - axis)
        if edges is None:
            edges = _axis_edges(coord, g.dx if axis == 0 else g.dy)
    hist, edges = np.histogram(coord, bins=edges, weights=weights)
    return Marginal(kind, np.asarray(edges, dtype=float), hist / (total * np.diff(edges)))


def uniform_billiard_y_marginal(params):
    """f(y) = (b - a cos(pi y / b)) / (2 b^2) for a uniform density on the billiard."""
    def f(y):
        y = np.asarray(y, dtype=float)
        out = (params.b - params.a * np.cos(np.pi * y / params.b)) / (2.0 * params.b ** 2)
        return np.where((y >= 0) & (y <= 2 * params.b), out, 0.0)
    return f


def rayleigh_pdf(p, s: float):
    p = np.asarray(p, dtype=float)
    return p / s ** 2 * np.exp(-p * p / (2.0 * s * s))
