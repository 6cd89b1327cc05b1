"""Gaussian initial states and their time evolution.

Two propagators share one observable contract: a Strang split-step Fourier
scheme for smooth potentials on a periodic box, and exact phase evolution in
a billiard eigenbasis.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.fft as sfft

from .equilibration import relative_entropy
from .fields import ComplexField, FieldError, Grid2D, RealField, expectation_momentum
from .models import HenonHeilesParams, hh_potential

log = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-10
LEAKAGE_LEVEL = 1e-6


class PacketFitError(ValueError):
    pass


class NumericalToleranceError(RuntimeError):
    pass


def _is_multiple(t: float, dt: float) -> bool:
    n = round(t / dt)
    return abs(n * dt - t) <= 1e-12 * max(1.0, abs(t))


@dataclass(frozen=True)
class PropagationSchedule:
    dt: float
    t_end: float
    snapshot_times: tuple[float, ...] = ()
    observable_sample_interval: float | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        snaps = tuple(float(t) for t in self.snapshot_times)
        if any(b < a for a, b in zip(snaps, snaps[1:])):
            raise ValueError("snapshot_times must be sorted")
        if snaps and (snaps[0] < 0 or snaps[-1] > self.t_end + 1e-12 * self.t_end):
            raise ValueError("snapshot_times must lie in [0, t_end]")
        times = list(snaps) + [self.t_end]
        if self.observable_sample_interval is not None:
            if not self.observable_sample_interval > 0:
                raise ValueError("observable_sample_interval must be positive")
            times.append(self.observable_sample_interval)
        bad = [t for t in times if not _is_multiple(t, self.dt)]
        if bad:
            raise ValueError(f"times {bad[:3]} are not multiples of dt={self.dt}")
        object.__setattr__(self, "snapshot_times", snaps)

    @classmethod
    def build(cls, dt: float, t_end: float, snapshot_times: Iterable[float] = (),
              observable_sample_interval: float | None = None) -> "PropagationSchedule":
        """Schedule with every time snapped to the nearest multiple of dt."""
        snap = lambda t: round(t / dt) * dt
        snaps = sorted({snap(t) for t in snapshot_times})
        interval = None
        if observable_sample_interval is not None:
            interval = max(1, round(observable_sample_interval / dt)) * dt
        return cls(dt, snap(t_end), tuple(snaps), interval)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def snapshot_steps(self) -> list[int]:
        return [int(round(t / self.dt)) for t in self.snapshot_times]

    def sample_stride(self) -> int | None:
        if self.observable_sample_interval is None:
            return None
        return int(round(self.observable_sample_interval / self.dt))


# -- initial state ------------------------------------------------------------

def make_gaussian_packet(alpha: float, r_i, p_i, grid: Grid2D,
                         domain: Callable | None = None) -> ComplexField:
    """psi = (alpha/sqrt(pi)) exp(-alpha^2 |r - r_i|^2 / 2) exp(i p_i . r).

    ``domain(x, y) -> bool array`` optionally describes a hard-walled region;
    the packet must then fit inside it with a margin of 5/alpha, and values
    outside it are set to zero.  The sampled packet is renormalized on the
    grid.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    xi, yi = map(float, r_i)
    kx, ky = map(float, p_i)
    reach = 5.0 / alpha
    x, y = grid.x, grid.y
    if xi - reach < x[0] or xi + reach > x[-1] or yi - reach < y[0] or yi + reach > y[-1]:
        raise PacketFitError(f"packet does not fit: support radius {reach:g} around "
                             f"({xi:g}, {yi:g}) leaves the grid")
    if domain is not None:
        ang = np.linspace(0.0, 2.0 * np.pi, 720, endpoint=False)
        rad = np.linspace(0.0, reach, 12)[:, None]
        ok = domain(xi + rad * np.cos(ang), yi + rad * np.sin(ang))
        if not np.all(ok):
            raise PacketFitError(f"packet does not fit: support radius {reach:g} around "
                                 f"({xi:g}, {yi:g}) crosses the wall")
    X, Y = grid.mesh()
    r2 = (X - xi) ** 2 + (Y - yi) ** 2
    values = alpha / math.sqrt(math.pi) * np.exp(-0.5 * alpha ** 2 * r2 + 1j * (kx * X + ky * Y))
    if domain is not None:
        values[~domain(X, Y)] = 0.0
    values /= math.sqrt(np.sum(np.abs(values) ** 2) * grid.cell_area)
    return ComplexField(grid, values)


def packet_energy(alpha: float, p_i, mean_potential: float) -> float:
    """<H> of the Gaussian packet given its mean potential energy."""
    return float(np.dot(p_i, p_i)) + alpha ** 2 + mean_potential


def hh_packet_mean_potential(alpha: float, r_i, params: HenonHeilesParams) -> float:
    """Exact Gaussian average of the Henon-Heiles potential (variance 1/(2 alpha^2) per axis)."""
    x, y = map(float, r_i)
    s2 = 0.5 / alpha ** 2
    # the cubic terms' variance corrections cancel: E[x^2 y] - E[y^3]/3 = V3(r_i)
    return float(hh_potential(x, y, params) + params.U * s2)


def hh_packet_energy(alpha: float, r_i, p_i, params: HenonHeilesParams) -> float:
    return packet_energy(alpha, p_i, hh_packet_mean_potential(alpha, r_i, params))


# -- potentials on a grid -----------------------------------------------------

def hh_grid_potential(grid: Grid2D, params: HenonHeilesParams, box_half_width: float | None = None,
                      wall_cells: int = 8, floor: bool = True) -> np.ndarray:
    """Henon-Heiles potential prepared for spectral propagation.

    The open saddle channels make V unbounded below; escaping waves would
    then accelerate past the grid's Nyquist momentum and alias.  With
    ``floor`` the potential is clipped from below at V_c - 0.8 k_max^2, which
    only acts far outside the well.  Points beyond ``box_half_width`` (default
    2.5 r_c) and a layer of ``wall_cells`` cells along the grid edge form a
    hard wall of height 2 k_max^2.
    """
    X, Y = grid.mesh()
    V = hh_potential(X, Y, params)
    kmax2 = min((np.pi / grid.dx) ** 2, (np.pi / grid.dy) ** 2)
    if floor:
        V = np.maximum(V, params.V_c - 0.8 * kmax2)
    half = params.box_half_width if box_half_width is None else box_half_width
    wall = (np.abs(X) > half) | (np.abs(Y) > half)
    if wall_cells > 0:
        wall[:wall_cells, :] = wall[-wall_cells:, :] = True
        wall[:, :wall_cells] = wall[:, -wall_cells:] = True
    V = np.where(wall, 2.0 * kmax2, V)
    return V


def hard_wall_potential(grid: Grid2D, inside: np.ndarray, height: float | None = None) -> np.ndarray:
    """Zero inside ``inside``, a tall step (default 2 k_max^2) elsewhere."""
    if height is None:
        height = 2.0 * min((np.pi / grid.dx) ** 2, (np.pi / grid.dy) ** 2)
    return np.where(inside, 0.0, height)


# -- observables --------------------------------------------------------------

@dataclass
class ObservableSeries:
    t: list = field(default_factory=list)
    px: list = field(default_factory=list)
    py: list = field(default_factory=list)
    Sr: list = field(default_factory=list)
    norm: list = field(default_factory=list)
    energy: list = field(default_factory=list)

    COLUMNS = ("t", "px", "py", "Sr", "norm", "energy")

    def append(self, **row):
        for k in self.COLUMNS:
            getattr(self, k).append(float(row.get(k, np.nan)))

    def as_array(self) -> np.ndarray:
        return np.column_stack([np.asarray(getattr(self, k), dtype=float) for k in self.COLUMNS]) \
            if self.t else np.empty((0, len(self.COLUMNS)))

    def column(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self, name), dtype=float)

    def __len__(self) -> int:
        return len(self.t)


def field_energy(values: np.ndarray, grid: Grid2D, V: np.ndarray | None, k2: np.ndarray) -> float:
    """<H> = sum |psi~|^2 k^2 + sum |psi|^2 V for H = p^2 + V."""
    spec = sfft.fft2(values)
    kinetic = np.sum(np.abs(spec) ** 2 * k2) / values.size * grid.cell_area
    potential = np.sum(np.abs(values) ** 2 * V) * grid.cell_area if V is not None else 0.0
    return float(kinetic + potential)


def energy_moments(psi: ComplexField, V: np.ndarray | None) -> tuple[float, float]:
    """(<H>, sqrt(<H^2> - <H>^2)) of a grid state for H = p^2 + V."""
    g = psi.grid
    vals = psi.values
    hpsi = sfft.ifft2(sfft.fft2(vals) * g.k_squared())
    if V is not None:
        hpsi = hpsi + np.asarray(V) * vals
    norm = np.vdot(vals, vals).real
    mean = np.vdot(vals, hpsi).real / norm
    second = np.vdot(hpsi, hpsi).real / norm
    return float(mean), float(math.sqrt(max(second - mean * mean, 0.0)))


def region_energy(psi: ComplexField, V: np.ndarray, region: np.ndarray) -> float:
    """Mean energy of the part of ``psi`` inside ``region``.

    Uses the positive local energy density |grad psi|^2 + V |psi|^2, whose
    integral over the whole grid is <H>; here it is integrated over
    ``region`` and divided by the norm found there.
    """
    g = psi.grid
    vals = psi.values
    kx = 2.0 * np.pi * sfft.fftfreq(g.nx, d=g.dx)
    ky = 2.0 * np.pi * sfft.fftfreq(g.ny, d=g.dy)
    spec = sfft.fft2(vals)
    gx = sfft.ifft2(1j * kx[:, None] * spec)
    gy = sfft.ifft2(1j * ky[None, :] * spec)
    dens = np.abs(vals) ** 2
    eps = np.abs(gx) ** 2 + np.abs(gy) ** 2 + np.asarray(V) * dens
    mass = dens[region].sum()
    if mass <= 0:
        raise ValueError("the state has no weight in the requested region")
    return float(eps[region].sum() / mass)


@dataclass
class PropagationResult:
    observables: ObservableSeries
    snapshots: list  # (t, ComplexField) pairs unless streamed to a callback
    final: ComplexField
    leakage: bool = False


# -- split-step ---------------------------------------------------------------

class SplitStepPropagator:
    """Strang splitting e^{-iV dt/2} e^{-ip^2 dt} e^{-iV dt/2} on a periodic grid.

    Negative ``dt`` runs time backwards.
    """

    def __init__(self, grid: Grid2D, V: np.ndarray | None, dt: float):
        self.grid = grid
        self.dt = float(dt)
        self.k2 = grid.k_squared()
        self.V = None if V is None else np.asarray(V, dtype=float)
        if self.V is not None and self.V.shape != grid.shape:
            raise FieldError("potential shape does not match the grid")
        self.kin = np.exp(-1j * self.k2 * self.dt)
        self.half = None if self.V is None else np.exp(-0.5j * self.V * self.dt)

    def step(self, values: np.ndarray, n: int = 1) -> np.ndarray:
        psi = np.array(values, dtype=np.complex128, copy=True)
        if n <= 0:
            return psi
        if self.half is None:
            return sfft.ifft2(sfft.fft2(psi) * np.exp(-1j * self.k2 * self.dt * n))
        # merge adjacent half potential steps into full ones
        full = self.half * self.half
        psi *= self.half
        for i in range(n):
            psi = sfft.ifft2(sfft.fft2(psi, overwrite_x=True) * self.kin, overwrite_x=True)
            psi *= full if i < n - 1 else self.half
        return psi

    def energy(self, values: np.ndarray) -> float:
        return field_energy(values, self.grid, self.V, self.k2)


def _edge_ratio(values: np.ndarray, width: int) -> float:
    dens = np.abs(values) ** 2
    peak = dens.max()
    if peak == 0:
        return 0.0
    edge = max(dens[:width].max(), dens[-width:].max(), dens[:, :width].max(), dens[:, -width:].max())
    return float(edge / peak)


def split_step_evolve(psi: ComplexField, potential, schedule: PropagationSchedule,
                      on_snapshot: Callable[[float, ComplexField], None] | None = None,
                      n_inf: RealField | None = None, edge_width: int = 10,
                      norm_tolerance: float = NORM_TOLERANCE,
                      entropy_threshold: float = 1e-6,
                      entropy_region: np.ndarray | None = None) -> PropagationResult:
    """Evolve ``psi`` under H = p^2 + V, recording snapshots and observables.

    ``potential`` is a grid array, a RealField, or None (free motion).
    Snapshots are handed to ``on_snapshot`` when given (so large runs can
    stream them to disk) and collected in the result otherwise.  Observables
    are sampled every ``schedule.observable_sample_interval`` (default: at
    snapshot times only); the entropy column is filled when ``n_inf`` is
    supplied.  The norm is checked at each sample and a drift beyond
    ``norm_tolerance`` aborts the run.  Density within ``edge_width`` cells of
    the box edge above 1e-6 of the peak triggers a single "leakage" warning.
    """
    grid = psi.grid
    V = potential.values if isinstance(potential, RealField) else potential
    prop = SplitStepPropagator(grid, V, schedule.dt)
    values = np.array(psi.values)
    norm0 = psi.norm_sq
    snap_steps = schedule.snapshot_steps()
    stride = schedule.sample_stride()
    sample_steps = set(snap_steps)
    if stride:
        sample_steps.update(range(0, schedule.n_steps + 1, stride))
    sample_steps.add(schedule.n_steps)
    events = sorted(sample_steps)
    series = ObservableSeries()
    snapshots = []
    leak = False
    snap_set = set(snap_steps)
    step = 0
    for target in events:
        values = prop.step(values, target - step)
        step = target
        t = step * schedule.dt
        f = ComplexField(grid, values)
        norm = f.norm_sq
        if abs(norm - norm0) > norm_tolerance:
            raise NumericalToleranceError(
                f"norm drifted from {norm0:.15f} to {norm:.15f} at t={t:g} "
                f"(tolerance {norm_tolerance:g}); reduce dt or check the potential")
        if not leak and _edge_ratio(values, edge_width) > LEAKAGE_LEVEL:
            leak = True
            warnings.warn(f"leakage: density at the box edge exceeds {LEAKAGE_LEVEL:g} of the peak "
                          f"at t={t:g}", RuntimeWarning, stacklevel=2)
        px, py = expectation_momentum(f)
        sr = np.nan
        if n_inf is not None:
            sr = relative_entropy(f.density(), n_inf, threshold=entropy_threshold,
                                  region=entropy_region)
        series.append(t=t, px=px, py=py, Sr=sr, norm=norm, energy=prop.energy(values))
        if step in snap_set:
            if on_snapshot is not None:
                on_snapshot(t, f)
            else:
                snapshots.append((t, f))
    return PropagationResult(series, snapshots, ComplexField(grid, values), leak)


# -- eigenbasis ---------------------------------------------------------------

class InsufficientCoverageError(ValueError):
    pass


def _require_coverage(decomposition, threshold: float = 0.999):
    if decomposition.captured_norm < threshold:
        raise InsufficientCoverageError(
            f"eigenbasis captures only {decomposition.captured_norm:.6f} of the state norm "
            f"(need {threshold}); add more eigenstates")


def eigenbasis_evolve(decomposition, t: float) -> ComplexField:
    """psi(t) = sum_k c_k exp(-i E_k t) phi_k on the eigenbasis lattice grid."""
    _require_coverage(decomposition)
    basis = decomposition.basis
    coeffs = decomposition.c * np.exp(-1j * basis.energies * t)
    return ComplexField(basis.grid, basis.synthesize(coeffs))


def eigenbasis_run(decomposition, times: Sequence[float],
                   on_snapshot: Callable[[float, ComplexField], None] | None = None,
                   n_inf: RealField | None = None, entropy_threshold: float = 1e-6,
                   keep_snapshots: bool = False, entropy_region: np.ndarray | None = None) -> PropagationResult:
    """Observable series (and optional snapshots) of eigenbasis evolution at ``times``."""
    _require_coverage(decomposition)
    energy = float(np.sum(np.abs(decomposition.c) ** 2 * decomposition.energies)
                   / np.sum(np.abs(decomposition.c) ** 2))
    series = ObservableSeries()
    snaps = []
    f = None
    for t in times:
        f = eigenbasis_evolve(decomposition, t)
        px, py = expectation_momentum(f)
        sr = np.nan
        if n_inf is not None:
            sr = relative_entropy(f.density(), n_inf, threshold=entropy_threshold,
                                  region=entropy_region)
        series.append(t=t, px=px, py=py, Sr=sr, norm=f.norm_sq, energy=energy)
        if on_snapshot is not None:
            on_snapshot(float(t), f)
        if keep_snapshots:
            snaps.append((float(t), f))
    return PropagationResult(series, snaps, f)


# -- cross-check --------------------------------------------------------------

@dataclass(frozen=True)
class CrossCheckReport:
    t: float
    l1: float
    captured_norm: float
    split_step_norm: float


def billiard_cross_check(basis, psi: ComplexField, t: float, wall_height: float = 400.0,
                         dt: float | None = None) -> CrossCheckReport:
    """Density L1 distance between eigenbasis and split-step evolution.

    The split-step run is independent of the eigensolver.  It uses a grid
    refined by two whose nodes include the lattice cell centres, and a finite
    wall of height ``V0`` whose edge sits ``1/sqrt(V0 - E)`` inside the
    boundary (the evanescent decay length).  A step wall placed that way acts
    on the interior like a Dirichlet wall at the true boundary, up to
    ``O(E/V0)``.

    Parameters
    ----------
    basis : BilliardBasis
    psi : ComplexField
        Initial state on ``basis.grid``.
    t : float
        Comparison time.
    wall_height : float
        ``V0``.
    dt : float, optional
        Split-step time step; defaults to ``0.5/V0`` so the wall phase per
        step stays well below pi.

    Returns
    -------
    CrossCheckReport
        ``split_step_norm`` is the norm on the refined grid before the
        coarse density is renormalized.
    """
    from .models import wall_half_width, wall_slope
    from .spectrum import expand_state

    params = basis.lattice.params
    grid = basis.grid
    dec = expand_state(psi, basis)
    exact = eigenbasis_evolve(dec, t).density().values

    fine = Grid2D(2 * grid.nx, 2 * grid.ny, grid.x0 - grid.dx / 2, grid.y0 - grid.dy / 2,
                  grid.dx / 2, grid.dy / 2)
    X, Y = fine.mesh()
    side = (wall_half_width(Y, params) - np.abs(X)) / np.sqrt(1.0 + wall_slope(Y, params) ** 2)
    dist = np.minimum(side, np.minimum(Y, 2.0 * params.b - Y))
    mom = expectation_momentum(psi)
    energy = float(mom[0] ** 2 + mom[1] ** 2)
    if not wall_height > 4.0 * max(energy, 1.0):
        raise ValueError(f"wall height {wall_height} too low for packet energy {energy:.3g}")
    inset = 1.0 / math.sqrt(wall_height - energy)
    V = np.where(dist > inset, 0.0, wall_height)

    # band-limited interpolation onto the refined grid
    spec = sfft.fft2(psi.values)
    big = np.zeros(fine.shape, dtype=complex)
    nx, ny = grid.shape
    hx, hy = nx // 2, ny // 2
    big[:hx, :hy] = spec[:hx, :hy]
    big[-hx:, :hy] = spec[-hx:, :hy]
    big[:hx, -hy:] = spec[:hx, -hy:]
    big[-hx:, -hy:] = spec[-hx:, -hy:]
    # refined node (2i+1, 2j+1) sits on coarse node (i, j)
    psi_f = np.roll(sfft.ifft2(big) * 4.0, (1, 1), axis=(0, 1))
    start = ComplexField(fine, psi_f)

    step = 0.5 / wall_height if dt is None else float(dt)
    sched = PropagationSchedule.build(step, t)
    res = split_step_evolve(start, V, sched, edge_width=1)
    dens = np.abs(res.final.values[1::2, 1::2]) ** 2
    dens /= dens.sum() * grid.cell_area
    l1 = float(np.sum(np.abs(dens - exact)) * grid.cell_area)
    return CrossCheckReport(sched.t_end, l1, dec.captured_norm, res.final.norm_sq)
