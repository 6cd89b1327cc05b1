"""End-to-end pipelines: billiard and Henon-Heiles runs, their analyses, and the
classical, Husimi, oracle and spacing reproductions.

Every pipeline returns plain in-memory results; ``save_*`` helpers persist
them into a :class:`~eqlab.store.RunDirectory`.  The CLI is a thin layer over
these functions and the acceptance suite calls them directly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from .classical import (
    BilliardSystem, HenonHeilesSystem, PhasePoint, billiard_flight, billiard_flow,
    evolve_hh_ensemble, histogram_marginal, integrate_henon_heiles, poincare_section,
    position_counts, sample_gaussian_ensemble, sample_microcanonical, uniform_cell_fractions,
)
from .config import RunConfig
from .equilibration import (
    DiagonalEnsemble, ErgodicReport, Marginal, SaturationReport, effective_dimension,
    entropy_saturation, ergodic_inequality_check, long_time_average, marginals, relative_entropy,
    standard_error, uniform_billiard_y_marginal,
)
from .fields import ComplexField, Grid2D, RealField
from .fluctuations import (
    FitReport, closed_form_pdfs, fit_exponential, fit_gaussian, fit_porter_thomas,
    hypersphere_oracle, phase_map, relative_fluctuations, spatial_correlation,
)
from .husimi import HusimiSection, classical_shell_section, husimi_section
from .models import billiard_contains, hh_allowed, hh_in_well, hh_potential
from .propagation import (
    ObservableSeries, PropagationSchedule, eigenbasis_evolve, eigenbasis_run, energy_moments,
    hh_grid_potential, make_gaussian_packet, region_energy, split_step_evolve,
)
from .spectrum import (
    BilliardEigenbasis, SpacingStats, SpectralDecomposition, expand_state, level_spacing_statistics,
    parse_parity, sector_name, sector_weyl_count, sectors_weyl_energy, solve_eigenstates,
)
from .store import (
    OBSERVABLE_HEADER, RunDirectory, StoreError, read_decomposition, read_eigen_store,
    read_observables, write_decomposition, write_eigen_store,
)

log = logging.getLogger(__name__)

SEED_STREAMS = {"gaussian-ensemble": 0, "microcanonical": 1, "oracle": 2}


def derived_seed(master: int, stream: str) -> np.random.SeedSequence:
    """Independent, reproducible child stream of the master seed."""
    return np.random.SeedSequence(int(master), spawn_key=(SEED_STREAMS[stream],))


class MissingSnapshotsError(StoreError):
    pass


# sample times are snapped to the time step, so window membership allows a
# small slack (in units of the characteristic time)
WINDOW_SLACK = 1e-2


def _in_window(t: float, window: tuple[float, float], unit: float) -> bool:
    return window[0] * unit - WINDOW_SLACK * unit <= t <= window[1] * unit + WINDOW_SLACK * unit


def _sectors(cfg: RunConfig) -> list[tuple[int, int]]:
    names = cfg["spectrum.sectors"]
    names = names if isinstance(names, tuple) else (names,)
    return [tuple(parse_parity(p) for p in str(n).split("-")) for n in names]


def _window(cfg: RunConfig) -> tuple[float, float]:
    w = cfg.get("schedule.window", (10.0, 14.0))
    return float(w[0]), float(w[1])


def _fit_table(samples: np.ndarray, kinds: tuple[str, ...], bins: int = 60) -> tuple[list, list]:
    """Histogram of u with closed-form reference columns and log densities."""
    hi = float(np.quantile(samples, 0.999))
    dens, edges = np.histogram(samples, bins=bins, range=(0.0, max(hi, 1e-12)), density=True)
    mid = 0.5 * (edges[1:] + edges[:-1])
    header = ["u", "density", "log_density"]
    cols = [mid, dens, np.log(np.where(dens > 0, dens, np.nan))]
    for kind in kinds:
        if kind == "gaussian":
            m, s = samples.mean(), samples.std()
            ref = np.exp(-(mid - m) ** 2 / (2 * s * s)) / (s * math.sqrt(2 * math.pi))
        else:
            ref = closed_form_pdfs(kind, mid, 1.0)
        header.append(kind)
        cols.append(ref)
    return header, np.column_stack(cols).tolist()


# =====================================================================================
# billiard
# =====================================================================================

def billiard_basis(cfg: RunConfig, threads: int | None = None) -> BilliardEigenbasis:
    store = cfg.get("spectrum.store")
    if store:
        basis = read_eigen_store(store)
        if basis.lattice.params != cfg.billiard_params() or basis.lattice.resolution != int(cfg["grid.resolution"]):
            raise StoreError(f"eigen store {store} was built for different billiard parameters")
        return basis
    return solve_eigenstates(cfg.billiard_params(), int(cfg["spectrum.count"]), int(cfg["grid.resolution"]),
                             sectors=_sectors(cfg), pad=int(cfg.get("grid.pad", 4)),
                             threads=int(threads or cfg.get("threads", 1)))


@dataclass
class WeylReport:
    sector: str
    count: int
    top_energy: float
    weyl_count_at_top: float
    upper_half_deviation: float  # mean |N - N_weyl| / N over the upper half of the levels

    @property
    def top_deviation(self) -> float:
        return abs(self.count - self.weyl_count_at_top) / self.count

    def as_dict(self) -> dict:
        return dict(sector=self.sector, count=self.count, top_energy=self.top_energy,
                    weyl_count_at_top=self.weyl_count_at_top, top_deviation=self.top_deviation,
                    upper_half_deviation=self.upper_half_deviation)


def weyl_reports(basis: BilliardEigenbasis) -> list[WeylReport]:
    out = []
    for s in basis.sectors:
        e = basis.sector_energies(s)
        n = np.arange(1, len(e) + 1)
        w = sector_weyl_count(e, basis.lattice.params, s)
        half = len(e) // 2
        dev = float(np.mean(np.abs(n[half:] - w[half:]) / n[half:]))
        out.append(WeylReport(sector_name(s), len(e), float(e[-1]), float(w[-1]), dev))
    return out


def save_eigensolve(rd: RunDirectory, basis: BilliardEigenbasis) -> dict:
    """Eigen store plus a Weyl (and, for a = 0, exact square spectrum) report."""
    write_eigen_store(rd, basis)
    blocks = {f"weyl {r.sector}": r.as_dict() for r in weyl_reports(basis)}
    p = basis.lattice.params
    if p.a == 0:
        blocks["square"] = square_spectrum_report(basis)
    blocks["basis"] = dict(states=len(basis), resolution=basis.lattice.resolution, h=basis.lattice.h,
                           max_residual=float(basis.residuals.max()), gram_deviation=basis.gram_deviation())
    rd.write_keyvalues("eigensolve.txt", blocks)
    return blocks


def square_spectrum_report(basis: BilliardEigenbasis) -> dict:
    """Relative error of the lowest levels against E = (pi/2b)^2 (m^2 + n^2)."""
    b = basis.lattice.params.b
    n = len(basis)
    m = np.arange(1, int(math.sqrt(4 * n)) + 4)
    M, N = np.meshgrid(m, m)
    exact = np.sort(((np.pi / (2 * b)) ** 2 * (M ** 2 + N ** 2)).ravel())
    # only levels below the smallest sector top are complete
    top = min(basis.sector_energies(s)[-1] for s in basis.sectors)
    k = int(np.sum(basis.energies <= top)) if len(basis.sectors) == 4 else 0
    if k == 0:
        return dict(levels_compared=0)
    rel = np.abs(basis.energies[:k] - exact[:k]) / exact[:k]
    return dict(levels_compared=k, max_relative_error=float(rel.max()),
                mean_relative_error=float(rel.mean()))


@dataclass
class BilliardRun:
    config: RunConfig
    basis: BilliardEigenbasis
    decomposition: SpectralDecomposition
    n_inf: RealField
    observables: ObservableSeries
    snapshots: list  # (t, ComplexField) inside the analysis window
    time_unit: float


def billiard_packet(cfg: RunConfig, grid: Grid2D) -> ComplexField:
    alpha, r_i, p_i = cfg.packet()
    params = cfg.billiard_params()
    return make_gaussian_packet(alpha, r_i, p_i, grid, domain=partial(billiard_contains, params=params))


def run_billiard(cfg: RunConfig, basis: BilliardEigenbasis | None = None, threads: int | None = None) -> BilliardRun:
    """Expand the packet, evolve it exactly and sample observables and window snapshots."""
    if basis is None:
        basis = billiard_basis(cfg, threads)
    psi = billiard_packet(cfg, basis.grid)
    dec = expand_state(psi, basis)
    n_inf = DiagonalEnsemble(dec).density()
    Ts = cfg.time_unit()
    t_end = float(cfg["schedule.t_end"]) * Ts
    times = np.linspace(0.0, t_end, int(cfg["schedule.samples"]) + 1)
    res = eigenbasis_run(dec, times, n_inf=n_inf,
                         entropy_threshold=float(cfg.get("analysis.entropy_threshold", 1e-6)))
    w0, w1 = _window(cfg)
    snaps = [(float(t), eigenbasis_evolve(dec, t))
             for t in np.linspace(w0 * Ts, w1 * Ts, int(cfg.get("schedule.window_snapshots", 60)))]
    return BilliardRun(cfg, basis, dec, n_inf, res.observables, snaps, Ts)


def save_billiard_run(rd: RunDirectory, run: BilliardRun, write_store: bool = True) -> None:
    if write_store and not run.config.get("spectrum.store"):
        write_eigen_store(rd, run.basis)
    rd.write_text("config.txt", run.config.to_text())
    write_decomposition(rd, run.decomposition)
    rd.write_csv("observables.csv", OBSERVABLE_HEADER, run.observables.as_array().tolist())
    rd.write_field("n_inf.eqlb", run.n_inf)
    rows = []
    for i, (t, f) in enumerate(run.snapshots):
        rel = f"snapshots/psi_{i:04d}.eqlb"
        rd.write_field(rel, f, t)
        rows.append([i, t, rel])
    rd.write_csv("snapshots/index.csv", ("i", "t", "file"), rows)
    dec = run.decomposition
    rd.write_keyvalues("evolve.txt", {"decomposition": dict(
        captured_norm=dec.captured_norm, d_eff=effective_dimension(dec.c), mean_energy=dec.mean_energy(),
        energy_spread=dec.energy_spread(), time_unit=run.time_unit,
        **{f"weight_{k}": v for k, v in dec.sector_weights().items()})})


def _read_snapshot_index(root: Path, density: bool = False) -> list:
    from .snapshot import read_snapshot
    idx = root / "snapshots" / "index.csv"
    if not idx.exists():
        return []
    from .store import read_csv
    _, rows = read_csv(idx)
    out = []
    for _, t, rel in rows:
        f, _t = read_snapshot(root / rel, density=density)
        out.append((float(t), f))
    return out


def _require_window(snapshots: list, window: tuple[float, float], count: int, unit: float) -> list:
    """Snapshots inside the window, or an error naming the required times."""
    w0, w1 = window[0] * unit, window[1] * unit
    have = [(t, f) for t, f in snapshots if _in_window(t, window, unit)]
    if len(have) < count:
        need = np.linspace(w0, w1, count)
        raise MissingSnapshotsError(
            f"found {len(have)} snapshots in the window [{w0:g}, {w1:g}]; analysis needs {count} "
            f"at t = {', '.join(f'{t:.6g}' for t in need)}")
    return have


def load_billiard_run(cfg: RunConfig, run_dir: str | Path) -> BilliardRun:
    from .snapshot import read_snapshot
    root = Path(run_dir)
    store = cfg.get("spectrum.store") or root / "eigen"
    basis = read_eigen_store(store)
    dec = read_decomposition(root / "decomposition.csv", basis)
    n_inf, _ = read_snapshot(root / "n_inf.eqlb", density=True)
    obs = read_observables(root / "observables.csv")
    snaps = _read_snapshot_index(root)
    Ts = cfg.time_unit()
    snaps = _require_window(snaps, _window(cfg), int(cfg.get("schedule.window_snapshots", 60)), Ts)
    return BilliardRun(cfg, basis, dec, n_inf, obs, snaps, Ts)


@dataclass
class BilliardAnalysis:
    ergodic: ErgodicReport
    e_cut: float
    occupied_count: int
    weyl_e_cut: float
    entropy: SaturationReport
    long_time_l1: float
    quantum_u: FitReport
    eigenstate_u: FitReport
    y_marginal: Marginal
    y_marginal_l1: float
    classical: "ClassicalBilliardFluctuations | None" = None
    husimi_band_fraction: float | None = None
    quantum_u_samples: np.ndarray | None = field(default=None, repr=False)
    eigenstate_u_samples: np.ndarray | None = field(default=None, repr=False)

    @property
    def e_cut_relative_error(self) -> float:
        return abs(self.e_cut - self.weyl_e_cut) / self.weyl_e_cut

    def blocks(self) -> dict:
        out = {
            "ergodic": self.ergodic.as_dict(),
            "occupancy": dict(e_cut=self.e_cut, occupied_count=self.occupied_count,
                              weyl_e_cut=self.weyl_e_cut, relative_error=self.e_cut_relative_error),
            "entropy": dict(initial=self.entropy.initial, plateau_mean=self.entropy.plateau_mean,
                            plateau_std=self.entropy.plateau_std, rise=self.entropy.rise,
                            relative_spread=self.entropy.relative_spread),
            "long-time-average": dict(l1_to_diagonal=self.long_time_l1),
            "fit quantum-u": self.quantum_u.as_dict(),
            "fit eigenstate-u": self.eigenstate_u.as_dict(),
            "y-marginal": dict(l1_to_uniform=self.y_marginal_l1),
        }
        if self.classical is not None:
            out["fit classical-u gaussian"] = self.classical.gaussian.as_dict()
            out["fit classical-u exponential"] = self.classical.exponential.as_dict()
            out["classical y-marginal"] = dict(l1_to_uniform=self.classical.y_marginal_l1)
        if self.husimi_band_fraction is not None:
            out["husimi"] = dict(band_fraction=self.husimi_band_fraction)
        return out


def eigenstate_fluctuations(basis: BilliardEigenbasis, weights: np.ndarray, states: int = 20,
                            neighbours: int = 50, support_threshold: float = 1e-3) -> np.ndarray:
    """|phi_k|^2 u-samples of the most occupied states of the leading sector.

    Each intensity is measured against the local mean of its +-``neighbours``
    same-sector neighbours, which carries the smooth boundary structure that a
    single eigenfunction does not average out.
    """
    totals = {s: weights[basis.sector_indices(s)].sum() for s in basis.sectors}
    lead = max(totals, key=totals.get)
    idx = basis.sector_indices(lead)
    top = idx[np.argsort(weights[idx])[::-1][:states]]
    samples = []
    for k in top:
        pos = int(np.searchsorted(idx, k))
        nb = idx[max(0, pos - neighbours): pos + neighbours + 1]
        sel = np.zeros(len(basis))
        sel[nb] = 1.0 / len(nb)
        ref = RealField(basis.grid, basis.density_of(sel), is_density=True)
        phi2 = RealField(basis.grid, basis.eigenfunction(int(k)) ** 2, is_density=True)
        samples.append(relative_fluctuations(phi2, ref, support_threshold))
    return np.concatenate(samples)


def _spread_pick(items: list, count: int) -> list:
    if count >= len(items):
        return list(items)
    pick = np.round(np.linspace(0, len(items) - 1, count)).astype(int)
    return [items[i] for i in pick]


def analyze_billiard(run: BilliardRun, classical: bool = True, husimi: bool = True) -> BilliardAnalysis:
    cfg = run.config
    dec = run.decomposition
    Ts = run.time_unit
    w0, w1 = _window(cfg)
    fraction = float(cfg.get("analysis.norm_fraction", 0.999))
    erg = ergodic_inequality_check("P", run.observables, dec, (w0 * Ts, w1 * Ts), fraction=fraction)

    e_cut = dec.cumulative_energy(fraction)
    occupied = int(np.sum(run.basis.energies <= e_cut + 1e-12))
    weyl_cut = sectors_weyl_energy(occupied, run.basis.lattice.params, run.basis.sectors)

    obs = run.observables
    sat = entropy_saturation(obs.column("t"), obs.column("Sr"), w0 * Ts)
    lta = long_time_average(run.snapshots, (w0 * Ts, w1 * Ts), diagonal=DiagonalEnsemble(dec),
                            min_snapshots=min(50, len(run.snapshots)))

    thr = float(cfg.get("analysis.support_threshold", 1e-3))
    picks = _spread_pick(run.snapshots, int(cfg.get("analysis.quantum_snapshots", 5)))
    u_q = np.concatenate([relative_fluctuations(f.density(), run.n_inf, thr) for _, f in picks])
    u_e = eigenstate_fluctuations(run.basis, dec.weights, support_threshold=thr)

    p = run.basis.lattice.params
    bw = float(cfg.get("analysis.bin_width", 1.0))
    y_edges = np.arange(0.0, 2 * p.b + 0.5 * bw, bw)
    ym = marginals(run.n_inf, "y-marginal", edges=y_edges)
    out = BilliardAnalysis(
        erg, e_cut, occupied, weyl_cut, sat, float(lta.l1_to_exact), fit_exponential(u_q),
        fit_porter_thomas(u_e), ym, ym.l1_distance(uniform_billiard_y_marginal(p)),
        quantum_u_samples=u_q, eigenstate_u_samples=u_e)
    if classical:
        out.classical = classical_billiard_fluctuations(cfg)
    if husimi:
        out.husimi_band_fraction = billiard_husimi(run).band_fraction(
            dec.mean_energy(), 3.0 * dec.energy_spread(), lambda x, y: np.zeros_like(x))
    return out


def billiard_husimi(run: BilliardRun) -> HusimiSection:
    """Section y = b, p_y = 0 of the last window snapshot."""
    cfg = run.config
    p = run.basis.lattice.params
    sigma = float(cfg.get("analysis.husimi_sigma", 0.5 * p.a if p.a > 0 else 1.0))
    n = int(cfg.get("analysis.husimi_points", 128))
    _, p_i = cfg.packet()[1:]
    pmax = 2.0 * math.hypot(*p_i) + 3.0 / sigma
    psi = run.snapshots[-1][1]
    return husimi_section(psi, p.b, 0.0, np.linspace(-(p.a + p.b), p.a + p.b, n),
                          np.linspace(-pmax, pmax, n), sigma)


@dataclass
class ClassicalBilliardFluctuations:
    gaussian: FitReport
    exponential: FitReport
    y_marginal: Marginal
    y_marginal_l1: float
    samples: np.ndarray = field(repr=False)


def classical_billiard_fluctuations(cfg: RunConfig) -> ClassicalBilliardFluctuations:
    """Matched Gaussian ensemble flowed into the window; cell counts against uniform filling.

    Counts in ``bin_width`` cells lying (almost) wholly inside the billiard are
    divided by their expectation under the uniform (microcanonical) density,
    pooled over ``classical_snapshots`` times spaced one T_s apart from the
    window start.
    """
    p = cfg.billiard_params()
    alpha, r_i, p_i = cfg.packet()
    Ts = cfg.time_unit()
    count = int(cfg.get("analysis.classical_count", 100000))
    ens = sample_gaussian_ensemble(alpha, r_i, p_i, count, seed=derived_seed(cfg.seed, "gaussian-ensemble"),
                                   domain=partial(billiard_contains, params=p))
    bw = float(cfg.get("analysis.bin_width", 1.0))
    half = p.a + p.b
    xe = np.arange(-math.ceil(half), math.ceil(half) + 0.5 * bw, bw)
    ye = np.arange(0.0, 2 * p.b + 0.5 * bw, bw)
    frac = uniform_cell_fractions(partial(billiard_contains, params=p), xe, ye, sub=8)
    expected = frac / frac.sum() * count
    good = frac >= 0.95 * frac.max()
    w0, _ = _window(cfg)
    pts = billiard_flow(ens.points, w0 * Ts, p)
    us, ys = [], []
    for k in range(int(cfg.get("analysis.classical_snapshots", 5))):
        if k:
            pts = billiard_flow(pts, Ts, p)
        us.append(position_counts(pts, xe, ye)[good] / expected[good])
        ys.append(pts[:, 1])
    u = np.concatenate(us)
    ym = histogram_marginal(np.concatenate(ys), ye, "y-marginal")
    return ClassicalBilliardFluctuations(fit_gaussian(u), fit_exponential(u), ym,
                                         ym.l1_distance(uniform_billiard_y_marginal(p)), u)


def save_billiard_analysis(rd: RunDirectory, a: BilliardAnalysis) -> None:
    rd.write_keyvalues("analysis.txt", a.blocks())
    rows = [[c, v] for c, v in zip(a.y_marginal.centers, a.y_marginal.values)]
    if a.classical is not None:
        rows = [r + [cv] for r, cv in zip(rows, a.classical.y_marginal.values)]
        rd.write_csv("marginals/y.csv", ("y", "f_quantum", "f_classical"), rows)
    else:
        rd.write_csv("marginals/y.csv", ("y", "f_quantum"), rows)
    if a.quantum_u_samples is not None:
        rd.write_csv("fits/quantum_u.csv", *_fit_table(a.quantum_u_samples, ("exponential", "porter-thomas")))
    if a.eigenstate_u_samples is not None:
        rd.write_csv("fits/eigenstate_u.csv", *_fit_table(a.eigenstate_u_samples, ("porter-thomas", "exponential")))
    if a.classical is not None:
        rd.write_csv("fits/classical_u.csv", *_fit_table(a.classical.samples, ("gaussian", "exponential")))


# =====================================================================================
# Henon-Heiles
# =====================================================================================

def hh_grid(cfg: RunConfig) -> Grid2D:
    hp = cfg.hh_params()
    n = int(cfg["grid.n"])
    half = float(cfg["grid.box_rc"]) * hp.r_c
    return Grid2D(n, n, -half, -half, 2 * half / n, 2 * half / n)


@dataclass
class HenonHeilesRun:
    config: RunConfig
    grid: Grid2D
    potential: np.ndarray
    initial_energy: tuple[float, float]  # (<H>, sigma_E) of the packet
    observables: ObservableSeries
    densities: list  # (t, RealField) at every sample time
    final: ComplexField
    n_inf: RealField
    leakage: bool
    time_unit: float

    def window_densities(self) -> list:
        w = _window(self.config)
        return [(t, d) for t, d in self.densities if _in_window(t, w, self.time_unit)]


def run_henon_heiles(cfg: RunConfig) -> HenonHeilesRun:
    """Split-step evolution; n_inf is the window average of the sampled densities.

    The entropy column is filled afterwards, on the bounded well, once n_inf
    is known.
    """
    hp = cfg.hh_params()
    grid = hh_grid(cfg)
    V = hh_grid_potential(grid, hp, float(cfg["grid.box_rc"]) * hp.r_c, int(cfg.get("grid.wall_cells", 8)))
    alpha, r_i, p_i = cfg.packet()
    psi = make_gaussian_packet(alpha, r_i, p_i, grid)
    e0 = energy_moments(psi, hh_potential(*grid.mesh(), hp))
    Tc = cfg.time_unit()
    dt = float(cfg["schedule.dt"]) * Tc
    t_end = float(cfg["schedule.t_end"]) * Tc
    w0, w1 = _window(cfg)
    times = np.union1d(np.linspace(0.0, t_end, int(cfg["schedule.samples"]) + 1),
                       np.linspace(w0 * Tc, w1 * Tc, int(cfg.get("schedule.window_snapshots", 51))))
    sched = PropagationSchedule.build(dt, t_end, times)
    dens = []
    res = split_step_evolve(psi, V, sched, on_snapshot=lambda t, f: dens.append((t, f.density())))
    window = [d.values for t, d in dens if _in_window(t, (w0, w1), Tc)]
    n_inf = RealField(grid, np.mean(window, axis=0), is_density=True)
    well = hh_in_well(*grid.mesh(), hp)
    thr = float(cfg.get("analysis.entropy_threshold", 1e-6))
    sr = {round(t / dt): relative_entropy(d, n_inf, thr, region=well) for t, d in dens}
    obs = res.observables
    obs.Sr = [sr.get(round(t / dt), np.nan) for t in obs.t]
    return HenonHeilesRun(cfg, grid, V, e0, obs, dens, res.final, n_inf, res.leakage, Tc)


def save_henon_heiles_run(rd: RunDirectory, run: HenonHeilesRun) -> None:
    rd.write_text("config.txt", run.config.to_text())
    rd.write_csv("observables.csv", OBSERVABLE_HEADER, run.observables.as_array().tolist())
    rd.write_field("n_inf.eqlb", run.n_inf)
    rd.write_field("final.eqlb", run.final, float(run.observables.t[-1]))
    rd.write_field("phase_final.eqlb", phase_map(run.final), float(run.observables.t[-1]))
    rows = []
    for i, (t, d) in enumerate(run.window_densities()):
        rel = f"snapshots/n_{i:04d}.eqlb"
        rd.write_field(rel, d, t)
        rows.append([i, t, rel])
    rd.write_csv("snapshots/index.csv", ("i", "t", "file"), rows)
    rd.write_keyvalues("evolve.txt", {"packet": dict(
        mean_energy=run.initial_energy[0], energy_spread=run.initial_energy[1],
        time_unit=run.time_unit, leakage=run.leakage)})


def load_henon_heiles_run(cfg: RunConfig, run_dir: str | Path) -> HenonHeilesRun:
    from .snapshot import read_snapshot
    from .store import parse_blocks
    root = Path(run_dir)
    obs = read_observables(root / "observables.csv")
    n_inf, _ = read_snapshot(root / "n_inf.eqlb", density=True)
    final, _ = read_snapshot(root / "final.eqlb")
    Tc = cfg.time_unit()
    dens = _read_snapshot_index(root, density=True)
    dens = _require_window(dens, _window(cfg), int(cfg.get("schedule.window_snapshots", 51)), Tc)
    info = parse_blocks((root / "evolve.txt").read_text())["packet"]
    hp = cfg.hh_params()
    V = hh_grid_potential(n_inf.grid, hp, float(cfg["grid.box_rc"]) * hp.r_c, int(cfg.get("grid.wall_cells", 8)))
    return HenonHeilesRun(cfg, n_inf.grid, V, (float(info["mean_energy"]), float(info["energy_spread"])),
                          obs, dens, final, n_inf, info["leakage"] == "True", Tc)


@dataclass
class HenonHeilesAnalysis:
    comparison_energy: float  # mean energy of the in-well part of the final state
    x_quantum: Marginal
    x_classical: Marginal
    x_l1: float
    entropy: SaturationReport
    quantum_u: FitReport
    correlation_decay: float
    r_c: float
    time_means: dict
    husimi_band_fraction: float | None = None
    classical_gaussian: FitReport | None = None
    classical_exponential: FitReport | None = None
    well_mass: float = 1.0
    packet_energy: float | None = None
    x_l1_packet_energy: float | None = None
    quantum_u_samples: np.ndarray | None = field(default=None, repr=False)
    classical_u_samples: np.ndarray | None = field(default=None, repr=False)

    def blocks(self) -> dict:
        out = {
            "x-marginal": dict(comparison_energy=self.comparison_energy, l1_quantum_classical=self.x_l1,
                               packet_energy=self.packet_energy,
                               l1_at_packet_energy=self.x_l1_packet_energy),
            "entropy": dict(initial=self.entropy.initial, plateau_mean=self.entropy.plateau_mean,
                            plateau_std=self.entropy.plateau_std, rise=self.entropy.rise,
                            relative_spread=self.entropy.relative_spread),
            "fit quantum-u": self.quantum_u.as_dict(),
            "correlation": dict(decay_length=self.correlation_decay, r_c=self.r_c,
                                ratio=self.correlation_decay / self.r_c),
            "time-means": self.time_means,
            "well": dict(final_mass_in_well=self.well_mass),
        }
        if self.husimi_band_fraction is not None:
            out["husimi"] = dict(band_fraction=self.husimi_band_fraction)
        if self.classical_gaussian is not None:
            out["fit classical-u gaussian"] = self.classical_gaussian.as_dict()
            out["fit classical-u exponential"] = self.classical_exponential.as_dict()
        return out


def hh_classical_x_marginal(cfg: RunConfig, E: float, edges: np.ndarray) -> Marginal:
    sys_ = HenonHeilesSystem(cfg.hh_params())
    ens = sample_microcanonical(sys_, E, int(cfg.get("analysis.microcanonical_count", 200000)),
                                float(cfg.get("analysis.shell_eps", 0.005)),
                                seed=derived_seed(cfg.seed, "microcanonical"))
    return histogram_marginal(ens.x, edges, "x-marginal")


def hh_classical_fluctuations(cfg: RunConfig, E: float) -> tuple[FitReport, FitReport, np.ndarray]:
    """Matched ensemble counts at several late times against their own mean."""
    hp = cfg.hh_params()
    alpha, r_i, p_i = cfg.packet()
    count = int(cfg.get("analysis.classical_count", 40000))
    ens = sample_gaussian_ensemble(alpha, r_i, p_i, count, seed=derived_seed(cfg.seed, "gaussian-ensemble"))
    Tc = cfg.time_unit()
    dt = 1e-3 * Tc
    t_end = float(cfg.get("analysis.classical_t_end", 5.0))
    n_snap = int(cfg.get("analysis.classical_snapshots", 4))
    bw = float(cfg.get("analysis.bin_width", 1.0))
    edges = np.arange(-hp.r_c, hp.r_c + 0.5 * bw, bw)
    pts, _ = evolve_hh_ensemble(ens.points, dt, int(round((t_end - (n_snap - 1)) * Tc / dt)), hp)
    counts = []
    for k in range(n_snap):
        if k:
            pts, _ = evolve_hh_ensemble(pts, dt, int(round(Tc / dt)), hp)
        counts.append(position_counts(pts, edges, edges))
    counts = np.array(counts)
    mean = counts.mean(axis=0)
    xc = 0.5 * (edges[1:] + edges[:-1])
    X, Y = np.meshgrid(xc, xc, indexing="ij")
    good = hh_allowed(X, Y, E, hp) & (mean >= 10)
    u = (counts / np.where(mean > 0, mean, 1.0))[:, good].ravel()
    return fit_gaussian(u), fit_exponential(u), u


def analyze_henon_heiles(run: HenonHeilesRun, classical: bool = True, husimi: bool = True) -> HenonHeilesAnalysis:
    cfg = run.config
    hp = cfg.hh_params()
    E, sigma_E = run.initial_energy
    X, Y = run.grid.mesh()
    allowed = hh_allowed(X, Y, E, hp)
    well = hh_in_well(X, Y, hp)
    bw = float(cfg.get("analysis.bin_width", 1.0))
    edges = np.arange(-hp.r_c, hp.r_c + 0.5 * bw, bw)
    # part of the packet leaks over the saddles, so the density left in the
    # well belongs to a lower mean energy than the packet's <H>
    E_well = region_energy(run.final, hh_potential(X, Y, hp), well)
    xq = marginals(run.n_inf, "x-marginal", edges=edges, mask=hh_allowed(X, Y, E_well, hp))
    xc = hh_classical_x_marginal(cfg, E_well, edges)
    xq_packet = marginals(run.n_inf, "x-marginal", edges=edges, mask=allowed)
    l1_packet = xq_packet.l1_distance(hh_classical_x_marginal(cfg, E, edges))

    w0, w1 = _window(cfg)
    T = run.time_unit
    obs = run.observables
    sat = entropy_saturation(obs.column("t"), obs.column("Sr"), (w0 - WINDOW_SLACK) * T)

    thr = float(cfg.get("analysis.support_threshold", 1e-3))
    picks = _spread_pick(run.window_densities(), int(cfg.get("analysis.quantum_snapshots", 5)))
    u_q = np.concatenate([relative_fluctuations(d, run.n_inf, thr, mask=allowed) for _, d in picks])

    final = run.final.density()
    interior = hh_allowed(X, Y, E - 0.2 * hp.V_c, hp)
    corr = spatial_correlation(final, interior, r_max=0.5 * hp.r_c)

    t = obs.column("t")
    sel = np.array([_in_window(v, (w0, w1), T) for v in t], dtype=bool)
    means = {}
    for c in ("px", "py"):
        v = obs.column(c)[sel]
        means[f"time_mean_{c}"] = float(v.mean())
        means[f"standard_error_{c}"] = standard_error(v)
    out = HenonHeilesAnalysis(E_well, xq, xc, xq.l1_distance(xc), sat, fit_exponential(u_q),
                              corr.decay_length(0.1), hp.r_c, means,
                              well_mass=float(final.values[well].sum() * run.grid.cell_area),
                              packet_energy=E, x_l1_packet_energy=l1_packet, quantum_u_samples=u_q)
    if husimi:
        sec = hh_husimi(run)
        out.husimi_band_fraction = sec.band_fraction(E, 3.0 * sigma_E, partial(hh_potential, params=hp))
    if classical:
        g, e, u = hh_classical_fluctuations(cfg, E)
        out.classical_gaussian, out.classical_exponential, out.classical_u_samples = g, e, u
    return out


def hh_husimi(run: HenonHeilesRun, state: ComplexField | None = None) -> HusimiSection:
    cfg = run.config
    hp = cfg.hh_params()
    sigma = float(cfg.get("analysis.husimi_sigma_rc", 0.11)) * hp.r_c
    n = int(cfg.get("analysis.husimi_points", 128))
    pmax = 1.3 * hp.p_0
    return husimi_section(state or run.final, 0.0, 0.0, np.linspace(-hp.r_c, hp.r_c, n),
                          np.linspace(-pmax, pmax, n), sigma)


def save_henon_heiles_analysis(rd: RunDirectory, a: HenonHeilesAnalysis) -> None:
    rd.write_keyvalues("analysis.txt", a.blocks())
    rd.write_csv("marginals/x.csv", ("x", "P_quantum", "P_classical"),
                 [[c, q, k] for c, q, k in zip(a.x_quantum.centers, a.x_quantum.values, a.x_classical.values)])
    if a.quantum_u_samples is not None:
        rd.write_csv("fits/quantum_u.csv", *_fit_table(a.quantum_u_samples, ("exponential", "porter-thomas")))
    if a.classical_u_samples is not None:
        rd.write_csv("fits/classical_u.csv", *_fit_table(a.classical_u_samples, ("gaussian", "exponential")))


# =====================================================================================
# classical, husimi, oracle, spacing
# =====================================================================================

@dataclass
class ClassicalResult:
    blocks: dict
    tables: dict  # name -> (header, rows)


def run_classical(cfg: RunConfig) -> ClassicalResult:
    """Microcanonical marginals and a Poincare/collision record for the packet centre."""
    count = int(cfg.get("analysis.microcanonical_count", 200000))
    eps = float(cfg.get("analysis.shell_eps", 0.005))
    seed = derived_seed(cfg.seed, "microcanonical")
    bw = float(cfg.get("analysis.bin_width", 1.0))
    alpha, r_i, p_i = cfg.packet()
    blocks, tables = {}, {}
    if cfg.system == "ripple":
        p = cfg.billiard_params()
        E = float(p_i[0] ** 2 + p_i[1] ** 2)
        ens = sample_microcanonical(BilliardSystem(p), E, count, eps, seed)
        ye = np.arange(0.0, 2 * p.b + 0.5 * bw, bw)
        ym = histogram_marginal(ens.y, ye, "y-marginal")
        ref = uniform_billiard_y_marginal(p)
        blocks["microcanonical"] = dict(energy=E, samples=count, y_marginal_l1=ym.l1_distance(ref))
        tables["marginals/y_microcanonical.csv"] = (
            ("y", "f_sampled", "f_closed_form"), [[c, v, float(ref(c))] for c, v in zip(ym.centers, ym.values)])
        rows = billiard_flight(PhasePoint(r_i[0], r_i[1] + 1e-6, p_i[0], p_i[1]),
                               int(cfg.get("analysis.bounces", 2000)), p)
        tables["poincare/collisions.csv"] = (("x", "y", "px", "py"), rows.tolist())
        blocks["poincare"] = dict(collisions=len(rows))
    else:
        hp = cfg.hh_params()
        E = float(p_i[0] ** 2 + p_i[1] ** 2 + hh_potential(r_i[0], r_i[1], hp))
        sys_ = HenonHeilesSystem(hp)
        ens = sample_microcanonical(sys_, E, count, eps, seed)
        edges = np.arange(-hp.r_c, hp.r_c + 0.5 * bw, bw)
        xm = histogram_marginal(ens.x, edges, "x-marginal")
        frac = uniform_cell_fractions(lambda x, y: hh_allowed(x, y, E, hp), edges,
                                      np.linspace(-0.5 * hp.r_c, hp.r_c, 301), sub=4).sum(axis=1)
        area = Marginal("x-marginal", edges, frac / (frac.sum() * np.diff(edges)))
        blocks["microcanonical"] = dict(energy=E, samples=count, x_marginal_l1_to_area=xm.l1_distance(area))
        tables["marginals/x_microcanonical.csv"] = (
            ("x", "P_sampled", "P_area"), [[c, v, a] for c, v, a in zip(xm.centers, xm.values, area.values)])
        Tc = hp.t_char
        traj = integrate_henon_heiles(PhasePoint(r_i[0], r_i[1], p_i[0], p_i[1]), 1e-3 * Tc,
                                      float(cfg.get("analysis.orbit_t_end", 200.0)) * Tc, hp)
        drift = traj.energy(hp)
        blocks["orbit"] = dict(energy=E, status=traj.status, relative_energy_drift=float(
            np.max(np.abs(drift - drift[0])) / abs(drift[0])))
        try:
            sec = poincare_section(traj, min_crossings=10)
            tables["poincare/section.csv"] = (("y", "py"), sec.tolist())
            blocks["poincare"] = dict(crossings=len(sec))
        except ValueError as exc:
            blocks["poincare"] = dict(crossings=0, note=str(exc))
    return ClassicalResult(blocks, tables)


def save_tables(rd: RunDirectory, tables: dict) -> None:
    for rel, (header, rows) in tables.items():
        rd.write_csv(rel, header, rows)


def save_husimi(rd: RunDirectory, sec: HusimiSection, E: float, potential, band: float | None) -> None:
    rd.write_field("husimi/section.eqlb", RealField(Grid2D(len(sec.x), len(sec.px), float(sec.x[0]),
                                                           float(sec.px[0]), float(sec.x[1] - sec.x[0]),
                                                           float(sec.px[1] - sec.px[0])), sec.normalized))
    rd.write_csv("husimi/axes.csv", ("axis", "index", "value"),
                 [["x", i, v] for i, v in enumerate(sec.x)] + [["px", i, v] for i, v in enumerate(sec.px)])
    try:
        shell = classical_shell_section(E, sec.y0, sec.py0, potential, sec.x)
        rd.write_csv("husimi/shell.csv", ("x", "p_upper", "p_lower"),
                     np.column_stack([shell.x, shell.p_upper, shell.p_lower]).tolist())
    except ValueError:
        pass
    rd.write_keyvalues("husimi/section.txt", {"section": dict(
        y0=sec.y0, py0=sec.py0, sigma=sec.sigma, energy=E, band_fraction=band if band is not None else "n/a")})


def run_oracle(kind: str, N: int, draws: int, seed: int, bins: int = 60):
    return hypersphere_oracle(N, kind, draws, seed=derived_seed(seed, "oracle"), bins=bins)


def run_spacing(basis: BilliardEigenbasis) -> dict[str, SpacingStats]:
    """Per-sector statistics, plus the merged spectrum when several sectors are present.

    The merged spectrum is only complete up to the lowest sector top, so it
    is truncated there.
    """
    out = {sector_name(s): level_spacing_statistics(basis.sector_energies(s)) for s in basis.sectors}
    if len(basis.sectors) > 1:
        top = min(basis.sector_energies(s)[-1] for s in basis.sectors)
        out["all-sectors"] = level_spacing_statistics(basis.energies[basis.energies <= top])
    return out


__all__ = [
    "BilliardRun", "BilliardAnalysis", "HenonHeilesRun", "HenonHeilesAnalysis", "ClassicalResult",
    "MissingSnapshotsError", "billiard_basis", "run_billiard", "analyze_billiard", "save_billiard_run",
    "load_billiard_run", "save_billiard_analysis", "run_henon_heiles", "analyze_henon_heiles",
    "save_henon_heiles_run", "load_henon_heiles_run", "save_henon_heiles_analysis", "run_classical",
    "run_oracle", "run_spacing", "weyl_reports", "save_eigensolve", "derived_seed", "__version__",
]
