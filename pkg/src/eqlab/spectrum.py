"""Ripple billiard Dirichlet eigenpairs, state expansion and spectral statistics.

The billiard has two reflection symmetries, x -> -x and y -> 2b - y, so the
Dirichlet Laplacian block-diagonalizes into four parity sectors.  Each sector
is solved on the quarter domain x > 0, y < b with a 5-point stencil on a
cell-centred lattice: the symmetry planes fall half a cell from the first
row/column of nodes (mirror ghosts), and curved walls enter through a diagonal
correction from linear extrapolation to the wall (a symmetric second-order
ghost-point scheme), so every sector operator is symmetric positive definite.
"""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy import stats
from scipy.optimize import brentq

from .fields import ComplexField, Grid2D, RealField
from .models import RippleBilliardParams, wall_half_width

log = logging.getLogger(__name__)

EVEN, ODD = 1, -1
SECTORS: tuple[tuple[int, int], ...] = ((EVEN, EVEN), (ODD, EVEN), (EVEN, ODD), (ODD, ODD))
PARITY_NAME = {EVEN: "even", ODD: "odd"}
MIN_POINTS_PER_WAVELENGTH = 10.0
_THETA_FLOOR = 1e-3


class ResolutionError(ValueError):
    def __init__(self, message: str, max_count: int):
        super().__init__(message)
        self.max_count = max_count


def parse_parity(value) -> int:
    if value in (EVEN, "even", "e", "+", "+1"):
        return EVEN
    if value in (ODD, "odd", "o", "-", "-1"):
        return ODD
    raise ValueError(f"unknown parity {value!r}")


def sector_name(sector: tuple[int, int]) -> str:
    return f"{PARITY_NAME[sector[0]]}-{PARITY_NAME[sector[1]]}"


# -- Weyl asymptotics -------------------------------------------------------

def weyl_count(E, params: RippleBilliardParams):
    """Two-term Weyl estimate of the number of Dirichlet levels below E."""
    E = np.asarray(E, dtype=float)
    return (params.area * E - params.perimeter * np.sqrt(E)) / (4.0 * np.pi)


def sector_boundary_lengths(params: RippleBilliardParams, sector) -> tuple[float, float]:
    """(Dirichlet length, Neumann length) of the quarter domain of a sector."""
    px, py = sector
    dirichlet = 0.5 * params.side_wall_length + (params.b - params.a)
    neumann = 0.0
    plane_x = params.b  # x = 0 plane, y in [0, b]
    plane_y = params.a + params.b  # y = b plane, x in [0, a + b]
    if px == ODD:
        dirichlet += plane_x
    else:
        neumann += plane_x
    if py == ODD:
        dirichlet += plane_y
    else:
        neumann += plane_y
    return dirichlet, neumann


def sector_weyl_count(E, params: RippleBilliardParams, sector):
    E = np.asarray(E, dtype=float)
    ld, ln = sector_boundary_lengths(params, sector)
    return (0.25 * params.area * E - (ld - ln) * np.sqrt(E)) / (4.0 * np.pi)


def sector_weyl_energy(index: float, params: RippleBilliardParams, sector) -> float:
    """Energy at which the sector Weyl count reaches ``index``."""
    hi = 8.0 * np.pi * (index + 10) / (0.25 * params.area) + 10.0
    return float(brentq(lambda e: sector_weyl_count(e, params, sector) - index, 0.0, hi))


def sectors_weyl_energy(count: float, params: RippleBilliardParams, sectors) -> float:
    """Energy at which the summed Weyl counts of ``sectors`` reach ``count``."""
    def excess(E):
        return sum(float(sector_weyl_count(E, params, s)) for s in sectors) - count
    hi = 1.0
    while excess(hi) < 0:
        hi *= 2.0
    return float(brentq(excess, 0.0, hi))


def weyl_energy(count: float, params: RippleBilliardParams) -> float:
    hi = 8.0 * np.pi * (count + 10) / params.area + 10.0
    return float(brentq(lambda e: weyl_count(e, params) - count, 0.0, hi))


# -- lattice ----------------------------------------------------------------

@dataclass(frozen=True)
class BilliardLattice:
    """Cell-centred lattice shared by eigenfunctions and propagated states.

    ``resolution`` is the number of lattice cells across the half height b.
    ``pad`` extra empty cells surround the billiard on the full grid.
    """

    params: RippleBilliardParams
    resolution: int
    pad: int = 4

    def __post_init__(self):
        if self.resolution < 4:
            raise ValueError("resolution must be at least 4 cells per half height")

    @property
    def h(self) -> float:
        return self.params.b / self.resolution

    @property
    def mx(self) -> int:
        return int(math.ceil((self.params.a + self.params.b) / self.h - 1e-9))

    @property
    def my(self) -> int:
        return self.resolution

    @cached_property
    def quarter_xy(self) -> tuple[np.ndarray, np.ndarray]:
        xs = (np.arange(self.mx) + 0.5) * self.h
        ys = self.params.b - (np.arange(self.my) + 0.5) * self.h
        return np.meshgrid(xs, ys, indexing="ij")

    @cached_property
    def quarter_mask(self) -> np.ndarray:
        X, Y = self.quarter_xy
        return np.abs(X) < wall_half_width(Y, self.params)

    @cached_property
    def n_inside(self) -> int:
        return int(self.quarter_mask.sum())

    @cached_property
    def full_grid(self) -> Grid2D:
        nx = 2 * (self.mx + self.pad)
        ny = 2 * (self.my + self.pad)
        x0 = -(self.mx + self.pad - 0.5) * self.h
        y0 = self.params.b - (self.my + self.pad - 0.5) * self.h
        return Grid2D(nx, ny, x0, y0, self.h, self.h)

    @cached_property
    def quarter_grid(self) -> Grid2D:
        """Quarter-domain grid (x ascending from h/2, y ascending to b - h/2)."""
        return Grid2D(max(self.mx, 8), max(self.my, 8), 0.5 * self.h,
                      self.params.b - (self.my - 0.5) * self.h, self.h, self.h)

    @cached_property
    def full_mask(self) -> np.ndarray:
        X, Y = self.full_grid.mesh()
        return (np.abs(X) < wall_half_width(Y, self.params)) & (Y > 0) & (Y < 2 * self.params.b)

    @cached_property
    def _quadrant_index(self):
        I, J = np.nonzero(self.quarter_mask)
        cx = self.mx + self.pad
        cy = self.my + self.pad
        return dict(
            xp=cx + I, xm=cx - 1 - I,
            yl=cy - 1 - J, yu=cy + J,
        )

    def fold(self, values: np.ndarray, sector) -> np.ndarray:
        """Symmetry-projected quarter vector sum_R s_R psi(R q) of a full-grid array."""
        px, py = sector
        q = self._quadrant_index
        return (values[q["xp"], q["yl"]] + px * values[q["xm"], q["yl"]]
                + py * values[q["xp"], q["yu"]] + px * py * values[q["xm"], q["yu"]])

    def unfold(self, qvec: np.ndarray, sector, out: np.ndarray | None = None) -> np.ndarray:
        """Full-grid array of the sector function with quarter values ``qvec``.

        Adds into ``out`` when given (leading axes of ``qvec`` beyond the first
        are not supported).
        """
        px, py = sector
        q = self._quadrant_index
        if out is None:
            out = np.zeros(self.full_grid.shape, dtype=np.result_type(qvec, np.float64))
        out[q["xp"], q["yl"]] += qvec
        out[q["xm"], q["yl"]] += px * qvec
        out[q["xp"], q["yu"]] += py * qvec
        out[q["xm"], q["yu"]] += px * py * qvec
        return out

    def quarter_field(self, qvec: np.ndarray) -> RealField:
        vals = np.zeros(self.quarter_grid.shape)
        X = np.zeros((self.mx, self.my))
        X[self.quarter_mask] = qvec
        # quarter grid stores y ascending
        vals[: self.mx, : self.my] = X[:, ::-1]
        return RealField(self.quarter_grid, vals)

    def operator(self, sector) -> sp.csr_matrix:
        """Sector block of -Laplacian (= H with m = 1/2) on the quarter domain."""
        px, py = sector
        h = self.h
        p = self.params
        mask = self.quarter_mask
        idx = -np.ones(mask.shape, dtype=np.int64)
        n = self.n_inside
        idx[mask] = np.arange(n)
        I, J = np.nonzero(mask)
        X, Y = self.quarter_xy
        xq, yq = X[I, J], Y[I, J]
        diag = np.full(n, 4.0 / h ** 2)
        rows, cols = [], []

        def couple(sel, i2, j2):
            rows.append(idx[I[sel], J[sel]])
            cols.append(idx[i2[sel], j2[sel]])

        # +x neighbour: inside or crossing the side wall
        i2 = I + 1
        ok = i2 < self.mx
        nb = np.zeros(n, dtype=bool)
        nb[ok] = mask[i2[ok], J[ok]]
        couple(nb, i2, J)
        theta = (wall_half_width(yq, p) - xq) / h
        diag[~nb] += (1.0 / np.maximum(theta[~nb], _THETA_FLOOR) - 1.0) / h ** 2

        # -x neighbour: symmetry plane at x = 0 for the first column
        plane = I == 0
        diag[plane] -= px / h ** 2
        couple(~plane, I - 1, J)

        # +y neighbour (towards y = b): symmetry plane for the first row
        plane = J == 0
        diag[plane] -= py / h ** 2
        couple(~plane, I, J - 1)

        # -y neighbour (towards the floor): floor or side wall may intervene
        j2 = J + 1
        ok = j2 < self.my
        nb = np.zeros(n, dtype=bool)
        nb[ok] = mask[I[ok], j2[ok]]
        couple(nb, I, j2)
        wall = ~nb
        theta = yq[wall] / h
        if p.a > 0:
            arg = (p.b - xq[wall]) / p.a
            crosses = np.abs(arg) <= 1.0
            yc = np.full(theta.shape, -np.inf)
            yc[crosses] = p.b / np.pi * np.arccos(arg[crosses])
            theta_side = (yq[wall] - yc) / h
            theta = np.minimum(theta, np.where(theta_side > 0, theta_side, np.inf))
        diag[wall] += (1.0 / np.maximum(theta, _THETA_FLOOR) - 1.0) / h ** 2

        r = np.concatenate(rows + [np.arange(n)])
        c = np.concatenate(cols + [np.arange(n)])
        v = np.concatenate([np.full(sum(len(x) for x in rows), -1.0 / h ** 2), diag])
        return sp.csr_matrix((v, (r, c)), shape=(n, n))

    def max_reliable_energy(self) -> float:
        """Largest energy still resolved by MIN_POINTS_PER_WAVELENGTH points."""
        return (2.0 * np.pi / (MIN_POINTS_PER_WAVELENGTH * self.h)) ** 2

    def points_per_wavelength(self, E: float) -> float:
        return 2.0 * np.pi / math.sqrt(E) / self.h

    def dispersion_corrected(self, lam):
        """Continuum energy estimate lam + lam^2 h^2 / 16 of a lattice eigenvalue.

        The 5-point stencil maps a plane wave of wavenumber k to
        k^2 - k^4 h^2 (cos^4 + sin^4) / 12; averaging over directions (chaotic
        states are isotropic random waves) gives k^2 - k^4 h^2 / 16, inverted
        here to leading order.
        """
        lam = np.asarray(lam, dtype=float)
        return lam + lam * lam * self.h ** 2 / 16.0


def resolution_for(params: RippleBilliardParams, count: int, points_per_wavelength: float = 12.0,
                   sector=(EVEN, EVEN)) -> int:
    """Smallest lattice resolution giving the requested sampling at the count-th level."""
    e_top = 1.05 * sector_weyl_energy(count, params, sector)
    h = 2.0 * np.pi / math.sqrt(e_top) / points_per_wavelength
    return int(math.ceil(params.b / h))


# -- eigenpairs -------------------------------------------------------------

@dataclass(frozen=True)
class EigenPair:
    E: float
    phi: RealField
    parity_x: str
    parity_y: str
    residual: float = 0.0


@dataclass
class SectorSolution:
    sector: tuple[int, int]
    energies: np.ndarray
    vectors: np.ndarray  # (n_inside, count); sum q^2 h^2 = 1/4
    residuals: np.ndarray
    lattice_energies: np.ndarray | None = None  # raw stencil eigenvalues when corrected


@dataclass
class BilliardEigenbasis:
    """Merged eigenpairs of several sectors, sorted ascending in energy."""

    lattice: BilliardLattice
    solutions: list[SectorSolution]

    def __post_init__(self):
        e = np.concatenate([s.energies for s in self.solutions])
        sec = np.concatenate([np.full(len(s.energies), k) for k, s in enumerate(self.solutions)])
        col = np.concatenate([np.arange(len(s.energies)) for s in self.solutions])
        order = np.argsort(e, kind="stable")
        self.energies = e[order]
        self._sec = sec[order]
        self._col = col[order]
        self.parity_x = np.array([self.solutions[s].sector[0] for s in self._sec], dtype=int)
        self.parity_y = np.array([self.solutions[s].sector[1] for s in self._sec], dtype=int)
        self.residuals = np.concatenate([s.residuals for s in self.solutions])[order]

    def __len__(self) -> int:
        return len(self.energies)

    @property
    def sectors(self) -> list[tuple[int, int]]:
        return [s.sector for s in self.solutions]

    @property
    def grid(self) -> Grid2D:
        return self.lattice.full_grid

    def sector_indices(self, sector) -> np.ndarray:
        """Merged-basis indices of one sector in ascending energy."""
        sector = (parse_parity(sector[0]), parse_parity(sector[1]))
        return np.nonzero((self.parity_x == sector[0]) & (self.parity_y == sector[1]))[0]

    def sector_energies(self, sector) -> np.ndarray:
        return self.energies[self.sector_indices(sector)]

    def quarter_vector(self, k: int) -> np.ndarray:
        s = self.solutions[self._sec[k]]
        return s.vectors[:, self._col[k]]

    def sector_of(self, k: int) -> tuple[int, int]:
        return self.solutions[self._sec[k]].sector

    def eigenfunction(self, k: int) -> np.ndarray:
        return self.lattice.unfold(self.quarter_vector(k), self.sector_of(k))

    def pair(self, k: int) -> EigenPair:
        px, py = self.sector_of(k)
        return EigenPair(float(self.energies[k]), RealField(self.grid, self.eigenfunction(k)),
                         PARITY_NAME[px], PARITY_NAME[py], float(self.residuals[k]))

    @property
    def pairs(self) -> list[EigenPair]:
        """All eigenpairs as full-grid fields (memory heavy for large bases)."""
        return [self.pair(k) for k in range(len(self))]

    def _blocks(self):
        """Yield (solution, merged indices, column selector) per sector."""
        for s_id, sol in enumerate(self.solutions):
            sel = np.nonzero(self._sec == s_id)[0]
            cols = self._col[sel]
            if np.array_equal(cols, np.arange(sol.vectors.shape[1])):
                cols = slice(None)  # avoid copying the eigenvector block
            yield sol, sel, cols

    def project(self, values: np.ndarray) -> np.ndarray:
        """Coefficients <phi_k|psi> of a full-grid array for every basis state."""
        c = np.zeros(len(self), dtype=np.result_type(values, np.float64))
        h2 = self.lattice.h ** 2
        for sol, sel, cols in self._blocks():
            folded = self.lattice.fold(values, sol.sector)
            c[sel] = h2 * (sol.vectors[:, cols].T @ folded)
        return c

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        """Full-grid array sum_k coeffs_k phi_k."""
        coeffs = np.asarray(coeffs)
        out = np.zeros(self.grid.shape, dtype=np.result_type(coeffs, np.float64))
        for sol, sel, cols in self._blocks():
            q = sol.vectors[:, cols] @ coeffs[sel]
            self.lattice.unfold(q, sol.sector, out=out)
        return out

    def density_of(self, weights: np.ndarray) -> np.ndarray:
        """Full-grid array sum_k weights_k phi_k^2 (the diagonal-ensemble density)."""
        weights = np.asarray(weights, dtype=float)
        out = np.zeros(self.grid.shape)
        for sol, sel, cols in self._blocks():
            q = (sol.vectors[:, cols] ** 2) @ weights[sel]
            self.lattice.unfold(q, (EVEN, EVEN), out=out)
        return out

    def gram_deviation(self) -> float:
        worst = 0.0
        h2 = self.lattice.h ** 2
        for sol in self.solutions:
            g = 4.0 * h2 * (sol.vectors.T @ sol.vectors)
            worst = max(worst, float(np.max(np.abs(g - np.eye(g.shape[0])))))
        return worst


def _solve_sector(lattice: BilliardLattice, sector, count: int, tol: float,
                  correct: bool = True) -> SectorSolution:
    A = lattice.operator(sector)
    n = A.shape[0]
    if count >= n - 1:
        raise ResolutionError(f"lattice has only {n} unknowns for {count} states", n - 2)
    v0 = np.ones(n)  # deterministic ARPACK start vector
    vals, vecs = sla.eigsh(A, k=count, sigma=0.0, which="LM", v0=v0, tol=tol)
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    # sign convention: largest-magnitude entry positive
    piv = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[piv, np.arange(vecs.shape[1])])
    vecs = vecs * signs
    vecs /= 2.0 * lattice.h * np.linalg.norm(vecs, axis=0)
    res = np.linalg.norm(A @ vecs - vecs * vals, axis=0) / (vals * np.linalg.norm(vecs, axis=0))
    if correct:
        return SectorSolution(tuple(sector), lattice.dispersion_corrected(vals), vecs, res, vals)
    return SectorSolution(tuple(sector), vals, vecs, res)


def solve_eigenstates(params: RippleBilliardParams, count: int, resolution: int,
                      sectors: Sequence = SECTORS, pad: int = 4, threads: int = 1,
                      tol: float = 0.0, dispersion_correction: bool = True) -> BilliardEigenbasis:
    """Lowest ``count`` eigenpairs of each requested parity sector, merged and sorted.

    With ``dispersion_correction`` the reported energies are the lattice
    eigenvalues mapped through ``BilliardLattice.dispersion_corrected``
    (the eigenvectors are unchanged); the raw values stay available as
    ``SectorSolution.lattice_energies``.

    Raises ResolutionError (carrying the largest reliable count) when the
    lattice would sample the top requested level with fewer than ten points
    per wavelength.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    lattice = BilliardLattice(params, resolution, pad)
    sectors = [(parse_parity(a), parse_parity(b)) for a, b in sectors]
    e_max = lattice.max_reliable_energy()
    for s in sectors:
        e_top = sector_weyl_energy(count, params, s)
        if e_top > e_max:
            max_count = int(np.floor(sector_weyl_count(e_max, params, s)))
            raise ResolutionError(
                f"resolution {resolution} resolves about {max_count} states in sector "
                f"{sector_name(s)}; {count} requested (need >= {MIN_POINTS_PER_WAVELENGTH:g} "
                f"points per wavelength)", max_count)
    log.info("solving %d states in %d sectors on %d unknowns", count, len(sectors), lattice.n_inside)
    if threads > 1 and len(sectors) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            sols = list(pool.map(lambda s: _solve_sector(lattice, s, count, tol, dispersion_correction),
                                 sectors))
    else:
        sols = [_solve_sector(lattice, s, count, tol, dispersion_correction) for s in sectors]
    for sol in sols:
        top = sol.energies[-1] if sol.lattice_energies is None else sol.lattice_energies[-1]
        if top > e_max * 1.0001:
            raw = sol.energies if sol.lattice_energies is None else sol.lattice_energies
            max_count = int(np.sum(raw <= e_max))
            raise ResolutionError(
                f"level {count} of sector {sector_name(sol.sector)} at E={top:.3f} is under-resolved; "
                f"maximum reliable count is {max_count}", max_count)
    return BilliardEigenbasis(lattice, sols)


# -- expansion ----------------------------------------------------------------

@dataclass
class SpectralDecomposition:
    basis: BilliardEigenbasis
    c: np.ndarray
    captured_norm: float
    warning: str | None = None

    @property
    def energies(self) -> np.ndarray:
        return self.basis.energies

    @property
    def weights(self) -> np.ndarray:
        return np.abs(self.c) ** 2

    def renormalized_weights(self) -> np.ndarray:
        w = self.weights
        return w / w.sum()

    def mean_energy(self) -> float:
        w = self.renormalized_weights()
        return float(np.sum(w * self.energies))

    def energy_spread(self) -> float:
        w = self.renormalized_weights()
        m = np.sum(w * self.energies)
        return float(np.sqrt(np.sum(w * (self.energies - m) ** 2)))

    def sector_weights(self) -> dict[str, float]:
        out = {}
        for sol in self.basis.solutions:
            sel = self.basis.sector_indices(sol.sector)
            out[sector_name(sol.sector)] = float(self.weights[sel].sum())
        return out

    def cumulative_energy(self, fraction: float = 0.999) -> float:
        """Smallest energy whose cumulative renormalized weight reaches ``fraction``."""
        w = self.renormalized_weights()
        cum = np.cumsum(w)
        k = int(np.searchsorted(cum, fraction - 1e-15))
        return float(self.energies[min(k, len(w) - 1)])


CAPTURE_THRESHOLD = 0.999


def expand_state(psi: ComplexField, basis: BilliardEigenbasis) -> SpectralDecomposition:
    if not psi.grid.same_as(basis.grid):
        raise ValueError("state and eigenbasis live on different grids")
    c = basis.project(psi.values)
    captured = float(np.sum(np.abs(c) ** 2) / psi.norm_sq)
    msg = None
    if captured < CAPTURE_THRESHOLD:
        msg = f"basis captures only {captured:.6f} of the state norm"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return SpectralDecomposition(basis, c, captured, msg)


def odd_y_weight(psi: ComplexField) -> float:
    """Norm fraction of a billiard-lattice state that is odd under y -> 2b - y."""
    v = psi.values
    odd = 0.5 * (v - v[:, ::-1])
    return float(np.sum(np.abs(odd) ** 2) / np.sum(np.abs(v) ** 2))


# -- level statistics ---------------------------------------------------------

def wigner_cdf(s):
    s = np.asarray(s, dtype=float)
    return 1.0 - np.exp(-np.pi * s * s / 4.0)


def wigner_pdf(s):
    s = np.asarray(s, dtype=float)
    return 0.5 * np.pi * s * np.exp(-np.pi * s * s / 4.0)


def poisson_cdf(s):
    return 1.0 - np.exp(-np.asarray(s, dtype=float))


def unfold_spectrum(energies, degree: int = 3) -> np.ndarray:
    """Map levels through a degree-``degree`` polynomial fit of the staircase N(E)."""
    e = np.sort(np.asarray(energies, dtype=float))
    staircase = np.arange(1, len(e) + 1, dtype=float)
    scale = np.max(np.abs(e)) or 1.0
    coef = np.polynomial.polynomial.polyfit(e / scale, staircase, degree)
    return np.polynomial.polynomial.polyval(e / scale, coef)


@dataclass
class SpacingStats:
    spacings: np.ndarray
    bin_edges: np.ndarray
    density: np.ndarray
    ks_wigner: float
    ks_poisson: float

    @property
    def closer_to(self) -> str:
        return "wigner" if self.ks_wigner < self.ks_poisson else "poisson"


MIN_LEVELS = 200


class TooFewLevelsError(ValueError):
    pass


def level_spacing_statistics(energies, parity_sector=None, bins: int = 30,
                             degree: int = 3) -> SpacingStats:
    """Unfolded nearest-neighbour spacing statistics of one symmetry sector."""
    e = np.sort(np.asarray(energies, dtype=float))
    if len(e) < MIN_LEVELS:
        raise TooFewLevelsError(f"need at least {MIN_LEVELS} levels for spacing statistics, got {len(e)}")
    u = unfold_spectrum(e, degree)
    s = np.diff(u)
    density, edges = np.histogram(s, bins=bins, range=(0.0, max(4.0, float(s.max()))), density=True)
    ks_w = stats.kstest(s, wigner_cdf).statistic
    ks_p = stats.kstest(s, poisson_cdf).statistic
    return SpacingStats(s, edges, density, float(ks_w), float(ks_p))


MAX_GAP_LEVELS = 2000


def degenerate_gap_scan(energies, tol: float | None = None) -> int:
    """Number of positive gaps E_k - E_l sharing their value with a distinct gap.

    Pairs that coincide only because E_k = E_m and E_l = E_n (degenerate
    levels), or that are the same index pair, are not counted.  With
    ``tol=None`` the tolerance is 1e-9 * max|E|.
    """
    e = np.sort(np.asarray(energies, dtype=float))
    d = len(e)
    if d > MAX_GAP_LEVELS:
        raise ValueError(f"{d} levels exceed the {MAX_GAP_LEVELS}-level limit; truncate the spectrum")
    if tol is None:
        tol = 1e-9 * float(np.max(np.abs(e))) if d else 0.0
    k, l = np.triu_indices(d, 1)
    gaps = e[l] - e[k]
    keep = gaps > tol
    gaps, hi, lo = gaps[keep], e[l][keep], e[k][keep]
    order = np.argsort(gaps, kind="stable")
    gaps, hi, lo = gaps[order], hi[order], lo[order]
    repeated = np.zeros(len(gaps), dtype=bool)
    offset = 1
    while offset < len(gaps):
        close = gaps[offset:] - gaps[:-offset] <= tol
        if not close.any():
            break
        i = np.nonzero(close)[0]
        j = i + offset
        trivial = (np.abs(hi[i] - hi[j]) <= tol) & (np.abs(lo[i] - lo[j]) <= tol)
        i, j = i[~trivial], j[~trivial]
        repeated[i] = True
        repeated[j] = True
        offset += 1
    return int(repeated.sum())


def goe_spectrum(n: int, rng: np.random.Generator) -> np.ndarray:
    """Eigenvalues of an n x n Gaussian orthogonal ensemble matrix."""
    a = rng.standard_normal((n, n))
    return np.linalg.eigvalsh((a + a.T) / 2.0)


__all__ = [
    "SECTORS", "EVEN", "ODD", "BilliardLattice", "BilliardEigenbasis", "EigenPair",
    "SpectralDecomposition", "ResolutionError", "TooFewLevelsError", "solve_eigenstates", "expand_state",
    "level_spacing_statistics", "degenerate_gap_scan", "weyl_count", "sector_weyl_count",
    "sector_weyl_energy", "resolution_for", "unfold_spectrum", "goe_spectrum",
]
