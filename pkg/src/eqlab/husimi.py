"""Husimi (coherent-state) phase-space densities and classical energy-shell sections."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fields import ComplexField


class HusimiResolutionError(ValueError):
    pass


def _check_sigma(psi: ComplexField, sigma: float) -> None:
    g = psi.grid
    if not sigma >= 2.0 * max(g.dx, g.dy):
        raise HusimiResolutionError(
            f"coarse-graining length {sigma:g} is under-resolved by the grid "
            f"(need >= {2.0 * max(g.dx, g.dy):g})")


def coherent_state(grid, r, p, sigma: float) -> ComplexField:
    """<r'|r,p> = C exp(-|r'-r|^2 / 2 sigma^2 + i p.(r'-r)), C = 1/(sigma sqrt(pi))."""
    X, Y = grid.mesh()
    dx, dy = X - r[0], Y - r[1]
    vals = np.exp(-(dx * dx + dy * dy) / (2.0 * sigma ** 2) + 1j * (p[0] * dx + p[1] * dy))
    return ComplexField(grid, vals / (sigma * math.sqrt(math.pi)))


def husimi_value(psi: ComplexField, r, p, sigma: float) -> float:
    """|<r,p|psi>|^2 with a unit-norm coherent state."""
    _check_sigma(psi, sigma)
    coh = coherent_state(psi.grid, r, p, sigma)
    amp = np.vdot(coh.values.ravel(), psi.values.ravel()) * psi.grid.cell_area
    return float(abs(amp) ** 2)


@dataclass
class HusimiSection:
    x: np.ndarray
    px: np.ndarray
    values: np.ndarray  # shape (len(x), len(px))
    sigma: float
    y0: float
    py0: float

    @property
    def normalized(self) -> np.ndarray:
        m = self.values.max()
        return self.values / m if m > 0 else self.values

    def integral(self) -> float:
        return float(np.trapezoid(np.trapezoid(self.values, self.px, axis=1), self.x))

    def band_fraction(self, E: float, width: float, potential: Callable) -> float:
        """Share of the section mass with |p_x^2 + p_y0^2 + V(x, y0) - E| < width."""
        X, P = np.meshgrid(self.x, self.px, indexing="ij")
        H = P * P + self.py0 ** 2 + potential(X, np.full_like(X, self.y0))
        inside = np.abs(H - E) < width
        return float(self.values[inside].sum() / self.values.sum())


def husimi_section(psi: ComplexField, y0: float, py0: float, x_grid, px_grid, sigma: float) -> HusimiSection:
    """H(x, p_x) on the plane y = y0, p_y = py0.

    The coherent state factorizes, so the y overlap is done once per column
    and the x overlap becomes a Gaussian-windowed Fourier sum.
    """
    _check_sigma(psi, sigma)
    g = psi.grid
    xs, ys = g.x, g.y
    x_grid = np.asarray(x_grid, dtype=float)
    px_grid = np.asarray(px_grid, dtype=float)
    wy = np.exp(-(ys - y0) ** 2 / (2.0 * sigma ** 2) - 1j * py0 * (ys - y0))
    col = psi.values @ wy * g.dy  # g(x') = integral psi(x', y') conj(phi_y(y')) dy'
    W = np.exp(-(xs[None, :] - x_grid[:, None]) ** 2 / (2.0 * sigma ** 2)) * col[None, :]
    F = np.exp(-1j * np.outer(xs, px_grid))
    amp = (W @ F) * np.exp(1j * np.outer(x_grid, px_grid)) * g.dx / (sigma * math.sqrt(math.pi))
    return HusimiSection(x_grid, px_grid, np.abs(amp) ** 2, float(sigma), float(y0), float(py0))


def husimi_total(psi: ComplexField, sigma: float, stride: int = 1) -> float:
    """integral H d^2r d^2p / (2 pi)^2 with r on every ``stride``-th node and p on the FFT grid."""
    _check_sigma(psi, sigma)
    g = psi.grid
    X, Y = g.mesh()
    cell = g.cell_area
    dk2 = g.dkx * g.dky
    total = 0.0
    C = 1.0 / (sigma * math.sqrt(math.pi))
    for x in g.x[::stride]:
        for y in g.y[::stride]:
            w = C * np.exp(-((X - x) ** 2 + (Y - y) ** 2) / (2.0 * sigma ** 2))
            A = np.fft.fft2(psi.values * w) * cell
            total += np.sum(np.abs(A) ** 2) * dk2
    return float(total * (stride * g.dx) * (stride * g.dy) / (2.0 * np.pi) ** 2)


@dataclass
class ShellCurve:
    x: np.ndarray
    p_upper: np.ndarray
    p_lower: np.ndarray


class EmptySectionError(ValueError):
    pass


def classical_shell_section(E: float, y0: float, py0: float, potential: Callable, x_grid) -> ShellCurve:
    """p_x = +-sqrt(E - p_y0^2 - V(x, y0)) where the radicand is non-negative."""
    x = np.asarray(x_grid, dtype=float)
    rad = E - py0 ** 2 - np.asarray(potential(x, np.full_like(x, y0)), dtype=float)
    rad = np.broadcast_to(rad, x.shape)
    ok = rad >= 0
    if not ok.any():
        raise EmptySectionError(f"energy {E:g} lies below the potential along the section line")
    root = np.sqrt(rad[ok])
    return ShellCurve(x[ok], root, -root)
