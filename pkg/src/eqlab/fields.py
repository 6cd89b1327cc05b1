"""Uniform rectangular grids and scalar fields living on them.

Values are stored with ``indexing='ij'``: ``values[i, j]`` is the sample at
``(x0 + i*dx, y0 + j*dy)``.  Units follow hbar = 1 and m = 1/2, so a
momentum is an angular wavenumber and the kinetic energy is ``p**2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft


class FieldError(ValueError):
    """Raised for invalid grids or incompatible fields."""


def _frozen(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    x0: float
    y0: float
    dx: float
    dy: float

    def __post_init__(self):
        if int(self.nx) < 8 or int(self.ny) < 8:
            raise FieldError(f"grid needs at least 8 points per axis, got {self.nx}x{self.ny}")
        if not (self.dx > 0 and self.dy > 0):
            raise FieldError("grid spacings must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.y0 + self.dy * np.arange(self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    @property
    def dkx(self) -> float:
        return 2.0 * np.pi / (self.nx * self.dx)

    @property
    def dky(self) -> float:
        return 2.0 * np.pi / (self.ny * self.dy)

    @property
    def kx(self) -> np.ndarray:
        """Centered momentum axis, monotone from -k_max upwards."""
        return self.dkx * (np.arange(self.nx) - self.nx // 2)

    @property
    def ky(self) -> np.ndarray:
        return self.dky * (np.arange(self.ny) - self.ny // 2)

    def momentum_grid(self) -> "Grid2D":
        return Grid2D(self.nx, self.ny, float(self.kx[0]), float(self.ky[0]), self.dkx, self.dky)

    def k_squared(self) -> np.ndarray:
        """|k|^2 in unshifted FFT ordering (for propagators)."""
        kx = 2.0 * np.pi * sfft.fftfreq(self.nx, d=self.dx)
        ky = 2.0 * np.pi * sfft.fftfreq(self.ny, d=self.dy)
        return kx[:, None] ** 2 + ky[None, :] ** 2

    def same_as(self, other: "Grid2D", rtol: float = 1e-12) -> bool:
        if (self.nx, self.ny) != (other.nx, other.ny):
            return False
        a = np.array([self.x0, self.y0, self.dx, self.dy])
        b = np.array([other.x0, other.y0, other.dx, other.dy])
        return bool(np.allclose(a, b, rtol=rtol, atol=rtol * max(self.dx, self.dy)))


def _check_values(grid: Grid2D, values: np.ndarray) -> None:
    if values.shape != grid.shape:
        raise FieldError(f"values shape {values.shape} does not match grid {grid.shape}")


@dataclass(frozen=True)
class ComplexField:
    grid: Grid2D
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.complex128, copy=True)
        _check_values(self.grid, vals)
        object.__setattr__(self, "values", _frozen(vals))

    @property
    def norm_sq(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2) * self.grid.cell_area)

    def density(self) -> "RealField":
        return RealField(self.grid, np.abs(self.values) ** 2, is_density=True)


@dataclass(frozen=True)
class RealField:
    grid: Grid2D
    values: np.ndarray = field(repr=False)
    is_density: bool = False

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        _check_values(self.grid, vals)
        if self.is_density and np.any(vals < 0):
            raise FieldError("density field has negative entries")
        object.__setattr__(self, "values", _frozen(vals))

    def integral(self) -> float:
        return float(np.sum(self.values) * self.grid.cell_area)


def normalize(f: ComplexField) -> ComplexField:
    n2 = f.norm_sq
    if not np.isfinite(n2) or n2 <= 0.0:
        raise FieldError("degenerate field: cannot normalize a zero-norm field")
    return ComplexField(f.grid, f.values / np.sqrt(n2))


def inner_product(f: ComplexField, g: ComplexField) -> complex:
    """<f|g> = sum conj(f) g dx dy."""
    if not f.grid.same_as(g.grid):
        raise FieldError("inner product of fields on different grids")
    return complex(np.vdot(f.values.ravel(), g.values.ravel()) * f.grid.cell_area)


def _phase_factors(grid: Grid2D) -> tuple[np.ndarray, np.ndarray]:
    # e^{-i k x0} for the physical origin of the grid, centered k ordering
    return np.exp(-1j * grid.kx * grid.x0), np.exp(-1j * grid.ky * grid.y0)


def to_momentum(f: ComplexField) -> ComplexField:
    """Unitary continuum-normalized Fourier transform.

    psi~(k) = (dx dy / 2pi) sum_r psi(r) exp(-i k.r), returned on the centered
    momentum grid (``grid.momentum_grid()``), so that
    sum |psi~|^2 dkx dky == sum |psi|^2 dx dy.
    """
    g = f.grid
    spec = sfft.fftshift(sfft.fft2(f.values))
    px, py = _phase_factors(g)
    spec *= px[:, None] * py[None, :]
    spec *= g.dx * g.dy / (2.0 * np.pi)
    return ComplexField(g.momentum_grid(), spec)


def from_momentum(ft: ComplexField, grid: Grid2D) -> ComplexField:
    """Inverse of :func:`to_momentum` back onto the position grid ``grid``."""
    if not ft.grid.same_as(grid.momentum_grid()):
        raise FieldError("momentum field does not belong to the requested position grid")
    px, py = _phase_factors(grid)
    spec = ft.values * np.conj(px)[:, None] * np.conj(py)[None, :]
    spec = spec * (2.0 * np.pi / (grid.dx * grid.dy))
    return ComplexField(grid, sfft.ifft2(sfft.ifftshift(spec)))


def momentum_density(f: ComplexField) -> RealField:
    ft = to_momentum(f)
    return RealField(ft.grid, np.abs(ft.values) ** 2, is_density=True)


def expectation_momentum(f: ComplexField) -> tuple[float, float]:
    """(<p_x>, <p_y>) evaluated in the momentum representation."""
    nk = momentum_density(f)
    g = nk.grid
    w = nk.values * g.cell_area
    total = w.sum()
    kx, ky = f.grid.kx.copy(), f.grid.ky.copy()
    # the Nyquist bin stands for both +k_max and -k_max; count it as zero so
    # that a real field carries no current
    if f.grid.nx % 2 == 0:
        kx[0] = 0.0
    if f.grid.ny % 2 == 0:
        ky[0] = 0.0
    px = float(np.sum(w.sum(axis=1) * kx) / total)
    py = float(np.sum(w.sum(axis=0) * ky) / total)
    return px, py
