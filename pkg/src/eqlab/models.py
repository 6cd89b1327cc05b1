"""Henon-Heiles potential and ripple billiard geometry."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.integrate import quad

MASS = 0.5
SQRT3_2 = np.sqrt(3.0) / 2.0


@dataclass(frozen=True)
class HenonHeilesParams:
    """V(x, y) = U/2 (x^2 + y^2) + lam (x^2 y - y^3 / 3), mass fixed at 1/2."""

    U: float = 1.0
    lam: float = 0.05

    def __post_init__(self):
        if not (self.U > 0 and self.lam > 0):
            raise ValueError("Henon-Heiles parameters U and lambda must be positive")

    @property
    def m(self) -> float:
        return MASS

    @property
    def r_c(self) -> float:
        return self.U / self.lam

    @property
    def V_c(self) -> float:
        return self.U ** 3 / (6.0 * self.lam ** 2)

    @property
    def p_0(self) -> float:
        return float(np.sqrt(2.0 * MASS * self.V_c))

    @property
    def t_char(self) -> float:
        """Characteristic time r_c / (p_0 / 2m), equal to r_c / p_0 at m = 1/2."""
        return self.r_c / (self.p_0 / (2.0 * MASS))

    @property
    def box_half_width(self) -> float:
        return 2.5 * self.r_c


@dataclass(frozen=True)
class CriticalPoints:
    O: tuple[float, float]
    A: tuple[float, float]
    B: tuple[float, float]
    C: tuple[float, float]
    V_c: float

    def as_dict(self) -> dict:
        return {"O": self.O, "A": self.A, "B": self.B, "C": self.C, "V_c": self.V_c}


def hh_potential(x, y, params: HenonHeilesParams):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return 0.5 * params.U * (x * x + y * y) + params.lam * (x * x * y - y ** 3 / 3.0)


def hh_gradient(x, y, params: HenonHeilesParams):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    gx = params.U * x + 2.0 * params.lam * x * y
    gy = params.U * y + params.lam * (x * x - y * y)
    return gx, gy


def hh_hessian(x, y, params: HenonHeilesParams) -> np.ndarray:
    lam, U = params.lam, params.U
    return np.array([[U + 2 * lam * y, 2 * lam * x],
                     [2 * lam * x, U - 2 * lam * y]], dtype=float)


def hh_critical_points(params: HenonHeilesParams) -> CriticalPoints:
    rc = params.r_c
    return CriticalPoints(
        O=(0.0, 0.0),
        A=(0.0, rc),
        B=(-SQRT3_2 * rc, -0.5 * rc),
        C=(SQRT3_2 * rc, -0.5 * rc),
        V_c=params.V_c,
    )


def hh_well_lines(x, y, params: HenonHeilesParams):
    """The three saddle-to-saddle lines, each positive inside the well.

    V_c - V = U r_c^2 / 3 * L1 * L2 * L3 in units of r_c, so the triangle
    ABC bounds the connected component of {V < E} around O for E < V_c.
    """
    xs = np.asarray(x, dtype=float) / params.r_c
    ys = np.asarray(y, dtype=float) / params.r_c
    l1 = ys + 0.5
    l2 = 1.0 + np.sqrt(3.0) * xs - ys
    l3 = 1.0 - np.sqrt(3.0) * xs - ys
    return l1, l2, l3


def hh_in_well(x, y, params: HenonHeilesParams):
    l1, l2, l3 = hh_well_lines(x, y, params)
    return (l1 > 0) & (l2 > 0) & (l3 > 0)


def hh_allowed(x, y, E: float, params: HenonHeilesParams):
    """Classically allowed points of the bounded well at energy E."""
    return hh_in_well(x, y, params) & (hh_potential(x, y, params) < E)


@dataclass(frozen=True)
class RippleBilliardParams:
    """Walls x = -+[b - a cos(pi y / b)], floor y = 0, ceiling y = 2b."""

    a: float = 6.0
    b: float = 15.0

    def __post_init__(self):
        if self.a < 0 or self.b <= 0:
            raise ValueError("ripple billiard needs a >= 0 and b > 0")
        if self.a >= self.b:
            raise ValueError(f"ripple amplitude a={self.a} must be smaller than b={self.b}")

    @property
    def height(self) -> float:
        return 2.0 * self.b

    @property
    def area(self) -> float:
        return 4.0 * self.b ** 2

    @property
    def max_half_width(self) -> float:
        return self.a + self.b

    @property
    def center(self) -> tuple[float, float]:
        return (0.0, self.b)

    @cached_property
    def side_wall_length(self) -> float:
        k = self.a * np.pi / self.b
        val, _ = quad(lambda y: np.sqrt(1.0 + (k * np.sin(np.pi * y / self.b)) ** 2),
                      0.0, 2.0 * self.b, limit=200)
        return float(val)

    @property
    def perimeter(self) -> float:
        return 2.0 * self.side_wall_length + 4.0 * (self.b - self.a)

    def traversal_period(self, p_abs: float) -> float:
        """T_s = 2(a+b) / (|p| / m)."""
        return 2.0 * (self.a + self.b) / (p_abs / MASS)


def wall_half_width(y, params: RippleBilliardParams):
    return params.b - params.a * np.cos(np.pi * np.asarray(y, dtype=float) / params.b)


def wall_slope(y, params: RippleBilliardParams):
    return params.a * np.pi / params.b * np.sin(np.pi * np.asarray(y, dtype=float) / params.b)


def billiard_contains(x, y, params: RippleBilliardParams):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return (y >= 0.0) & (y <= 2.0 * params.b) & (np.abs(x) <= wall_half_width(y, params))


def billiard_level_set(x, y, params: RippleBilliardParams):
    """Implicit boundary function: negative inside, zero on the wall.

    Each piece is 1 + a pi / b Lipschitz along a unit direction.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    side = np.abs(x) - wall_half_width(y, params)
    return np.maximum(side, np.maximum(-y, y - 2.0 * params.b))


class NotOnWallError(ValueError):
    pass


def billiard_wall_normal(point, params: RippleBilliardParams, tol: float = 1e-8) -> np.ndarray:
    """Outward unit normal at a point lying on the billiard boundary."""
    x, y = float(point[0]), float(point[1])
    side = abs(x) - float(wall_half_width(y, params))
    floor, ceil = -y, y - 2.0 * params.b
    dist = {"side": abs(side), "floor": abs(floor), "ceiling": abs(ceil)}
    on_side = dist["side"] <= tol and -tol <= y <= 2 * params.b + tol
    on_floor = dist["floor"] <= tol and abs(x) <= params.b - params.a + tol
    on_ceil = dist["ceiling"] <= tol and abs(x) <= params.b - params.a + tol
    if not (on_side or on_floor or on_ceil):
        raise NotOnWallError(f"point ({x}, {y}) is not within {tol} of the billiard wall")
    if on_floor and (not on_side or dist["floor"] <= dist["side"]):
        return np.array([0.0, -1.0])
    if on_ceil and (not on_side or dist["ceiling"] <= dist["side"]):
        return np.array([0.0, 1.0])
    n = np.array([np.sign(x) if x != 0 else 1.0, -float(wall_slope(y, params))])
    return n / np.linalg.norm(n)
