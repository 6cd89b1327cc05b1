"""Classical counterparts: Henon-Heiles orbits, billiard flight, ensembles and marginals.

H = p^2 + V throughout (m = 1/2), so dr/dt = 2p and dp/dt = -grad V.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .equilibration import Marginal
from .models import (
    HenonHeilesParams, RippleBilliardParams, billiard_contains, billiard_level_set,
    hh_gradient, hh_in_well, hh_potential, wall_half_width, wall_slope,
)

_CBRT2 = 2.0 ** (1.0 / 3.0)
YOSHIDA_W1 = 1.0 / (2.0 - _CBRT2)
YOSHIDA_W0 = -_CBRT2 / (2.0 - _CBRT2)
ESCAPE_RADIUS = 2.0  # in units of r_c


@dataclass(frozen=True)
class PhasePoint:
    x: float
    y: float
    px: float
    py: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.px, self.py], dtype=float)

    @classmethod
    def from_array(cls, a) -> "PhasePoint":
        return cls(*map(float, a))


@dataclass
class Ensemble:
    """Phase points as rows (x, y, px, py)."""

    points: np.ndarray = field(repr=False)
    seed: object
    provenance: str

    def __len__(self) -> int:
        return len(self.points)

    @property
    def x(self):
        return self.points[:, 0]

    @property
    def y(self):
        return self.points[:, 1]

    @property
    def px(self):
        return self.points[:, 2]

    @property
    def py(self):
        return self.points[:, 3]

    @property
    def p_abs(self):
        return np.hypot(self.points[:, 2], self.points[:, 3])


# -- systems ------------------------------------------------------------------------

@dataclass(frozen=True)
class HenonHeilesSystem:
    params: HenonHeilesParams = HenonHeilesParams()
    name = "henon-heiles"

    def potential(self, x, y):
        return hh_potential(x, y, self.params)

    def contains(self, x, y):
        """The bounded well: the triangle spanned by the three saddles."""
        return hh_in_well(x, y, self.params)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        rc = self.params.r_c
        h = math.sqrt(3.0) / 2.0 * rc
        return (-h, h, -0.5 * rc, rc)

    def energy(self, pts: np.ndarray) -> np.ndarray:
        return pts[:, 2] ** 2 + pts[:, 3] ** 2 + self.potential(pts[:, 0], pts[:, 1])

    def check_energy(self, E: float, shell_eps: float) -> None:
        if not 0.0 < E * (1.0 + shell_eps) < self.params.V_c:
            raise ValueError(f"energy {E:g} (shell +{shell_eps:g}) is outside the bounded range "
                             f"(0, V_c={self.params.V_c:g})")


@dataclass(frozen=True)
class BilliardSystem:
    params: RippleBilliardParams = RippleBilliardParams()
    name = "ripple"

    def potential(self, x, y):
        return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)

    def contains(self, x, y):
        return billiard_contains(x, y, self.params)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        w = self.params.a + self.params.b
        return (-w, w, 0.0, 2.0 * self.params.b)

    def energy(self, pts: np.ndarray) -> np.ndarray:
        return pts[:, 2] ** 2 + pts[:, 3] ** 2

    def check_energy(self, E: float, shell_eps: float) -> None:
        if not E > 0:
            raise ValueError("billiard energy must be positive")


# -- Henon-Heiles integration ---------------------------------------------------------

@dataclass
class Trajectory:
    t: np.ndarray
    states: np.ndarray  # rows (x, y, px, py)
    status: str = "ok"

    def energy(self, params: HenonHeilesParams) -> np.ndarray:
        s = self.states
        return s[:, 2] ** 2 + s[:, 3] ** 2 + hh_potential(s[:, 0], s[:, 1], params)


def _yoshida_coeffs(dt: float) -> tuple[float, ...]:
    return (YOSHIDA_W1 * dt, YOSHIDA_W0 * dt, YOSHIDA_W1 * dt)


def integrate_henon_heiles(p0: PhasePoint, dt: float, t_end: float,
                           params: HenonHeilesParams = HenonHeilesParams(),
                           record_every: int = 1) -> Trajectory:
    """Fourth-order Yoshida composition of kick-drift-kick leapfrog steps.

    The orbit is truncated with status 'escaped' once |r| exceeds 2 r_c.
    """
    limit = 1e-3 * params.t_char
    if not 0 < dt <= limit * (1 + 1e-12):
        raise ValueError(f"dt={dt:g} must lie in (0, {limit:g}] to resolve the motion")
    U, lam = params.U, params.lam
    x, y, px, py = p0.x, p0.y, p0.px, p0.py
    n_steps = int(round(t_end / dt))
    esc2 = (ESCAPE_RADIUS * params.r_c) ** 2
    subs = _yoshida_coeffs(dt)
    out_t = [0.0]
    out = [(x, y, px, py)]
    status = "ok"
    for n in range(1, n_steps + 1):
        for h in subs:
            hh = 0.5 * h
            px -= hh * (U * x + 2.0 * lam * x * y)
            py -= hh * (U * y + lam * (x * x - y * y))
            x += 2.0 * h * px
            y += 2.0 * h * py
            px -= hh * (U * x + 2.0 * lam * x * y)
            py -= hh * (U * y + lam * (x * x - y * y))
        if n % record_every == 0 or n == n_steps:
            out_t.append(n * dt)
            out.append((x, y, px, py))
        if x * x + y * y > esc2:
            if out_t[-1] != n * dt:
                out_t.append(n * dt)
                out.append((x, y, px, py))
            status = "escaped"
            break
    return Trajectory(np.array(out_t), np.array(out, dtype=float), status)


def evolve_hh_ensemble(points: np.ndarray, dt: float, n_steps: int,
                       params: HenonHeilesParams = HenonHeilesParams()) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized Yoshida steps for many orbits; returns (final points, escaped mask)."""
    s = np.array(points, dtype=float, copy=True)
    x, y, px, py = s[:, 0].copy(), s[:, 1].copy(), s[:, 2].copy(), s[:, 3].copy()
    escaped = np.zeros(len(s), dtype=bool)
    esc2 = (ESCAPE_RADIUS * params.r_c) ** 2
    subs = _yoshida_coeffs(dt)
    for _ in range(n_steps):
        for h in subs:
            gx, gy = hh_gradient(x, y, params)
            px -= 0.5 * h * gx
            py -= 0.5 * h * gy
            x += 2.0 * h * px
            y += 2.0 * h * py
            gx, gy = hh_gradient(x, y, params)
            px -= 0.5 * h * gx
            py -= 0.5 * h * gy
        out = x * x + y * y > esc2
        if out.any():
            escaped |= out
            # freeze escaped orbits far away so they cannot overflow
            x[out] = np.sign(x[out]) * 10 * params.r_c
            y[out] = np.sign(y[out]) * 10 * params.r_c
            px[out] = py[out] = 0.0
    return np.column_stack([x, y, px, py]), escaped


# -- billiard flight --------------------------------------------------------------------

class CollisionError(RuntimeError):
    pass


_BISECT_TOL = 1e-12
_MAX_MARCH = 200_000


def _active_normals(x, y, params: RippleBilliardParams) -> np.ndarray:
    side = np.abs(x) - wall_half_width(y, params)
    floor = -y
    ceil = y - 2.0 * params.b
    piece = np.argmax(np.stack([side, floor, ceil]), axis=0)
    n = np.zeros((len(x), 2))
    sx = np.where(x >= 0, 1.0, -1.0)
    m = piece == 0
    n[m, 0] = sx[m]
    n[m, 1] = -wall_slope(y[m], params)
    n[piece == 1, 1] = -1.0
    n[piece == 2, 1] = 1.0
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def _first_crossing(pos: np.ndarray, d: np.ndarray, params: RippleBilliardParams,
                    s_max: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Path length to the first wall crossing along unit directions ``d``.

    Lipschitz-safe marching (no crossing can hide inside a step) brackets the
    crossing, then bisection refines it to 1e-12.  Rays that stay inside up to
    ``s_max`` report s_max and hit = False.
    """
    n = len(pos)
    G = 1.0 + params.a * np.pi / params.b
    cap = 0.1 * params.b
    floor = 1e-9 * params.b
    lo = np.zeros(n)
    hi = np.full(n, np.nan)
    limit = np.full(n, np.inf) if s_max is None else np.asarray(s_max, dtype=float).copy()
    todo = np.arange(n)
    it = 0
    while len(todo):
        it += 1
        if it > _MAX_MARCH:
            raise CollisionError("wall search did not converge (tangential ray)")
        p, dd, s0 = pos[todo], d[todo], lo[todo]
        lev = billiard_level_set(p[:, 0] + s0 * dd[:, 0], p[:, 1] + s0 * dd[:, 1], params)
        step = np.clip(-lev / G, floor, cap)
        s1 = np.minimum(s0 + step, limit[todo])
        lev1 = billiard_level_set(p[:, 0] + s1 * dd[:, 0], p[:, 1] + s1 * dd[:, 1], params)
        crossed = lev1 > 0
        done_free = (~crossed) & (s1 >= limit[todo])
        hi[todo[crossed]] = s1[crossed]
        lo[todo[~crossed]] = s1[~crossed]
        todo = todo[~(crossed | done_free)]
    hit = ~np.isnan(hi)
    idx = np.nonzero(hit)[0]
    a, b = lo[idx], hi[idx]
    p, dd = pos[idx], d[idx]
    while len(a) and np.max(b - a) > _BISECT_TOL:
        mid = 0.5 * (a + b)
        out = billiard_level_set(p[:, 0] + mid * dd[:, 0], p[:, 1] + mid * dd[:, 1], params) > 0
        b = np.where(out, mid, b)
        a = np.where(out, a, mid)
    lo[idx] = a
    return lo, hit


def _reflect(pos: np.ndarray, p: np.ndarray, params: RippleBilliardParams) -> np.ndarray:
    n = _active_normals(pos[:, 0], pos[:, 1], params)
    speed = np.linalg.norm(p, axis=1, keepdims=True)
    vn = np.sum(p * n, axis=1, keepdims=True)
    q = p - 2.0 * vn * n
    q *= speed / np.linalg.norm(q, axis=1, keepdims=True)
    return q


def billiard_flight(p0: PhasePoint, n_bounces: int,
                    params: RippleBilliardParams = RippleBilliardParams(),
                    perturbation: float = 1e-12) -> np.ndarray:
    """Collision sequence: rows (x, y, px, py) at each wall hit, momentum after reflection."""
    pos = np.array([[p0.x, p0.y]], dtype=float)
    p = np.array([[p0.px, p0.py]], dtype=float)
    if not billiard_contains(p0.x, p0.y, params) or billiard_level_set(p0.x, p0.y, params) >= 0:
        raise ValueError("start point must lie strictly inside the billiard")
    speed = float(np.linalg.norm(p))
    if speed == 0:
        raise ValueError("momentum must be non-zero")
    rows = []
    for _ in range(n_bounces):
        d = p / np.linalg.norm(p, axis=1, keepdims=True)
        try:
            s, _ = _first_crossing(pos, d, params)
        except CollisionError:
            ang = perturbation
            rot = np.array([[math.cos(ang), -math.sin(ang)], [math.sin(ang), math.cos(ang)]])
            d = d @ rot.T
            s, _ = _first_crossing(pos, d, params)
        pos = pos + s[:, None] * d
        p = _reflect(pos, p, params)
        p *= speed / np.linalg.norm(p)
        rows.append([pos[0, 0], pos[0, 1], p[0, 0], p[0, 1]])
    return np.array(rows)


def billiard_flow(points: np.ndarray, t: float,
                  params: RippleBilliardParams = RippleBilliardParams()) -> np.ndarray:
    """Advance every phase point by time t (speed 2|p|) with specular reflections."""
    pts = np.array(points, dtype=float, copy=True)
    pos, p = pts[:, :2].copy(), pts[:, 2:].copy()
    speed = np.linalg.norm(p, axis=1)
    remaining = 2.0 * speed * t  # path length left
    todo = np.nonzero(remaining > 0)[0]
    while len(todo):
        d = p[todo] / speed[todo, None]
        s, hit = _first_crossing(pos[todo], d, params, s_max=remaining[todo])
        pos[todo] += s[:, None] * d
        remaining[todo] -= s
        hits = todo[hit]
        if len(hits):
            p[hits] = _reflect(pos[hits], p[hits], params)
        todo = todo[hit & (remaining[todo] > 0)]
    return np.column_stack([pos, p])


# -- sampling -------------------------------------------------------------------------------

class PacketFitError(ValueError):
    pass


class LowAcceptanceError(ValueError):
    pass


def sample_gaussian_ensemble(alpha: float, r_i, p_i, count: int, seed=None,
                             domain: Callable | None = None) -> Ensemble:
    """Phase points distributed as the Wigner function of the Gaussian packet.

    Positions ~ Normal(r_i, 1/(alpha sqrt 2)), momenta ~ Normal(p_i, alpha/sqrt 2)
    per axis; points outside ``domain`` are redrawn.
    """
    if count < 1000:
        raise ValueError("Gaussian ensembles need at least 1000 points")
    rng = np.random.default_rng(seed)
    sx = 1.0 / (alpha * math.sqrt(2.0))
    sp = alpha / math.sqrt(2.0)
    out = []
    have = drawn = rejected = 0
    while have < count:
        m = count - have
        r = rng.normal(r_i, sx, size=(m, 2))
        p = rng.normal(p_i, sp, size=(m, 2))
        drawn += m
        if domain is not None:
            ok = np.asarray(domain(r[:, 0], r[:, 1]), dtype=bool)
            rejected += int((~ok).sum())
            r, p = r[ok], p[ok]
            if rejected > 0.5 * drawn and drawn >= count:
                raise PacketFitError("packet does not fit domain: more than half the samples rejected")
        out.append(np.column_stack([r, p]))
        have += len(r)
    return Ensemble(np.concatenate(out)[:count], seed, "gaussian-matched")


def sample_microcanonical(system, E: float, count: int, shell_eps: float = 0.005, seed=None,
                          batch: int = 1_000_000) -> Ensemble:
    """Rejection sampling, uniform in phase space over |H - E| < shell_eps * E."""
    system.check_energy(E, shell_eps)
    rng = np.random.default_rng(seed)
    x0, x1, y0, y1 = system.bounds
    x_probe = np.linspace(x0, x1, 201)
    y_probe = np.linspace(y0, y1, 201)
    Xp, Yp = np.meshgrid(x_probe, y_probe, indexing="ij")
    inside = system.contains(Xp, Yp)
    v_min = float(np.min(np.where(inside, system.potential(Xp, Yp), np.inf)))
    p_max = math.sqrt(max(E * (1.0 + shell_eps) - min(v_min, 0.0), 0.0))
    out = []
    have = tried = 0
    while have < count:
        r = np.column_stack([rng.uniform(x0, x1, batch), rng.uniform(y0, y1, batch)])
        p = rng.uniform(-p_max, p_max, size=(batch, 2))
        tried += batch
        ok = system.contains(r[:, 0], r[:, 1])
        H = p[:, 0] ** 2 + p[:, 1] ** 2 + system.potential(r[:, 0], r[:, 1])
        ok &= np.abs(H - E) < shell_eps * E
        out.append(np.column_stack([r[ok], p[ok]]))
        have += int(ok.sum())
        if tried >= 10 * batch and have < 1e-4 * tried:
            raise LowAcceptanceError(f"acceptance {have / tried:.2e} below 1e-4; enlarge shell_eps")
    if have < 1e-4 * tried:
        raise LowAcceptanceError(f"acceptance {have / tried:.2e} below 1e-4; enlarge shell_eps")
    return Ensemble(np.concatenate(out)[:count], seed, "microcanonical")


# -- sections and marginals ----------------------------------------------------------------

def poincare_section(trajectory: Trajectory, min_crossings: int = 100) -> np.ndarray:
    """(y, p_y) at crossings of x = 0 with p_x > 0, by linear interpolation."""
    s = trajectory.states
    x = s[:, 0]
    k = np.nonzero((x[:-1] < 0) & (x[1:] >= 0))[0]
    k = k[0.5 * (s[k, 2] + s[k + 1, 2]) > 0]
    if len(k) < min_crossings:
        raise ValueError(f"only {len(k)} section crossings; integrate longer (need {min_crossings})")
    f = -x[k] / (x[k + 1] - x[k])
    y = s[k, 1] + f * (s[k + 1, 1] - s[k, 1])
    py = s[k, 3] + f * (s[k + 1, 3] - s[k, 3])
    return np.column_stack([y, py])


def histogram_marginal(values, edges, kind: str, weights=None) -> Marginal:
    hist, edges = np.histogram(values, bins=edges, weights=weights)
    total = hist.sum()
    if not total > 0:
        raise ValueError("no samples fall inside the histogram range")
    return Marginal(kind, np.asarray(edges, dtype=float), hist / (total * np.diff(edges)))


def classical_marginals(ensemble: Ensemble | np.ndarray, x_edges, y_edges, p_edges) -> dict[str, Marginal]:
    """Normalized P(x), f(y) and radial f(|p|) histograms on caller-supplied bins."""
    pts = ensemble.points if isinstance(ensemble, Ensemble) else np.asarray(ensemble)
    return {
        "x-marginal": histogram_marginal(pts[:, 0], x_edges, "x-marginal"),
        "y-marginal": histogram_marginal(pts[:, 1], y_edges, "y-marginal"),
        "radial-momentum": histogram_marginal(np.hypot(pts[:, 2], pts[:, 3]), p_edges, "radial-momentum"),
    }


def position_counts(points: np.ndarray, x_edges, y_edges) -> np.ndarray:
    counts, _, _ = np.histogram2d(points[:, 0], points[:, 1], bins=[x_edges, y_edges])
    return counts


def uniform_cell_fractions(contains: Callable, x_edges, y_edges, sub: int = 16) -> np.ndarray:
    """Area fraction of each histogram cell lying inside a region (sub-sampled)."""
    x_edges = np.asarray(x_edges, dtype=float)
    y_edges = np.asarray(y_edges, dtype=float)
    fx = (np.arange(sub) + 0.5) / sub
    xs = (x_edges[:-1, None] + np.diff(x_edges)[:, None] * fx[None, :]).ravel()
    ys = (y_edges[:-1, None] + np.diff(y_edges)[:, None] * fx[None, :]).ravel()
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    inside = np.asarray(contains(X, Y), dtype=float)
    nx, ny = len(x_edges) - 1, len(y_edges) - 1
    return inside.reshape(nx, sub, ny, sub).mean(axis=(1, 3))
