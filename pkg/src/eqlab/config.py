"""Run configuration: flat ``section.key = value`` text, presets and validation.

Times in the ``schedule`` section are in units of the system's characteristic
time (T_s for the billiard, r_c/(p_0/2m) for Henon-Heiles).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .models import HenonHeilesParams, RippleBilliardParams

SYSTEMS = ("ripple", "henon-heiles")


class ConfigError(ValueError):
    pass


def _parse_value(text: str):
    text = text.strip()
    if "," in text:
        return tuple(_parse_value(t) for t in text.split(",") if t.strip())
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_config_text(text: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = _parse_value(value)
    return out


def format_config(values: dict[str, Any]) -> str:
    def fmt(v):
        if isinstance(v, (tuple, list)):
            return ", ".join(fmt(x) for x in v)
        return repr(v) if isinstance(v, float) else str(v)
    return "".join(f"{k} = {fmt(v)}\n" for k, v in sorted(values.items()))


_COMMON = {
    "seed": 20240601,
    "threads": 1,
    "analysis.entropy_threshold": 1e-6,
    "analysis.support_threshold": 1e-3,
    "analysis.norm_fraction": 0.999,
    "analysis.shell_eps": 0.005,
    "analysis.classical_count": 200000,
    "analysis.classical_snapshots": 5,
    "analysis.bin_width": 1.0,
    "analysis.quantum_snapshots": 5,
    "analysis.degeneracy_tol": None,
    "schedule.window": (10.0, 14.0),
    "schedule.samples": 400,
    "schedule.window_snapshots": 60,
}

PRESETS: dict[str, dict[str, Any]] = {
    "paper-desk": {
        **_COMMON,
        "system": "ripple",
        "model.a": 6.0, "model.b": 15.0,
        "packet.alpha": 1.0, "packet.r_i": (0.0, 15.0), "packet.p_i": (2.8, 0.0),
        "grid.resolution": 140, "grid.pad": 4,
        "spectrum.count": 600, "spectrum.sectors": ("even-even", "odd-even"),
        "schedule.t_end": 14.0,
        "analysis.husimi_sigma": 3.0,
    },
    "paper-full": {
        **_COMMON,
        "system": "ripple",
        "model.a": 6.0, "model.b": 15.0,
        "packet.alpha": 1.0, "packet.r_i": (0.0, 15.0), "packet.p_i": (5.0, 0.0),
        "grid.resolution": 200, "grid.pad": 4,
        "spectrum.count": 1100, "spectrum.sectors": ("even-even", "odd-even"),
        "schedule.t_end": 14.0,
        "analysis.husimi_sigma": 3.0,
    },
    "square-validation": {
        **_COMMON,
        "system": "ripple",
        "model.a": 0.0, "model.b": 15.0,
        "packet.alpha": 1.0, "packet.r_i": (0.0, 15.0), "packet.p_i": (1.5, 0.0),
        "grid.resolution": 100, "grid.pad": 4,
        "spectrum.count": 250, "spectrum.sectors": ("even-even", "odd-even", "even-odd", "odd-odd"),
        "schedule.t_end": 14.0,
        "analysis.husimi_sigma": 3.0,
    },
    "hh-desk": {
        **_COMMON,
        "system": "henon-heiles",
        "model.U": 1.0, "model.lambda": 0.05,
        "packet.inv_alpha_rc": 3.0 / 40.0, "packet.r_i_rc": (0.3, 0.0),
        "packet.p_i_fraction": math.sqrt(0.7), "packet.p_i_angle_deg": 10.0,
        "grid.n": 512, "grid.box_rc": 2.5, "grid.wall_cells": 8,
        "schedule.dt": 0.005 / HenonHeilesParams().t_char,
        "schedule.t_end": 20.0,
        "schedule.window": (10.0, 20.0),
        "schedule.samples": 100,
        "schedule.window_snapshots": 51,
        "analysis.husimi_sigma_rc": 0.11,
        "analysis.husimi_points": 128,
        "analysis.classical_t_end": 10.0,
        "analysis.classical_count": 100000,
        "analysis.classical_snapshots": 4,
        "analysis.bin_width": 1.0,
    },
}


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=dict)
    source: str = "defaults"

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def __getitem__(self, key: str):
        if key not in self.values:
            raise ConfigError(f"missing configuration key {key!r}")
        return self.values[key]

    @property
    def system(self) -> str:
        return self["system"]

    @property
    def seed(self) -> int:
        return int(self.get("seed", 0))

    def digest(self) -> str:
        blob = json.dumps(self.values, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_text(self) -> str:
        return format_config(self.values)

    # -- derived model objects --
    def billiard_params(self) -> RippleBilliardParams:
        return RippleBilliardParams(float(self["model.a"]), float(self["model.b"]))

    def hh_params(self) -> HenonHeilesParams:
        return HenonHeilesParams(float(self["model.U"]), float(self["model.lambda"]))

    def packet(self) -> tuple[float, tuple[float, float], tuple[float, float]]:
        """(alpha, r_i, p_i) in absolute units."""
        if self.system == "ripple":
            return float(self["packet.alpha"]), _pair(self["packet.r_i"]), _pair(self["packet.p_i"])
        hp = self.hh_params()
        alpha = 1.0 / (float(self["packet.inv_alpha_rc"]) * hp.r_c)
        rx, ry = _pair(self["packet.r_i_rc"])
        ang = math.radians(float(self["packet.p_i_angle_deg"]))
        p = float(self["packet.p_i_fraction"]) * hp.p_0
        return alpha, (rx * hp.r_c, ry * hp.r_c), (p * math.cos(ang), p * math.sin(ang))

    def time_unit(self) -> float:
        if self.system == "ripple":
            _, _, p_i = self.packet()
            return self.billiard_params().traversal_period(math.hypot(*p_i))
        return self.hh_params().t_char


def _pair(v) -> tuple[float, float]:
    if not isinstance(v, (tuple, list)) or len(v) != 2:
        raise ConfigError(f"expected a pair 'x, y', got {v!r}")
    return float(v[0]), float(v[1])


def load_config(path: str | Path | None = None, preset: str | None = None,
                overrides: dict[str, Any] | None = None) -> RunConfig:
    values: dict[str, Any] = {}
    source = []
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        values.update(PRESETS[preset])
        source.append(f"preset:{preset}")
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_config_text(text))
        source.append(str(path))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    if not values:
        raise ConfigError("no configuration given: use --preset and/or --config")
    cfg = RunConfig(values, "+".join(source) or "overrides")
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    """Check every documented precondition before any compute starts."""
    from functools import partial

    from .fields import Grid2D
    from .models import billiard_contains
    from .propagation import PacketFitError, make_gaussian_packet
    from .spectrum import BilliardLattice, ResolutionError, parse_parity, sector_weyl_count, sector_weyl_energy

    system = cfg.get("system")
    if system not in SYSTEMS:
        raise ConfigError(f"system must be one of {SYSTEMS}, got {system!r}")
    try:
        alpha, r_i, p_i = cfg.packet()
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid packet parameters: {exc}") from exc
    if not alpha > 0:
        raise ConfigError("packet alpha must be positive")
    win = cfg.get("schedule.window", (10.0, 14.0))
    t_end = float(cfg.get("schedule.t_end", 0))
    if not (isinstance(win, tuple) and len(win) == 2 and 0 <= win[0] < win[1] <= t_end + 1e-12):
        raise ConfigError(f"schedule.window {win!r} must satisfy 0 <= start < end <= schedule.t_end={t_end}")
    if int(cfg.get("schedule.samples", 0)) < 2:
        raise ConfigError("schedule.samples must be at least 2")
    for key in ("analysis.support_threshold", "analysis.norm_fraction"):
        v = cfg.get(key)
        if v is not None and not 0 < float(v) < 1:
            raise ConfigError(f"{key} must lie in (0, 1)")
    try:
        if system == "ripple":
            params = cfg.billiard_params()
            res = int(cfg["grid.resolution"])
            lattice = BilliardLattice(params, res, int(cfg.get("grid.pad", 4)))
            count = int(cfg["spectrum.count"])
            if count < 1:
                raise ConfigError("spectrum.count must be at least 1")
            sectors = [tuple(parse_parity(s) for s in str(name).split("-")) for name in cfg["spectrum.sectors"]]
            e_max = lattice.max_reliable_energy()
            for s in sectors:
                if sector_weyl_energy(count, params, s) > e_max:
                    raise ResolutionError(
                        f"grid.resolution={res} supports about "
                        f"{int(sector_weyl_count(e_max, params, s))} states per sector; "
                        f"spectrum.count={count} requested", int(sector_weyl_count(e_max, params, s)))
            make_gaussian_packet(alpha, r_i, p_i, lattice.full_grid,
                                 domain=partial(billiard_contains, params=params))
        else:
            hp = cfg.hh_params()
            n = int(cfg["grid.n"])
            half = float(cfg["grid.box_rc"]) * hp.r_c
            grid = Grid2D(n, n, -half, -half, 2 * half / n, 2 * half / n)
            make_gaussian_packet(alpha, r_i, p_i, grid)
            k_max = math.pi / grid.dx
            k_need = hp.p_0 + 3.0 * alpha
            if k_max < k_need:
                raise ConfigError(
                    f"grid.n={n} resolves momenta up to {k_max:.3g}; the well at V_c and the packet "
                    f"need at least {k_need:.3g} (use grid.n >= {int(math.ceil(2 * half * k_need / math.pi))})")
            if not float(cfg["schedule.dt"]) > 0:
                raise ConfigError("schedule.dt must be positive")
    except ConfigError:
        raise
    except (ResolutionError, PacketFitError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
