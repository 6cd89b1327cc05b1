"""Command-line entry point: ``eqlab <verb> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical-tolerance failure,
4 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .equilibration import ergodic_inequality_check
from .config import PRESETS, ConfigError, RunConfig, load_config, parse_config_text
from .classical import CollisionError, LowAcceptanceError
from .classical import PacketFitError as ClassicalPacketFitError
from .fluctuations import InsufficientSamplesError
from .husimi import EmptySectionError, HusimiResolutionError
from .propagation import InsufficientCoverageError, NumericalToleranceError, PacketFitError
from .snapshot import SnapshotFormatError
from .spectrum import ResolutionError, TooFewLevelsError

log = logging.getLogger("eqlab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def _parse_set(items: list[str] | None) -> dict:
    if not items:
        return {}
    return parse_config_text("\n".join(items))


def _config(args, run_dir: Path | None = None) -> RunConfig:
    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    path = args.config
    if path is None and args.preset is None and run_dir is not None:
        path = run_dir / "config.txt"
    return load_config(path, args.preset, overrides)


def _out(args, default: str) -> Path:
    return Path(args.out) if args.out else Path(default)


def _report(blocks: dict) -> None:
    for name, values in blocks.items():
        print(f"[{name}]")
        for k, v in values.items():
            print(f"  {k} = {v}")


# -- verbs -------------------------------------------------------------------------------

def cmd_evolve(args) -> int:
    from . import pipelines as pl
    from .store import RunDirectory
    cfg = _config(args)
    rd = RunDirectory(_out(args, f"runs/{cfg.system}-evolve"))
    if cfg.system == "ripple":
        run = pl.run_billiard(cfg, threads=args.threads)
        rd.mark("compute")
        pl.save_billiard_run(rd, run)
        erg = ergodic_inequality_check("P", run.observables, run.decomposition,
                                       tuple(w * run.time_unit for w in pl._window(cfg)))
        _report({"decomposition": dict(captured_norm=run.decomposition.captured_norm,
                                       d_eff=erg.d_eff, mean_energy=run.decomposition.mean_energy()),
                 "ergodic": erg.as_dict()})
    else:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            run = pl.run_henon_heiles(cfg)
        for w in caught:
            log.warning("%s", w.message)
        rd.mark("compute")
        pl.save_henon_heiles_run(rd, run)
        _report({"packet": dict(mean_energy=run.initial_energy[0], energy_spread=run.initial_energy[1],
                                leakage=run.leakage)})
    rd.finish("evolve", cfg.digest(), __version__)
    print(f"run written to {rd.root}")
    return EXIT_OK


def cmd_eigensolve(args) -> int:
    from . import pipelines as pl
    from .store import RunDirectory
    cfg = _config(args)
    if cfg.system != "ripple":
        raise ConfigError("eigensolve applies to the ripple billiard only")
    rd = RunDirectory(_out(args, "runs/eigen"))
    rd.write_text("config.txt", cfg.to_text())
    basis = pl.billiard_basis(cfg, args.threads)
    rd.mark("compute")
    _report(pl.save_eigensolve(rd, basis))
    rd.finish("eigensolve", cfg.digest(), __version__)
    print(f"eigen store written to {rd.root / 'eigen'}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    from . import pipelines as pl
    from .store import RunDirectory, read_manifest
    run_dir = Path(args.run_dir)
    read_manifest(run_dir)  # refuses incomplete runs
    cfg = _config(args, run_dir)
    rd = RunDirectory(_out(args, str(run_dir / "analysis")))
    if cfg.system == "ripple":
        run = pl.load_billiard_run(cfg, run_dir)
        a = pl.analyze_billiard(run, classical=not args.no_classical)
        rd.mark("compute")
        pl.save_billiard_analysis(rd, a)
    else:
        run = pl.load_henon_heiles_run(cfg, run_dir)
        a = pl.analyze_henon_heiles(run, classical=not args.no_classical)
        rd.mark("compute")
        pl.save_henon_heiles_analysis(rd, a)
    _report(a.blocks())
    rd.finish("analyze", cfg.digest(), __version__)
    return EXIT_OK


def cmd_classical(args) -> int:
    from . import pipelines as pl
    from .store import RunDirectory
    cfg = _config(args)
    rd = RunDirectory(_out(args, f"runs/{cfg.system}-classical"))
    res = pl.run_classical(cfg)
    rd.mark("compute")
    rd.write_text("config.txt", cfg.to_text())
    pl.save_tables(rd, res.tables)
    rd.write_keyvalues("classical.txt", res.blocks)
    _report(res.blocks)
    rd.finish("classical", cfg.digest(), __version__)
    return EXIT_OK


def cmd_husimi(args) -> int:
    from functools import partial

    from . import pipelines as pl
    from .models import hh_potential
    from .store import RunDirectory, read_manifest
    run_dir = Path(args.run_dir)
    read_manifest(run_dir)
    cfg = _config(args, run_dir)
    rd = RunDirectory(_out(args, str(run_dir / "husimi-out")))
    if cfg.system == "ripple":
        run = pl.load_billiard_run(cfg, run_dir)
        sec = pl.billiard_husimi(run)
        dec = run.decomposition
        E, width = dec.mean_energy(), 3.0 * dec.energy_spread()
        potential = lambda x, y: np.zeros_like(np.asarray(x, dtype=float))  # noqa: E731
    else:
        run = pl.load_henon_heiles_run(cfg, run_dir)
        sec = pl.hh_husimi(run)
        E, width = run.initial_energy[0], 3.0 * run.initial_energy[1]
        potential = partial(hh_potential, params=cfg.hh_params())
    band = sec.band_fraction(E, width, potential)
    rd.mark("compute")
    pl.save_husimi(rd, sec, E, potential, band)
    _report({"husimi": dict(sigma=sec.sigma, energy=E, band_width=width, band_fraction=band)})
    rd.finish("husimi", cfg.digest(), __version__)
    return EXIT_OK


def cmd_oracle(args) -> int:
    from . import pipelines as pl
    from .fluctuations import finite_n_pdf, quoted_finite_n_pdf
    from .store import RunDirectory
    seed = 0 if args.seed is None else args.seed
    rep = pl.run_oracle(args.kind, args.N, args.draws, seed, bins=args.bins)
    rd = RunDirectory(_out(args, f"runs/oracle-{args.kind}-{args.N}"))
    blocks = {"oracle": dict(kind=args.kind, N=args.N, draws=args.draws, seed=seed,
                             ks_exponential=rep.ks_exponential, ks_porter_thomas=rep.ks_porter_thomas)}
    mid = 0.5 * (rep.edges[1:] + rep.edges[:-1])
    rd.write_csv("oracle/histogram.csv", ("n", "density", "log_density"),
                 np.column_stack([mid, rep.density, np.log(np.where(rep.density > 0, rep.density, np.nan))]).tolist())
    if args.N < 50:
        edges, dens = rep.gamma_histogram(args.finite_bins)
        exact = rep.finite_n_bin_errors(lambda g: finite_n_pdf(g, args.N, args.kind), args.finite_bins)
        rows = [[a, b, d, e] for a, b, d, e in zip(edges[:-1], edges[1:], dens, exact)]
        header = ["gamma_lo", "gamma_hi", "density", "rel_error_exact"]
        if args.kind == "complex":
            quoted = rep.finite_n_bin_errors(lambda g: quoted_finite_n_pdf(g, args.N), args.finite_bins)
            rows = [r + [q] for r, q in zip(rows, quoted)]
            header.append("rel_error_quoted")
            blocks["oracle"]["max_rel_error_quoted"] = float(np.max(np.abs(quoted)))
        blocks["oracle"]["max_rel_error_exact"] = float(np.max(np.abs(exact)))
        rd.write_csv("oracle/finite_n.csv", header, rows)
    rd.write_keyvalues("oracle.txt", blocks)
    _report(blocks)
    rd.finish("oracle", "", __version__)
    return EXIT_OK


def cmd_spacing(args) -> int:
    from . import pipelines as pl
    from .store import RunDirectory, read_eigen_store
    if args.eigen:
        basis = read_eigen_store(args.eigen)
        digest = ""
    else:
        cfg = _config(args)
        if cfg.system != "ripple":
            raise ConfigError("spacing statistics apply to the ripple billiard only")
        basis = pl.billiard_basis(cfg, args.threads)
        digest = cfg.digest()
    stats_ = pl.run_spacing(basis)
    rd = RunDirectory(_out(args, "runs/spacing"))
    blocks = {}
    for name, st in stats_.items():
        blocks[f"spacing {name}"] = dict(levels=len(st.spacings) + 1, ks_wigner=st.ks_wigner,
                                         ks_poisson=st.ks_poisson, closer_to=st.closer_to)
        mid = 0.5 * (st.bin_edges[1:] + st.bin_edges[:-1])
        rd.write_csv(f"spacing/{name}.csv", ("s", "density"), np.column_stack([mid, st.density]).tolist())
    rd.write_keyvalues("spacing.txt", blocks)
    _report(blocks)
    rd.finish("spacing-stats", digest, __version__)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", help="flat 'section.key = value' config file")
        p.add_argument("--preset", choices=sorted(PRESETS), help="start from a shipped preset")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="master seed (child streams are derived from it)")
    p.add_argument("--out", help="output run directory")
    p.add_argument("--threads", type=int, help="worker threads for the eigensolver")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eqlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"eqlab {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("evolve", help="propagate the configured wave packet")
    _common(p)
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("eigensolve", help="compute and store billiard eigenpairs")
    _common(p)
    p.set_defaults(func=cmd_eigensolve)

    p = sub.add_parser("analyze", help="equilibration analysis of an evolve run")
    p.add_argument("run_dir")
    p.add_argument("--no-classical", action="store_true", help="skip the classical ensemble comparison")
    _common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("classical", help="classical microcanonical marginals and Poincare data")
    _common(p)
    p.set_defaults(func=cmd_classical)

    p = sub.add_parser("husimi", help="Husimi section of an evolve run's late state")
    p.add_argument("run_dir")
    _common(p)
    p.set_defaults(func=cmd_husimi)

    p = sub.add_parser("oracle", help="random-vector component statistics")
    p.add_argument("--kind", choices=("complex", "real"), default="complex")
    p.add_argument("--N", type=int, default=10_000)
    p.add_argument("--draws", type=int, default=100_000)
    p.add_argument("--bins", type=int, default=60)
    p.add_argument("--finite-bins", type=int, default=20)
    _common(p, config=False)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("spacing-stats", help="unfolded level-spacing statistics")
    p.add_argument("--eigen", help="existing eigen store directory (skips the solve)")
    _common(p)
    p.set_defaults(func=cmd_spacing)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ResolutionError, PacketFitError, ClassicalPacketFitError,
            HusimiResolutionError, TooFewLevelsError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalToleranceError, InsufficientCoverageError, InsufficientSamplesError,
            EmptySectionError, CollisionError, LowAcceptanceError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, SnapshotFormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
