"""Run directories, manifests and the on-disk tables shared by the pipelines.

Every file a command produces is written atomically (temporary name, then
rename) and registered with the run directory.  The manifest goes last and
doubles as the completion marker: a directory without ``manifest.json`` holds
an interrupted run.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .fields import ComplexField, RealField
from .snapshot import encode, read_snapshot
from .spectrum import (
    PARITY_NAME, BilliardEigenbasis, BilliardLattice, SectorSolution, SpectralDecomposition,
    parse_parity,
)

MANIFEST = "manifest.json"
OBSERVABLE_HEADER = ("t", "px", "py", "Sr", "norm", "energy")
EIGEN_INDEX_HEADER = ("k", "E", "parity_x", "parity_y", "residual")
DECOMPOSITION_HEADER = ("k", "Re(c)", "Im(c)", "|c|^2")


class StoreError(OSError):
    pass


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def read_csv(path: str | os.PathLike) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise StoreError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise StoreError(f"{path} is empty")
    return rows[0], rows[1:]


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunDirectory:
    """Output directory of one command; tracks every file for the manifest."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StoreError(f"cannot create run directory {self.root}: {exc}") from exc
        self.files: list[str] = []
        self.timings: dict[str, float] = {}
        self._last = time.perf_counter()
        stale = self.root / MANIFEST
        if stale.exists():
            stale.unlink()  # the directory is being rewritten; it is incomplete until finish()

    def path(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_bytes(self, rel: str, data: bytes) -> Path:
        p = self.path(rel)
        tmp = p.with_name(p.name + ".part")
        try:
            with open(tmp, "wb") as fh:
                fh.write(data)
            os.replace(tmp, p)
        except OSError as exc:
            raise StoreError(f"cannot write {p}: {exc}") from exc
        if rel not in self.files:
            self.files.append(rel)
        return p

    def write_text(self, rel: str, text: str) -> Path:
        return self.write_bytes(rel, text.encode())

    def write_csv(self, rel: str, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
        return self.write_text(rel, csv_text(header, rows))

    def write_field(self, rel: str, f: ComplexField | RealField, t: float = 0.0) -> Path:
        return self.write_bytes(rel, encode(f, t))

    def write_keyvalues(self, rel: str, blocks: dict[str, dict]) -> Path:
        return self.write_text(rel, format_blocks(blocks))

    def mark(self, stage: str) -> None:
        """Record the wall-clock time spent since the previous mark."""
        now = time.perf_counter()
        self.timings[stage] = self.timings.get(stage, 0.0) + now - self._last
        self._last = now

    def finish(self, command: str, config_digest: str, version: str) -> Path:
        """Write the manifest (checksums of every registered file) last."""
        self.mark("write")
        entries = {rel: sha256_file(self.root / rel) for rel in sorted(self.files)}
        manifest = {
            "command": command,
            "config_hash": config_digest,
            "code_version": version,
            "files": entries,
            "timings_s": {k: round(v, 3) for k, v in self.timings.items()},
        }
        data = json.dumps(manifest, indent=2, sort_keys=True).encode()
        p = self.root / MANIFEST
        tmp = p.with_name(p.name + ".part")
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, p)
        return p


def read_manifest(root: str | os.PathLike) -> dict:
    p = Path(root) / MANIFEST
    if not p.exists():
        raise StoreError(f"{root} has no {MANIFEST}; the run is missing or incomplete")
    return json.loads(p.read_text())


def verify_manifest(root: str | os.PathLike) -> list[str]:
    """Files whose checksum no longer matches the manifest (empty when intact)."""
    man = read_manifest(root)
    bad = []
    for rel, digest in man["files"].items():
        p = Path(root) / rel
        if not p.exists() or sha256_file(p) != digest:
            bad.append(rel)
    return bad


def format_blocks(blocks: dict[str, dict]) -> str:
    out = []
    for name, values in blocks.items():
        out.append(f"[{name}]")
        out.extend(f"{k} = {_fmt(v)}" for k, v in values.items())
        out.append("")
    return "\n".join(out)


def parse_blocks(text: str) -> dict[str, dict[str, str]]:
    blocks: dict[str, dict[str, str]] = {}
    current = None
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = blocks.setdefault(line[1:-1], {})
        elif "=" in line and current is not None:
            k, v = (s.strip() for s in line.split("=", 1))
            current[k] = v
    return blocks


# -- observables --------------------------------------------------------------------

def observable_rows(series) -> list[list[float]]:
    return series.as_array().tolist()


def read_observables(path: str | os.PathLike):
    from .propagation import ObservableSeries
    header, rows = read_csv(path)
    if tuple(header) != OBSERVABLE_HEADER:
        raise StoreError(f"{path}: unexpected observable header {header}")
    s = ObservableSeries()
    for row in rows:
        s.append(**{k: float(v) for k, v in zip(header, row)})
    return s


# -- eigenpair store -----------------------------------------------------------------

def write_eigen_store(rd: RunDirectory, basis: BilliardEigenbasis, prefix: str = "eigen") -> None:
    """One quarter-domain EQLB1 field per eigenfunction plus index.csv and lattice.txt.

    ``k`` is the merged (energy-sorted) position.  Energies in the index are
    the reported values; lattice.txt records whether they carry the
    dispersion correction so the raw stencil eigenvalues can be recovered.
    """
    lat = basis.lattice
    rd.write_text(f"{prefix}/lattice.txt",
                  f"a = {lat.params.a!r}\nb = {lat.params.b!r}\nresolution = {lat.resolution}\n"
                  f"pad = {lat.pad}\ncorrected = {basis.solutions[0].lattice_energies is not None}\n")
    rows = []
    for k in range(len(basis)):
        px, py = basis.sector_of(k)
        rows.append([k, basis.energies[k], PARITY_NAME[px], PARITY_NAME[py], basis.residuals[k]])
        rd.write_field(f"{prefix}/phi_{k:05d}.eqlb", lat.quarter_field(basis.quarter_vector(k)),
                       float(basis.energies[k]))
    rd.write_csv(f"{prefix}/index.csv", EIGEN_INDEX_HEADER, rows)


def _read_lattice(root: Path) -> tuple[BilliardLattice, bool]:
    from .models import RippleBilliardParams
    vals = {}
    for line in (root / "lattice.txt").read_text().splitlines():
        if "=" in line:
            k, v = (s.strip() for s in line.split("=", 1))
            vals[k] = v
    params = RippleBilliardParams(float(vals["a"]), float(vals["b"]))
    return BilliardLattice(params, int(vals["resolution"]), int(vals["pad"])), vals.get("corrected") == "True"


def read_eigen_store(path: str | os.PathLike) -> BilliardEigenbasis:
    root = Path(path)
    try:
        lattice, corrected = _read_lattice(root)
    except (OSError, KeyError, ValueError) as exc:
        raise StoreError(f"cannot read eigen store lattice at {root}: {exc}") from exc
    header, rows = read_csv(root / "index.csv")
    if tuple(header) != EIGEN_INDEX_HEADER:
        raise StoreError(f"{root}/index.csv: unexpected header {header}")
    mask = lattice.quarter_mask
    groups: dict[tuple[int, int], list] = {}
    for row in rows:
        k = int(row[0])
        sector = (parse_parity(row[2]), parse_parity(row[3]))
        f, _ = read_snapshot(root / f"phi_{k:05d}.eqlb")
        q = np.asarray(f.values)[: lattice.mx, : lattice.my][:, ::-1][mask]
        groups.setdefault(sector, []).append((float(row[1]), q, float(row[4])))
    sols = []
    for sector, items in groups.items():
        e = np.array([it[0] for it in items])
        vecs = np.column_stack([it[1] for it in items])
        res = np.array([it[2] for it in items])
        raw = None
        if corrected:
            h2 = lattice.h ** 2
            raw = (np.sqrt(1.0 + e * h2 / 4.0) - 1.0) * 8.0 / h2  # inverse of lam + lam^2 h^2/16
        sols.append(SectorSolution(sector, e, vecs, res, raw))
    return BilliardEigenbasis(lattice, sols)


def write_decomposition(rd: RunDirectory, decomposition: SpectralDecomposition,
                        rel: str = "decomposition.csv") -> None:
    c = decomposition.c
    rd.write_csv(rel, DECOMPOSITION_HEADER,
                 ([k, float(np.real(c[k])), float(np.imag(c[k])), float(abs(c[k]) ** 2)] for k in range(len(c))))


def read_decomposition(path: str | os.PathLike, basis: BilliardEigenbasis) -> SpectralDecomposition:
    header, rows = read_csv(path)
    if tuple(header) != DECOMPOSITION_HEADER:
        raise StoreError(f"{path}: unexpected header {header}")
    c = np.zeros(len(basis), dtype=complex)
    for row in rows:
        c[int(row[0])] = complex(float(row[1]), float(row[2]))
    return SpectralDecomposition(basis, c, float(np.sum(np.abs(c) ** 2)))


__all__ = [
    "RunDirectory", "StoreError", "read_manifest", "verify_manifest", "csv_text", "read_csv",
    "format_blocks", "parse_blocks", "read_observables", "write_eigen_store", "read_eigen_store",
    "write_decomposition", "read_decomposition",
]
