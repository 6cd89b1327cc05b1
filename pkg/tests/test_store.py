import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from eqlab.fields import ComplexField, Grid2D
from eqlab.models import RippleBilliardParams
from eqlab.propagation import ObservableSeries, make_gaussian_packet
from eqlab.snapshot import read_snapshot
from eqlab.spectrum import SECTORS, expand_state, solve_eigenstates
from eqlab.store import (
    RunDirectory, StoreError, format_blocks, parse_blocks, read_csv, read_decomposition,
    read_eigen_store, read_manifest, read_observables, verify_manifest, write_decomposition,
    write_eigen_store,
)


def test_manifest_lists_checksums(tmp_path):
    rd = RunDirectory(tmp_path / "run")
    rd.write_text("a.txt", "hello")
    rd.write_csv("sub/t.csv", ("x", "y"), [[1, 2.5], [3, 4.0]])
    g = Grid2D(8, 8, 0, 0, 1, 1)
    rd.write_field("f.eqlb", ComplexField(g, np.ones(g.shape, dtype=complex)), t=1.5)
    rd.finish("evolve", "abc", "0.1")
    man = read_manifest(tmp_path / "run")
    assert man["command"] == "evolve" and man["config_hash"] == "abc"
    assert sorted(man["files"]) == ["a.txt", "f.eqlb", "sub/t.csv"]
    assert verify_manifest(tmp_path / "run") == []
    assert not list((tmp_path / "run").rglob("*.part"))
    (tmp_path / "run" / "a.txt").write_text("tampered")
    assert verify_manifest(tmp_path / "run") == ["a.txt"]
    assert read_snapshot(tmp_path / "run" / "f.eqlb")[1] == 1.5


def test_rewriting_a_run_invalidates_the_manifest(tmp_path):
    rd = RunDirectory(tmp_path)
    rd.finish("evolve", "", "0")
    RunDirectory(tmp_path)
    with pytest.raises(StoreError, match="incomplete"):
        read_manifest(tmp_path)


def test_unwritable_location(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(StoreError):
        RunDirectory(blocker / "run")


def test_timings_recorded(tmp_path):
    rd = RunDirectory(tmp_path)
    rd.mark("compute")
    rd.finish("x", "", "0")
    assert set(json.loads((tmp_path / "manifest.json").read_text())["timings_s"]) == {"compute", "write"}


names = st.from_regex(r"[a-z][a-z \-]{0,10}[a-z]", fullmatch=True)
kv = st.dictionaries(st.from_regex(r"[a-z_]{1,10}", fullmatch=True),
                     st.one_of(st.integers(), st.floats(allow_nan=False, allow_infinity=False)), max_size=5)


@given(st.dictionaries(names, kv, max_size=4))
def test_blocks_round_trip(blocks):
    back = parse_blocks(format_blocks(blocks))
    assert set(back) == set(blocks)
    for name, values in blocks.items():
        assert {k: float(v) for k, v in back[name].items()} == {k: float(v) for k, v in values.items()}


def test_observables_round_trip(tmp_path):
    s = ObservableSeries()
    for i in range(5):
        s.append(t=0.1 * i, px=1.0 / 3.0, py=-i, Sr=-2.5, norm=1.0, energy=np.pi)
    rd = RunDirectory(tmp_path)
    rd.write_csv("obs.csv", ObservableSeries.COLUMNS, s.as_array().tolist())
    back = read_observables(tmp_path / "obs.csv")
    assert np.array_equal(back.as_array(), s.as_array())
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(StoreError):
        read_observables(tmp_path / "bad.csv")
    with pytest.raises(StoreError):
        read_csv(tmp_path / "missing.csv")


@pytest.fixture(scope="module")
def basis():
    return solve_eigenstates(RippleBilliardParams(6.0, 15.0), 15, 30, sectors=SECTORS)


def test_eigen_store_round_trip(tmp_path, basis):
    rd = RunDirectory(tmp_path)
    write_eigen_store(rd, basis)
    files = sorted(p.name for p in (tmp_path / "eigen").glob("phi_*.eqlb"))
    assert len(files) == len(basis) == 60
    back = read_eigen_store(tmp_path / "eigen")
    assert np.array_equal(back.energies, basis.energies)
    for k in (0, 7, 59):
        assert back.sector_of(k) == basis.sector_of(k)
        assert np.array_equal(back.eigenfunction(k), basis.eigenfunction(k))
    raw = np.concatenate([s.lattice_energies for s in basis.solutions])
    raw_back = np.concatenate([s.lattice_energies for s in back.solutions])
    assert np.allclose(np.sort(raw_back), np.sort(raw), rtol=1e-12)
    with pytest.raises(StoreError):
        read_eigen_store(tmp_path / "nothing")


def test_decomposition_round_trip(tmp_path, basis):
    psi = make_gaussian_packet(1.0, (0.0, 15.0), (0.5, 0.0), basis.grid)
    with pytest.warns(RuntimeWarning):
        dec = expand_state(psi, basis)
    rd = RunDirectory(tmp_path)
    write_decomposition(rd, dec)
    back = read_decomposition(tmp_path / "decomposition.csv", basis)
    assert np.array_equal(back.c, dec.c)
    assert back.captured_norm == pytest.approx(dec.captured_norm, rel=1e-12)
