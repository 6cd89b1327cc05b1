import shutil
import subprocess
import sys

import numpy as np
import pytest

from eqlab.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from eqlab.store import parse_blocks, read_csv, verify_manifest

SMALL_RIPPLE = """\
system = ripple
model.a = 6.0
model.b = 15.0
packet.alpha = 0.6
packet.r_i = 0.0, 15.0
packet.p_i = 0.8, 0.0
grid.resolution = 70
grid.pad = 4
spectrum.count = 130
spectrum.sectors = even-even, odd-even
schedule.t_end = 6.0
schedule.window = 3.0, 6.0
schedule.samples = 120
schedule.window_snapshots = 50
analysis.classical_count = 20000
analysis.classical_snapshots = 3
analysis.husimi_sigma = 3.0
analysis.husimi_points = 48
"""

SMALL_HH = """\
grid.n = 336
schedule.t_end = 2.0
schedule.window = 1.0, 2.0
schedule.samples = 20
schedule.window_snapshots = 11
analysis.husimi_points = 32
analysis.support_threshold = 0.01
"""


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "ripple.txt").write_text(SMALL_RIPPLE)
    (root / "hh.txt").write_text(SMALL_HH)
    return root


@pytest.fixture(scope="module")
def ripple_run(work):
    out = work / "r1"
    assert main(["evolve", "--config", str(work / "ripple.txt"), "--out", str(out)]) == EXIT_OK
    return out


def test_evolve_writes_complete_run(ripple_run, capsys):
    assert verify_manifest(ripple_run) == []
    for name in ("config.txt", "observables.csv", "decomposition.csv", "n_inf.eqlb", "eigen/index.csv"):
        assert (ripple_run / name).exists()
    header, rows = read_csv(ripple_run / "observables.csv")
    assert header[0] == "t" and len(rows) >= 120


def test_evolve_is_deterministic(work, ripple_run):
    out = work / "r1b"
    assert main(["evolve", "--config", str(work / "ripple.txt"), "--out", str(out)]) == EXIT_OK
    for name in ("observables.csv", "decomposition.csv", "n_inf.eqlb"):
        assert (out / name).read_bytes() == (ripple_run / name).read_bytes()


def test_analyze_and_husimi(ripple_run, capsys):
    assert main(["analyze", str(ripple_run), "--no-classical"]) == EXIT_OK
    text = (ripple_run / "analysis" / "analysis.txt").read_text()
    blocks = parse_blocks(text)
    assert blocks
    assert verify_manifest(ripple_run / "analysis") == []
    assert main(["husimi", str(ripple_run)]) == EXIT_OK
    assert "band_fraction" in capsys.readouterr().out


def test_classical_verb_is_seeded(work):
    a, b = work / "c1", work / "c2"
    for out in (a, b):
        assert main(["classical", "--config", str(work / "ripple.txt"), "--seed", "5", "--out", str(out)]) == EXIT_OK
    assert (a / "classical.txt").read_text() == (b / "classical.txt").read_text()


def test_hh_evolve_and_analyze(work):
    out = work / "h1"
    assert main(["evolve", "--preset", "hh-desk", "--config", str(work / "hh.txt"), "--out", str(out)]) == EXIT_OK
    assert main(["analyze", str(out), "--no-classical"]) == EXIT_OK
    blocks = parse_blocks((out / "analysis" / "analysis.txt").read_text())
    assert "entropy" in blocks and "x-marginal" in blocks


def test_oracle_verb(work):
    out = work / "o1"
    assert main(["oracle", "--kind", "complex", "--N", "2", "--draws", "20000", "--seed", "1",
                 "--out", str(out)]) == EXIT_OK
    blocks = parse_blocks((out / "oracle.txt").read_text())
    assert float(blocks["oracle"]["max_rel_error_exact"]) < 0.15
    assert float(blocks["oracle"]["max_rel_error_quoted"]) > 1.0


def test_config_errors_exit_2(work, capsys):
    cfg = str(work / "ripple.txt")
    assert main(["evolve", "--config", cfg, "--set", "spectrum.count=5000", "--out", str(work / "x")]) == EXIT_CONFIG
    assert "spectrum.count" in capsys.readouterr().err
    assert main(["evolve", "--config", cfg, "--set", "packet.r_i=0.0, 2.0", "--out", str(work / "x")]) == EXIT_CONFIG
    assert main(["evolve", "--config", str(work / "absent.txt")]) == EXIT_CONFIG
    assert main(["evolve", "--preset", "hh-desk", "--set", "grid.n=128", "--out", str(work / "x")]) == EXIT_CONFIG
    assert main(["eigensolve", "--preset", "hh-desk", "--out", str(work / "x")]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        main(["evolve", "--preset", "no-such-preset"])
    assert exc.value.code == 2


def test_spacing_with_too_few_levels(ripple_run):
    assert main(["spacing-stats", "--eigen", str(ripple_run / "eigen"),
                 "--out", str(ripple_run.parent / "s1")]) == EXIT_CONFIG


def test_io_errors_exit_4(work, ripple_run, capsys):
    assert main(["analyze", str(work / "does-not-exist")]) == EXIT_IO
    broken = work / "broken"
    shutil.copytree(ripple_run, broken)
    (broken / "manifest.json").unlink()
    assert main(["analyze", str(broken)]) == EXIT_IO
    assert "incomplete" in capsys.readouterr().err
    corrupt = work / "corrupt"
    shutil.copytree(ripple_run, corrupt)
    data = (ripple_run / "n_inf.eqlb").read_bytes()
    (corrupt / "n_inf.eqlb").write_bytes(data[:30])
    assert main(["analyze", str(corrupt), "--no-classical"]) == EXIT_IO


def test_console_script():
    res = subprocess.run([sys.executable, "-m", "eqlab.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("eqlab ")
    exe = shutil.which("eqlab")
    if exe:
        res = subprocess.run([exe, "--help"], capture_output=True, text=True)
        assert res.returncode == 0 and "spacing-stats" in res.stdout
