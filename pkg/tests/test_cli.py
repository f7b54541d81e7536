import json
import os
import subprocess
import sys

import numpy as np
import pytest

from carpetlab.cli import main
from carpetlab.geometry import read_graph, write_graph

from conftest import vid


@pytest.fixture(scope="module")
def g3_file(tmp_path_factory, g3):
    path = tmp_path_factory.mktemp("cli") / "g3.txt"
    write_graph(g3, path)
    return str(path)


@pytest.fixture(scope="module")
def g4_file(tmp_path_factory, g4):
    path = tmp_path_factory.mktemp("cli") / "g4.txt"
    write_graph(g4, path)
    return str(path)


@pytest.fixture(scope="module")
def g3d_file(tmp_path_factory, g3d):
    path = tmp_path_factory.mktemp("cli") / "g3d.txt"
    write_graph(g3d, path)
    return str(path)


def run_json(capsys, argv):
    code = main(argv)
    out = capsys.readouterr().out
    return code, json.loads(out)


# ------------------------------------------------------------------ plumbing


def test_version_flag():
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0


def test_missing_subcommand():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_unknown_flag():
    with pytest.raises(SystemExit) as exc:
        main(["build", "--frobnicate"])
    assert exc.value.code == 2


def test_console_script_is_wired():
    proc = subprocess.run(
        [sys.executable, "-m", "carpetlab.cli", "--version"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "carpet" in proc.stdout


# --------------------------------------------------------------------- build


def test_build_and_read(tmp_path, capsys):
    out = tmp_path / "g2.txt"
    assert main(["build", "--n", "2", "--out", str(out)]) == 0
    assert "64 vertices" in capsys.readouterr().out
    g = read_graph(out)
    assert g.num_vertices == 64 and g.num_edges == 88


def test_build_over_budget(tmp_path, capsys):
    code = main(["build", "--n", "9", "--out", str(tmp_path / "x.txt"), "--budget", "1000"])
    assert code == 3
    assert "capacity error" in capsys.readouterr().err


def test_build_bad_params(tmp_path, capsys):
    code = main(["build", "--k", "4", "--n", "1", "--out", str(tmp_path / "x.txt")])
    assert code == 2
    assert "usage error" in capsys.readouterr().err


def test_missing_graph_file(capsys):
    assert main(["harnack", "--graph", "/nonexistent/g.txt", "--level", "2"]) == 2


# ------------------------------------------------------------------- harnack


def test_harnack_json(capsys, g3_file):
    code, payload = run_json(capsys, ["harnack", "--graph", g3_file, "--level", "2"])
    assert code == 0
    assert payload["level"] == 2
    assert payload["constant"] == pytest.approx(1.3843180284844647, rel=1e-8)
    assert payload["rho"] == pytest.approx(0.06361285090618535, rel=1e-6)
    assert len(payload["witness"]) == 3


def test_harnack_level_too_big(capsys, g3_file):
    assert main(["harnack", "--graph", g3_file, "--level", "7"]) == 2


# ------------------------------------------------------------------- hitting


def test_hitting_single_probe(capsys, g4_file, g4):
    x = vid(g4, 26, 26)
    y = vid(g4, 26, 31)
    code, payload = run_json(
        capsys, ["hitting", "--graph", g4_file, "--x", str(x), "--y", str(y), "--r", "3"]
    )
    assert code == 0
    assert 0.0 < payload["probability"] < 1.0


def test_hitting_annulus_sweep(capsys, g4_file, g4):
    x = vid(g4, 26, 26)
    code, payload = run_json(
        capsys, ["hitting", "--graph", g4_file, "--x", str(x), "--r", "3"]
    )
    assert code == 0
    # Every vertex whose distance from x lies in [r, 2r] is probed.
    delta = (g4.coords - g4.coords[x]).astype(float)
    dist = np.sqrt((delta ** 2).sum(axis=1))
    assert payload["count"] == int(((dist >= 3) & (dist <= 6)).sum())
    assert 0.0 < payload["min"] <= payload["mean"] <= 1.0


def test_hitting_y_without_x(capsys, g4_file):
    assert main(["hitting", "--graph", g4_file, "--y", "7", "--r", "3"]) == 2


def test_hitting_catalog_mode(capsys, g4_file):
    code, payload = run_json(
        capsys, ["hitting", "--graph", g4_file, "--r", "3", "--count", "5", "--seed", "7"]
    )
    assert code == 0
    assert payload["count"] == 5
    assert len(payload["probes"]) == 5


# ---------------------------------------------------------------------- heat


def test_heat_diag(tmp_path, capsys, g4_file):
    csv = tmp_path / "diag.csv"
    code, payload = run_json(
        capsys, ["heat", "diag", "--graph", g4_file, "--tmax", "64", "--out", str(csv)]
    )
    assert code == 0
    assert payload["ds"]["value"] == pytest.approx(1.78, abs=0.05)
    assert payload["dw"]["value"] == pytest.approx(2.09, abs=0.1)
    lines = csv.read_text().splitlines()
    assert lines[0] == "t,p_tt"
    assert len(lines) == 65


def test_heat_regime(tmp_path, capsys, g4_file, g4):
    x = vid(g4, 26, 26)
    pairs = tmp_path / "pairs.csv"
    rows = []
    for dy in (1, 2, 3, 4):
        y = vid(g4, 26, 26 + dy)
        rows += [f"{y},16", f"{y},32"]
    pairs.write_text("y,t\n" + "\n".join(rows) + "\n")
    code, payload = run_json(
        capsys,
        ["heat", "regime", "--graph", g4_file, "--x", str(x), "--pairs", str(pairs),
         "--ds", "1.78", "--dw", "2.09"],
    )
    assert code == 0
    assert payload["sub_gaussian"]["n_points"] == 8
    assert payload["gaussian"] is None


# -------------------------------------------------------------------- couple


def test_couple_run_default_pair(capsys, g3_file, g3):
    code, payload = run_json(
        capsys, ["couple", "run", "--graph", g3_file, "--n", "2", "--trials", "40"]
    )
    assert code == 0
    assert payload["pair"] == [vid(g3, 0, 0), vid(g3, 0, 1)]
    assert payload["valid"] == 40
    assert payload["probability"] >= 0.05


def test_couple_run_audit(capsys, g3_file):
    code, payload = run_json(
        capsys,
        ["couple", "run", "--graph", g3_file, "--n", "2", "--trials", "8", "--audit"],
    )
    assert code == 0
    assert len(payload["digests"]) == 8
    assert all(len(d) == 16 for d in payload["digests"])


def test_couple_run_needs_both_ids(capsys, g3_file):
    assert main(["couple", "run", "--graph", g3_file, "--n", "2", "--x", "0"]) == 2


def test_couple_upgrade(capsys, g3_file):
    code, payload = run_json(
        capsys,
        ["couple", "upgrade", "--graph", g3_file, "--m", "0", "--n", "2", "--trials", "50"],
    )
    assert code == 0
    assert payload["trials"] == 50
    assert 0.0 <= payload["probability"] <= 1.0


# -------------------------------------------------------------------- resist


def test_resist_face(capsys, g3_file):
    code, payload = run_json(capsys, ["resist", "face", "--graph", g3_file, "--n", "2"])
    assert code == 0
    assert payload["resistance"] == pytest.approx(1.657261410788382, rel=1e-9)


def test_resist_infinity(tmp_path, capsys, g3d_file):
    sets = tmp_path / "targets.txt"
    sets.write_text("0\n\n0\n1\n2\n")  # two groups split by the blank line
    code, payload = run_json(
        capsys,
        ["resist", "infinity", "--graph", g3d_file, "--set", str(sets),
         "--levels", "1,2,3"],
    )
    assert code == 0
    assert len(payload["reports"]) == 2
    first = payload["reports"][0]
    assert not first["divergent"]
    assert first["extrapolated"] == pytest.approx(0.7642375536559681, rel=1e-6)


def test_resist_infinity_divergent(tmp_path, capsys, g4_file):
    sets = tmp_path / "targets.txt"
    sets.write_text("0\n")
    code, payload = run_json(
        capsys,
        ["resist", "infinity", "--graph", g4_file, "--set", str(sets),
         "--levels", "1,2,3,4"],
    )
    assert code == 0
    assert payload["reports"][0]["divergent"]
    assert payload["reports"][0]["extrapolated"] is None


# --------------------------------------------------------------- suite/report


def test_suite_and_report(tmp_path, capsys):
    out = tmp_path / "artifacts"
    out.mkdir()
    code = main([
        "suite", "--levels", "2,3", "--experiments", "build,resist",
        "--trials", "30", "--out", str(out),
    ])
    assert code == 0
    assert "2 experiments" in capsys.readouterr().out
    manifest = out / "manifest.json"
    assert manifest.exists()

    assert main(["report", "--manifest", str(manifest)]) == 0
    text = capsys.readouterr().out
    assert "[build]" in text and "[resist]" in text

    # A listed artifact that disappears is a reporting gap: exit 1.
    os.remove(out / "build.csv")
    assert main(["report", "--manifest", str(manifest)]) == 1
    capsys.readouterr()


def test_suite_reports_failures(tmp_path, capsys):
    out = tmp_path / "artifacts"
    out.mkdir()
    code = main([
        "suite", "--levels", "2,3", "--experiments", "build,heat",
        "--trials", "30", "--out", str(out),
    ])
    assert code == 1
    assert "failed: heat" in capsys.readouterr().out


def test_report_empty_manifest(tmp_path, capsys):
    out = tmp_path / "empty"
    out.mkdir()
    assert main(["suite", "--experiments", ",", "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["report", "--manifest", str(out / "manifest.json")]) == 2
    assert "nothing to report" in capsys.readouterr().out


def test_report_missing_manifest(capsys):
    assert main(["report", "--manifest", "/nonexistent/manifest.json"]) == 2
