import csv
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from gefbasins.cli import main
from gefbasins.io import load_basin_map


def run(*args):
    exe = shutil.which("gefbasins")
    cmd = [exe] if exe else [sys.executable, "-m", "gefbasins.cli"]
    return subprocess.run(cmd + [str(a) for a in args], capture_output=True, text=True)


@pytest.fixture(scope="module")
def tess(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    p = d / "map.gefb"
    r = run("tessellate", "--seed", 3, "--window", 2, "--pitch", 0.05, "--rel-tol", 1e-6,
            "--capture-radius", 0.02, "--out", p)
    assert r.returncode == 0, r.stderr
    return p


def test_version_and_usage():
    r = run("--version")
    assert r.returncode == 0 and "0.1.0" in r.stdout
    assert run().returncode == 2
    assert run("flow", "--out", "x.csv").returncode == 2


def test_sample_and_zeros(tmp_path):
    assert run("sample", "--seed", 1, "--window", 2, "--out", tmp_path / "s.json").returncode == 0
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["seed"] == 1
    r = run("zeros", "--seed", 1, "--window", 2, "--out", tmp_path / "z.csv")
    assert r.returncode == 0, r.stderr
    rows = list(csv.DictReader(open(tmp_path / "z.csv")))
    assert rows and all(abs(float(q["x"])) <= 2 and abs(float(q["y"])) <= 2 for q in rows)


def test_critical_and_flow(tmp_path):
    assert run("critical", "--seed", 2, "--window", 2, "--out", tmp_path / "c.csv").returncode == 0
    kinds = {q["kind"] for q in csv.DictReader(open(tmp_path / "c.csv"))}
    assert {"zero", "saddle"} <= kinds
    r = run("flow", "--seed", 2, "--window", 2, "--point", "0.3,0.2", "--point=-1,1",
            "--out", tmp_path / "f.csv")
    assert r.returncode == 0, r.stderr
    rows = list(csv.DictReader(open(tmp_path / "f.csv")))
    assert len(rows) == 2 and rows[0]["terminal"] == "sink"


def test_tessellate_is_deterministic(tess, tmp_path):
    p = tmp_path / "again.gefb"
    assert run("tessellate", "--seed", 3, "--window", 2, "--pitch", 0.05, "--rel-tol", 1e-6,
               "--capture-radius", 0.02, "--out", p).returncode == 0
    assert p.read_bytes() == tess.read_bytes()
    assert (tmp_path / "again.gefb.json").read_bytes() == (tess.parent / "map.gefb.json").read_bytes()
    bm, doc = load_basin_map(p)
    assert bm.shape == (80, 80) and doc["seed"] == 3


def test_geometry_render_cutoff(tess, tmp_path):
    assert run("geometry", "--in", tess, "--out", tmp_path / "g.csv").returncode == 0
    rows = list(csv.DictReader(open(tmp_path / "g.csv")))
    bm, _ = load_basin_map(tess)
    assert len(rows) == bm.interior.sum()
    assert run("render", "--in", tess, "--out", tmp_path / "m.svg",
               "--render-trajectories", 4).returncode == 0
    assert (tmp_path / "m.svg").read_text().startswith("<svg")
    r = run("cutoff", "--in", tess, "--out", tmp_path / "cut.gefb", "--eps", 0.1)
    assert r.returncode == 0, r.stderr + r.stdout
    out = json.loads(r.stdout)
    assert out.pop("passed") and all(out.values())


def test_errors_exit_nonzero(tmp_path):
    bad = tmp_path / "bad.gefb"
    bad.write_bytes(b"NOPE" + bytes(60))
    (tmp_path / "bad.gefb.json").write_text("{}")
    r = run("geometry", "--in", bad, "--out", tmp_path / "g.csv")
    assert r.returncode == 1 and r.stderr.startswith("error[format]")
    r = run("geometry", "--in", tmp_path / "missing.gefb", "--out", tmp_path / "g.csv")
    assert r.returncode == 1 and "error[io]" in r.stderr


def test_ensemble_in_process(tmp_path, capsys):
    rc = main(["ensemble", "--kind", "travel_time", "--samples", "2", "--starts", "30",
               "--window", "1.5", "--out", str(tmp_path / "ens")])
    assert rc == 0
    s = json.loads((tmp_path / "ens" / "summary.json").read_text())
    assert s["failed"] == 0 and s["travel_time"]["n"] > 0
    assert main(["ensemble", "--kind", "tails", "--samples", "1", "--window", "1.5",
                 "--center", "0,1", "--out", str(tmp_path / "e2")]) == 1
