import io
import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from finsler import cli

from conftest import DATA, spec_path


def run(*argv, env=None):
    out = io.StringIO()
    if env:
        old = {k: os.environ.get(k) for k in env}
        os.environ.update(env)
    try:
        code = cli.main([str(a) for a in argv], out=out)
    finally:
        if env:
            for k, v in old.items():
                if v is None:
                    os.environ.pop(k, None)
                else:
                    os.environ[k] = v
    return code, out.getvalue()


def write_spec(tmp_path, doc, name="spec.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def read_csv(text):
    lines = text.splitlines()
    header = lines[0].split(",")
    rows = np.array([[float(v) for v in l.split(",")] for l in lines[1:] if not l.startswith("#")])
    footer = dict(l[2:].split(",", 1) for l in lines if l.startswith("# "))
    return header, rows, footer


def test_tensor_minkowski_g():
    code, out = run("tensor", spec_path("minkowski.json"), "--at", 0, 0, 0, 0, "--dir", 1, 0, 0, 0, "--what", "g")
    assert code == 0
    doc = json.loads(out)
    assert doc["components"] == np.diag([1.0, -1, -1, -1]).tolist()
    assert doc["formula"]


def test_tensor_euclid_chern_and_randers_torsion():
    code, out = run("tensor", spec_path("euclid2.json"), "--at", 1, 0.5, "--dir", 0.3, 2, "--what", "chern")
    assert code == 0 and np.max(np.abs(json.loads(out)["components"])) == 0
    code, out = run("tensor", spec_path("randers2.json"), "--at", 0, 0, "--dir", 1, 0, "--what", "torsion")
    assert code == 0 and np.max(np.abs(json.loads(out)["components"])) < 1e-10


@pytest.mark.parametrize("what", cli.TENSORS)
def test_every_tensor_kind(what):
    code, out = run("tensor", spec_path("randers2.json"), "--at", 0.1, 0.2, "--dir", 1, 0.4, "--what", what)
    assert code == 0
    assert "components" in json.loads(out)


def test_restspace_output():
    code, out = run("tensor", spec_path("randers2.json"), "--at", 0, 0, "--dir", 1, 0, "--what", "restspace")
    doc = json.loads(out)
    assert doc["definiteness"] == "positive-definite"
    assert math.isclose(doc["components"][0][0], 1.3, rel_tol=1e-12)


def test_exit_codes(tmp_path):
    assert run("tensor", spec_path("randers2.json"), "--at", 0, 0, "--dir", 0, 0)[0] == 2
    degenerate = write_spec(tmp_path, {"dimension": 2, "family": "custom", "L": "y0^2", "domain": ["y0^2 + y1^2"]})
    assert run("tensor", degenerate, "--at", 0, 0, "--dir", 1, 1)[0] == 3
    bad_schema = write_spec(tmp_path, {"dimension": 2, "family": "custom"}, "bad.json")
    assert run("tensor", bad_schema, "--at", 0, 0, "--dir", 1, 1)[0] == 1
    bad_expr = write_spec(tmp_path, {"dimension": 2, "family": "custom", "L": "y0^^2", "domain": ["y0"]}, "e.json")
    assert run("tensor", bad_expr, "--at", 0, 0, "--dir", 1, 1)[0] == 1
    assert run("tensor", tmp_path / "missing.json", "--at", 0, 0, "--dir", 1, 1)[0] == 1
    assert run("tensor", spec_path("randers2.json"), "--at", 0, "--dir", 1, 0)[0] == 1
    assert run("frobnicate")[0] == 1


def test_parse_error_reports_position(tmp_path, capsys):
    bad_expr = write_spec(tmp_path, {"dimension": 2, "family": "custom", "L": "y0 + * y1", "domain": ["y0"]})
    assert run("tensor", bad_expr, "--at", 0, 0, "--dir", 1, 1)[0] == 1
    assert "position 5" in capsys.readouterr().err


def test_flat_geodesic_csv(tmp_path):
    out_file = tmp_path / "geo.csv"
    code, out = run("geodesic", spec_path("euclid2.json"), "--from", 0, 0, "--dir", 1, 2, "--tmax", 1,
                    "--out", out_file)
    assert code == 0 and out == ""
    text = out_file.read_text()
    assert "\r" not in text
    header, rows, footer = read_csv(text)
    assert header == ["t", "x0", "x1", "y0", "y1", "L(x')"]
    assert np.allclose(rows[-1, 1:3], [1.0, 2.0], atol=1e-14)
    assert float(footer["max_L_drift"]) == 0.0


def test_sphere_equator_geodesic_and_spray_flag():
    code, out = run("geodesic", spec_path("sphere.json"), "--from", math.pi / 2, 0, "--dir", 0, 1, "--tmax", 2)
    _, rows, _ = read_csv(out)
    assert code == 0 and np.max(np.abs(rows[:, 1] - math.pi / 2)) < 1e-6
    args = ("geodesic", spec_path("randers2.json"), "--from", 0.1, 0, "--dir", 0.5, 0.7, "--tmax", 1)
    _, a, _ = read_csv(run(*args, "--connection", "chern")[1])
    _, b, _ = read_csv(run(*args, "--connection", "spray")[1])
    assert np.max(np.abs(a - b)) < 1e-8


def test_geodesic_domain_exit(tmp_path, capsys):
    half = write_spec(tmp_path, {"dimension": 2, "family": "custom", "L": "y0^2 + sin(x0)^2 * y1^2",
                                 "domain": ["y0"]})
    out_file = tmp_path / "g.csv"
    code, _ = run("geodesic", half, "--from", 1.2, 0, "--dir", 0.5, 1, "--tmax", 5, "--step", 0.01,
                  "--out", out_file)
    assert code == 4
    err = capsys.readouterr().err
    t_star = float(err.split("t* = ")[1].split(";")[0])
    _, rows, footer = read_csv(out_file.read_text())
    assert rows[-1, 0] <= t_star < 5
    assert np.all(rows[:, 3] > 0)
    assert float(footer["t_exit"]) == t_star


def test_transport_flat_and_holonomy():
    code, out = run("transport", spec_path("euclid2.json"), "--curve", "1 + t; 0.5*t^2", "--observer", 1, 0,
                    "--vector", 0, 1, "--t1", 0, "--t2", 1)
    header, rows, _ = read_csv(out)
    assert code == 0
    assert header[:5] == ["t", "x0", "x1", "V0", "V1"]
    assert np.allclose(rows[:, 3:7], [1, 0, 0, 1], atol=0)
    code, out = run("transport", spec_path("sphere.json"), "--curve", f"{math.pi / 4}; t", "--observer", 0, 1,
                    "--vector", 1, 0, "--t1", 0, "--t2", 2 * math.pi)
    header, rows, _ = read_csv(out)
    w0, w1 = rows[-1, header.index("W0_0")], rows[-1, header.index("W0_1")]
    angle = math.atan2(math.sin(math.pi / 4) * w1, w0)
    assert abs(angle - 2 * math.pi * (1 - math.cos(math.pi / 4))) < 1e-4


def test_randers_pairings_constant():
    code, out = run("transport", spec_path("randers2.json"), "--curve", "0.3*t; 0.2 - 0.4*t", "--observer", 1, 0.2,
                    "--vector", 1, 0, "--vector", 0, 1, "--t1", 0, "--t2", 1, "--step", 1e-2)
    header, rows, footer = read_csv(out)
    assert code == 0
    for col in ("g_W0_W0", "g_W0_W1", "g_W1_W1", "L(V)"):
        c = rows[:, header.index(col)]
        assert np.max(np.abs(c - c[0])) < 1e-6
    assert float(footer["max_pairing_drift"]) < 1e-6


def test_transport_polyline_curve(tmp_path):
    t = np.linspace(0, 1, 21)
    path = tmp_path / "curve.csv"
    np.savetxt(path, np.column_stack([t, 1 + t, t ** 2]), delimiter=",", header="t,x0,x1", comments="")
    code, out = run("transport", spec_path("euclid2.json"), "--curve", path, "--observer", 1, 1,
                    "--t1", 0, "--t2", 1, "--step", 0.05)
    _, rows, _ = read_csv(out)
    assert code == 0
    assert np.allclose(rows[-1, 1:3], [2.0, 1.0], atol=1e-12)
    assert run("transport", spec_path("euclid2.json"), "--curve", "t", "--observer", 1, 1,
               "--t1", 0, "--t2", 1)[0] == 1


def test_transport_rejects_inadmissible_observer():
    assert run("transport", spec_path("randers2.json"), "--curve", "t; t", "--observer", 0, 0,
               "--t1", 0, "--t2", 1)[0] == 2


def test_csv_uses_round_trip_digits():
    _, out = run("geodesic", spec_path("randers2.json"), "--from", 0.1, 0, "--dir", 0.5, 0.7, "--tmax", 0.1,
                 "--step", 0.05)
    _, rows, _ = read_csv(out)
    for row in out.splitlines()[1:3]:
        for v in row.split(","):
            assert float(format(float(v), ".17g")) == float(v)
    assert rows.shape == (3, 6)


def test_verify_exit_codes_and_determinism():
    code, a = run("verify", spec_path("expdiag.json"), "--json", "--seed", 3)
    assert code == 0
    code, b = run("verify", spec_path("expdiag.json"), "--json", "--seed", 3)
    assert a == b
    doc = json.loads(a)
    assert doc["seed"] == 3 and doc["ok"] is True
    code, c = run("verify", spec_path("expdiag.json"), "--json", env={"FINSLER_SEED": "3"})
    assert c == a
    assert run("verify", spec_path("expdiag.json"), env={"FINSLER_SEED": "x"})[0] == 1


def test_verify_nonhomogeneous_spec_fails():
    code, out = run("verify", os.path.join(DATA, "nonhomogeneous.json"))
    assert code == 5
    assert "FAIL homogeneity[L]" in out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "finsler", "tensor", spec_path("euclid2.json"), "--at", "1", "0",
                           "--dir", "1", "0"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["components"] == [[1.0, 0.0], [0.0, 1.0]]


def test_minkowski_quick_suite_is_fast():
    import time
    start = time.perf_counter()
    code, out = run("verify", spec_path("minkowski.json"), "--suite", "quick")
    assert code == 0
    assert time.perf_counter() - start < 5.0


def test_randers_full_suite_seed_7():
    code, out = run("verify", spec_path("randers2.json"), "--suite", "full", "--seed", 7, "--json")
    doc = json.loads(out)
    assert code == 0 and doc["ok"]
    names = {c["name"] for c in doc["checks"]}
    assert "observer-along-geodesic" in names
    assert any(c["expected_fail"] and c["ok"] for c in doc["checks"])
