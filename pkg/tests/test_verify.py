import json
import math

import numpy as np
import pytest

from finsler.connections import chern_connection
from finsler.errors import ChartError, SamplerExhausted
from finsler.geometry import MetricSpec
from finsler.verify import (
    TOLERANCES, ChartMap, CheckReport, Sampler, SuiteConfig, SuiteReport, check_cocycle, check_conic,
    check_euler, check_fd_engine, check_homogeneity, check_metric_compatibility, check_signature,
    check_transport_preserves_g, check_zero_section, derive_seed, perturbed_connection, polar_chart,
    run_suite, shear_chart,
)

from conftest import flat_metric


def test_report_semantics():
    r = CheckReport("x", 5, 1e-10, 1e-9)
    assert r.passed and r.ok
    assert not CheckReport("x", 5, 2e-9, 1e-9).passed
    xf = CheckReport("x", 5, 1.0, 1e-4, expected_fail=True)
    assert not xf.passed and xf.ok
    assert not CheckReport("x", 5, 0.0, 1e-4, expected_fail=True).ok
    assert not CheckReport("x", 0, 0.0, 1e-4).ok
    line = xf.line()
    assert line.startswith("PASS x (expected-fail): residual=1.000e+00")
    doc = CheckReport("y", 1, math.inf, 1.0).to_dict()
    assert doc["max_residual"] == "inf" and doc["ok"] is False
    suite = SuiteReport("m", "quick", 3, [r, xf])
    assert suite.ok and suite.failures == []
    assert json.loads(suite.to_json())["seed"] == 3


def test_seeds_are_independent_of_order():
    assert derive_seed(0, "a") == derive_seed(0, "a")
    assert derive_seed(0, "a") != derive_seed(0, "b")
    assert derive_seed(1, "a") != derive_seed(0, "a")


def test_sampler_stays_inside_the_domain(bogoslovsky):
    pts = Sampler(bogoslovsky, seed=4).draws(20)
    for x, y in pts:
        assert bogoslovsky.admissible(x, y)
        assert y[0] > 0
    again = Sampler(bogoslovsky, seed=4).draws(20)
    assert all(np.array_equal(a[1], b[1]) for a, b in zip(pts, again))


def test_sampler_exhaustion():
    empty = MetricSpec(2, "y0^2 + y1^2", ["-y0^2 - y1^2"])
    with pytest.raises(SamplerExhausted):
        Sampler(empty, max_rejections=50).draw()
    with pytest.raises(SamplerExhausted):
        check_homogeneity("L", None, empty, samples=1)


def test_homogeneity_checks(randers):
    for key in ("L", "g", "C", "N", "chern"):
        assert check_homogeneity(key, None, randers, samples=10).ok
    broken = MetricSpec(2, "y0^2 + y1^2 + y0", ["y0^2 + y1^2"])
    r = check_homogeneity("L", None, broken, samples=5)
    assert not r.passed and r.max_residual > 1e-3
    assert r.worst is not None and len(r.worst["y"]) == 2


def test_checks_are_deterministic(randers):
    a = check_euler(randers, samples=8, seed=7).to_dict()
    b = check_euler(randers, samples=8, seed=7).to_dict()
    assert a == b and a["seed"] == 7
    assert a["max_residual"] < TOLERANCES["euler"]


def test_metric_compatibility_and_its_control(randers, expdiag):
    from finsler.connections import berwald_connection
    assert check_metric_compatibility(chern_connection(randers), randers, samples=5).ok
    xf = check_metric_compatibility(berwald_connection(randers), randers, samples=5, expected_fail=True)
    assert xf.ok and not xf.passed
    assert check_metric_compatibility(berwald_connection(expdiag), expdiag, samples=5).passed


def test_identity_chart_is_exact(randers):
    ident = ChartMap(2, ["x0", "x1"], ["x0", "x1"], name="identity")
    for target in ("gamma", "N", "Q"):
        r = check_cocycle(randers, ident, samples=2, target=target)
        assert r.max_residual < 1e-13


def test_chart_map_basics():
    cm = shear_chart(2)
    x = np.array([0.4, -0.3])
    assert np.allclose(cm.inverse(cm.forward(x)), x, atol=1e-12)
    assert np.allclose(cm.jacobian(x), [[1, 0], [0.24, 1]])
    assert np.allclose(cm.hessian(x)[1], [[0.6, 0], [0, 0]])
    assert np.allclose(cm.inverse_jacobian(cm.forward(x)) @ cm.jacobian(x), np.eye(2))
    with pytest.raises(ChartError):
        cm.forward([3.0, 0.0])
    with pytest.raises(ChartError):
        ChartMap(2, ["y0", "x1"], ["x0", "x1"])
    again = ChartMap.from_dict(cm.to_dict(), 2)
    assert np.allclose(again.forward(x), cm.forward(x))


def test_polar_chart_christoffels():
    flat = flat_metric(2)
    cm = polar_chart()
    polar = cm.pullback(flat)
    for r, phi in [(1.0, 0.3), (1.7, -0.6)]:
        G = chern_connection(polar)([r, phi], [0.4, 1.1])
        assert math.isclose(G[0, 1, 1], -r, rel_tol=1e-12)
        assert math.isclose(G[1, 0, 1], 1 / r, rel_tol=1e-12)
        assert math.isclose(G[1, 1, 0], 1 / r, rel_tol=1e-12)
    r = check_cocycle(flat, cm, samples=4)
    assert r.max_residual < 1e-8


def test_randers_shear_cocycles(randers):
    cm = shear_chart(2)
    for target, conn in (("gamma", "chern"), ("gamma", "berwald"), ("N", "chern"), ("Q", "chern")):
        r = check_cocycle(randers, cm, conn, samples=3, target=target)
        assert r.max_residual < 1e-7
        assert r.ok


def test_signature_conic_zero_section(bogoslovsky, randers):
    sig = check_signature(bogoslovsky, samples=5)
    assert sig.ok and [list(o) for o in sig.details["observed"]] == [[1, 3]]
    assert check_signature(randers, samples=5).ok
    assert check_conic(bogoslovsky, samples=5).ok
    assert check_zero_section(bogoslovsky, samples=5).ok
    bad_cone = MetricSpec(2, "y0^2 + y1^2", ["y0 + 1"])
    assert not check_conic(bad_cone, samples=5).ok or not check_zero_section(bad_cone, samples=5).ok


def test_fd_engine_check(expdiag):
    assert check_fd_engine(expdiag, samples=2).ok
    assert check_fd_engine(expdiag, samples=2, order5=True).ok


def test_transport_check_and_negative_control(randers, flat2):
    chern = chern_connection(randers)
    assert check_transport_preserves_g(chern, randers, samples=1, h=1e-2).ok
    control = check_transport_preserves_g(perturbed_connection(chern), randers, samples=1, h=1e-2,
                                          expected_fail=True)
    assert control.ok and control.max_residual > 1e-4
    flat = check_transport_preserves_g(chern_connection(flat2), flat2, samples=1, h=1e-2)
    assert flat.max_residual < 1e-12


def test_quick_suite_expdiag(expdiag):
    rep = run_suite(expdiag, SuiteConfig("quick", seed=1))
    assert rep.ok, rep.to_text()
    names = [r.name for r in rep.reports]
    assert "homogeneity[L+y0 negative control]" in names
    assert "landsberg-nonzero" not in names        # Berwald = Chern, so its compatibility must pass
    assert "PASS" in rep.to_text()


def test_quick_suite_nonhomogeneous_fails():
    m = MetricSpec(2, "y0^2 + y1^2 + y0", ["y0^2 + y1^2"], name="broken")
    rep = run_suite(m, SuiteConfig("quick", samples=4))
    failed = {r.name for r in rep.failures}
    assert "homogeneity[L]" in failed
    assert not rep.ok


def test_suite_config_validation():
    with pytest.raises(ValueError):
        SuiteConfig("everything")
    full = SuiteConfig("full")
    assert (full.samples, full.h) == (100, 1e-3)
