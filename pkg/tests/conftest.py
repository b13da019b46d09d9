import json
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from finsler.geometry import MetricSpec

HERE = os.path.dirname(__file__)
ROOT = os.path.dirname(HERE)
SPECS = os.path.join(ROOT, "specs")
DATA = os.path.join(HERE, "data")

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def spec_path(name):
    return os.path.join(SPECS, name)


def randers_metric():
    return MetricSpec.randers([[1, 0], [0, 1]], ["0.3*cos(x1)", "0.3*sin(x1)"], name="randers2")


def expdiag_metric():
    return MetricSpec.pseudo_riemannian([["1", "0"], ["0", "exp(2*x0)"]], name="expdiag",
                                        signature_hint="positive-definite")


def bogoslovsky_metric(n=4, s=0.1):
    return MetricSpec.lorentz_finsler_example(n, s, name=f"bogoslovsky{n}")


def sphere_metric():
    return MetricSpec(2, "y0^2 + sin(x0)^2 * y1^2", ["y0^2 + y1^2"], name="sphere",
                      signature_hint="positive-definite", sample_box=[[0.4, 2.7], [-3.0, 3.0]])


def flat_metric(n=2):
    return MetricSpec.pseudo_riemannian(np.eye(n, dtype=int).astype(str).tolist(), name=f"flat{n}",
                                        signature_hint="positive-definite")


def minkowski_metric():
    a = [["1", "0", "0", "0"], ["0", "-1", "0", "0"], ["0", "0", "-1", "0"], ["0", "0", "0", "-1"]]
    return MetricSpec.pseudo_riemannian(a, name="minkowski4", signature_hint="lorentz")


@pytest.fixture(scope="session")
def randers():
    return randers_metric()


@pytest.fixture(scope="session")
def expdiag():
    return expdiag_metric()


@pytest.fixture(scope="session")
def bogoslovsky():
    return bogoslovsky_metric()


@pytest.fixture(scope="session")
def sphere():
    return sphere_metric()


@pytest.fixture(scope="session")
def flat2():
    return flat_metric(2)


@pytest.fixture(scope="session")
def minkowski():
    return minkowski_metric()


@pytest.fixture(scope="session")
def frozen():
    with open(os.path.join(DATA, "frozen.json")) as fh:
        return json.load(fh)


# ---------------------------------------------------------------- acceptance summary

ACCEPTANCE = {}


def record_criterion(number, title, passed, detail=""):
    ACCEPTANCE[number] = (title, bool(passed), detail)
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(
            f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else ""))
