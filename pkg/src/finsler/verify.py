"""Numeric checks of the identities the geometry layer must satisfy.

Every check draws admissible samples from a seeded sampler, measures a
residual and returns a CheckReport.  ``run_suite`` bundles them.
Expected-fail checks assert a converse (a negative control or a
non-vanishing quantity): they are satisfied when the residual exceeds
the tolerance.
"""

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
import json
import math
import zlib

import numpy as np

from . import expr as ex
from .calculus import ScalarField, fd_partials_auto
from .connections import (
    AnisotropicTensorField,
    berwald_connection,
    chern_connection,
    connection_difference,
    connection_from_nonlinear,
    covariant_derivative_tensor,
    directional_covariant_derivative,
    formal_christoffels,
    geodesic_spray,
    metric_nonlinear_connection,
    metric_tensor_field,
    nonlinear_connection,
    nonlinear_connection_cartan,
    nonlinear_from_connection,
    torsion,
)
from .errors import (
    ChartError,
    DegenerateMetric,
    DomainError,
    DomainExit,
    FinslerError,
    NotAdmissible,
    SamplerExhausted,
)
from .geometry import MetricSpec, cartan_tensor, fundamental_tensor, signature
from .transport import (
    Curve,
    IntegratorConfig,
    integrate_geodesic,
    observer_transport,
    recover_nabla,
    reference_transport,
)

# One table for every tolerance; residuals are relative unless noted.
TOLERANCES = {
    "homogeneity": 1e-9,
    "euler": 1e-9,
    "torsion": 1e-10,                      # absolute
    "gamma-N": 1e-9,
    "N-roundtrip": 1e-9,
    "spray-cartan": 1e-8,
    "geodesic-equivalence": 1e-8,          # absolute, after unit parameter time
    "metric-compatibility": 1e-8,          # relative to max|g|
    "cocycle-gamma": 1e-7,                 # absolute
    "cocycle-N": 1e-7,                     # absolute
    "cocycle-Q": 1e-9,                     # absolute
    "transport-preserves-g": 1e-6,         # absolute
    "transport-negative-control": 1e-4,    # must be exceeded
    "observer-along-geodesic": 1e-8,       # absolute
    "derivative-recovery": 1e-5,           # absolute
    "fd-engine": 1e-5,
    "fd-engine-order5": 1e-3,
    "signature": 0,                        # count of mismatching samples
    "conic": 0,
    "zero-section": 0,
    "landsberg-nonzero": 1e-6,
}

LAMBDAS = (0.5, 2.0, 7.3)
SCALE_FLOOR = 1e-6
MAX_REJECTIONS = 1000


# ---------------------------------------------------------------- reports


@dataclass
class CheckReport:
    name: str
    samples: int
    max_residual: float
    tolerance: float
    worst: dict = None
    formula: str = ""
    expected_fail: bool = False
    seed: int = None
    excluded: int = 0
    details: dict = field(default_factory=dict)

    @property
    def passed(self):
        """The identity holds on the samples: max residual <= tolerance."""
        return bool(self.max_residual <= self.tolerance)

    @property
    def ok(self):
        """Outcome as expected (identity holds, or fails for an expected-fail check)."""
        if self.samples == 0:
            return False
        return (not self.passed) if self.expected_fail else self.passed

    def to_dict(self):
        return {
            "name": self.name,
            "samples": self.samples,
            "excluded": self.excluded,
            "max_residual": _num(self.max_residual),
            "tolerance": _num(self.tolerance),
            "passed": self.passed,
            "expected_fail": self.expected_fail,
            "ok": self.ok,
            "worst": _jsonable(self.worst),
            "formula": self.formula,
            "seed": self.seed,
            "details": _jsonable(self.details),
        }

    def line(self):
        tag = "PASS" if self.ok else "FAIL"
        xf = " (expected-fail)" if self.expected_fail else ""
        return (f"{tag} {self.name}{xf}: residual={self.max_residual:.3e} "
                f"tol={self.tolerance:.1e} samples={self.samples}"
                + (f" excluded={self.excluded}" if self.excluded else ""))


def _num(v):
    if v is None:
        return None
    v = float(v)
    if math.isfinite(v):
        return float(format(v, ".17g"))
    return str(v)


def _jsonable(obj):
    if obj is None:
        return None
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


@dataclass
class SuiteReport:
    metric: str
    suite: str
    seed: int
    reports: list

    @property
    def ok(self):
        return all(r.ok for r in self.reports)

    @property
    def failures(self):
        return [r for r in self.reports if not r.ok]

    def to_dict(self):
        return {
            "metric": self.metric,
            "suite": self.suite,
            "seed": self.seed,
            "ok": self.ok,
            "checks": [r.to_dict() for r in self.reports],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self):
        lines = [f"verification suite '{self.suite}' for {self.metric} (seed {self.seed})"]
        lines += ["  " + r.line() for r in self.reports]
        lines.append(f"{'OK' if self.ok else 'FAILED'}: {sum(r.ok for r in self.reports)}"
                     f"/{len(self.reports)} checks as expected")
        return "\n".join(lines)


class _Accumulator:
    """Running max of residuals together with the sample that produced it."""

    def __init__(self):
        self.max = 0.0
        self.worst = None
        self.count = 0
        self.excluded = 0

    def add(self, residual, x, y, **extra):
        self.count += 1
        residual = float(residual)
        if not math.isfinite(residual):
            residual = math.inf
        if self.worst is None or residual > self.max:
            self.max = residual
            self.worst = {"x": list(map(float, x)), "y": list(map(float, y)), **extra}

    def report(self, name, tol, formula, seed=None, expected_fail=False, **details):
        return CheckReport(name, self.count, self.max, tol, self.worst, formula,
                           expected_fail, seed, self.excluded, details)


# ---------------------------------------------------------------- sampling


def derive_seed(seed, name):
    """Per-check seed, so each check is reproducible regardless of execution order."""
    return (int(seed) * 1_000_003 + zlib.crc32(name.encode())) % (2 ** 32)


class Sampler:
    """Rejection sampler of admissible (x, y).

    x is uniform in ``box`` (default: the metric's sample box); y is uniform in
    [-1, 1]^n.  A draw is accepted when y and every perturbation y +- margin|y| e_i
    lie in the domain and g_y is nondegenerate, keeping samples away from the
    cone boundary.
    """

    def __init__(self, m, seed=0, box=None, margin=0.05, min_norm=0.25, max_rejections=MAX_REJECTIONS):
        self.m = m
        self.rng = np.random.default_rng(seed)
        self.box = np.asarray(box if box is not None else m.sample_box, dtype=float)
        self.margin = margin
        self.min_norm = min_norm
        self.max_rejections = max_rejections

    def _ok(self, x, y):
        m = self.m
        norm = float(np.linalg.norm(y))
        if norm < self.min_norm:
            return False
        try:
            if not m.admissible(x, y):
                return False
            d = self.margin * norm
            for i in range(m.n):
                for s in (-d, d):
                    z = y.copy()
                    z[i] += s
                    if not m.admissible(x, z):
                        return False
            fundamental_tensor(m, (x, y))
        except (DomainError, DegenerateMetric, NotAdmissible):
            return False
        return True

    def draw(self):
        n = self.m.n
        for _ in range(self.max_rejections):
            x = self.rng.uniform(self.box[:, 0], self.box[:, 1])
            y = self.rng.uniform(-1.0, 1.0, size=n)
            if self._ok(x, y):
                return x, y
        raise SamplerExhausted(f"no admissible sample in {self.max_rejections} consecutive draws")

    def draws(self, k):
        return [self.draw() for _ in range(k)]


def _samples(m, samples, seed, name, **kw):
    if isinstance(samples, int):
        return Sampler(m, derive_seed(seed, name), **kw).draws(samples)
    return [(np.asarray(x, float), np.asarray(y, float)) for x, y in samples]


# ---------------------------------------------------------------- targets

def homogeneity_targets(m):
    """Name -> (evaluator(x, y), degree) for the standard metric objects."""
    chern = chern_connection(m)
    berwald = berwald_connection(m)
    return {
        "L": (lambda x, y: np.array(m.L(x, y)), 2),
        "g": (lambda x, y: fundamental_tensor(m, (x, y)).g, 0),
        "C": (lambda x, y: cartan_tensor(m, (x, y)).lower, -1),
        "gamma": (lambda x, y: formal_christoffels(m, (x, y)), 0),
        "G": (lambda x, y: geodesic_spray(m, (x, y)), 2),
        "N": (lambda x, y: nonlinear_connection(m, (x, y)), 1),
        "chern": (chern, 0),
        "berwald": (berwald, 0),
    }


def _norm(a):
    a = np.asarray(a, dtype=float)
    return float(np.max(np.abs(a))) if a.size else 0.0


# ---------------------------------------------------------------- checks


def check_homogeneity(target, degree, m, samples=20, seed=0, name=None, expected_fail=False):
    """max |f(x, l y) - l^d f(x, y)| / scale over l in LAMBDAS.

    ``target`` is a callable f(x, y) or a key of ``homogeneity_targets``.
    """
    if isinstance(target, str):
        name = name or f"homogeneity[{target}]"
        target, degree = homogeneity_targets(m)[target]
    name = name or "homogeneity"
    acc = _Accumulator()
    for x, y in _samples(m, samples, seed, name):
        base = np.asarray(target(x, y), dtype=float)
        worst = 0.0
        for lam in LAMBDAS:
            scaled = np.asarray(target(x, lam * y), dtype=float)
            expect = lam ** degree * base
            scale = max(_norm(expect), _norm(scaled), SCALE_FLOOR)
            worst = max(worst, _norm(scaled - expect) / scale)
        acc.add(worst, x, y)
    return acc.report(name, TOLERANCES["homogeneity"], f"f(x, l y) = l^{degree} f(x, y)",
                      seed, expected_fail, degree=degree)


def check_euler(m, samples=20, seed=0):
    """Euler identities of homogeneous objects: C(v, ., v)=0, g_v(v,v)=L(v), N y = 2G, L_y.y = 2L."""
    name = "euler"
    acc = _Accumulator()
    parts = {"C.y": 0.0, "g(v,v)-L": 0.0, "N.y-2G": 0.0}
    for x, y in _samples(m, samples, seed, name):
        g = fundamental_tensor(m, (x, y)).g
        C = cartan_tensor(m, (x, y)).lower
        gscale = max(_norm(g), SCALE_FLOOR)
        r1 = _norm(np.einsum("ijk,k->ij", C, y)) / gscale
        L = m.L(x, y)
        r2 = abs(float(y @ g @ y) - L) / max(abs(L), gscale * float(y @ y), SCALE_FLOOR)
        N = nonlinear_connection(m, (x, y))
        G = geodesic_spray(m, (x, y))
        r3 = _norm(N @ y - 2 * G) / max(_norm(N) * _norm(y), _norm(G), SCALE_FLOOR)
        for k, r in zip(parts, (r1, r2, r3)):
            parts[k] = max(parts[k], r)
        acc.add(max(r1, r2, r3), x, y)
    return acc.report(name, TOLERANCES["euler"], "C_ijk y^k = 0; g_v(v,v) = L(v); N^a_i y^i = 2 G^a",
                      seed, parts=parts)


def check_torsion(conn, m, samples=20, seed=0):
    name = f"torsion[{conn.kind}]"
    acc = _Accumulator()
    for x, y in _samples(m, samples, seed, name):
        acc.add(_norm(torsion(conn, (x, y))), x, y)
    return acc.report(name, TOLERANCES["torsion"], "Tor^k_ij = Gamma^k_ij - Gamma^k_ji = 0", seed)


def check_gamma_n(conn, m, samples=20, seed=0):
    """Gamma^a_ij y^j recovers the metric nonlinear connection."""
    name = f"gamma-N[{conn.kind}]"
    acc = _Accumulator()
    for x, y in _samples(m, samples, seed, name):
        N = nonlinear_connection(m, (x, y))
        Ny = np.einsum("aij,j->ai", conn(x, y), y)
        acc.add(_norm(Ny - N) / max(_norm(N), SCALE_FLOOR), x, y)
    return acc.report(name, TOLERANCES["gamma-N"], "N^a_i = Gamma^a_ij y^j", seed)


def check_n_roundtrip(m, samples=20, seed=0):
    """N -> Gamma = dN/dy -> Gamma y returns N (Euler on the 1-homogeneous N)."""
    name = "N-roundtrip"
    nc = metric_nonlinear_connection(m)
    back = nonlinear_from_connection(connection_from_nonlinear(nc))
    acc = _Accumulator()
    for x, y in _samples(m, samples, seed, name):
        N = nc(x, y)
        acc.add(_norm(back(x, y) - N) / max(_norm(N), SCALE_FLOOR), x, y)
    return acc.report(name, TOLERANCES["N-roundtrip"], "(dN^a_i/dy^j) y^j = N^a_i", seed)


def check_spray_cartan(m, samples=20, seed=0):
    """Exact dG/dy against gamma y - g^-1 C (gamma y y)."""
    name = "spray-cartan"
    acc = _Accumulator()
    for x, y in _samples(m, samples, seed, name):
        a = nonlinear_connection(m, (x, y))
        b = nonlinear_connection_cartan(m, (x, y))
        acc.add(_norm(a - b) / max(_norm(a), SCALE_FLOOR), x, y)
    return acc.report(name, TOLERANCES["spray-cartan"],
                      "dG^a/dy^i = gamma^a_ij y^j - g^aj C_ijk gamma^k_lm y^l y^m", seed)


def check_metric_compatibility(conn, m, samples=20, seed=0, expected_fail=False):
    """max |nabla g| / max |g| with nabla the anisotropic covariant derivative of conn."""
    name = f"metric-compatibility[{conn.kind}]"
    gfield = metric_tensor_field(m)
    acc = _Accumulator()
    for x, y in _samples(m, samples, seed, name):
        D = covariant_derivative_tensor(conn, gfield, (x, y))
        acc.add(_norm(D) / max(_norm(gfield(x, y)), SCALE_FLOOR), x, y)
    return acc.report(name, TOLERANCES["metric-compatibility"],
                      "delta_k g_ij - Gamma^l_ki g_lj - Gamma^l_kj g_il = 0", seed, expected_fail)


def landsberg_size(m, samples=20, seed=0):
    """max |Chern - Berwald| / max |Berwald| (zero exactly for Berwald-type metrics)."""
    name = "landsberg-nonzero"
    chern = chern_connection(m)
    berwald = berwald_connection(m)
    acc = _Accumulator()
    for x, y in _samples(m, samples, seed, name):
        B = berwald(x, y)
        acc.add(_norm(chern(x, y) - B) / max(_norm(B), SCALE_FLOOR), x, y)
    return acc.report(name, TOLERANCES["landsberg-nonzero"], "Chern - Berwald != 0",
                      seed, expected_fail=True)


# -- charts


class ChartMap:
    """A change of coordinates xbar = F(x) with inverse x = F^-1(xbar).

    Both directions are expressions over ``x0..x{n-1}`` (naming the source
    coordinates of each map).  ``box`` bounds the old coordinates x.
    """

    def __init__(self, n, forward, inverse, box=None, name="chart"):
        self.n = n
        self.name = name
        self.forward_src = [str(f) for f in forward]
        self.inverse_src = [str(f) for f in inverse]
        self.forward_exprs = [_parse_chart(f, n) for f in forward]
        self.inverse_exprs = [_parse_chart(f, n) for f in inverse]
        self.box = np.asarray(box if box is not None else [[-1.0, 1.0]] * n, dtype=float)
        xs = [f"x{i}" for i in range(n)]
        self._fwd = _chart_compile(self.forward_exprs, xs)
        self._inv = _chart_compile(self.inverse_exprs, xs)
        self._inv_jac_exprs = [[ex.differentiate(e, v) for v in xs] for e in self.inverse_exprs]

    @classmethod
    def from_dict(cls, doc, n):
        return cls(n, doc["forward"], doc["inverse"], doc.get("box"), doc.get("name", "chart"))

    def to_dict(self):
        return {"name": self.name, "forward": self.forward_src, "inverse": self.inverse_src,
                "box": self.box.tolist()}

    def in_box(self, x):
        x = np.asarray(x, float)
        return bool(np.all(x >= self.box[:, 0]) and np.all(x <= self.box[:, 1]))

    def _check(self, x):
        if not self.in_box(x):
            raise ChartError(f"point {np.asarray(x).tolist()} is outside the chart box")

    def forward(self, x):
        self._check(x)
        return self._fwd[0](x)

    def inverse(self, xbar):
        return self._inv[0](xbar)

    def jacobian(self, x):
        """d xbar^a / d x^i."""
        self._check(x)
        return self._fwd[1](x)

    def hessian(self, x):
        """d^2 xbar^a / d x^i d x^l as [a, i, l]."""
        self._check(x)
        return self._fwd[2](x)

    def inverse_jacobian(self, xbar):
        """d x^m / d xbar^i."""
        return self._inv[1](xbar)

    def inverse_hessian(self, xbar):
        """d^2 x^m / d xbar^i d xbar^j as [m, i, j]."""
        return self._inv[2](xbar)

    def tangent(self, x, y):
        return self.jacobian(x) @ np.asarray(y, float)

    def pullback(self, m):
        """The metric expressed in the new coordinates: Lbar(xbar, ybar) = L(x(xbar), (dx/dxbar) ybar)."""
        n = self.n
        mapping = {}
        for i in range(n):
            mapping[f"x{i}"] = self.inverse_exprs[i]
            mapping[f"y{i}"] = _sum([ex.mul(self._inv_jac_exprs[i][j], ex.var(f"y{j}")) for j in range(n)])
        L = ex.substitute_many([m.lagrangian.expr], mapping)[0]
        dom = ex.substitute_many([d.expr for d in m.domain], mapping)
        return MetricSpec(n, L, dom, "custom", signature_hint=m.signature_hint,
                          name=f"{m.name}@{self.name}")


def _sum(terms):
    out = ex.const(0.0)
    for t in terms:
        out = ex.add(out, t)
    return out


def _parse_chart(src, n):
    if isinstance(src, ex.Expr):
        return src
    e = ex.parse(str(src), n)
    if any(nm.startswith("y") for nm in e.free):
        raise ChartError("chart expressions may only use x-coordinates")
    return e


def _chart_compile(exprs, xs):
    n = len(xs)
    jac = [ex.differentiate(e, v) for e in exprs for v in xs]
    hes = [ex.differentiate(ex.differentiate(e, v), w) for e in exprs for v in xs for w in xs]
    f0 = ex.compile_exprs(exprs, xs)
    f1 = ex.compile_exprs(jac, xs)
    f2 = ex.compile_exprs(hes, xs)
    return (
        lambda x: np.array(f0(*x)),
        lambda x: np.array(f1(*x)).reshape(n, n),
        lambda x: np.array(f2(*x)).reshape(n, n, n),
    )


def shear_chart(n, k=0.3, box=None):
    """xbar1 = x1 + k x0^2 (other coordinates unchanged): a nonlinear test chart."""
    fwd = [f"x{i}" for i in range(n)]
    inv = list(fwd)
    fwd[1] = f"x1 + {k} * x0^2"
    inv[1] = f"x1 - {k} * x0^2"
    return ChartMap(n, fwd, inv, box, name="shear")


def polar_chart(box=((0.5, 2.0), (-1.0, 1.0))):
    """Cartesian (x0, x1) -> polar (r, phi) on the half plane x0 > 0."""
    return ChartMap(2, ["sqrt(x0^2 + x1^2)", "atan(x1 / x0)"],
                    ["x0 * cos(x1)", "x0 * sin(x1)"], box, name="polar")


def transform_connection(cm, x, gamma):
    """Gamma in the new chart from the cocycle law (inhomogeneous term included)."""
    xb = cm.forward(x)
    J = cm.jacobian(x)
    Ji = cm.inverse_jacobian(xb)
    H = cm.inverse_hessian(xb)
    return np.einsum("am,mij->aij", J, H + np.einsum("ki,lj,mkl->mij", Ji, Ji, gamma))


def transform_nonlinear(cm, x, y, N):
    """N^a_j in the new chart: (dx^i/dxbar^j)(-d^2xbar^a/dx^i dx^l y^l + dxbar^a/dx^b N^b_i)."""
    xb = cm.forward(x)
    J = cm.jacobian(x)
    Ji = cm.inverse_jacobian(xb)
    H = cm.hessian(x)
    return np.einsum("ij,ai->aj", Ji, -np.einsum("ail,l->ai", H, y) + J @ N)


def transform_tensor12(cm, x, Q):
    xb = cm.forward(x)
    J = cm.jacobian(x)
    Ji = cm.inverse_jacobian(xb)
    return np.einsum("am,ki,lj,mkl->aij", J, Ji, Ji, Q)


_CONNECTIONS = {"chern": chern_connection, "berwald": berwald_connection}


def check_cocycle(m, cm, conn="chern", samples=10, seed=0, target="gamma"):
    """Compare objects computed directly in the new chart with the transformation laws.

    ``target`` selects the Christoffel symbols of ``conn`` ("gamma"), the
    metric nonlinear connection ("N"), or Q = Chern - Berwald, which must
    transform with no inhomogeneous term ("Q").
    """
    name = f"cocycle-{target}[{cm.name}" + (f",{conn}]" if target == "gamma" else "]")
    mb = cm.pullback(m)
    acc = _Accumulator()
    for x, y in _samples(m, samples, seed, name, box=cm.box):
        xb = cm.forward(x)
        yb = cm.tangent(x, y)
        if target == "gamma":
            direct = _CONNECTIONS[conn](mb)(xb, yb)
            law = transform_connection(cm, x, _CONNECTIONS[conn](m)(x, y))
        elif target == "N":
            direct = nonlinear_connection(mb, (xb, yb))
            law = transform_nonlinear(cm, x, y, nonlinear_connection(m, (x, y)))
        elif target == "Q":
            Qm = connection_difference(chern_connection(m), berwald_connection(m))
            Qb = connection_difference(chern_connection(mb), berwald_connection(mb))
            direct = Qb(xb, yb)
            law = transform_tensor12(cm, x, Qm(x, y))
        else:
            raise ValueError(f"unknown cocycle target {target!r}")
        acc.add(_norm(direct - law), x, y)
    formulas = {
        "gamma": "Gbar = (dxbar/dx)(d2x/dxbar dxbar + (dx/dxbar)(dx/dxbar) Gamma)",
        "N": "Nbar^a_j = (dx^i/dxbar^j)(-d2xbar^a/dx^i dx^l y^l + dxbar^a/dx^b N^b_i)",
        "Q": "Qbar^a_ij = (dxbar^a/dx^m)(dx^k/dxbar^i)(dx^l/dxbar^j) Q^m_kl",
    }
    return acc.report(name, TOLERANCES[f"cocycle-{target}"], formulas[target], seed)


# -- signature and domain


_SIGNATURES = {"positive-definite": lambda n: (n, 0), "lorentz": lambda n: (1, n - 1),
               "riemannian": lambda n: (n, 0)}


def check_signature(m, samples=20, seed=0):
    """Eigenvalue signs of g_v are constant on A (and match the hint if one is given)."""
    name = "signature"
    expect = _SIGNATURES[m.signature_hint](m.n) if m.signature_hint in _SIGNATURES else None
    acc = _Accumulator()
    bad = 0
    seen = set()
    for x, y in _samples(m, samples, seed, name):
        sig = signature(m, (x, y))
        if expect is None:
            expect = sig
        seen.add(sig)
        miss = int(sig != expect)
        bad += miss
        acc.add(bad, x, y, signature=list(sig))
    return acc.report(name, TOLERANCES["signature"], "signs of the eigenvalues of g_v", seed,
                      expected=list(expect) if expect else None, observed=sorted(map(list, seen)))


def check_conic(m, samples=20, seed=0):
    """A is a cone: v in A implies l v in A for l > 0."""
    name = "conic"
    acc = _Accumulator()
    bad = 0
    for x, y in _samples(m, samples, seed, name):
        bad += sum(not m.admissible(x, lam * y) for lam in LAMBDAS)
        acc.add(bad, x, y)
    return acc.report(name, TOLERANCES["conic"], "v in A => l v in A", seed)


def check_zero_section(m, samples=20, seed=0):
    """Some domain inequality fails at y = 0 (A avoids the zero section)."""
    name = "zero-section"
    acc = _Accumulator()
    bad = 0
    zero = np.zeros(m.n)
    for x, y in _samples(m, samples, seed, name):
        try:
            holds = bool(np.all(m.domain_values(x, zero) > 0))
        except DomainError:
            holds = False
        bad += int(holds)
        acc.add(bad, x, zero)
    return acc.report(name, TOLERANCES["zero-section"], "0 not in A", seed)


# -- derivative engine


# base-step ladders and Richardson depth per derivative order
FD_STEPS = {1: (1e-3, 2e-3, 4e-3), 2: (2e-3, 4e-3, 8e-3), 3: (5e-3, 1e-2, 2e-2),
            4: (2e-2, 4e-2, 8e-2), 5: (2e-2, 4e-2, 6e-2)}
FD_LEVELS = {1: 3, 2: 3, 3: 3, 4: 4, 5: 3}


def derivative_indices(n, max_order=4):
    """All multi-indices of order 1..max_order over (x, y), plus the order-5 partials L_yyyyx."""
    names = ex.coordinate_names(n)
    out = []
    for k in range(1, max_order + 1):
        out += [tuple(c) for c in combinations_with_replacement(names, k)]
    ys = [f"y{i}" for i in range(n)]
    for c in combinations_with_replacement(ys, 4):
        out += [tuple(c) + (f"x{m}",) for m in range(n)]
    return out


def check_fd_engine(m, samples=10, seed=0, order5=False, indices=None):
    """Exact partials of L against the finite-difference oracle (relative error).

    The error of a k-th partial is scaled by the largest of its own value, the
    largest exact k-th partial at that sample and |L| there (finite-difference
    roundoff is proportional to |L|), so vanishing entries are compared on a
    natural scale.
    """
    name = "fd-engine-order5" if order5 else "fd-engine"
    f = m.lagrangian
    idx = indices or derivative_indices(m.n)
    idx = [i for i in idx if (len(i) == 5) == order5]
    acc = _Accumulator()
    for x, y in _samples(m, samples, seed, name, margin=0.3, min_norm=0.5):
        exact = {i: float(ex.evaluate(f.partial(i), _point(x, y))) for i in idx}
        Lval = f(x, y)
        by_order = {}
        for i, v in exact.items():
            by_order[len(i)] = max(by_order.get(len(i), 0.0), abs(v))
        approx = fd_partials_auto(f, (x, y), idx, FD_STEPS, FD_LEVELS)
        worst = 0.0
        worst_idx = None
        for i in idx:
            if approx[i] is None:
                acc.excluded += 1
                continue
            scale = max(abs(exact[i]), by_order[len(i)], abs(Lval), SCALE_FLOOR)
            err = abs(approx[i] - exact[i]) / scale
            if err > worst:
                worst, worst_idx = err, i
        acc.add(worst, x, y, index=list(worst_idx) if worst_idx else None)
    return acc.report(name, TOLERANCES[name], "exact symbolic partial vs central FD with Richardson (step chosen by table consistency)",
                      seed, indices=len(idx))


def _point(x, y):
    pt = {f"x{i}": float(v) for i, v in enumerate(x)}
    pt.update({f"y{i}": float(v) for i, v in enumerate(y)})
    return pt


# -- transport


def perturbed_connection(conn, u=None, eps=0.1):
    """conn + P with P^a_ij = eps (delta^a_i u_j + delta^a_j u_i): torsion-free, P y != 0."""
    n = conn.n
    u = np.ones(n) if u is None else np.asarray(u, float)
    I = np.eye(n)
    P = eps * (np.einsum("ai,j->aij", I, u) + np.einsum("aj,i->aij", I, u))
    Q = AnisotropicTensorField(n, (1, 2), lambda x, y: P, lambda x, y: np.zeros((n,) * 4),
                               lambda x, y: np.zeros((n,) * 4), degree=0, name="P")
    return conn.plus(Q, kind=f"{conn.kind}+P")


def _lit(v):
    return f"({float(v):.17g})"


def random_curve(rng, x0, scale=0.3):
    """x0 + t d + t^2 e with random d, e: a smooth curve on [0, 1]."""
    d = rng.uniform(-scale, scale, size=len(x0))
    e = rng.uniform(-scale, scale, size=len(x0))
    exprs = [f"{_lit(x0[i])} + {_lit(d[i])} * t + {_lit(e[i])} * t^2" for i in range(len(x0))]
    return Curve.from_expressions(exprs, (0.0, 1.0))


def check_transport_preserves_g(conn, m, curve=None, samples=3, seed=0, h=1e-3,
                                expected_fail=False, name=None):
    """Reference transport of a full basis keeps every g-pairing and L(V) fixed."""
    name = name or f"transport-preserves-g[{conn.kind}]"
    tol = TOLERANCES["transport-negative-control" if expected_fail else "transport-preserves-g"]
    rng = np.random.default_rng(derive_seed(seed, name + "/curve"))
    acc = _Accumulator()
    cfg = IntegratorConfig(h=h)
    for x, y in _samples(m, samples, seed, name):
        cur = curve or random_curve(rng, x)
        x0 = cur(cur.interval[0])
        if not m.admissible(x0, y):
            acc.excluded += 1
            continue
        t1, t2 = cur.interval
        try:
            res = reference_transport(conn, cur, y, np.eye(m.n), t1, t2, cfg, metric=m)
        except (NotAdmissible, DegenerateMetric, DomainError):
            acc.excluded += 1
            continue
        if res.exited:
            acc.excluded += 1
            continue
        r = max(res.diagnostics["max_pairing_drift"], res.diagnostics["max_L_drift"])
        acc.add(r, x0, y)
    return acc.report(name, tol, "g_{P(v)}(P^v u, P^v w) = g_v(u, w)", seed, expected_fail)


def check_geodesic_equivalence(m, samples=2, seed=0, h=1e-3, T=1.0):
    """Chern geodesics and spray geodesics coincide (Gamma y y = 2G)."""
    name = "geodesic-equivalence"
    chern = chern_connection(m)
    cfg = IntegratorConfig(h=h)
    acc = _Accumulator()
    for x, y in _samples(m, samples, seed, name):
        a = integrate_geodesic(chern, x, y, (0.0, T), cfg, metric=m)
        b = integrate_geodesic(chern, x, y, (0.0, T), cfg, metric=m, spray=True)
        k = min(len(a.t), len(b.t))
        if k < 2:
            acc.excluded += 1
            continue
        acc.add(max(_norm(a.x[:k] - b.x[:k]), _norm(a.V[:k] - b.V[:k])), x, y)
    return acc.report(name, TOLERANCES[name], "x'' + Gamma(x, x') x' x' = 0  vs  x'' + 2 G(x, x') = 0",
                      seed)


def check_observer_along_geodesic(m, samples=2, seed=0, h=1e-3, T=1.0):
    """Observer transport of the initial velocity along a Chern geodesic reproduces its velocity."""
    name = "observer-along-geodesic"
    chern = chern_connection(m)
    cfg = IntegratorConfig(h=h)
    acc = _Accumulator()
    for x, y in _samples(m, samples, seed, name):
        geo = integrate_geodesic(chern, x, y, (0.0, T), cfg, metric=m)
        if geo.exited:
            acc.excluded += 1
            continue
        cur = Curve.from_samples(geo.t, geo.x, geo.V)
        obs = observer_transport(chern, cur, y, 0.0, T, cfg, metric=m)
        if obs.exited:
            acc.excluded += 1
            continue
        acc.add(_norm(obs.V - geo.V), x, y)
    return acc.report(name, TOLERANCES[name], "D^V V = 0 along a geodesic with V(0) = x'(0)", seed)


def random_tensor11(n, rng, name="T"):
    """A random (1, 1) anisotropic field with exact derivatives."""
    comps = []
    for a in range(n):
        row = []
        for b in range(n):
            c = rng.uniform(-1, 1, size=4)
            row.append(f"{_lit(c[0])} + {_lit(c[1])} * x0 * y{b} + {_lit(c[2])} * sin(x{n - 1}) * y{a}"
                       f" + {_lit(c[3])} * y0 * y{(a + b) % n}")
        comps.append(row)
    return AnisotropicTensorField.from_expressions(n, (1, 1), comps, name=name)


def check_derivative_recovery(conn, m, T=None, samples=2, seed=0, name=None):
    """d/dt P_t(T)_v at t = a against (nabla_{gamma'(a)} T)_v."""
    T = T or metric_tensor_field(m)
    name = name or f"derivative-recovery[{conn.kind},{T.name}]"
    rng = np.random.default_rng(derive_seed(seed, name + "/curve"))
    acc = _Accumulator()
    for x, y in _samples(m, samples, seed, name):
        cur = random_curve(rng, x)
        a = 0.0
        try:
            fd = recover_nabla(conn, cur, T, y, a, metric=m)
        except (DomainExit, NotAdmissible):
            acc.excluded += 1
            continue
        exact = directional_covariant_derivative(conn, T, (cur(a), y), cur.velocity(a))
        acc.add(_norm(fd - exact), x, y)
    return acc.report(name, TOLERANCES["derivative-recovery"],
                      "(nabla_{gamma'(a)} T)_v = d/dt P_t(T)_v at t = a", seed)


# ---------------------------------------------------------------- suite


@dataclass
class SuiteConfig:
    suite: str = "quick"
    seed: int = 0
    samples: int = None
    transport_samples: int = None
    fd_samples: int = None
    h: float = None
    charts: list = None

    def __post_init__(self):
        if self.suite not in ("quick", "full"):
            raise ValueError("suite must be 'quick' or 'full'")
        full = self.suite == "full"
        self.samples = self.samples or (100 if full else 10)
        self.transport_samples = self.transport_samples or (3 if full else 1)
        self.fd_samples = self.fd_samples or (50 if full else 3)
        self.h = self.h or (1e-3 if full else 1e-2)


def run_suite(m, config=None):
    """Run every check on ``m``; failures are data in the returned SuiteReport."""
    cfg = config or SuiteConfig()
    s, seed = cfg.samples, cfg.seed
    chern = chern_connection(m)
    berwald = berwald_connection(m)
    reports = []

    def run(fn, *args, **kw):
        try:
            reports.append(fn(*args, **kw))
        except FinslerError as exc:
            # a check that cannot run is an unexpected outcome, recorded as data
            name = kw.get("name") or fn.__name__
            reports.append(CheckReport(name, 0, math.inf, 0.0, None,
                                       f"{type(exc).__name__}: {exc}", seed=seed))

    for key in homogeneity_targets(m):
        run(check_homogeneity, key, None, m, s, seed)
    broken = ScalarField(ex.add(m.lagrangian.expr, ex.var("y0")), m.n)
    run(check_homogeneity, lambda x, y: np.array(broken(x, y)), 2, m, s, seed,
        name="homogeneity[L+y0 negative control]", expected_fail=True)
    run(check_euler, m, s, seed)
    run(check_torsion, chern, m, s, seed)
    run(check_torsion, berwald, m, s, seed)
    run(check_gamma_n, chern, m, s, seed)
    run(check_gamma_n, berwald, m, s, seed)
    run(check_n_roundtrip, m, s, seed)
    run(check_spray_cartan, m, s, seed)
    run(check_metric_compatibility, chern, m, s, seed)
    try:
        lands = landsberg_size(m, s, seed)
        berwald_type = lands.passed
    except FinslerError as exc:
        lands = CheckReport("landsberg-nonzero", 0, math.inf, TOLERANCES["landsberg-nonzero"],
                            None, f"{type(exc).__name__}: {exc}", seed=seed)
        berwald_type = False
    lands.details["berwald_type"] = berwald_type
    if not berwald_type:
        reports.append(lands)
    run(check_metric_compatibility, berwald, m, s, seed, expected_fail=not berwald_type)
    run(check_signature, m, s, seed)
    run(check_conic, m, s, seed)
    run(check_zero_section, m, s, seed)

    charts = cfg.charts
    if charts is None:
        charts = [ChartMap.from_dict(c, m.n) for c in m.charts] or [shear_chart(m.n, box=m.sample_box)]
    cs = max(3, s // 10)
    for cm in charts:
        run(check_cocycle, m, cm, "chern", cs, seed, "gamma")
        run(check_cocycle, m, cm, "berwald", cs, seed, "gamma")
        run(check_cocycle, m, cm, "chern", cs, seed, "N")
        run(check_cocycle, m, cm, "chern", cs, seed, "Q")

    run(check_fd_engine, m, cfg.fd_samples, seed)
    run(check_fd_engine, m, cfg.fd_samples, seed, order5=True)

    ts = cfg.transport_samples
    run(check_transport_preserves_g, chern, m, None, ts, seed, cfg.h)
    run(check_transport_preserves_g, perturbed_connection(chern), m, None, ts, seed, cfg.h,
        expected_fail=True, name="transport-preserves-g[chern+P negative control]")
    run(check_geodesic_equivalence, m, ts, seed, cfg.h)
    run(check_derivative_recovery, chern, m, None, ts, seed)
    run(check_derivative_recovery, berwald, m, None, ts, seed)
    if cfg.suite == "full":
        run(check_observer_along_geodesic, m, ts, seed, cfg.h)
        rng = np.random.default_rng(derive_seed(seed, "random-tensor"))
        T = random_tensor11(m.n, rng)
        run(check_derivative_recovery, chern, m, T, ts, seed)
        run(check_derivative_recovery, berwald, m, T, ts, seed)
    return SuiteReport(m.name, cfg.suite, seed, reports)
