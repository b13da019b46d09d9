"""Metric layer: conic domains, the fundamental and Cartan tensors, causal
classification, signature and observer restspaces.
"""

from collections import OrderedDict
from dataclasses import dataclass
import threading

import numpy as np

from . import expr as ex
from .calculus import DerivativeTower, ScalarField
from .errors import DegenerateMetric, DomainError, NotAdmissible, SpecError

FAMILIES = ("pseudo-riemannian", "randers", "lorentz-finsler-example", "custom")
DEGENERACY_RTOL = 1e-10
CLASSIFY_TOL = 1e-9
BOUNDARY_TOL = 1e-9


@dataclass(frozen=True)
class PointedDirection:
    x: tuple
    y: tuple
    admissible: bool = True

    def as_arrays(self):
        return np.asarray(self.x, float), np.asarray(self.y, float)


def _xy(pd):
    if isinstance(pd, PointedDirection):
        return pd.as_arrays()
    x, y = pd
    return np.asarray(x, dtype=float), np.asarray(y, dtype=float)


class PointData:
    """Per-(x, y) cache of tower values and derived objects."""

    __slots__ = ("metric", "x", "y", "cache", "_levels")

    def __init__(self, metric, x, y):
        self.metric = metric
        self.x = x
        self.y = y
        self.cache = {}
        self._levels = {}

    def tower(self, level):
        # levels 1 and 2 share almost all of their work; always build 2
        level = max(level, 2)
        for lv in range(level, 4):
            if lv in self._levels:
                return self._levels[lv]
        vals = self.metric.tower.evaluate(self.x, self.y, level)
        self._levels[level] = vals
        return vals

    def get(self, key, compute):
        hit = self.cache.get(key)
        if hit is None:
            hit = compute(self)
            self.cache[key] = hit
        return hit


class MetricSpec:
    """A 2-homogeneous Lagrangian L on a conic domain A of TM (chart-local).

    ``domain`` lists expressions each required to be strictly positive on A.
    Homogeneity and conicity are not enforced at construction; the
    verification suite tests them.
    """

    cache_size = 4096

    def __init__(self, n, L, domain=(), family="custom", signature_hint=None,
                 params=None, name=None, sample_box=None, charts=(), extra=None):
        if n < 2:
            raise SpecError("dimension must be at least 2")
        if family not in FAMILIES:
            raise SpecError(f"unknown family {family!r}")
        self.n = n
        self.params = dict(params or {})
        self.family = family
        self.signature_hint = signature_hint
        self.name = name or family
        self.L_source = L if isinstance(L, str) else ex.to_source(L)
        self.domain_sources = [d if isinstance(d, str) else ex.to_source(d) for d in domain]
        self.lagrangian = ScalarField(_parse(L, n, self.params), n, self.params)
        self.domain = [ScalarField(_parse(d, n, self.params), n, self.params) for d in domain]
        if not self.domain:
            raise SpecError("domain must contain at least one inequality")
        self._domain_fn = ex.compile_exprs([d.expr for d in self.domain], self.lagrangian.argnames)
        self.tower = DerivativeTower(self.lagrangian)
        self.sample_box = np.asarray(sample_box if sample_box is not None else [[-1.0, 1.0]] * n, float)
        self.charts = list(charts)
        self.extra = dict(extra or {})
        self._points = OrderedDict()
        self._lock = threading.Lock()

    def __repr__(self):
        return f"MetricSpec(n={self.n}, family={self.family!r}, L={self.L_source!r})"

    # -- construction helpers
    @classmethod
    def pseudo_riemannian(cls, a, domain=None, params=None, **kw):
        n = len(a)
        terms = []
        for i in range(n):
            for j in range(n):
                entry = str(a[i][j]).strip()
                if entry in ("0", "0.0"):
                    continue
                terms.append(f"({entry})*y{i}*y{j}")
        L = " + ".join(terms) if terms else "0"
        if domain is None:
            domain = [" + ".join(f"y{i}^2" for i in range(n))]
        kw.setdefault("signature_hint", None)
        return cls(n, L, domain, "pseudo-riemannian", params=params,
                   extra={"a": [[str(e) for e in row] for row in a]}, **kw)

    @classmethod
    def randers(cls, a, b, domain=None, params=None, **kw):
        n = len(a)
        quad = " + ".join(
            f"({a[i][j]})*y{i}*y{j}" for i in range(n) for j in range(n)
            if str(a[i][j]).strip() not in ("0", "0.0")
        )
        lin = " + ".join(f"({b[i]})*y{i}" for i in range(n) if str(b[i]).strip() not in ("0", "0.0"))
        L = f"(sqrt({quad}) + {lin})^2" if lin else f"({quad})"
        if domain is None:
            domain = [quad]
        kw.setdefault("signature_hint", "positive-definite")
        return cls(n, L, domain, "randers", params=params,
                   extra={"a": [[str(e) for e in row] for row in a], "b": [str(e) for e in b]}, **kw)

    @classmethod
    def lorentz_finsler_example(cls, n=4, s=0.1, **kw):
        """L = (y0^2 - sum y_i^2)^(1-s) * y0^(2s) on the future cone."""
        q = "y0^2 - " + " - ".join(f"y{i}^2" for i in range(1, n))
        L = f"({q})^(1 - s) * y0^(2*s)"
        kw.setdefault("signature_hint", "lorentz")
        return cls(n, L, ["y0", q], "lorentz-finsler-example", params={"s": s},
                   **kw)

    @classmethod
    def from_dict(cls, doc):
        n = int(doc["dimension"])
        family = doc.get("family", "custom")
        params = doc.get("params", {})
        common = dict(
            signature_hint=doc.get("signature_hint"),
            name=doc.get("name"),
            sample_box=doc.get("sample_box"),
            charts=doc.get("charts", ()),
        )
        domain = doc.get("domain")
        if "L" in doc:
            if domain is None:
                raise SpecError("a spec with an explicit L needs a domain")
            return cls(n, doc["L"], domain, family, params=params, **common)
        if family == "pseudo-riemannian":
            spec = cls.pseudo_riemannian(doc["a"], domain=domain, params=params, **common)
        elif family == "randers":
            spec = cls.randers(doc["a"], doc["b"], domain=domain, params=params, **common)
        elif family == "lorentz-finsler-example":
            s = params.get("s", 0.1)
            spec = cls.lorentz_finsler_example(n, s, **common)
        else:
            raise SpecError("family 'custom' requires an 'L' expression")
        if spec.n != n:
            raise SpecError("dimension does not match the family data")
        return spec

    def to_dict(self):
        doc = {
            "dimension": self.n,
            "family": self.family,
            "L": self.L_source,
            "domain": list(self.domain_sources),
            "params": dict(self.params),
        }
        if self.signature_hint:
            doc["signature_hint"] = self.signature_hint
        if self.charts:
            doc["charts"] = list(self.charts)
        doc["sample_box"] = self.sample_box.tolist()
        return doc

    # -- evaluation
    def L(self, x, y):
        return self.lagrangian(x, y)

    def domain_values(self, x, y):
        return np.array(self._domain_fn(*x, *y), dtype=float)

    def admissible(self, x, y):
        if not np.any(np.asarray(y) != 0):
            return False
        return bool(np.all(self.domain_values(x, y) > 0))

    def point(self, x, y, check=True):
        """Cached PointData at (x, y); raises NotAdmissible when y is outside A."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        key = (x.tobytes(), y.tobytes(), check)
        hit = self._points.get(key)
        if hit is not None:
            return hit
        if check:
            try:
                ok = self.admissible(x, y)
            except DomainError:
                ok = False
            if not ok:
                raise NotAdmissible(f"direction {y.tolist()} at {x.tolist()} is not in the domain", x, y)
        pdata = PointData(self, x.copy(), y.copy())
        with self._lock:
            self._points[key] = pdata
            if len(self._points) > self.cache_size:
                self._points.popitem(last=False)
        return pdata

    def with_lagrangian(self, L, domain=None, **kw):
        """A custom-family copy with a different L (used for negative controls)."""
        return MetricSpec(self.n, L, domain or self.domain_sources, "custom",
                          params=self.params, sample_box=self.sample_box, **kw)


def _parse(src, n, params):
    if isinstance(src, ex.Expr):
        return src
    return ex.parse(src, n, params)


# ---------------------------------------------------------------- tensors


@dataclass
class FundamentalTensor:
    g: np.ndarray
    inverse: np.ndarray
    det: float

    @property
    def condition(self):
        return float(np.linalg.cond(self.g))


@dataclass
class CartanTensor:
    lower: np.ndarray
    raised: np.ndarray


def admissible(m, pd):
    x, y = _xy(pd)
    return m.admissible(x, y)


def _fundamental(p):
    d = p.tower(1)
    g = 0.5 * d["Lyy"]
    g = 0.5 * (g + g.T)
    n = g.shape[0]
    det = float(np.linalg.det(g))
    scale = float(np.max(np.abs(g)))
    if scale == 0.0 or abs(det) < DEGENERACY_RTOL * scale ** n:
        raise DegenerateMetric(f"fundamental tensor is degenerate (det={det:.3e}) at y={p.y.tolist()}")
    inv = np.linalg.inv(g)
    return FundamentalTensor(g, inv, det)


def fundamental_tensor(m, pd, check=True):
    """g_ij = (1/2) d^2 L / dy^i dy^j with its inverse."""
    x, y = _xy(pd)
    return m.point(x, y, check).get("fundamental", _fundamental)


def _cartan(p):
    lower = 0.25 * p.tower(1)["Lyyy"]
    ginv = p.get("fundamental", _fundamental).inverse
    return CartanTensor(lower, np.einsum("kl,lij->kij", ginv, lower))


def cartan_tensor(m, pd, check=True):
    """C_ijk = (1/4) d^3 L / dy^i dy^j dy^k, plus the raised form C^k_ij."""
    x, y = _xy(pd)
    return m.point(x, y, check).get("cartan", _cartan)


@dataclass
class CausalClass:
    value: float
    kind: str
    boundary: bool
    admissible: bool


def causal_classify(m, pd):
    """Classify v by L(v): unit-observer (L=1), lightlike (L=0) or other.

    Evaluated with L's expression even when v is on the boundary of A;
    ``boundary`` flags an inequality within BOUNDARY_TOL of zero.
    """
    x, y = _xy(pd)
    value = m.L(x, y)
    tol = CLASSIFY_TOL * max(1.0, float(y @ y))
    if abs(value - 1.0) < tol:
        kind = "unit-observer"
    elif abs(value) < tol:
        kind = "lightlike"
    else:
        kind = "other"
    try:
        dv = m.domain_values(x, y)
        boundary = bool(np.any(np.abs(dv) < BOUNDARY_TOL))
        ok = bool(np.all(dv > 0)) and bool(np.any(y != 0))
    except DomainError:
        boundary, ok = True, False
    return CausalClass(float(value), kind, boundary, ok)


def signature(m, pd):
    """(number of positive, number of negative) eigenvalues of g_v."""
    g = fundamental_tensor(m, pd).g
    w = np.linalg.eigvalsh(g)
    return int(np.sum(w > 0)), int(np.sum(w < 0))


def restspace_basis(m, pd):
    """n-1 vectors spanning {w : g_v(v, w) = 0}, each projected against v in g_v."""
    x, y = _xy(pd)
    g = fundamental_tensor(m, (x, y)).g
    gvv = float(y @ g @ y)
    if abs(gvv) <= DEGENERACY_RTOL * max(1.0, float(np.max(np.abs(g)))) * float(y @ y):
        raise DegenerateMetric("restspace needs L(v) != 0")
    pivot = int(np.argmax(np.abs(y)))
    basis = []
    for i in range(m.n):
        if i == pivot:
            continue
        e = np.zeros(m.n)
        e[i] = 1.0
        w = e - (y @ g @ e) / gvv * y
        basis.append(w)
    return basis


@dataclass
class RestspaceMetric:
    matrix: np.ndarray
    definiteness: str


def restspace_metric(m, pd, basis=None):
    x, y = _xy(pd)
    if basis is None:
        basis = restspace_basis(m, (x, y))
    g = fundamental_tensor(m, (x, y)).g
    B = np.array(basis).T
    mat = B.T @ g @ B
    mat = 0.5 * (mat + mat.T)
    w = np.linalg.eigvalsh(mat)
    if np.all(w > 0):
        kind = "positive-definite"
    elif np.all(w < 0):
        kind = "negative-definite"
    elif np.any(np.abs(w) <= DEGENERACY_RTOL * max(1.0, float(np.max(np.abs(w))))):
        raise DegenerateMetric("restspace metric is degenerate")
    else:
        kind = "indefinite"
    return RestspaceMetric(mat, kind)
