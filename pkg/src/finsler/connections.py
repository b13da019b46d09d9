"""Connections of a pseudo-Finsler metric and anisotropic tensor calculus.

Array conventions: ``gamma[a, i, j]`` is Gamma^a_{ij} with ``i`` the
differentiating direction (nabla_{d_i} d_j = Gamma^a_{ij} d_a);
``N[a, i]`` is N^a_i; tensor components carry contravariant indices first,
then covariant ones, and derivative slots are appended last.
"""

import numpy as np

from . import expr as ex
from .calculus import ScalarField
from .geometry import _fundamental, _xy


# ---------------------------------------------------------------- metric objects


def _basic(p):
    """Level-1 objects: g, g^-1, dg/dy, dg/dx, lowered and raised formal Christoffels."""
    d = p.tower(1)
    ft = _fundamental(p)
    ginv = ft.inverse
    gy = 0.5 * d["Lyyy"]                # [i, j, k] = d g_ij / dy^k
    gx = 0.5 * d["Lyyx"]                # [i, j, m] = d g_ij / dx^m
    low = 0.5 * (gx + np.einsum("kji->kij", gx) - np.einsum("ijk->kij", gx))  # [k, i, j]
    gamma = np.einsum("ak,kij->aij", ginv, low)
    return {"g": ft.g, "ginv": ginv, "gy": gy, "gx": gx, "low": low, "gamma": gamma}


def _ydiff(p):
    """Level-2 objects: y-derivatives of g^-1 and of the formal Christoffels."""
    b = p.get("basic", _basic)
    d = p.tower(2)
    ginv, gy, low = b["ginv"], b["gy"], b["low"]
    ginv_y = -np.einsum("ap,pql,qb->abl", ginv, gy, ginv)
    gxy = 0.5 * d["Lyyyx"].transpose(0, 1, 3, 2)   # [i, j, m, l] = d_x^m d_y^l g_ij
    low_y = 0.5 * (gxy + np.einsum("kjil->kijl", gxy) - np.einsum("ijkl->kijl", gxy))
    dgamma = np.einsum("akl,kij->aijl", ginv_y, low) + np.einsum("ak,kijl->aijl", ginv, low_y)
    return {"ginv_y": ginv_y, "low_y": low_y, "dgamma": dgamma, "gyy": 0.5 * d["Lyyyy"]}


def _nonlinear(p):
    b = p.get("basic", _basic)
    dd = p.get("ydiff", _ydiff)
    y = p.y
    # N^a_i = d/dy^i (1/2 gamma^a_jk y^j y^k)
    return np.einsum("aik,k->ai", b["gamma"], y) + 0.5 * np.einsum("ajki,j,k->ai", dd["dgamma"], y, y)


def _berwald(p):
    b = p.get("basic", _basic)
    dd = p.get("ydiff", _ydiff)
    d = p.tower(3)
    y = p.y
    ginv, gy, low = b["ginv"], b["gy"], b["low"]
    ginv_y, low_y, gyy = dd["ginv_y"], dd["low_y"], dd["gyy"]
    ginv_yy = -(
        np.einsum("apm,pql,qb->ablm", ginv_y, gy, ginv)
        + np.einsum("ap,pqlm,qb->ablm", ginv, gyy, ginv)
        + np.einsum("ap,pql,qbm->ablm", ginv, gy, ginv_y)
    )
    # [i, j, m, l, q] = d_x^m d_y^l d_y^q g_ij
    gxyy = 0.5 * d["Lyyyyx"].transpose(0, 1, 4, 2, 3)
    low_yy = 0.5 * (gxyy + np.einsum("kjilq->kijlq", gxyy) - np.einsum("ijklq->kijlq", gxyy))
    # second y-derivatives of gamma, contracted with y y on the (p, q) pair
    yy = np.outer(y, y)
    d2 = (
        np.einsum("akij,kpq,pq->aij", ginv_yy, low, yy)
        + np.einsum("aki,kpqj,pq->aij", ginv_y, low_y, yy)
        + np.einsum("akj,kpqi,pq->aij", ginv_y, low_y, yy)
        + np.einsum("ak,kpqij,pq->aij", ginv, low_yy, yy)
    )
    dg = dd["dgamma"]
    term = np.einsum("aikj,k->aij", dg, y)
    return b["gamma"] + term + term.transpose(0, 2, 1) + 0.5 * d2


def _chern(p):
    b = p.get("basic", _basic)
    N = p.get("N", _nonlinear)
    dg = b["gx"] - np.einsum("ija,ak->ijk", b["gy"], N)   # [i, j, k] = delta_k g_ij
    low = 0.5 * (dg + np.einsum("kji->kij", dg) - np.einsum("ijk->kij", dg))
    return np.einsum("ak,kij->aij", b["ginv"], low)


def _cartan_n(p):
    b = p.get("basic", _basic)
    y = p.y
    gamma, ginv = b["gamma"], b["ginv"]
    C = 0.5 * b["gy"]
    gyy = np.einsum("klm,l,m->k", gamma, y, y)
    return np.einsum("aij,j->ai", gamma, y) - np.einsum("aj,ijk,k->ai", ginv, C, gyy)


def formal_christoffels(m, pd):
    """gamma^a_ij = 1/2 g^ak (d_j g_ki + d_i g_kj - d_k g_ij), pointwise in (x, y)."""
    x, y = _xy(pd)
    return m.point(x, y).get("basic", _basic)["gamma"]


def geodesic_spray(m, pd):
    """G^a = 1/2 gamma^a_ij y^i y^j (geodesics: x'' + 2 G(x, x') = 0)."""
    x, y = _xy(pd)
    gamma = formal_christoffels(m, (x, y))
    return 0.5 * np.einsum("aij,i,j->a", gamma, y, y)


def nonlinear_connection(m, pd):
    """Metric nonlinear connection N^a_i = dG^a/dy^i, by exact differentiation."""
    x, y = _xy(pd)
    return m.point(x, y).get("N", _nonlinear)


def nonlinear_connection_cartan(m, pd):
    """N^a_i from gamma^a_ij y^j - g^aj C_ijk gamma^k_lm y^l y^m (second code path)."""
    x, y = _xy(pd)
    return m.point(x, y).get("N_cartan", _cartan_n)


def delta_derivative(f, m, pd, i):
    """delta_i f = d f/dx^i - N^a_i d f/dy^a for a ScalarField or tensor field."""
    x, y = _xy(pd)
    N = nonlinear_connection(m, (x, y))
    if isinstance(f, ScalarField):
        f = AnisotropicTensorField.from_scalar(f)
    return f.dx(x, y)[..., i] - np.tensordot(f.dy(x, y), N[:, i], axes=([-1], [0]))


# ---------------------------------------------------------------- fields


class AnisotropicTensorField:
    """Components T^{a...}_{b...}(x, y) of an (r, s) anisotropic tensor field.

    ``value``, ``dx`` and ``dy`` are callables of (x, y); ``dx``/``dy`` return
    the components with one more trailing index for the partial direction.
    """

    def __init__(self, n, rank, value, dx=None, dy=None, degree=None, name=""):
        self.n = n
        self.rank = tuple(rank)
        self._value = value
        self._dx = dx
        self._dy = dy
        self.degree = degree
        self.name = name

    def __repr__(self):
        return f"AnisotropicTensorField({self.name or '?'}, rank={self.rank})"

    def __call__(self, x, y):
        return np.asarray(self._value(np.asarray(x, float), np.asarray(y, float)), dtype=float)

    value = __call__

    def dx(self, x, y):
        if self._dx is None:
            raise NotImplementedError(f"{self!r} has no exact x-derivative")
        return np.asarray(self._dx(np.asarray(x, float), np.asarray(y, float)), dtype=float)

    def dy(self, x, y):
        if self._dy is None:
            raise NotImplementedError(f"{self!r} has no exact y-derivative")
        return np.asarray(self._dy(np.asarray(x, float), np.asarray(y, float)), dtype=float)

    @property
    def shape(self):
        return (self.n,) * sum(self.rank)

    @classmethod
    def from_expressions(cls, n, rank, components, params=None, degree=None, name=""):
        """Build from a nested list of expression texts (or Expr nodes)."""
        shape = (n,) * sum(rank)
        flat = np.array(components, dtype=object).reshape(-1) if shape else [components]
        exprs = []
        for c in flat:
            e = c if isinstance(c, ex.Expr) else ex.parse(str(c), n, params or {})
            exprs.append(ex.bind(e, params) if params else e)
        names = ex.coordinate_names(n)
        value_fn = ex.compile_exprs(exprs, names)
        dx_exprs = [ex.differentiate(e, f"x{k}") for e in exprs for k in range(n)]
        dy_exprs = [ex.differentiate(e, f"y{k}") for e in exprs for k in range(n)]
        dx_fn = ex.compile_exprs(dx_exprs, names)
        dy_fn = ex.compile_exprs(dy_exprs, names)

        def value(x, y):
            return np.array(value_fn(*x, *y)).reshape(shape)

        def dx(x, y):
            return np.array(dx_fn(*x, *y)).reshape(shape + (n,))

        def dy(x, y):
            return np.array(dy_fn(*x, *y)).reshape(shape + (n,))

        field = cls(n, rank, value, dx, dy, degree, name)
        field.expressions = exprs
        return field

    @classmethod
    def from_scalar(cls, f, degree=None, name=""):
        return cls.from_expressions(f.n, (0, 0), f.expr, degree=degree, name=name or "scalar")


def metric_tensor_field(m):
    """The fundamental tensor g as a (0, 2) field with exact derivatives."""

    def value(x, y):
        return m.point(x, y).get("basic", _basic)["g"]

    def dx(x, y):
        return m.point(x, y).get("basic", _basic)["gx"]

    def dy(x, y):
        return m.point(x, y).get("basic", _basic)["gy"]

    return AnisotropicTensorField(m.n, (0, 2), value, dx, dy, degree=0, name="g")


def lagrangian_field(m):
    return AnisotropicTensorField.from_scalar(m.lagrangian, degree=2, name="L")


def vertical_derivative(T, pd):
    """(d-dot T): the y-derivative appended as a new covariant slot."""
    x, y = _xy(pd)
    return T.dy(x, y)


class ConnectionField:
    """An anisotropic connection given by its Christoffel symbols Gamma^a_ij(x, y)."""

    def __init__(self, n, evaluator, kind="custom", homogeneous=True, metric=None, dy=None):
        self.n = n
        self._eval = evaluator
        self.kind = kind
        self.homogeneous = homogeneous
        self.metric = metric
        self._dy = dy

    def __repr__(self):
        return f"ConnectionField({self.kind}, n={self.n})"

    def __call__(self, x, y):
        return self._eval(np.asarray(x, float), np.asarray(y, float))

    gamma = __call__

    def dy(self, x, y):
        """d Gamma^a_ij / dy^k as [a, i, j, k], when exactly available."""
        if self._dy is None:
            raise NotImplementedError(f"{self.kind} connection has no exact y-derivative")
        return self._dy(np.asarray(x, float), np.asarray(y, float))

    def plus(self, Q, kind=None):
        """Gamma + Q for a (1, 2) anisotropic tensor field Q."""
        dy = None
        if self._dy is not None and Q._dy is not None:
            dy = lambda x, y: self._dy(x, y) + Q.dy(x, y)  # noqa: E731
        return ConnectionField(self.n, lambda x, y: self._eval(x, y) + Q(x, y),
                               kind or f"{self.kind}+Q", self.homogeneous and Q.degree == 0,
                               self.metric, dy)

    @classmethod
    def from_expressions(cls, n, components, params=None, kind="custom"):
        """Christoffel symbols from a nested [a][i][j] list of expression texts."""
        T = AnisotropicTensorField.from_expressions(n, (1, 2), components, params)
        return cls(n, T.value, kind, homogeneous=False, dy=T.dy)


class NonlinearConnectionField:
    """N^a_i(x, y), optionally with its exact y-Jacobian dy[a, i, j] = dN^a_i/dy^j."""

    def __init__(self, n, evaluator, dy=None, kind="custom"):
        self.n = n
        self._eval = evaluator
        self._dy = dy
        self.kind = kind

    def __call__(self, x, y):
        return self._eval(np.asarray(x, float), np.asarray(y, float))

    def dy(self, x, y):
        if self._dy is None:
            raise NotImplementedError(f"{self.kind} nonlinear connection has no exact y-derivative")
        return self._dy(np.asarray(x, float), np.asarray(y, float))

    @classmethod
    def from_expressions(cls, n, components, params=None, kind="custom"):
        T = AnisotropicTensorField.from_expressions(n, (1, 1), components, params)
        return cls(n, T.value, T.dy, kind)


def berwald_connection(m):
    """Gamma^a_ij = d N^a_i / dy^j for the metric nonlinear connection."""
    return ConnectionField(m.n, lambda x, y: m.point(x, y).get("berwald", _berwald),
                           "berwald", True, m)


def chern_connection(m):
    """1/2 g^ak (delta_j g_ki + delta_i g_kj - delta_k g_ij) with delta from the metric N."""
    return ConnectionField(m.n, lambda x, y: m.point(x, y).get("chern", _chern),
                           "chern", True, m)


def spray_connection(m):
    """Formal Christoffels as a connection; only meaningful through gamma y y = 2G (spray geodesics)."""
    return ConnectionField(m.n, lambda x, y: m.point(x, y).get("basic", _basic)["gamma"],
                           "formal", True, m)


def metric_nonlinear_connection(m):
    return NonlinearConnectionField(
        m.n,
        lambda x, y: m.point(x, y).get("N", _nonlinear),
        dy=lambda x, y: m.point(x, y).get("berwald", _berwald),
        kind="metric",
    )


def torsion(c, pd):
    """Tor^k_ij = Gamma^k_ij - Gamma^k_ji."""
    x, y = _xy(pd)
    G = c(x, y)
    return G - G.transpose(0, 2, 1)


def covariant_derivative_tensor(c, T, pd):
    """T_{b...|k}^{a...} = d_k T - Gamma^i_kj y^j dT/dy^i + sum Gamma T - sum Gamma T.

    Returns the components with the derivative index k appended last.
    """
    x, y = _xy(pd)
    G = c(x, y)
    r, s = T.rank
    val = T(x, y)
    Ny = np.einsum("ikj,j->ik", G, y)                 # Gamma^i_kj y^j
    out = T.dx(x, y) - np.tensordot(T.dy(x, y), Ny, axes=([-1], [0]))
    order = r + s
    for slot in range(r):
        # + Gamma^{a}_{k j} T^{..j..}: contract slot with j, new axes (a, k)
        t = np.tensordot(val, G, axes=([slot], [2]))  # remaining..., a, k
        t = np.moveaxis(t, order - 1, slot)           # put a back at slot
        out = out + t
    for l in range(s):
        slot = r + l
        # - Gamma^i_{k b} T_{..i..}: contract slot with i, new axes (k, b)
        t = np.tensordot(val, G, axes=([slot], [0]))  # remaining..., k, b
        t = np.moveaxis(t, order, slot)               # put b back at slot
        out = out - t
    return out


def directional_covariant_derivative(c, T, pd, u):
    """(nabla_u T)_v: covariant derivative contracted with the direction u."""
    return np.tensordot(covariant_derivative_tensor(c, T, pd), np.asarray(u, float), axes=([-1], [0]))


def connection_difference(a, b):
    """Q = a - b as a (1, 2) anisotropic tensor field."""
    dy = None
    if a._dy is not None and b._dy is not None:
        dy = lambda x, y: a.dy(x, y) - b.dy(x, y)  # noqa: E731
    deg = 0 if (a.homogeneous and b.homogeneous) else None
    return AnisotropicTensorField(a.n, (1, 2), lambda x, y: a(x, y) - b(x, y), None, dy, deg,
                                  name=f"{a.kind}-{b.kind}")


def nonlinear_from_connection(c):
    """N^a_i = Gamma^a_ij y^j."""
    def value(x, y):
        return np.einsum("aij,j->ai", c(x, y), y)

    dy = None
    if c._dy is not None:
        def dy(x, y):
            return np.einsum("aijk,j->aik", c.dy(x, y), y) + c(x, y)
    return NonlinearConnectionField(c.n, value, dy, kind=f"from-{c.kind}")


def connection_from_nonlinear(nc):
    """Gamma^a_ij = d N^a_i / dy^j (exact y-Jacobian of nc)."""
    return ConnectionField(nc.n, lambda x, y: nc.dy(x, y), "from-nonlinear", True)
