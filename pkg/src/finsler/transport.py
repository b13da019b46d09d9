"""Covariant derivatives along curves, geodesics, and the two parallel transports.

The observer transport solves the nonlinear system D^V V = 0; the reference
transport solves D^V W = 0 along that V.  Both are integrated with
fixed-step classical RK4, by default as one coupled system (V, W_1, ..., W_k).
"""

from dataclasses import dataclass, field
import io
import math

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from . import expr as ex
from .errors import DomainError, DomainExit, NotAdmissible, StepFailure

EXIT_TOL = 1e-9


# ---------------------------------------------------------------- curves


class VectorAlongCurve:
    """A vector-valued function of the curve parameter, with optional exact derivative."""

    def __init__(self, values, derivative=None):
        self._values = values
        self._derivative = derivative

    def __call__(self, t):
        return np.asarray(self._values(t), dtype=float)

    def derivative(self, t, h=1e-3):
        if self._derivative is not None:
            return np.asarray(self._derivative(t), dtype=float)
        return _fd4(self, t, h)

    @classmethod
    def from_expressions(cls, exprs, params=None):
        nodes = [e if isinstance(e, ex.Expr) else ex.parse(str(e), None, params or {}, ("t",))
                 for e in exprs]
        if params:
            nodes = [ex.bind(e, params) for e in nodes]
        for e in nodes:
            if e.free - {"t"}:
                raise ValueError(f"curve expressions may only use t, got {sorted(e.free)}")
        vel = [ex.differentiate(e, "t") for e in nodes]
        f = ex.compile_exprs(nodes, ["t"])
        df = ex.compile_exprs(vel, ["t"])
        obj = cls(lambda t: np.array(f(float(t))), lambda t: np.array(df(float(t))))
        obj.expressions = nodes
        return obj

    @classmethod
    def constant(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(lambda t: v, lambda t: np.zeros_like(v))


def _fd4(f, t, h):
    return (-f(t + 2 * h) + 8 * f(t + h) - 8 * f(t - h) + f(t - 2 * h)) / (12 * h)


class Curve:
    """A smooth curve gamma: [a, b] -> chart, with exact velocity where available."""

    def __init__(self, position, velocity, interval, kind="callable"):
        self._pos = position
        self._vel = velocity
        self.interval = (float(interval[0]), float(interval[1]))
        self.kind = kind

    def __call__(self, t):
        return np.asarray(self._pos(t), dtype=float)

    position = __call__

    def velocity(self, t):
        return np.asarray(self._vel(t), dtype=float)

    @property
    def n(self):
        return len(self(self.interval[0]))

    @classmethod
    def from_expressions(cls, exprs, interval, params=None):
        """``exprs`` are coordinate expressions in the parameter ``t``."""
        if isinstance(exprs, str):
            exprs = [s for s in exprs.split(";")]
        v = VectorAlongCurve.from_expressions(exprs, params)
        c = cls(v, v.derivative, interval, "expression")
        c.expressions = v.expressions
        return c

    @classmethod
    def from_samples(cls, t, x, velocity=None):
        """Cubic interpolation of a sampled polyline (t strictly increasing).

        With ``velocity`` samples the interpolant is the cubic Hermite spline
        matching both; otherwise a not-a-knot cubic spline.
        """
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        if velocity is None:
            spline = CubicSpline(t, x, axis=0)
        else:
            spline = CubicHermiteSpline(t, x, np.asarray(velocity, dtype=float), axis=0)
        dspline = spline.derivative()
        return cls(spline, dspline, (t[0], t[-1]), "polyline")

    def reparametrized(self, scale, shift=0.0):
        """t -> gamma(scale * t + shift), over the correspondingly mapped interval."""
        a, b = self.interval
        return Curve(lambda s: self(scale * s + shift), lambda s: scale * self.velocity(scale * s + shift),
                     sorted(((a - shift) / scale, (b - shift) / scale)), self.kind)


def _as_vector_along(X):
    if isinstance(X, VectorAlongCurve):
        return X
    if isinstance(X, Curve):
        # a curve stands for its velocity field
        return VectorAlongCurve(X.velocity)
    if callable(X):
        return VectorAlongCurve(X)
    return VectorAlongCurve.constant(X)


def covariant_derivative_along_curve(c, curve, W, X, t):
    """D^W X = (X'^i + Gamma^i_jk(gamma, W) gamma'^j X^k) d_i at parameter t."""
    W = _as_vector_along(W)
    X = _as_vector_along(X)
    x = curve(t)
    w = W(t)
    if c.metric is not None and not c.metric.admissible(x, w):
        raise NotAdmissible(f"reference vector {w.tolist()} is not admissible at t={t}", x, w)
    G = c(x, w)
    dX = X.derivative(t)
    return dX + np.einsum("ijk,j,k->i", G, curve.velocity(t), X(t))


# ---------------------------------------------------------------- integration


@dataclass
class IntegratorConfig:
    method: str = "rk4"
    h: float = None
    max_steps: int = 1_000_000
    coupled: bool = True

    def steps_for(self, t1, t2):
        span = abs(t2 - t1)
        if span == 0:
            return 0
        h = self.h if self.h else span / 1000
        n = max(1, int(math.ceil(span / h - 1e-9)))
        if n > self.max_steps:
            raise StepFailure(f"{n} steps exceed max_steps={self.max_steps}")
        return n


@dataclass
class TransportResult:
    """Samples of an integrated direction field along a curve."""

    kind: str
    t: np.ndarray
    x: np.ndarray
    V: np.ndarray
    W: np.ndarray = None
    L: np.ndarray = None
    pairings: np.ndarray = None
    exited: bool = False
    t_exit: float = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def final_V(self):
        return self.V[-1]

    @property
    def final_W(self):
        return None if self.W is None else self.W[-1]

    def raise_for_exit(self):
        if self.exited:
            raise DomainExit(self.t_exit, self)
        return self

    def columns(self):
        n = self.x.shape[1]
        vname = "y" if self.kind == "geodesic" else "V"
        cols = ["t"] + [f"x{i}" for i in range(n)] + [f"{vname}{i}" for i in range(n)]
        data = [self.t[:, None], self.x, self.V]
        if self.W is not None:
            k = self.W.shape[1]
            for j in range(k):
                cols += [f"W{j}_{i}" for i in range(n)]
                data.append(self.W[:, j, :])
            if self.pairings is not None:
                for j in range(k):
                    for l in range(j, k):
                        cols.append(f"g_W{j}_W{l}")
                        data.append(self.pairings[:, j, l][:, None])
        if self.L is not None:
            cols.append("L(x')" if self.kind == "geodesic" else "L(V)")
            data.append(self.L[:, None])
        return cols, np.hstack(data)

    def to_csv(self, stream=None):
        cols, data = self.columns()
        out = stream or io.StringIO()
        out.write(",".join(cols) + "\n")
        for row in data:
            out.write(",".join(format(float(v), ".17g") for v in row) + "\n")
        for key, value in self.diagnostics.items():
            if isinstance(value, float):
                value = format(value, ".17g")
            out.write(f"# {key},{value}\n")
        if stream is None:
            return out.getvalue()
        return None

    def to_dict(self):
        cols, data = self.columns()
        return {
            "kind": self.kind,
            "columns": cols,
            "rows": data.tolist(),
            "exited": self.exited,
            "t_exit": self.t_exit,
            "diagnostics": dict(self.diagnostics),
        }


def _rk4_step(rhs, t, s, h):
    k1 = rhs(t, s)
    k2 = rhs(t + h / 2, s + h / 2 * k1)
    k3 = rhs(t + h / 2, s + h / 2 * k2)
    k4 = rhs(t + h, s + h * k3)
    return s + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _integrate(rhs, state, t1, t2, cfg, admissible):
    """Fixed-step RK4 with admissibility checked at every stage point.

    ``rhs`` raises NotAdmissible when a stage leaves the domain.  Returns
    (ts, states, t_exit) with t_exit None when the whole interval was covered.
    """
    n = cfg.steps_for(t1, t2)
    ts = [t1]
    states = [np.array(state, dtype=float)]
    if n == 0:
        return np.array(ts), np.array(states), None
    h = (t2 - t1) / n

    def attempt(t, s, step):
        try:
            out = _rk4_step(rhs, t, s, step)
            if not np.all(np.isfinite(out)):
                raise StepFailure(f"non-finite state at t={t + step}")
            if not admissible(t + step, out):
                return None
            return out
        except (NotAdmissible, DomainError):
            return None

    s = states[0]
    t = t1
    for k in range(n):
        nxt = attempt(t, s, h)
        if nxt is None:
            lo, hi = 0.0, 1.0
            good = s
            while (hi - lo) * abs(h) > EXIT_TOL:
                mid = 0.5 * (lo + hi)
                trial = attempt(t, s, mid * h)
                if trial is None:
                    hi = mid
                else:
                    lo, good = mid, trial
            if lo > 0:
                ts.append(t + lo * h)
                states.append(good)
            return np.array(ts), np.array(states), t + hi * h
        t = t1 + (k + 1) * h
        s = nxt
        ts.append(t)
        states.append(s)
    return np.array(ts), np.array(states), None


def _admissible_fn(metric, split):
    if metric is None:
        return lambda pos, vec: True

    def ok(pos, vec):
        try:
            return metric.admissible(pos, vec)
        except DomainError:
            return False
    return ok


def integrate_geodesic(c, x0, v0, interval, cfg=None, metric=None, spray=False):
    """Solve x' = y, y'^a = -Gamma^a_ij(x, y) y^i y^j on ``interval``.

    ``spray=True`` uses y' = -2 G(x, y) from the metric spray instead of c.
    """
    cfg = cfg or IntegratorConfig()
    metric = metric or c.metric
    n = len(x0)
    ok = _admissible_fn(metric, n)
    x0 = np.asarray(x0, float)
    v0 = np.asarray(v0, float)
    if metric is not None and not ok(x0, v0):
        raise NotAdmissible("initial velocity is not admissible", x0, v0)
    if spray:
        from .connections import geodesic_spray

    def rhs(t, s):
        x, y = s[:n], s[n:]
        if not ok(x, y):
            raise NotAdmissible("stage left the domain", x, y)
        if spray:
            acc = -2.0 * geodesic_spray(metric, (x, y))
        else:
            acc = -np.einsum("aij,i,j->a", c(x, y), y, y)
        return np.concatenate([y, acc])

    t1, t2 = interval
    ts, states, t_exit = _integrate(rhs, np.concatenate([x0, v0]), t1, t2, cfg,
                                    lambda t, s: ok(s[:n], s[n:]))
    xs, ys = states[:, :n], states[:, n:]
    res = TransportResult("geodesic", ts, xs, ys, exited=t_exit is not None, t_exit=t_exit)
    if metric is not None:
        res.L = np.array([metric.L(a, b) for a, b in zip(xs, ys)])
        res.diagnostics["max_L_drift"] = float(np.max(np.abs(res.L - res.L[0])))
    if res.exited:
        res.diagnostics["t_exit"] = t_exit
    return res


def _transport(c, curve, v, ws, t1, t2, cfg, metric, kind):
    cfg = cfg or IntegratorConfig()
    metric = metric or c.metric
    n = len(v)
    ok = _admissible_fn(metric, n)
    v = np.asarray(v, float)
    ws = [np.asarray(w, float) for w in ws]
    k = len(ws)
    if not ok(curve(t1), v):
        raise NotAdmissible("observer is not admissible at the start of the curve", curve(t1), v)

    def rhs(t, s):
        V = s[:n]
        pos = curve(t)
        if not ok(pos, V):
            raise NotAdmissible("observer left the domain", pos, V)
        G = c(pos, V)
        A = np.einsum("ijk,j->ik", G, curve.velocity(t))
        return -(s.reshape(k + 1, n) @ A.T).reshape(-1)

    state = np.concatenate([v] + ws)
    if cfg.coupled or k == 0:
        ts, states, t_exit = _integrate(rhs, state, t1, t2, cfg,
                                        lambda t, s: ok(curve(t), s[:n]))
    else:
        ts, states, t_exit = _decoupled(c, curve, v, ws, t1, t2, cfg, ok)
    V = states[:, :n]
    W = states[:, n:].reshape(len(ts), k, n) if k else None
    xs = np.array([curve(t) for t in ts])
    res = TransportResult(kind, ts, xs, V, W, exited=t_exit is not None, t_exit=t_exit)
    if metric is not None:
        res.L = np.array([metric.L(a, b) for a, b in zip(xs, V)])
        res.diagnostics["max_L_drift"] = float(np.max(np.abs(res.L - res.L[0])))
        if k:
            from .geometry import fundamental_tensor
            pair = []
            for a, b, Wt in zip(xs, V, W):
                g = fundamental_tensor(metric, (a, b)).g
                pair.append(Wt @ g @ Wt.T)
            res.pairings = np.array(pair)
            res.diagnostics["max_pairing_drift"] = float(np.max(np.abs(res.pairings - res.pairings[0])))
    if res.exited:
        res.diagnostics["t_exit"] = t_exit
    return res


def _decoupled(c, curve, v, ws, t1, t2, cfg, ok):
    """Two-pass mode: observer first, then W along a spline of the sampled V."""
    n = len(v)
    obs_ts, obs_states, t_exit = _integrate(
        lambda t, s: _obs_rhs(c, curve, ok, t, s), v, t1, t2, cfg,
        lambda t, s: ok(curve(t), s))
    if t_exit is not None or len(obs_ts) < 2:
        k = len(ws)
        pad = np.full((len(obs_ts), k * n), np.nan)
        return obs_ts, np.hstack([obs_states, pad]), t_exit
    order = np.argsort(obs_ts)
    spline = CubicSpline(obs_ts[order], obs_states[order], axis=0)
    k = len(ws)

    def wrhs(t, s):
        G = c(curve(t), spline(t))
        A = np.einsum("ijk,j->ik", G, curve.velocity(t))
        return -(s.reshape(k, n) @ A.T).reshape(-1)

    _, wstates, _ = _integrate(wrhs, np.concatenate(ws), t1, t2, cfg, lambda t, s: True)
    return obs_ts, np.hstack([obs_states, wstates]), None


def _obs_rhs(c, curve, ok, t, V):
    pos = curve(t)
    if not ok(pos, V):
        raise NotAdmissible("observer left the domain", pos, V)
    return -np.einsum("ijk,j,k->i", c(pos, V), curve.velocity(t), V)


def observer_transport(c, curve, v, t1, t2, cfg=None, metric=None):
    """Instantaneous observer's transport: V with D^V V = 0, V(t1) = v."""
    return _transport(c, curve, v, [], t1, t2, cfg, metric, "observer")


def reference_transport(c, curve, v, w, t1, t2, cfg=None, metric=None):
    """Transport of w (or a list of vectors) with respect to the observer v."""
    w = np.asarray(w, float)
    ws = list(w) if w.ndim == 2 else [w]
    return _transport(c, curve, v, ws, t1, t2, cfg, metric, "reference")


# ---------------------------------------------------------------- tensors


def change_frame(T, rank, contra, co):
    """Components of T with contravariant slots mapped by ``contra`` and covariant by ``co``.

    new^a = contra^a_c old^c ;  new_b = old_c co^c_b.
    """
    r, s = rank
    out = np.asarray(T, dtype=float)
    for slot in range(r):
        out = np.moveaxis(np.tensordot(contra, out, axes=([1], [slot])), 0, slot)
    for l in range(s):
        slot = r + l
        out = np.moveaxis(np.tensordot(out, co, axes=([slot], [0])), -1, slot)
    return out


@dataclass
class TransportedTensor:
    components: np.ndarray
    rank: tuple
    observer: np.ndarray
    frame: np.ndarray
    result: TransportResult


def _frame_transport(c, curve, v, t1, t2, cfg, metric):
    n = len(v)
    res = reference_transport(c, curve, v, np.eye(n), t1, t2, cfg, metric)
    res.raise_for_exit()
    phi = res.final_W.T   # column j = transport of e_j
    return res, phi


def tensor_transport(c, curve, v, T, t1, t2, cfg=None, metric=None, rank=None):
    """Parallel transport of a tensor at gamma(t1) with respect to the observer v.

    ``T`` is an AnisotropicTensorField (evaluated at (gamma(t1), v)) or a
    component array with explicit ``rank``.  Vectors are moved by the
    reference transport, covectors by its inverse dual.
    """
    v = np.asarray(v, float)
    if rank is None:
        rank = T.rank
    comps = T(curve(t1), v) if hasattr(T, "rank") and callable(T) else np.asarray(T, float)
    res, phi = _frame_transport(c, curve, v, t1, t2, cfg, metric)
    out = change_frame(comps, rank, phi, np.linalg.inv(phi))
    return TransportedTensor(out, tuple(rank), res.final_V, phi, res)


def pulled_back_tensor(c, curve, v, T, a, t, cfg=None, metric=None):
    """P_t(T)_v: the field T at (gamma(t), P_{a,t}(v)) pulled back to gamma(a)."""
    v = np.asarray(v, float)
    res, phi = _frame_transport(c, curve, v, a, t, cfg, metric)
    comps = T(curve(t), res.final_V)
    return change_frame(comps, T.rank, np.linalg.inv(phi), phi)


def recover_nabla(c, curve, T, v, a=None, h_t=1e-3, substeps=4, metric=None):
    """d/dt P_t(T)_v at t = a by a 4th-order central difference in t.

    The transports to a +- h_t and a +- 2 h_t use RK4 with ``substeps``
    steps per h_t.
    """
    a = curve.interval[0] if a is None else a
    v = np.asarray(v, float)
    cfg = IntegratorConfig(h=h_t / substeps)
    vals = {}
    for sign in (1, -1):
        n = len(v)
        res = reference_transport(c, curve, v, np.eye(n), a, a + sign * 2 * h_t, cfg, metric)
        res.raise_for_exit()
        for mult, idx in ((1, substeps), (2, 2 * substeps)):
            phi = res.W[idx].T
            comps = T(curve(res.t[idx]), res.V[idx])
            vals[sign * mult] = change_frame(comps, T.rank, np.linalg.inv(phi), phi)
    return (-vals[2] + 8 * vals[1] - 8 * vals[-1] + vals[-2]) / (12 * h_t)
