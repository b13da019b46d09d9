"""Derivative utilities over expressions: y-gradients and Hessians, arbitrary
mixed partials, a compiled derivative tower for Lagrangians, and a central
finite-difference oracle used only by tests and verification.
"""

from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import combinations_with_replacement, product
import math

import numpy as np

from . import expr as ex
from .errors import DomainError


def _canonical(names):
    """Sort a derivative multi-index: y-variables first, then x, then others."""
    def key(nm):
        m = ex._COORD_RE.match(nm)
        if m:
            return (0 if m.group(1) == "y" else 1, int(m.group(2)), "")
        return (2, 0, nm)
    return tuple(sorted(names, key=key))


class ScalarField:
    """A smooth scalar field f(x, y) on R^n x R^n given by an expression.

    Parameters are bound at construction, so the field is a closed object.
    """

    def __init__(self, expression, n, params=None):
        if isinstance(expression, str):
            expression = ex.parse(expression, n, params or {})
        self.params = dict(params or {})
        self.expr = ex.bind(expression, self.params) if self.params else expression
        leftover = ex.parameters(self.expr)
        if leftover:
            raise ValueError(f"unbound parameters {sorted(leftover)}")
        self.n = n
        self.argnames = ex.coordinate_names(n)
        self._partials = {(): self.expr}
        self._fn = ex.compile_exprs([self.expr], self.argnames)
        self._vec = None

    def __repr__(self):
        return f"ScalarField(n={self.n}, {ex.to_source(self.expr)!r})"

    def __call__(self, x, y):
        return self._fn(*x, *y)[0]

    def evaluate(self, x, y):
        return self(x, y)

    def vectorized(self, x, y):
        """Evaluate at arrays x[..., n], y[..., n] (numpy broadcasting)."""
        if self._vec is None:
            self._vec = ex.compile_exprs([self.expr], self.argnames, backend="numpy")
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return self._vec(*np.moveaxis(x, -1, 0), *np.moveaxis(y, -1, 0))[0]

    def _vec_raw(self, x, y):
        """Vectorized evaluation without the finiteness check (non-finite entries kept)."""
        if self._vec is None:
            self._vec = ex.compile_exprs([self.expr], self.argnames, backend="numpy")
        raw = self._vec.raw
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = raw(*np.moveaxis(x, -1, 0), *np.moveaxis(y, -1, 0))[0]
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape[:-1])

    def partial(self, names):
        """Symbolic mixed partial; ``names`` is a sequence like ("y0", "y0", "x1")."""
        key = _canonical(names)
        hit = self._partials.get(key)
        if hit is None:
            parent = self.partial(key[:-1])
            hit = ex.differentiate(parent, key[-1])
            self._partials[key] = hit
        return hit

    def partial_field(self, names):
        return ScalarField(self.partial(names), self.n)


def grad_y(f, at):
    """Exact vertical gradient (d f / d y^i)."""
    x, y = at
    exprs = [f.partial((f"y{i}",)) for i in range(f.n)]
    return _eval_list(f, tuple(exprs), x, y)


def hessian_y(f, at):
    """Exact y-Hessian; symmetric by construction (entries averaged over both orders)."""
    x, y = at
    n = f.n
    exprs = [f.partial((f"y{i}", f"y{j}")) for i in range(n) for j in range(n)]
    h = _eval_list(f, tuple(exprs), x, y).reshape(n, n)
    return 0.5 * (h + h.T)


def partial_value(f, names, at):
    x, y = at
    return float(_eval_list(f, (f.partial(names),), x, y)[0])


_LIST_CACHE = {}


def _eval_list(f, exprs, x, y):
    key = (f.n, tuple(id(e) for e in exprs))
    fn = _LIST_CACHE.get(key)
    if fn is None:
        fn = ex.compile_exprs(exprs, f.argnames)
        _LIST_CACHE[key] = fn
    return np.array(fn(*x, *y), dtype=float)


# ---------------------------------------------------------------- FD oracle


DEFAULT_STEPS = {0: 1e-4, 1: 1e-4, 2: 1e-3, 3: 5e-3, 4: 2e-2, 5: 4e-2}


@dataclass(frozen=True)
class FDConfig:
    """Central finite differences with Richardson extrapolation.

    ``levels`` is the number of step sizes h, h/2, ... in the Richardson
    table; levels=2 (one extrapolation) turns the O(h^2) stencils into an
    O(h^4) estimate.  When ``h`` is None the base step is picked from
    DEFAULT_STEPS by the total order of the partial, which keeps roundoff
    (growing like eps / h^order) and truncation error balanced.
    """

    h: float = None
    scheme: str = "central"
    levels: int = 2

    def __post_init__(self):
        if self.h is not None and not self.h > 0:
            raise ValueError("finite-difference step must be positive")
        if self.scheme != "central":
            raise ValueError("only the central scheme is implemented")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")


@lru_cache(maxsize=None)
def central_stencil(order):
    """Offsets and weights of the minimal O(h^2) central stencil for d^k/dx^k."""
    if order == 0:
        return (0,), (1.0,)
    p = (order + 1) // 2
    offsets = list(range(-p, p + 1))
    size = len(offsets)
    # solve sum_j c_j j^m = k! delta_{m,k}, m = 0..size-1, exactly
    rows = [[Fraction(j) ** m for j in offsets] for m in range(size)]
    rhs = [Fraction(math.factorial(order)) if m == order else Fraction(0) for m in range(size)]
    coeffs = _solve_exact(rows, rhs)
    return tuple(offsets), tuple(float(c) for c in coeffs)


def _solve_exact(a, b):
    n = len(b)
    m = [row[:] + [b[i]] for i, row in enumerate(a)]
    for col in range(n):
        piv = next(r for r in range(col, n) if m[r][col] != 0)
        m[col], m[piv] = m[piv], m[col]
        for r in range(n):
            if r != col and m[r][col] != 0:
                factor = m[r][col] / m[col][col]
                m[r] = [u - factor * v for u, v in zip(m[r], m[col])]
    return [m[i][n] / m[i][i] for i in range(n)]


def _index_counts(f, index):
    if isinstance(index, dict):
        return dict(index)
    return dict(Counter(index))


@lru_cache(maxsize=4096)
def _unit_stencil(n, counts):
    """Unit-step offsets (k, 2n) and weights (k,) of a product central stencil."""
    names = ex.coordinate_names(n)
    axes = []
    for nm, k in counts:
        offs, w = central_stencil(k)
        axes.append((names.index(nm), np.array(offs, float), np.array(w, float)))
    if not axes:
        return np.zeros((1, 2 * n)), np.ones(1)
    grids = np.meshgrid(*[a[1] for a in axes], indexing="ij")
    wgrids = np.meshgrid(*[a[2] for a in axes], indexing="ij")
    weights = np.ones_like(grids[0])
    for wg in wgrids:
        weights = weights * wg
    offsets = np.zeros(grids[0].shape + (2 * n,))
    for g, (col, _, _) in zip(grids, axes):
        offsets[..., col] += g
    return offsets.reshape(-1, 2 * n), weights.reshape(-1)


def _stencil(n, x, y, counts, h):
    """Evaluation points (k, 2n) and weights (k,) of a product central stencil."""
    base = np.concatenate([np.asarray(x, float), np.asarray(y, float)])
    offsets, weights = _unit_stencil(n, tuple(sorted(counts.items())))
    return base + h * offsets, weights / h ** sum(counts.values())


def _fd_once(f, x, y, counts, h):
    pts, w = _stencil(len(x), x, y, counts, h)
    return float(np.sum(w * _call_points(f, pts, len(x))))


def _call_points(f, pts, n):
    if isinstance(f, ScalarField):
        return np.asarray(f.vectorized(pts[:, :n], pts[:, n:]), dtype=float)
    return np.array([f(p[:n], p[n:]) for p in pts], dtype=float)


def _richardson(f, x, y, counts, cfg):
    """Richardson table in powers of h^2; returns (best, error estimate)."""
    h = cfg.h if cfg.h is not None else DEFAULT_STEPS[sum(counts.values())]
    return _tableau([_fd_once(f, x, y, counts, h / 2 ** i) for i in range(cfg.levels)], cfg.levels)


def _counts_checked(f, index):
    counts = _index_counts(f, index)
    if sum(counts.values()) > 5:
        raise ValueError("fd_partial supports total order <= 5")
    return counts


def fd_partial(f, at, index, cfg=FDConfig()):
    """Finite-difference estimate of a mixed partial of total order <= 5.

    ``f`` is a ScalarField (evaluated vectorized) or any callable f(x, y);
    ``index`` is a sequence of variable names or a {name: order} mapping.
    Product central stencils are combined with Richardson extrapolation in
    powers of h^2.
    """
    x, y = at
    value, _ = _richardson(f, x, y, _counts_checked(f, index), cfg)
    if not math.isfinite(value):
        raise DomainError("finite-difference stencil left the smooth domain")
    return value


def _tableau(values, levels):
    diagonal = [values[0]]
    table = list(values)
    for j in range(1, levels):
        factor = 4.0 ** j
        table = [(factor * table[i + 1] - table[i]) / (factor - 1) for i in range(len(table) - 1)]
        diagonal.append(table[-1])
    err = abs(diagonal[-1] - diagonal[-2]) if levels > 1 else math.inf
    return diagonal[-1], err


def fd_partials_auto(f, at, indices, steps=(1e-2, 2e-2, 4e-2), levels=3):
    """Batch finite-difference estimates for many multi-indices at one point.

    For every index the base steps in ``steps`` (a sequence, or a mapping
    from total order to a sequence) each produce a Richardson table with
    ``levels`` rows (an int, or a mapping from total order); the
    estimate whose last correction is smallest is kept.  All stencil points
    are evaluated in one vectorized call.  Indices whose every stencil leaves
    the smooth domain map to None.
    """
    x, y = at
    n = len(x)
    jobs = []
    chunks = []
    offset = 0
    for index in indices:
        counts = _counts_checked(f, index)
        order = sum(counts.values())
        ladder = steps[order] if isinstance(steps, dict) else steps
        nlev = levels[order] if isinstance(levels, dict) else levels
        for h in ladder:
            for lv in range(nlev):
                pts, w = _stencil(n, x, y, counts, h / 2 ** lv)
                jobs.append((index, h, lv, offset, len(w), w))
                chunks.append(pts)
                offset += len(w)
    pts = np.concatenate(chunks)
    if isinstance(f, ScalarField):
        with np.errstate(all="ignore"):
            raw = f._vec_raw(pts[:, :n], pts[:, n:])
    else:
        raw = _call_points(f, pts, n)
    partial = {}
    for index, h, lv, off, k, w in jobs:
        partial.setdefault((tuple(index) if not isinstance(index, dict) else tuple(sorted(index.items())), h), {})[lv] = (
            float(np.sum(w * raw[off:off + k])), bool(np.all(np.isfinite(raw[off:off + k]))))
    out = {}
    for index in indices:
        key = tuple(index) if not isinstance(index, dict) else tuple(sorted(index.items()))
        counts = _counts_checked(f, index)
        order = sum(counts.values())
        ladder = steps[order] if isinstance(steps, dict) else steps
        nlev = levels[order] if isinstance(levels, dict) else levels
        best = None
        for h in ladder:
            vals = partial[(key, h)]
            if not all(vals[lv][1] for lv in range(nlev)):
                continue
            value, err = _tableau([vals[lv][0] for lv in range(nlev)], nlev)
            if math.isfinite(value) and (best is None or err < best[1]):
                best = (value, err)
        out[key] = None if best is None else best[0]
    return out


def fd_partial_auto(f, at, index, steps=(1e-2, 2e-2, 4e-2), levels=3):
    """Single-index form of ``fd_partials_auto``; raises DomainError if no stencil fits."""
    key = tuple(index) if not isinstance(index, dict) else tuple(sorted(index.items()))
    value = fd_partials_auto(f, at, [index], steps, levels)[key]
    if value is None:
        raise DomainError("every finite-difference stencil left the smooth domain")
    return value


# ---------------------------------------------------------------- derivative tower

TOWER_LEVELS = {
    1: ("L", "Ly", "Lyy", "Lyyy", "Lyyx"),
    2: ("L", "Ly", "Lyy", "Lyyy", "Lyyx", "Lyyyy", "Lyyyx"),
    3: ("L", "Ly", "Lyy", "Lyyy", "Lyyx", "Lyyyy", "Lyyyx", "Lyyyyx"),
}


def _tower_shape(key):
    return key.count("y"), key.count("x")


class DerivativeTower:
    """Compiled evaluator for the partials of L needed by the geometry layer.

    Level 1 serves g, C, the formal Christoffels and the spray; level 2 adds
    what the exact nonlinear connection (and Chern) need; level 3 adds the
    fifth-order partials required by the Berwald connection.
    """

    def __init__(self, field):
        self.field = field
        self.n = field.n
        self._fns = {}
        self._layout = {}

    def _build(self, level):
        n = self.n
        f = self.field
        exprs = []
        layout = {}
        for key in TOWER_LEVELS[level]:
            ny, nx = _tower_shape(key)
            combos = list(combinations_with_replacement(range(n), ny))
            pos = {}
            for c in combos:
                ynames = tuple(f"y{i}" for i in c)
                for m in range(n) if nx else [None]:
                    names = ynames + ((f"x{m}",) if m is not None else ())
                    pos[(c, m)] = len(exprs)
                    exprs.append(f.partial(names))
            shape = (n,) * (ny + nx)
            idx = np.empty(shape, dtype=np.intp) if shape else np.empty((), dtype=np.intp)
            for full in product(range(n), repeat=ny + nx):
                c = tuple(sorted(full[:ny]))
                m = full[ny] if nx else None
                idx[full] = pos[(c, m)]
            layout[key] = idx
        self._fns[level] = ex.compile_exprs(exprs, f.argnames)
        self._layout[level] = layout

    def evaluate(self, x, y, level=1):
        if level not in self._fns:
            self._build(level)
        vals = np.array(self._fns[level](*x, *y), dtype=float)
        return {k: vals[idx] for k, idx in self._layout[level].items()}
