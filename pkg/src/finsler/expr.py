"""Expression language for Lagrangians, domain predicates, chart maps and curves.

Expressions are immutable, hash-consed DAG nodes: structurally identical
subtrees are the same Python object, so derivative towers share work and
identity comparison is structural comparison.

Grammar (whitespace-insensitive)::

    expr     := term (('+' | '-') term)*
    term     := unary (('*' | '/') unary)*
    unary    := ('-' | '+') unary | power
    power    := atom ('^' exponent)?
    exponent := ('-' | '+') exponent | power
    atom     := number | name | name '(' expr ')' | '(' expr ')'

``^`` is right-associative and binds tighter than unary minus, so ``-y0^2``
is ``-(y0^2)``.
"""

import math
import re
import threading

import numpy as np

from .errors import DomainError, NonSmoothError, ParseError

FUNCTIONS = ("sqrt", "exp", "log", "sin", "cos", "atan", "abs")
CONSTANTS = {"pi": math.pi}

_COORD_RE = re.compile(r"^([xy])(\d+)$")
_MAX_DEPTH = 100


class Expr:
    """A node of the expression DAG. Build nodes with the module functions."""

    __slots__ = ("op", "args", "value", "name", "free", "__weakref__")

    def __init__(self, op, args, value, name, free):
        self.op = op
        self.args = args
        self.value = value
        self.name = name
        self.free = free

    def __repr__(self):
        return f"Expr({to_source(self)!r})"

    def __str__(self):
        return to_source(self)

    def __reduce__(self):
        return (parse_any, (to_source(self),))

    # arithmetic sugar so tests and library code can write e1 + 2*e2
    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __pow__(self, other):
        return power(self, _coerce(other))

    def __rpow__(self, other):
        return power(_coerce(other), self)

    def __neg__(self):
        return neg(self)

    @property
    def is_const(self):
        return self.op == "const"

    def depends_on(self, name):
        return name in self.free


_INTERN = {}
_INTERN_LOCK = threading.Lock()


def _make(op, args=(), value=None, name=None):
    key = (op, tuple(id(a) for a in args), value, name)
    node = _INTERN.get(key)
    if node is not None:
        return node
    if op == "var":
        free = frozenset((name,))
    elif args:
        free = frozenset().union(*(a.free for a in args))
    else:
        free = frozenset()
    with _INTERN_LOCK:
        node = _INTERN.get(key)
        if node is None:
            node = Expr(op, tuple(args), value, name, free)
            _INTERN[key] = node
    return node


def _coerce(v):
    if isinstance(v, Expr):
        return v
    return const(v)


def const(v):
    v = float(v)
    if v == 0.0:
        v = 0.0  # fold -0.0
    return _make("const", value=v)


def var(name):
    return _make("var", name=name)


def param(name):
    return _make("param", name=name)


ZERO = const(0.0)
ONE = const(1.0)


def _is(e, v):
    return e.op == "const" and e.value == v


def _fold(fn, *vals):
    try:
        out = fn(*vals)
    except (ValueError, ZeroDivisionError, OverflowError):
        return None
    if isinstance(out, complex) or not math.isfinite(out):
        return None
    return const(out)


def add(a, b):
    if a.is_const and b.is_const:
        folded = _fold(lambda p, q: p + q, a.value, b.value)
        if folded is not None:
            return folded
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    if b.op == "neg":
        return sub(a, b.args[0])
    return _make("add", (a, b))


def sub(a, b):
    if a.is_const and b.is_const:
        folded = _fold(lambda p, q: p - q, a.value, b.value)
        if folded is not None:
            return folded
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    if a is b:
        return ZERO
    if b.op == "neg":
        return add(a, b.args[0])
    return _make("sub", (a, b))


def mul(a, b):
    if b.is_const and not a.is_const:
        a, b = b, a
    if a.is_const:
        if b.is_const:
            folded = _fold(lambda p, q: p * q, a.value, b.value)
            if folded is not None:
                return folded
        if a.value == 0.0:
            return ZERO
        if a.value == 1.0:
            return b
        if a.value == -1.0:
            return neg(b)
        if b.op == "mul" and b.args[0].is_const:
            folded = _fold(lambda p, q: p * q, a.value, b.args[0].value)
            if folded is not None:
                return mul(folded, b.args[1])
        if b.op == "neg":
            return mul(const(-a.value), b.args[0])
    if a.op == "neg" and b.op == "neg":
        return mul(a.args[0], b.args[0])
    return _make("mul", (a, b))


def div(a, b):
    if a.is_const and b.is_const:
        folded = _fold(lambda p, q: p / q, a.value, b.value)
        if folded is not None:
            return folded
    if _is(a, 0.0) and not _is(b, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    if a is b:
        return ONE
    return _make("div", (a, b))


def neg(a):
    if a.is_const:
        return const(-a.value)
    if a.op == "neg":
        return a.args[0]
    if a.op == "mul" and a.args[0].is_const:
        return mul(const(-a.args[0].value), a.args[1])
    return _make("neg", (a,))


def _int_exponent(e):
    if e.is_const and float(e.value).is_integer() and abs(e.value) <= 1 << 20:
        return int(e.value)
    return None


def _pow_value(b, p):
    k = int(p) if float(p).is_integer() and abs(p) <= 1 << 20 else None
    if k is not None:
        return b ** k
    return math.pow(b, p)


def power(base, exponent):
    if base.is_const and exponent.is_const:
        folded = _fold(_pow_value, base.value, exponent.value)
        if folded is not None:
            return folded
    if _is(exponent, 1.0):
        return base
    if _is(exponent, 0.0):
        return ONE
    return _make("pow", (base, exponent))


def func(name, arg):
    if name not in FUNCTIONS:
        raise ValueError(f"unknown function {name!r}")
    if arg.is_const:
        folded = _fold(_MATH_FUNCS[name], arg.value)
        if folded is not None:
            return folded
    return _make("func", (arg,), name=name)


_MATH_FUNCS = {
    "sqrt": math.sqrt,
    "exp": math.exp,
    "log": math.log,
    "sin": math.sin,
    "cos": math.cos,
    "atan": math.atan,
    "abs": abs,
}


def sqrt(e):
    return func("sqrt", _coerce(e))


def exp(e):
    return func("exp", _coerce(e))


def log(e):
    return func("log", _coerce(e))


def sin(e):
    return func("sin", _coerce(e))


def cos(e):
    return func("cos", _coerce(e))


# ---------------------------------------------------------------- traversal


def _postorder(roots):
    """Nodes reachable from ``roots``, children before parents, each once."""
    seen = set()
    order = []
    for root in roots:
        if id(root) in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for child in reversed(node.args):
                if id(child) not in seen:
                    stack.append((child, False))
    return order


# ---------------------------------------------------------------- parsing

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(source):
    pos = 0
    tokens = []
    n = len(source)
    while pos < n:
        if source[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            raise ParseError(f"unexpected character {source[pos]!r}", pos, source=source)
        start = m.start(m.lastgroup)
        tokens.append((m.lastgroup, m.group(m.lastgroup), start))
        pos = m.end()
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, source, dimension, params, variables):
        self.source = source
        self.n = dimension
        self.params = set(params)
        self.variables = set(variables)
        self.tokens = _tokenize(source)
        self.i = 0
        self.depth = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message, tok=None, expected=None):
        tok = tok or self.peek()
        pos = min(tok[2], max(len(self.source) - 1, 0))
        raise ParseError(message, pos, expected, self.source)

    def expect(self, value):
        tok = self.peek()
        if tok[0] != "op" or tok[1] != value:
            shown = tok[1] if tok[0] != "end" else "end of input"
            self.error(f"unexpected {shown!r}", tok, expected=repr(value))
        return self.take()

    def enter(self):
        self.depth += 1
        if self.depth > _MAX_DEPTH:
            self.error("expression nested too deeply")

    def parse(self):
        if self.peek()[0] == "end":
            self.error("empty expression", expected="an expression")
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            self.error(f"unexpected {tok[1]!r}", tok, expected="operator or end of input")
        return e

    def expr(self):
        left = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            right = self.term()
            left = add(left, right) if op == "+" else sub(left, right)
        return left

    def term(self):
        left = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            right = self.unary()
            left = mul(left, right) if op == "*" else div(left, right)
        return left

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] in "+-":
            self.take()
            self.enter()
            inner = self.unary()
            self.depth -= 1
            return neg(inner) if tok[1] == "-" else inner
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            self.enter()
            exponent = self.exponent()
            self.depth -= 1
            return power(base, exponent)
        return base

    def exponent(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] in "+-":
            self.take()
            self.enter()
            inner = self.exponent()
            self.depth -= 1
            return neg(inner) if tok[1] == "-" else inner
        return self.power()

    def atom(self):
        tok = self.take()
        kind, text, pos = tok
        if kind == "num":
            return const(float(text))
        if kind == "name":
            if text in FUNCTIONS:
                self.expect("(")
                self.enter()
                arg = self.expr()
                self.depth -= 1
                self.expect(")")
                return func(text, arg)
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                self.error(f"unknown function {text!r}", tok)
            m = _COORD_RE.match(text)
            if m and self.n is not None:
                if int(m.group(2)) >= self.n:
                    self.error(
                        f"coordinate {text!r} out of range for dimension {self.n}", tok
                    )
                return var(text)
            if text in self.variables:
                return var(text)
            if text in self.params:
                return param(text)
            if text in CONSTANTS:
                return const(CONSTANTS[text])
            self.error(f"unknown identifier {text!r}", tok)
        if kind == "op" and text == "(":
            self.enter()
            inner = self.expr()
            self.depth -= 1
            self.expect(")")
            return inner
        shown = text if kind != "end" else "end of input"
        self.error(f"unexpected {shown!r}", tok, expected="a number, name or '('")


def parse(source, dimension, params=(), variables=()):
    """Parse ``source`` into an expression over ``x0..``, ``y0..`` of the given dimension.

    ``params`` names the symbolic constants that may appear (a mapping is
    accepted; only its keys are used).  ``variables`` lists extra free
    variable names such as ``t`` for curve parametrizations.
    """
    if not isinstance(source, str):
        raise ParseError("expression source must be text", 0)
    return _Parser(source, dimension, params, variables).parse()


def parse_any(source):
    """Parse with every identifier of the form x<k>/y<k> accepted (used by pickling)."""
    names = {m for m in re.findall(r"[A-Za-z_][A-Za-z0-9_]*", source)}
    names -= set(FUNCTIONS) | set(CONSTANTS)
    coords = {nm for nm in names if _COORD_RE.match(nm)}
    return _Parser(source, None, (), coords | (names - coords)).parse()


# ---------------------------------------------------------------- printing

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}


def _fmt_const(v):
    if float(v).is_integer() and abs(v) < 1e15:
        text = str(int(v))
    else:
        text = repr(float(v))
    return f"({text})" if v < 0 else text


def to_source(e):
    """Render ``e`` as text that parses back to the same node."""
    out = {}
    prec = {}
    for node in _postorder([e]):
        op = node.op
        if op == "const":
            out[node], prec[node] = _fmt_const(node.value), 5
        elif op in ("var", "param"):
            out[node], prec[node] = node.name, 5
        elif op == "func":
            out[node], prec[node] = f"{node.name}({out[node.args[0]]})", 5
        elif op == "neg":
            a = node.args[0]
            inner = out[a] if prec[a] >= 4 else f"({out[a]})"
            out[node], prec[node] = f"-{inner}", 3
        elif op == "pow":
            b, x = node.args
            base = out[b] if prec[b] >= 5 else f"({out[b]})"
            expo = out[x] if prec[x] >= 4 else f"({out[x]})"
            out[node], prec[node] = f"{base}^{expo}", 4
        else:
            a, b = node.args
            p = _PREC[op]
            left = out[a] if prec[a] >= p else f"({out[a]})"
            right = out[b] if prec[b] > p else f"({out[b]})"
            sym = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[op]
            out[node], prec[node] = f"{left} {sym} {right}", p
    return out[e]


# ---------------------------------------------------------------- evaluation


def _eval_node(node, vals):
    op = node.op
    if op == "add":
        return vals[0] + vals[1]
    if op == "sub":
        return vals[0] - vals[1]
    if op == "mul":
        return vals[0] * vals[1]
    if op == "div":
        return vals[0] / vals[1]
    if op == "neg":
        return -vals[0]
    if op == "pow":
        return _pow_value(vals[0], vals[1])
    return _MATH_FUNCS[node.name](vals[0])


def evaluate(e, point, params=None):
    """IEEE-754 double evaluation of ``e``.

    ``point`` maps variable names (``"x0"``, ``"y1"``, ``"t"``...) to values.
    Raises DomainError when a sub-expression is undefined.
    """
    params = params or {}
    values = {}
    try:
        for node in _postorder([e]):
            op = node.op
            if op == "const":
                v = node.value
            elif op == "var":
                v = float(point[node.name])
            elif op == "param":
                v = float(params[node.name])
            else:
                v = _eval_node(node, [values[id(a)] for a in node.args])
            values[id(node)] = v
    except KeyError as exc:
        raise KeyError(f"unbound symbol {exc.args[0]!r}") from None
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        raise DomainError(f"{exc} while evaluating {to_source(e)}") from None
    out = values[id(e)]
    if isinstance(out, complex) or not math.isfinite(out):
        raise DomainError(f"non-finite value while evaluating {to_source(e)}")
    return out


# ---------------------------------------------------------------- substitution


def substitute(e, mapping):
    """Replace variables/parameters by name with expressions (or numbers)."""
    mapping = {k: _coerce(v) for k, v in mapping.items()}
    return substitute_many([e], mapping)[0]


def substitute_many(exprs, mapping):
    new = {}
    for node in _postorder(exprs):
        op = node.op
        if op in ("var", "param"):
            new[id(node)] = mapping.get(node.name, node)
        elif op == "const":
            new[id(node)] = node
        else:
            args = [new[id(a)] for a in node.args]
            new[id(node)] = _rebuild(node, args)
    return [new[id(e)] for e in exprs]


def _rebuild(node, args):
    op = node.op
    if op == "add":
        return add(*args)
    if op == "sub":
        return sub(*args)
    if op == "mul":
        return mul(*args)
    if op == "div":
        return div(*args)
    if op == "neg":
        return neg(args[0])
    if op == "pow":
        return power(*args)
    return func(node.name, args[0])


def bind(e, params):
    """Substitute numeric parameter values."""
    return substitute(e, {k: const(v) for k, v in params.items()})


def parameters(e):
    return {n.name for n in _postorder([e]) if n.op == "param"}


# ---------------------------------------------------------------- differentiation

_DIFF_MEMO = {}


def differentiate(e, v):
    """Exact symbolic partial derivative of ``e`` with respect to variable ``v``.

    ``v`` is a variable name or a ``var`` node.  Parameters are constants.
    Raises NonSmoothError when ``abs`` of a ``v``-dependent argument is
    differentiated.
    """
    name = v.name if isinstance(v, Expr) else v
    if name not in e.free:
        return ZERO
    memo = _DIFF_MEMO
    key = (id(e), name)
    hit = memo.get(key)
    if hit is not None and hit[0] is e:
        return hit[1]
    for node in _postorder([e]):
        k = (id(node), name)
        hit = memo.get(k)
        if hit is not None and hit[0] is node:
            continue
        d = _diff_rule(node, name, lambda a: ZERO if name not in a.free else memo[(id(a), name)][1])
        memo[k] = (node, d)
    return memo[key][1]


def _diff_rule(node, name, d):
    op = node.op
    if name not in node.free:
        return ZERO
    if op == "var":
        return ONE
    if op == "add":
        return add(d(node.args[0]), d(node.args[1]))
    if op == "sub":
        return sub(d(node.args[0]), d(node.args[1]))
    if op == "neg":
        return neg(d(node.args[0]))
    if op == "mul":
        a, b = node.args
        return add(mul(d(a), b), mul(a, d(b)))
    if op == "div":
        a, b = node.args
        # d(a/b) = (a' - (a/b) b') / b, reusing the a/b node
        return div(sub(d(a), mul(node, d(b))), b)
    if op == "pow":
        b, x = node.args
        if name not in x.free:
            k = _int_exponent(x)
            if k is not None:
                return mul(mul(const(k), power(b, const(k - 1))), d(b))
            return mul(mul(x, power(b, sub(x, ONE))), d(b))
        return mul(node, add(mul(d(x), log(b)), div(mul(x, d(b)), b)))
    u = node.args[0]
    du = d(u)
    if node.name == "sqrt":
        return div(du, mul(const(2.0), node))
    if node.name == "exp":
        return mul(node, du)
    if node.name == "log":
        return div(du, u)
    if node.name == "sin":
        return mul(cos(u), du)
    if node.name == "cos":
        return neg(mul(sin(u), du))
    if node.name == "atan":
        return div(du, add(ONE, power(u, const(2.0))))
    raise NonSmoothError(
        f"abs({to_source(u)}) is not differentiable; write the metric smoothly on its domain"
    )


def diff_many(e, names):
    """Nested derivative d/d names[-1] ... d/d names[0] of ``e``."""
    for nm in names:
        e = differentiate(e, nm)
    return e


# ---------------------------------------------------------------- code generation


def _codegen(exprs, argnames, backend):
    m = "math." if backend == "math" else "np."
    lines = []
    refs = {}
    args = set(argnames)
    counter = 0
    for node in _postorder(exprs):
        op = node.op
        if op == "const":
            refs[id(node)] = repr(node.value) if node.value >= 0 else f"({node.value!r})"
            continue
        if op in ("var", "param"):
            if node.name not in args:
                raise ValueError(f"symbol {node.name!r} is not an argument")
            refs[id(node)] = "_a_" + node.name
            continue
        a = [refs[id(c)] for c in node.args]
        if op == "add":
            code = f"{a[0]} + {a[1]}"
        elif op == "sub":
            code = f"{a[0]} - {a[1]}"
        elif op == "mul":
            code = f"{a[0]} * {a[1]}"
        elif op == "div":
            code = f"{a[0]} / {a[1]}"
        elif op == "neg":
            code = f"-{a[0]}"
        elif op == "pow":
            k = _int_exponent(node.args[1])
            if k is not None:
                code = f"{a[0]} ** {k}"
            elif backend == "math":
                code = f"math.pow({a[0]}, {a[1]})"
            else:
                code = f"np.power({a[0]}, {a[1]})"
        elif node.name == "abs":
            code = f"{'abs' if backend == 'math' else 'np.abs'}({a[0]})"
        elif node.name == "atan":
            code = f"{m}atan({a[0]})" if backend == "math" else f"np.arctan({a[0]})"
        else:
            code = f"{m}{node.name}({a[0]})"
        tmp = f"t{counter}"
        counter += 1
        lines.append(f"    {tmp} = {code}")
        refs[id(node)] = tmp
    sig = ", ".join("_a_" + a for a in argnames)
    outs = ", ".join(refs[id(e)] for e in exprs)
    src = f"def _f({sig}):\n" + "\n".join(lines) + f"\n    return ({outs}{',' if len(exprs) == 1 else ''})\n"
    return src


def compile_exprs(exprs, argnames, backend="math"):
    """Compile expressions into one function of positional ``argnames``.

    The function returns a tuple with one value per expression; shared
    subexpressions are computed once.  With ``backend="numpy"`` the
    arguments may be arrays (broadcast elementwise).  Domain failures raise
    DomainError in both backends.
    """
    exprs = list(exprs)
    src = _codegen(exprs, list(argnames), backend)
    namespace = {"math": math, "np": np}
    exec(compile(src, "<finsler-expr>", "exec"), namespace)
    raw = namespace["_f"]
    if backend == "math":
        def fn(*vals):
            try:
                out = raw(*vals)
            except (ValueError, ZeroDivisionError, OverflowError) as exc:
                raise DomainError(str(exc)) from None
            if any(isinstance(o, complex) for o in out):
                raise DomainError("complex intermediate")
            return out
    else:
        def fn(*vals):
            vals = [np.asarray(v, dtype=float) for v in vals]
            with np.errstate(all="ignore"):
                out = raw(*vals)
            out = tuple(np.broadcast_to(np.asarray(o, dtype=float), np.broadcast(*vals).shape) if vals else np.asarray(o, dtype=float) for o in out)
            for o in out:
                if not np.all(np.isfinite(o)):
                    raise DomainError("non-finite value in vectorized evaluation")
            return out
    fn.source = src
    fn.raw = raw
    return fn


def coordinate_names(n):
    return [f"x{i}" for i in range(n)] + [f"y{i}" for i in range(n)]
