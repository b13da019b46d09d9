"""Command-line front end.

    finsler tensor    SPEC --at X... --dir Y... --what NAME
    finsler geodesic  SPEC --from X... --dir Y... --tmax T [--step H] [--connection C]
    finsler transport SPEC --curve EXPR|FILE --observer V... [--vector W...]... --t1 A --t2 B
    finsler verify    SPEC [--suite quick|full] [--seed S] [--json]

Data goes to stdout, diagnostics to stderr.  Exit codes:
0 success, 1 parse/schema error, 2 direction not admissible,
3 degenerate metric, 4 domain exit during integration, 5 verification failure.
"""

import argparse
import json
import os
import sys
from importlib import resources

import jsonschema
import numpy as np

from . import connections as cn
from . import geometry as geo
from . import transport as tr
from . import verify as vf
from .errors import (
    DegenerateMetric,
    DomainError,
    FinslerError,
    NotAdmissible,
    ParseError,
    SpecError,
)

EXIT_OK = 0
EXIT_SPEC = 1
EXIT_NOT_ADMISSIBLE = 2
EXIT_DEGENERATE = 3
EXIT_DOMAIN_EXIT = 4
EXIT_VERIFY = 5

TENSORS = ("g", "g-inverse", "cartan", "gamma", "spray", "N", "berwald", "chern", "torsion", "restspace")

FORMULAS = {
    "g": "g_ij = 1/2 d^2 L / dy^i dy^j",
    "g-inverse": "g^ij, the matrix inverse of g_ij",
    "cartan": "C_ijk = 1/4 d^3 L / dy^i dy^j dy^k",
    "gamma": "gamma^a_ij = 1/2 g^ak (d_j g_ki + d_i g_kj - d_k g_ij)",
    "spray": "G^a = 1/2 gamma^a_ij y^i y^j",
    "N": "N^a_i = dG^a / dy^i",
    "berwald": "Gamma^a_ij = d N^a_i / dy^j",
    "chern": "Gamma^a_ij = 1/2 g^ak (delta_j g_ki + delta_i g_kj - delta_k g_ij), delta_k = d_k - N^a_k d/dy^a",
    "torsion": "Tor^k_ij = Gamma^k_ij - Gamma^k_ji",
    "restspace": "g_v-orthogonal complement of v with the restricted metric",
}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def load_schema():
    text = resources.files("finsler").joinpath("data/metric_spec.schema.json").read_text()
    return json.loads(text)


def load_spec(path):
    """Read, schema-validate and build a MetricSpec from a JSON file."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_SPEC)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON: {exc}", EXIT_SPEC)
    try:
        jsonschema.validate(doc, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise CliError(f"{path}: schema error at {where}: {exc.message}", EXIT_SPEC)
    try:
        return geo.MetricSpec.from_dict(doc)
    except (ParseError, SpecError, ValueError) as exc:
        raise CliError(f"{path}: {exc}", EXIT_SPEC)


def _dump(obj, stream):
    stream.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _vec(values, n, flag):
    if len(values) != n:
        raise CliError(f"{flag} needs {n} numbers, got {len(values)}", EXIT_SPEC)
    return np.asarray(values, dtype=float)


def _connection(m, name):
    if name == "berwald":
        return cn.berwald_connection(m)
    if name == "spray":
        return cn.spray_connection(m)
    return cn.chern_connection(m)


# ---------------------------------------------------------------- subcommands


def cmd_tensor(args, out):
    m = load_spec(args.spec)
    x = _vec(args.at, m.n, "--at")
    y = _vec(args.dir, m.n, "--dir")
    pd = (x, y)
    m.point(x, y)     # raises NotAdmissible before anything else
    what = args.what
    doc = {"what": what, "x": x.tolist(), "y": y.tolist(), "formula": FORMULAS[what]}
    if what == "g":
        doc["components"] = geo.fundamental_tensor(m, pd).g.tolist()
    elif what == "g-inverse":
        doc["components"] = geo.fundamental_tensor(m, pd).inverse.tolist()
    elif what == "cartan":
        doc["components"] = geo.cartan_tensor(m, pd).lower.tolist()
    elif what == "gamma":
        doc["components"] = cn.formal_christoffels(m, pd).tolist()
    elif what == "spray":
        doc["components"] = cn.geodesic_spray(m, pd).tolist()
    elif what == "N":
        doc["components"] = cn.nonlinear_connection(m, pd).tolist()
    elif what in ("berwald", "chern"):
        doc["components"] = _connection(m, what)(x, y).tolist()
    elif what == "torsion":
        doc["connection"] = args.connection
        doc["components"] = cn.torsion(_connection(m, args.connection), pd).tolist()
    elif what == "restspace":
        basis = geo.restspace_basis(m, pd)
        rs = geo.restspace_metric(m, pd, basis)
        doc["basis"] = [b.tolist() for b in basis]
        doc["components"] = rs.matrix.tolist()
        doc["definiteness"] = rs.definiteness
    _dump(doc, out)
    return EXIT_OK


def _write_result(res, args, out):
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            res.to_csv(fh)
    else:
        res.to_csv(out)
    if res.exited:
        sys.stderr.write(f"domain exit at t* = {res.t_exit:.17g}; output truncated\n")
        return EXIT_DOMAIN_EXIT
    return EXIT_OK


def cmd_geodesic(args, out):
    m = load_spec(args.spec)
    x = _vec(args.from_, m.n, "--from")
    y = _vec(args.dir, m.n, "--dir")
    if not m.admissible(x, y):
        raise NotAdmissible("initial direction is not admissible", x, y)
    cfg = tr.IntegratorConfig(h=args.step)
    spray = args.connection == "spray"
    conn = cn.chern_connection(m) if spray else _connection(m, args.connection)
    res = tr.integrate_geodesic(conn, x, y, (0.0, args.tmax), cfg, metric=m, spray=spray)
    return _write_result(res, args, out)


def load_curve(text, n, interval, fmt="auto"):
    """An expression curve "e0; e1; ..." in t, or a CSV polyline file with columns t, x0, ...."""
    if fmt == "csv" or (fmt == "auto" and os.path.isfile(text)):
        try:
            data = np.loadtxt(text, delimiter=",", comments="#", ndmin=2)
        except ValueError:
            data = np.loadtxt(text, delimiter=",", comments="#", skiprows=1, ndmin=2)
        if data.shape[1] != n + 1:
            raise CliError(f"curve file needs {n + 1} columns (t, x0..), got {data.shape[1]}", EXIT_SPEC)
        return tr.Curve.from_samples(data[:, 0], data[:, 1:])
    parts = [p.strip() for p in text.split(";") if p.strip()]
    if len(parts) != n:
        raise CliError(f"curve needs {n} ';'-separated expressions in t, got {len(parts)}", EXIT_SPEC)
    try:
        return tr.Curve.from_expressions(parts, interval)
    except (ParseError, ValueError) as exc:
        raise CliError(f"curve: {exc}", EXIT_SPEC)


def cmd_transport(args, out):
    m = load_spec(args.spec)
    curve = load_curve(args.curve, m.n, (args.t1, args.t2), args.curve_format)
    v = _vec(args.observer, m.n, "--observer")
    cfg = tr.IntegratorConfig(h=args.step)
    conn = _connection(m, args.connection)
    if args.vector:
        ws = np.array([_vec(w, m.n, "--vector") for w in args.vector])
        res = tr.reference_transport(conn, curve, v, ws, args.t1, args.t2, cfg, metric=m)
    else:
        res = tr.observer_transport(conn, curve, v, args.t1, args.t2, cfg, metric=m)
    return _write_result(res, args, out)


def default_seed():
    value = os.environ.get("FINSLER_SEED")
    if value is None or value == "":
        return 0
    try:
        return int(value)
    except ValueError:
        raise CliError(f"FINSLER_SEED must be an integer, got {value!r}", EXIT_SPEC)


def cmd_verify(args, out):
    m = load_spec(args.spec)
    seed = args.seed if args.seed is not None else default_seed()
    report = vf.run_suite(m, vf.SuiteConfig(suite=args.suite, seed=seed))
    if args.json:
        out.write(report.to_json() + "\n")
    else:
        out.write(report.to_text() + "\n")
    for r in report.failures:
        sys.stderr.write(f"unexpected outcome: {r.line()}\n")
    return EXIT_OK if report.ok else EXIT_VERIFY


# ---------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="finsler", description="Pseudo-Finsler geometry engine")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tensor", help="evaluate a tensor or connection at a point and direction")
    t.add_argument("spec")
    t.add_argument("--at", nargs="+", type=float, required=True, metavar="X")
    t.add_argument("--dir", nargs="+", type=float, required=True, metavar="Y")
    t.add_argument("--what", choices=TENSORS, default="g")
    t.add_argument("--connection", choices=("chern", "berwald"), default="chern",
                   help="connection used by --what torsion")
    t.set_defaults(func=cmd_tensor)

    g = sub.add_parser("geodesic", help="integrate a geodesic, CSV output")
    g.add_argument("spec")
    g.add_argument("--from", dest="from_", nargs="+", type=float, required=True, metavar="X")
    g.add_argument("--dir", nargs="+", type=float, required=True, metavar="Y")
    g.add_argument("--tmax", type=float, required=True)
    g.add_argument("--step", type=float, default=None)
    g.add_argument("--connection", choices=("chern", "berwald", "spray"), default="chern")
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_geodesic)

    r = sub.add_parser("transport", help="observer and reference parallel transport, CSV output")
    r.add_argument("spec")
    r.add_argument("--curve", required=True, help="'e0; e1; ...' in t, or a CSV file t,x0,...")
    r.add_argument("--curve-format", choices=("auto", "expr", "csv"), default="auto")
    r.add_argument("--observer", nargs="+", type=float, required=True, metavar="V")
    r.add_argument("--vector", nargs="+", type=float, action="append", metavar="W")
    r.add_argument("--t1", type=float, required=True)
    r.add_argument("--t2", type=float, required=True)
    r.add_argument("--step", type=float, default=None)
    r.add_argument("--connection", choices=("chern", "berwald"), default="chern")
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_transport)

    v = sub.add_parser("verify", help="run the verification suite")
    v.add_argument("spec")
    v.add_argument("--suite", choices=("quick", "full"), default="quick")
    v.add_argument("--seed", type=int, default=None)
    v.add_argument("--json", action="store_true")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_SPEC if exc.code else EXIT_OK
    try:
        return args.func(args, out)
    except CliError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.code
    except NotAdmissible as exc:
        sys.stderr.write(f"not admissible: {exc}\n")
        return EXIT_NOT_ADMISSIBLE
    except DegenerateMetric as exc:
        sys.stderr.write(f"degenerate metric: {exc}\n")
        return EXIT_DEGENERATE
    except (ParseError, SpecError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_SPEC
    except DomainError as exc:
        sys.stderr.write(f"not admissible: {exc}\n")
        return EXIT_NOT_ADMISSIBLE
    except FinslerError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_SPEC


if __name__ == "__main__":
    sys.exit(main())
