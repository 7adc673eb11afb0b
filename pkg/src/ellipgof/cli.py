"""Command-line interface.

Exit codes: 0 when the command ran (whatever the test decision), 2 for
usage errors, 3 for data errors and 4 for numerical failures.
"""

import argparse
import csv
import json
import math
import sys
from importlib import resources

import numpy as np

from . import __version__
from ._backend import BACKEND
from .alternatives import ALTERNATIVES, AlternativeSpec, sample_alternative
from .decomposition import Decomposer, ScalingError, build_basis, select_K
from .families import (FAMILIES, ConstantsError, ConvergenceError, DegenerateDataError,
                       SupportError, get_family, sample_null)
from .harmonics import BasisConstructionError
from .montecarlo import ConfigurationError, NullTable, build_null_tables, mc_pvalue
from .radial import MomentConsistencyError

__all__ = ["main", "read_csv", "write_csv", "load_marks", "build_report", "validate_report",
           "DataError", "EXIT_OK", "EXIT_USAGE", "EXIT_DATA", "EXIT_NUMERICAL"]

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
SCHEMA = "report-1.0.json"

MEANINGS = {
    "U": "the standardised directions are not uniformly spread over the sphere",
    "I": "the radius and the direction of the standardised observations are not independent",
    "R": "the radius does not follow the law implied by the null family",
}

NUMERICAL_ERRORS = (ConvergenceError, SupportError, ScalingError, ConstantsError,
                    MomentConsistencyError, BasisConstructionError, np.linalg.LinAlgError,
                    FloatingPointError)


class DataError(ValueError):
    """Input data cannot be used (bad CSV, too few rows, degenerate)."""


class UsageError(ValueError):
    pass


# -- data ------------------------------------------------------------------

def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_csv(path):
    """Read a numeric CSV file.

    A single header row is recognised when any cell of the first non-empty
    row is not a number.

    Returns
    -------
    data : ndarray (n, m)
    header : list of str or None

    Raises
    ------
    DataError
        On ragged rows or non-numeric cells, with the line and column.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            cells = [c.strip() for c in row]
            if not any(cells):
                continue
            rows.append((line_no, cells))
    if not rows:
        raise DataError("%s contains no data" % path)
    header = None
    if not all(_is_number(c) for c in rows[0][1]):
        header = rows[0][1]
        rows = rows[1:]
    if not rows:
        raise DataError("%s has a header but no data rows" % path)
    width = len(header) if header is not None else len(rows[0][1])
    out = np.empty((len(rows), width))
    for r, (line_no, cells) in enumerate(rows):
        if len(cells) != width:
            raise DataError("line %d has %d fields, expected %d" % (line_no, len(cells), width))
        for c, cell in enumerate(cells):
            try:
                out[r, c] = float(cell)
            except ValueError:
                raise DataError("line %d, column %d: %r is not a number"
                                % (line_no, c + 1, cell)) from None
            if not math.isfinite(out[r, c]):
                raise DataError("line %d, column %d: non-finite value" % (line_no, c + 1))
    return out, header


def write_csv(path, data, header=None):
    """Write rows with 17 significant digits so that reading back is exact."""
    data = np.atleast_2d(data)
    header = header or ["x%d" % (i + 1) for i in range(data.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in data:
            w.writerow(["%.17g" % v for v in row])


def marks_path():
    return resources.files("ellipgof").joinpath("data", "marks.csv")


def load_marks():
    """The bundled 88 x 3 examination marks (vectors, algebra, statistics)."""
    with resources.as_file(marks_path()) as p:
        return read_csv(str(p))[0]


# -- reports ---------------------------------------------------------------

def _clean(obj):
    # JSON has no NaN; numpy scalars become Python numbers
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if not math.isfinite(obj) else float(obj)
    return obj


def build_report(result, family, alpha=0.05, seed=None, replicates=None, input_name="",
                 d_n=None):
    """JSON-ready report of a test run with the per-component diagnosis.

    A component is flagged when its p-value is at most ``alpha``; the Monte
    Carlo p-value is used when present, otherwise the asymptotic one.
    """
    d = result.to_dict()
    diagnosis = []
    for comp in ("U", "I", "R"):
        name = comp + "_s"
        stat = getattr(result, name)
        if not math.isfinite(stat):
            name, stat = comp, getattr(result, comp)
        if result.p_montecarlo and name in result.p_montecarlo:
            p, src = result.p_montecarlo[name], "montecarlo"
        else:
            p, src = result.p_asymptotic.get(name), "asymptotic"
        diagnosis.append({"component": comp, "statistic": stat, "p_value": p,
                          "p_source": src, "flagged": bool(p is not None and p <= alpha),
                          "meaning": MEANINGS[comp]})
    d.update(schema_version="1.0", family_alpha=getattr(family, "alpha", None),
             seed=seed, replicates=replicates, alpha=alpha, diagnosis=diagnosis,
             input=input_name, d_n=d_n, version=__version__, backend=BACKEND)
    return _clean(d)


def load_schema():
    return json.loads(resources.files("ellipgof").joinpath("schemas", SCHEMA).read_text())


def validate_report(report):
    """Raise ``jsonschema.ValidationError`` if the report breaks the schema."""
    import jsonschema

    jsonschema.validate(report, load_schema())


def _emit(obj, out):
    text = json.dumps(obj, indent=2, sort_keys=False)
    if out in (None, "-"):
        sys.stdout.write(text + "\n")
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


# -- commands --------------------------------------------------------------

def _family(args, m):
    alpha = getattr(args, "shape", None)
    if args.family == "pearson2":
        return get_family("pearson2", m, 2.0 if alpha is None else alpha)
    return get_family(args.family, m)


def cmd_test(args):
    if args.marks == (args.input is not None):
        raise UsageError("give exactly one of --input and --marks")
    if args.data_driven is None and args.K is None:
        args.K = 5
    if args.data_driven is not None and args.K is not None:
        raise UsageError("--K and --data-driven are mutually exclusive")
    if args.marks:
        x, name = load_marks(), "marks"
    else:
        x, name = read_csv(args.input)[0], args.input
    n, m = x.shape
    if n <= m:
        raise DataError("need more rows than columns, got n=%d, m=%d" % (n, m))
    fam = _family(args, m)
    d_n = args.data_driven
    if d_n is not None:
        if d_n < fam.k_min:
            raise UsageError("d(n)=%d is below k_min=%d" % (d_n, fam.k_min))
        dec = Decomposer(fam, d_n, ddof=args.ddof)
        K_hat, res = select_K(x, fam, d_n, dec)
    else:
        if args.K < fam.k_min:
            raise UsageError("K=%d is below k_min=%d for %s" % (args.K, fam.k_min, fam.name))
        res = Decomposer(fam, args.K, ddof=args.ddof)(x)
    table, seed, reps = None, None, None
    if args.table:
        table = NullTable.load(args.table)
        seed, reps = table.seed, table.B
    elif args.reps:
        seed, reps = args.seed, args.reps
        K_tab = fam.k_min if d_n is not None else res.K
        table = build_null_tables(fam, n, [K_tab], reps, seed, args.workers, d_n=d_n,
                                  ddof=args.ddof)[K_tab]
    if table is not None:
        if d_n is not None:
            k = table.key
            if (k.get("d_n") != d_n or k["family"] != fam.name or k["m"] != m
                    or k["n"] != n):
                raise ConfigurationError("null table %r does not match family=%s, m=%d, n=%d, "
                                         "d_n=%d" % (k, fam.name, m, n, d_n))
            obs = dict(res.statistics(), Q_Khat=res.Q)
            res.p_montecarlo = mc_pvalue(table, obs, ["Q_Khat"])
        else:
            if not table.matches(res) or table.key.get("ddof", 1) != args.ddof:
                raise ConfigurationError("null table %r does not match family=%s, m=%d, n=%d, K=%d"
                                         % (table.key, res.family, res.m, res.n, res.K))
            res.p_montecarlo = mc_pvalue(table, res)
    report = build_report(res, fam, args.alpha, seed, reps, name, d_n)
    if d_n is not None:
        report["p_chi2_m"] = _clean(res.extra.get("p_chi2_m"))
    validate_report(report)
    _emit(report, args.out)
    return EXIT_OK


def cmd_mc_table(args):
    fam = _family(args, args.m)
    tables = build_null_tables(fam, args.n, [args.K], args.reps, args.seed, args.workers,
                               d_n=args.d_n, ddof=args.ddof)
    tables[args.K].save(args.out)
    sys.stdout.write("wrote %s (%d replicates, %d redraws)\n"
                     % (args.out, args.reps, tables[args.K].metadata["redraws"]))
    return EXIT_OK


def cmd_power_study(args):
    from .harness import PowerStudyConfig, format_table, run_power_study

    try:
        cfg = PowerStudyConfig.from_json(args.config)
    except (TypeError, KeyError) as exc:
        raise UsageError("bad study configuration: %s" % exc) from None
    if args.workers is not None:
        cfg.workers = args.workers
    if args.full_scale:
        cfg = PowerStudyConfig(**dict(cfg.to_dict(), full_scale=True))
    pm = run_power_study(cfg)
    pm.save(args.out)
    sys.stdout.write(format_table(pm) + "\n")
    return EXIT_OK


def cmd_simulate(args):
    if (args.alt is None) == (args.family is None):
        raise UsageError("give exactly one of --alt and --family")
    if args.alt is not None:
        params = json.loads(args.params) if args.params else {}
        x = sample_alternative(AlternativeSpec(args.alt, params), args.n, seed=args.seed)
    else:
        x = sample_null(_family(args, args.m), args.n, seed=args.seed)
    write_csv(args.out, x)
    return EXIT_OK


def cmd_basis_dump(args):
    fam = _family(args, args.m)
    basis = build_basis(fam, args.K)
    out = {"family": fam.name, "m": fam.m, "K": basis.K, "k_min": basis.k_min,
           "variable": "y = r u", "radial_variable": "t = r^2",
           "count": basis.p, "entries": basis.describe()}
    _emit(_clean(out), args.out)
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def _add_family(p, with_m=True):
    p.add_argument("--family", choices=sorted(FAMILIES), default="mvn")
    p.add_argument("--shape", type=float, default=None,
                   help="Pearson type II shape parameter (default 2)")
    if with_m:
        p.add_argument("--m", type=int, required=True)


def build_parser():
    parser = argparse.ArgumentParser(prog="ellipgof", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="test a CSV dataset")
    p.add_argument("--input")
    p.add_argument("--marks", action="store_true", help="use the bundled marks dataset")
    _add_family(p, with_m=False)
    p.add_argument("--K", type=int)
    p.add_argument("--data-driven", type=int, metavar="D_N", help="select K up to d(n)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--ddof", type=int, default=1)
    p.add_argument("--table", help="null table built by mc-table")
    p.add_argument("--reps", type=int, help="build a null table with this many replicates")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("mc-table", help="build a Monte Carlo null table")
    _add_family(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--reps", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--d-n", type=int)
    p.add_argument("--ddof", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mc_table)

    p = sub.add_parser("power-study", help="run a power study from a JSON configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int)
    p.add_argument("--full-scale", action="store_true")
    p.set_defaults(func=cmd_power_study)

    p = sub.add_parser("simulate", help="draw a dataset")
    p.add_argument("--alt", choices=ALTERNATIVES)
    p.add_argument("--params", help="JSON object of alternative parameters")
    p.add_argument("--family", choices=sorted(FAMILIES))
    p.add_argument("--shape", type=float)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("basis", help="basis utilities")
    bsub = p.add_subparsers(dest="basis_command", required=True)
    q = bsub.add_parser("dump", help="JSON description of the retained basis")
    _add_family(q)
    q.add_argument("--K", type=int, required=True)
    q.add_argument("--out")
    q.set_defaults(func=cmd_basis_dump)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigurationError) as exc:
        sys.stderr.write("usage error: %s\n" % exc)
        return EXIT_USAGE
    except (DataError, DegenerateDataError, OSError, json.JSONDecodeError) as exc:
        sys.stderr.write("data error: %s\n" % exc)
        return EXIT_DATA
    except NUMERICAL_ERRORS as exc:
        sys.stderr.write("numerical error: %s\n" % exc)
        return EXIT_NUMERICAL
    except ValueError as exc:
        sys.stderr.write("usage error: %s\n" % exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
