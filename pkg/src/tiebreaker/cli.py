"""Command-line front end.

Subcommands: ``bounds``, ``solve``, ``sweep``, ``discrete`` and ``verify``.
Results go to stdout (or ``--out``) as JSON, sweeps as CSV.  Failures print
``{"code", "message", "context"}`` JSON on stderr and exit non-zero:
2 for infeasible constraints, 3 for unreadable or malformed input files,
1 otherwise.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys

import numpy as np

from . import __version__
from .constraints import constraints, xz_max
from .criteria import inverse_efficiency, parse_criterion
from .design import DesignFunction, constant, generalized_rdd, moments, three_level
from .dist import from_sample, load_sample, parse_distribution
from .errors import DataFormatError, InfeasibleConstraintsError, TiebreakerError, ValidationError
from .solve_continuous import CSV_COLUMNS, canonical_form, optimal_design, record_row, three_level_width, tradeoff_sweep
from .solve_discrete import assignment_probabilities
from .verify import SimConfig, simulate_variance

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_FILE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def fmt(v) -> str:
    """Round-trippable text for one CSV cell."""
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return format(float(v) + 0.0, ".17g")  # + 0.0 turns -0.0 into 0.0
    return str(v)


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


# -- argument handling ------------------------------------------------------------------


def _add_dist(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--dist", help="uniform | weibull[:shape,scale] | gaussian[:sd]")
    g.add_argument("--data", metavar="PATH", help="file with one running-variable value per line")


def _add_gain(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--delta", type=float, help="normalised short-term gain in [0, 1]")
    g.add_argument("--xz", type=float, help="raw short-term gain E(xz)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tiebreaker", description="Optimal tie-breaker designs for the two-line model.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("bounds", help="largest attainable short-term gain")
    _add_dist(p)
    p.add_argument("--z", type=float, required=True, help="treatment-fraction parameter in (-1, 1)")
    p.add_argument("--out")

    for name, helptext in (("solve", "optimal design for one constraint pair"),
                           ("discrete", "optimal design on an empirical sample")):
        p = sub.add_parser(name, help=helptext)
        if name == "solve":
            _add_dist(p)
        else:
            p.add_argument("--data", required=True, metavar="PATH")
            p.add_argument("--probabilities", metavar="PATH", help="write per-subject (x, p) CSV here")
        p.add_argument("--z", type=float, required=True)
        _add_gain(p)
        p.add_argument("--criterion", default="eff", help="eff | d | custom:<expr>")
        p.add_argument("--monotone", action="store_true")
        p.add_argument("--canonical", action="store_true", help="return the canonical form instead of the blend")
        p.add_argument("--out")

    p = sub.add_parser("sweep", help="efficiency versus gain trade-off as CSV")
    _add_dist(p)
    p.add_argument("--z", type=float, required=True)
    p.add_argument("--grid", type=int, default=101, help="number of gain values in [0, 1] (>= 2)")
    p.add_argument("--criterion", default="eff")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: TIEBREAKER_THREADS or 1)")
    p.add_argument("--out")

    p = sub.add_parser("verify", help="Monte Carlo check of a design's interaction variance")
    _add_dist(p)
    p.add_argument("--design", default="optimal",
                   choices=("rct", "rdd", "three_level", "optimal", "optimal_monotone"))
    p.add_argument("--z", type=float, required=True)
    p.add_argument("--delta", type=float)
    p.add_argument("--xz", type=float)
    p.add_argument("--width", type=float, help="three-level width (instead of a gain)")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--reps", type=int, default=2_000)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--criterion", default="eff")
    p.add_argument("--out")
    return parser


def _distribution(args):
    if getattr(args, "data", None):
        return from_sample(load_sample(args.data))
    return parse_distribution(args.dist)


def _emit(text: str, out: str | None, stdout) -> None:
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        stdout.write(text)


# -- commands ------------------------------------------------------------------------------


def design_summary(p: DesignFunction) -> dict:
    """Named parameters for the common shapes."""
    b, lv = p.breakpoints, p.levels
    if len(b) == 1:
        out = {"shape": "two_level", "l": lv[0], "t": b[0], "u": lv[1]}
        if b[0] in p.atoms:
            out["eps"] = p.atoms[b[0]]
        return out
    if not b:
        return {"shape": "constant", "theta": lv[0]}
    return {"shape": f"{len(lv)}_level", "breakpoints": list(b), "levels": list(lv)}


def _solve_payload(dist, args) -> dict:
    spec = parse_criterion(args.criterion)
    c = constraints(dist, args.z, delta=args.delta, xz=args.xz)
    res = optimal_design(dist, c, spec, monotone=args.monotone)
    design, form = res.design, res.form
    if args.canonical:
        design, form = canonical_form(dist, c, res.selected_x2z, args.monotone), "canonical"
    m = moments(design, dist)
    ex2 = dist.second_moment
    return {
        "distribution": dist.describe(),
        "constraints": c.as_dict(),
        "criterion": {"name": spec.name, "expr": spec.expr},
        "monotone": args.monotone,
        "form": form,
        "design": design.to_dict(),
        "summary": design_summary(design),
        "selected_x2z": res.selected_x2z,
        "attainable_x2z": list(res.interval),
        "lambda": res.lam,
        "criterion_value": spec(m.ez, m.exz, m.ex2z, ex2),
        "eff_inv": inverse_efficiency(m.ez, m.exz, m.ex2z, ex2),
        "moments": dict(m._asdict()),
        "residuals": {"ez": abs(m.ez - c.z_tilde), "exz": abs(m.exz - c.xz)},
    }


def cmd_bounds(args, stdout):
    dist = _distribution(args)
    upper = xz_max(dist, args.z)
    _emit(dumps({"z_tilde": args.z, "xz_max": upper, "distribution": dist.describe()}), args.out, stdout)


def cmd_solve(args, stdout):
    _emit(dumps(_solve_payload(_distribution(args), args)), args.out, stdout)


def cmd_discrete(args, stdout):
    raw = load_sample(args.data)
    dist = from_sample(raw)
    payload = _solve_payload(dist, args)
    payload["centering_shift"] = dist.centering_shift
    if args.probabilities:
        design = DesignFunction.from_dict(payload["design"])
        probs = assignment_probabilities(design, dist, raw)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "p"])
        for x, p in zip(raw, probs):
            w.writerow([fmt(x), fmt(p)])
        with open(args.probabilities, "w", newline="") as fh:
            fh.write(buf.getvalue())
    _emit(dumps(payload), args.out, stdout)


def cmd_sweep(args, stdout):
    if args.grid < 2:
        raise ValidationError(f"grid size must be at least 2, got {args.grid}")
    dist = _distribution(args)
    spec = parse_criterion(args.criterion)
    records = tradeoff_sweep(dist, args.z, np.linspace(0.0, 1.0, args.grid), spec, workers=args.threads)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in records:
        row = record_row(rec)
        w.writerow([fmt(row[k]) for k in CSV_COLUMNS])
    _emit(buf.getvalue(), args.out, stdout)


def _verify_design(dist, args):
    z = args.z
    if args.design == "rct":
        return constant((1 + z) / 2).with_label("rct")
    if args.design == "rdd":
        return generalized_rdd(z, dist).with_label("rdd")
    if args.design == "three_level" and args.width is not None:
        return three_level(z, args.width, dist).with_label("three_level")
    if args.delta is None and args.xz is None:
        raise ValidationError(f"design {args.design!r} needs --delta or --xz")
    c = constraints(dist, z, delta=args.delta, xz=args.xz)
    if args.design == "three_level":
        width = three_level_width(dist, z, c.xz)
        if width is None:
            raise InfeasibleConstraintsError(
                "no three-level design attains this gain", bounds={"xz": [0.0, c.xz_upper]}
            )
        return three_level(z, width, dist).with_label("three_level")
    spec = parse_criterion(args.criterion)
    res = optimal_design(dist, c, spec, monotone=args.design == "optimal_monotone")
    return res.design.with_label(args.design)


def cmd_verify(args, stdout):
    dist = _distribution(args)
    if not -1 < args.z < 1:
        raise InfeasibleConstraintsError(f"treatment-fraction parameter {args.z} outside (-1, 1)",
                                         bounds={"z_tilde": [-1, 1]})
    design = _verify_design(dist, args)
    cfg = SimConfig(n=args.n, reps=args.reps, seed=args.seed, noise_sd=args.noise_sd)
    result = simulate_variance(dist, design, cfg)
    _emit(dumps(result.as_dict()), args.out, stdout)


COMMANDS = {
    "bounds": cmd_bounds,
    "solve": cmd_solve,
    "discrete": cmd_discrete,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
}


def _fail(stderr, code: str, message: str, context: dict, status: int) -> int:
    stderr.write(dumps({"code": code, "message": message, "context": context}))
    return status


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args, stdout)
    except UsageError as exc:
        return _fail(stderr, "usage", str(exc), {}, EXIT_ERROR)
    except InfeasibleConstraintsError as exc:
        return _fail(stderr, exc.code, exc.message, exc.context, EXIT_INFEASIBLE)
    except DataFormatError as exc:
        return _fail(stderr, exc.code, exc.message, exc.context, EXIT_FILE)
    except OSError as exc:
        return _fail(stderr, "file", str(exc), {"path": getattr(exc, "filename", None)}, EXIT_FILE)
    except TiebreakerError as exc:
        return _fail(stderr, exc.code, exc.message, exc.context, EXIT_ERROR)
    return EXIT_OK


def entry() -> None:
    sys.exit(main())
