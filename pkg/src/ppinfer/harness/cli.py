"""Command-line interface: ``ppinfer <subcommand> [options]``.

Exit codes: 0 on success, 1 on invalid input (bad flags, unreadable or
malformed files, out-of-domain parameters), 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys

from ..ci_core import Interval
from ..datasets import EstimandSpec, load_labeled, load_unlabeled, parse_schema
from ..errors import ConvergenceError, NumericalError, PPIError
from ..estimators import (
    GridSpec,
    logistic_gradient,
    ols_gradient,
    pinball_gradient,
    poisson_gradient,
    pp_convex,
    squared_gradient,
)
from ..extras import NullSpec, odds_ratio_interval, pp_p_value
from ..finite_pop import fp_pp_mean, fp_pp_ols, fp_pp_quantile, fp_risk_min, load_population
from ..nonasymptotic import BudgetSplit
from ..riskmin import SplitPlan, mode_loss, pp_risk_min, tukey_loss
from ..shift import WeightFunction, label_shift_interval, pp_convex_covshift
from .analysis import emit_analysis, run_analysis
from .power import power_check
from .report import FORMATS, emit_report, write_report
from .sim import GENERATORS, SimScenario, coverage_sim

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; those are input errors here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _axis(text: str) -> tuple:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"grid axis must be LOW:HIGH:POINTS, got {text!r}")
    try:
        return float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid axis must be LOW:HIGH:POINTS, got {text!r}") from None


def _grid(args):
    return GridSpec(axes=tuple(args.grid)) if args.grid else None


# ---------------------------------------------------------------- output


def _interval_bytes(rows, fmt: str) -> bytes:
    """Serialize (label, Interval) pairs."""
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("label", "lower", "upper", "width", "level", "empty"))
        for label, iv in rows:
            w.writerow((label, repr(iv.lower), repr(iv.upper), repr(iv.width), repr(iv.level), int(iv.empty)))
        return buf.getvalue().encode()
    lines = []
    for label, iv in rows:
        extra = "  (empty set)" if iv.empty else ""
        lines.append(f"{label}: ({iv.lower:.6g}, {iv.upper:.6g})  width {iv.width:.6g}  level {iv.level:.4g}{extra}")
    return ("\n".join(lines) + "\n").encode()


def _set_rows(gs, prefix="theta"):
    return [(f"{prefix}[{j}]", gs.interval(j)) for j in range(gs.grid.dim)]


def _no_plotdata(args):
    if args.format == "plotdata":
        raise _UsageError("plotdata output is only available for 'simulate'")


class _UsageError(Exception):
    pass


# ---------------------------------------------------------------- subcommands


def _estimand(args, kind, **extra) -> EstimandSpec:
    return EstimandSpec(kind, alpha=args.alpha, delta=args.delta, **extra)


def _data(args):
    if not args.labeled or not args.unlabeled:
        raise _UsageError("--labeled and --unlabeled are required")
    schema = parse_schema(args.schema)
    return load_labeled(args.labeled, schema), load_unlabeled(args.unlabeled, schema)


def cmd_analysis(args) -> bytes:
    _no_plotdata(args)
    if not args.labeled or not args.unlabeled:
        raise _UsageError("--labeled and --unlabeled are required")
    extra = {}
    if args.command == "quantile":
        extra["q"] = args.q
    if args.command in ("ols", "logistic", "poisson"):
        extra["coordinate"] = args.coordinate
    if args.bound is not None:
        extra["bounds"] = args.bound
    report = run_analysis(args.labeled, args.unlabeled, _estimand(args, args.command, **extra),
                          parse_schema(args.schema), args.nonasymptotic)
    return emit_analysis(report, args.format)


_GRADIENTS = {
    "squared": lambda a, d: squared_gradient(),
    "pinball": lambda a, d: pinball_gradient(a.q),
    "logistic": lambda a, d: logistic_gradient(d),
    "poisson": lambda a, d: poisson_gradient(d),
    "ols": lambda a, d: ols_gradient(d),
}


def cmd_convex(args) -> bytes:
    _no_plotdata(args)
    lab, unl = _data(args)
    grad = _GRADIENTS[args.loss](args, lab.d)
    return _interval_bytes(_set_rows(pp_convex(lab, unl, grad, args.alpha, _grid(args))), args.format)


def cmd_covshift(args) -> bytes:
    _no_plotdata(args)
    lab, unl = _data(args)
    grid = _grid(args)
    if grid is None:
        raise _UsageError("covshift needs --grid LOW:HIGH:POINTS")
    column, table = args.weights
    grad = _GRADIENTS[args.loss](args, lab.d)
    gs = pp_convex_covshift(lab, unl, grad, WeightFunction.by_group(column, table), args.alpha, grid,
                            unlabeled_from=args.unlabeled_from)
    return _interval_bytes(_set_rows(gs), args.format)


def _weights(text: str):
    """``COL:VALUE=W,VALUE=W`` -> (column index, {value: weight})."""
    try:
        col, _, rest = text.partition(":")
        table = {}
        for item in rest.split(","):
            k, _, v = item.partition("=")
            table[float(k)] = float(v)
        return int(col), table
    except ValueError:
        raise argparse.ArgumentTypeError(f"weights must look like 0:0=0.4,1=1.6, got {text!r}") from None


def cmd_riskmin(args) -> bytes:
    _no_plotdata(args)
    lab, unl = _data(args)
    loss = mode_loss(args.eta) if args.loss == "mode" else tukey_loss(args.c)
    res = pp_risk_min(lab, unl, loss, BudgetSplit(args.alpha, args.delta), SplitPlan.shuffled(unl.N, args.seed))
    rows = _set_rows(res.set)
    text = _interval_bytes(rows, args.format)
    if args.format == "text":
        text += (f"theta~: {res.theta_tilde[0]:.6g}  retained {int(res.set.mask.sum())} of {res.set.grid.size}"
                 f"  hoeffding {res.hoeffding:.6g}  seed {res.seed}\n").encode()
    return text


def cmd_labelshift(args) -> bytes:
    _no_plotdata(args)
    lab, unl = _data(args)
    res = label_shift_interval(lab, unl, args.nu, BudgetSplit(args.alpha, args.delta),
                               proof_faithful=args.proof_faithful)
    out = _interval_bytes([("nu'Q_Y", res.interval)], args.format)
    if args.format == "text":
        out += (f"centre {res.center:.6g}  confusion slack {res.confusion_slack:.6g}"
                f"  frequency slack {res.frequency_slack:.6g}\n").encode()
    return out


def cmd_finitepop(args) -> bytes:
    _no_plotdata(args)
    if not args.population:
        raise _UsageError("--population is required")
    pop = load_population(args.population, args.manifest, parse_schema(args.schema))
    if args.estimand == "mean":
        rows = [("mean", fp_pp_mean(pop, args.alpha, args.method, args.bound, args.seed))]
    elif args.estimand == "quantile":
        rows = _set_rows(fp_pp_quantile(pop, args.q, args.alpha, _grid(args), args.method, args.seed))
    elif args.estimand == "ols":
        rows = [(f"theta[{j}]", iv) for j, iv in enumerate(fp_pp_ols(pop, args.alpha, args.method, args.bound,
                                                                     args.seed))]
    else:
        loss = mode_loss(args.eta) if args.estimand == "mode" else tukey_loss(args.c)
        rows = _set_rows(fp_risk_min(pop, loss, args.alpha, args.method, args.seed).set)
    return _interval_bytes(rows, args.format)


def _null(text: str) -> NullSpec:
    kind, _, rest = text.partition(":")
    try:
        if kind == "set":
            return NullSpec("set", values=tuple(_float_list(rest)))
        return NullSpec(kind, float(rest))
    except (ValueError, argparse.ArgumentTypeError):
        raise argparse.ArgumentTypeError(f"null must be point:V, le:V, ge:V or set:V1,V2; got {text!r}") from None


def cmd_pvalue(args) -> bytes:
    _no_plotdata(args)
    lab, unl = _data(args)
    extra = {"q": args.q} if args.estimand == "quantile" else {}
    spec = EstimandSpec(args.estimand, alpha=args.alpha, coordinate=args.coordinate, **extra)
    pv = pp_p_value(spec, lab, unl, args.null)
    if args.format == "csv":
        return f"p_value,method,tolerance\n{pv.value!r},{pv.method},{pv.tolerance!r}\n".encode()
    tol = f" (bisection tolerance {pv.tolerance:g})" if pv.tolerance else ""
    return f"p-value: {pv.value:.6g}{tol}\n".encode()


def cmd_oddsratio(args) -> bytes:
    _no_plotdata(args)
    level = 1.0 - args.alpha / 2.0
    ivs = []
    for name, vals in (("mu0", args.mu0), ("mu1", args.mu1)):
        if len(vals) != 2:
            raise _UsageError(f"--{name} needs LOWER,UPPER")
        ivs.append(Interval(vals[0], vals[1], level))
    return _interval_bytes([("odds ratio", odds_ratio_interval(*ivs))], args.format)


def _generator(args):
    cls = GENERATORS[args.generator]
    params = {}
    for item in args.param or ():
        k, sep, v = item.partition("=")
        if not sep:
            raise _UsageError(f"--param must be NAME=VALUE, got {item!r}")
        params[k] = float(v)
    try:
        return cls(**params)
    except TypeError:
        raise _UsageError(f"generator {args.generator!r} accepts {tuple(cls.__dataclass_fields__)}") from None


def cmd_simulate(args) -> bytes:
    extra = {"q": args.q} if args.estimand == "quantile" else {}
    scenario = SimScenario(_generator(args), args.n, args.N, args.trials, args.seed,
                           _estimand(args, args.estimand, **extra), args.nonasymptotic)
    return emit_report(coverage_sim(scenario, workers=args.workers), args.format, timing=args.timing)


def cmd_power(args) -> bytes:
    _no_plotdata(args)
    res = power_check(args.p, args.eta)
    if args.format == "csv":
        return (f"p,eta,threshold,pp_beats_classical\n{args.p!r},{args.eta!r},{res.threshold!r},"
                f"{int(res.pp_beats_classical)}\n").encode()
    verdict = "beats" if res.pp_beats_classical else "does not beat"
    return (f"threshold eta* = {res.threshold:.6g}; at eta = {args.eta:g} prediction-powered inference "
            f"{verdict} classical (Var(f-Y) {res.rectifier_variance:.6g} vs Var(Y) {res.outcome_variance:.6g})\n"
            ).encode()


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--alpha", type=float, default=0.1, help="error level (default 0.1)")
    common.add_argument("--delta", type=float, default=None, help="rectifier budget for nonasymptotic methods")
    common.add_argument("--labeled", help="labeled CSV (outcome, prediction, features)")
    common.add_argument("--unlabeled", help="unlabeled CSV (prediction, features)")
    common.add_argument("--schema", help="column names, e.g. y=label,yhat=score,features=a;b")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--format", choices=FORMATS, default="text")
    common.add_argument("--nonasymptotic", action="store_true", help="use betting-based finite-sample intervals")
    common.add_argument("--output", "-o", default=None, help="write to this file instead of stdout")

    parser = _Parser(prog="ppinfer", description="Prediction-powered confidence intervals and p-values.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        return p

    add("mean", cmd_analysis, "mean of the outcome").add_argument("--bound", type=float, help="B with Y, f in [0, B]")
    p = add("quantile", cmd_analysis, "quantile of the outcome")
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--bound", type=float, help=argparse.SUPPRESS)
    for name in ("logistic", "poisson", "ols"):
        p = add(name, cmd_analysis, f"{name} regression coefficients")
        p.add_argument("--coordinate", type=int, default=0)
        p.add_argument("--bound", type=_float_list, help="feature bounds for nonasymptotic logistic")

    p = add("convex", cmd_convex, "minimizer of a convex loss on a grid")
    p.add_argument("--loss", choices=sorted(_GRADIENTS), default="squared")
    p.add_argument("--q", type=float, default=0.5)
    p.add_argument("--grid", type=_axis, action="append", help="LOW:HIGH:POINTS, once per coordinate")

    p = add("riskmin", cmd_riskmin, "minimizer of a bounded nonconvex loss")
    p.add_argument("--loss", choices=("mode", "tukey"), default="mode")
    p.add_argument("--eta", type=float, default=None, help="mode neighbourhood width (omit for discrete data)")
    p.add_argument("--c", type=float, default=4.685, help="Tukey scale")

    p = add("covshift", cmd_covshift, "convex estimand under covariate shift")
    p.add_argument("--weights", type=_weights, required=True, help="COL:VALUE=W,... density ratio by group")
    p.add_argument("--grid", type=_axis, action="append")
    p.add_argument("--loss", choices=sorted(_GRADIENTS), default="squared")
    p.add_argument("--q", type=float, default=0.5)
    p.add_argument("--unlabeled-from", choices=("target", "source"), default="target")

    p = add("labelshift", cmd_labelshift, "nu'Q_Y under label shift")
    p.add_argument("--nu", type=_float_list, required=True, help="comma-separated nu(1),...,nu(K)")
    p.add_argument("--proof-faithful", action="store_true")

    p = add("finitepop", cmd_finitepop, "finite-population estimands")
    p.add_argument("--population", help="population CSV; blank outcomes mark unlabeled rows")
    p.add_argument("--manifest", help="CSV with an 'index' column of labeled rows (0-based)")
    p.add_argument("--estimand", choices=("mean", "quantile", "ols", "mode", "tukey"), default="mean")
    p.add_argument("--method", choices=("clt", "wsr"), default="clt")
    p.add_argument("--bound", type=float)
    p.add_argument("--q", type=float, default=0.5)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--c", type=float, default=4.685)
    p.add_argument("--grid", type=_axis, action="append")

    p = add("pvalue", cmd_pvalue, "p-value by inverting confidence sets")
    p.add_argument("--estimand", choices=("mean", "quantile", "logistic", "ols"), default="mean")
    p.add_argument("--null", type=_null, required=True, help="point:V, le:V, ge:V or set:V1,V2")
    p.add_argument("--q", type=float, default=0.5)
    p.add_argument("--coordinate", type=int, default=None)

    p = add("oddsratio", cmd_oddsratio, "odds ratio from intervals on two means (each at 1 - alpha/2)")
    p.add_argument("--mu0", type=_float_list, required=True, help="LOWER,UPPER")
    p.add_argument("--mu1", type=_float_list, required=True, help="LOWER,UPPER")

    p = add("simulate", cmd_simulate, "Monte Carlo coverage and width")
    p.add_argument("--generator", choices=sorted(GENERATORS), default="gaussian")
    p.add_argument("--param", action="append", help="generator parameter NAME=VALUE (repeatable)")
    p.add_argument("--estimand", choices=("mean", "quantile"), default="mean")
    p.add_argument("--q", type=float, default=0.5)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--N", type=int, default=10000)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="include wall time in text output")

    p = add("power", cmd_power, "when predictions beat the classical interval (binary outcome)")
    p.add_argument("--p", type=float, required=True, help="outcome rate")
    p.add_argument("--eta", type=float, default=0.0, help="model error rate")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        data = args.func(args)
        write_report(data, args.output)
    except (NumericalError, ConvergenceError) as err:
        print(f"ppinfer {args.command}: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (PPIError, _UsageError, OSError) as err:
        print(f"ppinfer {args.command}: {err}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
