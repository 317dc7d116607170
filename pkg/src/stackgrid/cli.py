"""Command-line interface.

Exit codes: 0 success, 2 a required condition does not hold, 64 bad input or
usage, 65 solver failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import (
    PredictionSetting,
    check_perfect_se,
    check_prediction_condition,
    perfect_se,
    prediction_report,
    table2_sweep,
)
from .errors import (
    ConditionViolation,
    InfeasibleBounds,
    InputError,
    MaxIterExceeded,
    NonpositiveTildeW,
)
from .io import (
    atomic_write,
    fmt,
    load_inputs,
    read_report,
    report_document,
    series_csv,
    verify_document,
    write_report,
    write_scenario,
    write_users,
)
from .leader import DEFAULT_INIT_FLOOR, default_eps, numeric_se
from .synth import KINDS, household_instance, synth_scenario

EXIT_OK = 0
EXIT_CONDITION = 2
EXIT_USAGE = 64
EXIT_SOLVER = 65


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not (v > 0 and np.isfinite(v)):
        raise argparse.ArgumentTypeError(f"{text!r} must be a positive number")
    return v


def _finite_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not np.isfinite(v):
        raise argparse.ArgumentTypeError(f"{text!r} must be finite")
    return v


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if v <= 0:
        raise argparse.ArgumentTypeError(f"{text!r} must be a positive integer")
    return v


def _print(*lines):
    for line in lines:
        sys.stdout.write(line + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_check(args) -> int:
    scenario, users, _, _ = load_inputs(args.scenario, args.users)
    cond = check_perfect_se(scenario, users)
    _print(f"slots T={scenario.T}  users n={users.n}  g_N={fmt(users.g_N)}", cond.render())
    code = EXIT_OK if cond.satisfied else EXIT_CONDITION
    if args.prediction is not None:
        setting = PredictionSetting(args.prediction)
        pc = check_prediction_condition(scenario, users, setting)
        _print(f"forecast b={fmt(args.prediction)}  delta={fmt(setting.delta(scenario))}", pc.render())
        if not pc.satisfied:
            code = EXIT_CONDITION
    return code


def _parameters(args, **extra):
    keys = ("mode", "eps", "eps_step", "max_iter", "random_init", "seed", "init_floor", "prediction")
    out = {k: getattr(args, k) for k in keys if hasattr(args, k)}
    out.update(extra)
    return out


def _emit(args, doc, scenario, report, prefix):
    paths = write_report(args.out, doc, series_csv(report, scenario))
    if getattr(args, "plot", False):
        from .plotting import plot_report

        base = Path(args.out)
        paths += plot_report(doc, base.with_suffix(".png"), base.with_name(base.stem + "_trace.png"))
    _print(*prefix, *(f"wrote {p}" for p in paths))


def cmd_solve(args) -> int:
    scenario, users, _, digests = load_inputs(args.scenario, args.users)
    cond = check_perfect_se(scenario, users)
    mode = args.mode
    if mode == "auto":
        mode = "analytic" if cond.satisfied else "numeric"
    if mode == "analytic":
        if not cond.satisfied:
            _print(cond.render())
            return EXIT_CONDITION
        report = perfect_se(scenario, users, seed=args.seed or 0)
        params = _parameters(args, resolved_mode="analytic")
    else:
        eps = args.eps if args.eps is not None else default_eps(scenario, users)
        try:
            report = numeric_se(scenario, users, eps, eps_step=args.eps_step,
                                max_outer=args.max_iter, random_init=args.random_init,
                                seed=args.seed, init_floor=args.init_floor)
        except MaxIterExceeded as exc:
            trace = exc.trace
            sys.stderr.write(f"solver failure: {exc}\n")
            if trace is not None:
                dump = {"iterations": trace.iterations, "errors": trace.errors,
                        "costs": trace.costs, "steps": trace.steps,
                        "final_rt": None if trace.final_rt is None else list(trace.final_rt)}
                path = Path(args.out).with_name(Path(args.out).stem + "_failed_trace.json")
                atomic_write(path, json.dumps(dump, indent=2) + "\n")
                sys.stderr.write(f"trace written to {path}\n")
            return EXIT_SOLVER
        params = _parameters(args, resolved_mode="numeric", eps=eps, inner_tol=1e-8)
    doc = report_document(report, scenario, users, game="box", parameters=params, digests=digests)
    _emit(args, doc, scenario, report, [
        f"method       {report.method}",
        f"leader cost  {report.leader_cost:.12e}",
        f"iterations   {report.iterations}",
        f"zero-cost rule {'feasible' if cond.satisfied else 'infeasible'}",
    ])
    return EXIT_OK


def cmd_predict(args) -> int:
    scenario, users, _, digests = load_inputs(args.scenario, args.users)
    setting = PredictionSetting(args.prediction)
    cond = check_prediction_condition(scenario, users, setting)
    if not cond.satisfied:
        _print(cond.render())
        return EXIT_CONDITION
    report = prediction_report(scenario, users, setting)
    ex = report.extra
    doc = report_document(report, scenario, users, game="hyperplane",
                          parameters=_parameters(args), digests=digests)
    _emit(args, doc, scenario, report, [
        f"delta           {ex['delta']:.12g}",
        f"T*delta         {ex['T_delta']:.12g}",
        f"prefactor       {ex['prefactor']:.12g}",
        f"Var(w - r)      {ex['var_net']:.12g}",
        f"cost (formula)  {ex['leader_cost_formula']:.12e}",
        f"cost (direct)   {ex['leader_cost_direct']:.12e}",
    ])
    return EXIT_OK


def cmd_table2(args) -> int:
    if not args.T:
        raise UsageError("at least one slot count is required (--T)")
    if any(T < 2 for T in args.T):
        raise UsageError("slot counts must be at least 2")

    def generator(T):
        return synth_scenario(args.kind, T, args.seed, args.daily_w, args.daily_r)

    rows = table2_sweep(args.daily_w, args.daily_r, args.predicted_w, args.predicted_r,
                        args.g_N, generator, args.T)
    header = ["T", "delta", "T_delta", "var", "cost", "ratio", "prefactor", "forecast_feasible"]
    csv_lines = [",".join(header)]
    for row in rows:
        csv_lines.append(",".join([str(row.T), fmt(row.delta), fmt(row.T_delta), fmt(row.var),
                                   fmt(row.cost), fmt(row.ratio), fmt(row.prefactor),
                                   "1" if row.forecast_feasible else "0"]))
    text = [f"{'T':>4} {'delta':>10} {'Var':>10} {'u_l':>10} {'u_l/Var':>10}"]
    for row in rows:
        text.append(f"{row.T:>4d} {row.delta:>10.6f} {row.var:>10.4f} {row.cost:>10.4f} {row.ratio:>10.6f}")
    _print(*text)
    if args.out:
        atomic_write(args.out, "\n".join(csv_lines) + "\n")
        _print(f"wrote {args.out}")
        if args.plot:
            from .plotting import plot_sweep

            _print(f"wrote {plot_sweep(rows, Path(args.out).with_suffix('.png'))}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.T < 2:
        raise UsageError("T must be at least 2")
    if args.preset == "households":
        scenario, users = household_instance(args.seed, T=args.T, kind=args.kind)
    else:
        if args.w_total is None or args.r_total is None:
            raise UsageError("--w-total and --r-total are required without --preset")
        scenario = synth_scenario(args.kind, args.T, args.seed, args.w_total, args.r_total)
        users = None
    meta = {"kind": args.kind, "seed": str(args.seed)}
    write_scenario(args.out, scenario, meta)
    _print(f"wrote {args.out}")
    if args.users_out:
        if users is None:
            raise UsageError("--users-out needs --preset")
        write_users(args.users_out, users)
        _print(f"wrote {args.users_out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    doc = read_report(args.report)
    ok, lines = verify_document(doc)
    _print(*lines)
    return EXIT_OK if ok else EXIT_SOLVER


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stackgrid", description="Stackelberg electricity pricing equilibria.")
    p.add_argument("--version", action="version", version=f"stackgrid {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def inputs(sp):
        sp.add_argument("scenario", help="CSV with header t,w,r")
        sp.add_argument("users", help="CSV with header i,g,nu_max")

    sp = sub.add_parser("check", help="evaluate the closed-form feasibility conditions")
    inputs(sp)
    sp.add_argument("--prediction", type=_finite_float, metavar="B",
                    help="also check the forecast-rule condition for forecast B of mean(r - w)")
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("solve", help="compute a Stackelberg equilibrium")
    inputs(sp)
    sp.add_argument("--mode", choices=("auto", "analytic", "numeric"), default="auto")
    sp.add_argument("--eps", type=_positive_float, help="stopping tolerance (default 1e-3 g_N/T)")
    sp.add_argument("--eps-step", type=_positive_float, help="initial price step (default --eps)")
    sp.add_argument("--max-iter", type=_positive_int, default=5000, help="outer iteration cap")
    sp.add_argument("--random-init", action="store_true", help="random positive starting prices")
    sp.add_argument("--seed", type=int, help="seed for --random-init and deviation sampling")
    sp.add_argument("--init-floor", type=_positive_float, default=DEFAULT_INIT_FLOOR,
                    help="lower clamp of the starting adjusted supply, in units of g_N/T")
    sp.add_argument("--out", required=True, help="report JSON path (series CSV written alongside)")
    sp.add_argument("--plot", action="store_true", help="also render PNG figures")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("predict", help="equilibrium and leader cost under a forecast-based price")
    inputs(sp)
    sp.add_argument("--prediction", type=_finite_float, required=True, metavar="B")
    sp.add_argument("--out", required=True)
    sp.add_argument("--plot", action="store_true")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("table2", help="forecast-rule leader cost for several slot counts")
    sp.add_argument("--T", type=int, nargs="*", default=[24, 36, 48, 60])
    sp.add_argument("--daily-w", type=_positive_float, default=110.1)
    sp.add_argument("--daily-r", type=_positive_float, default=121.1)
    sp.add_argument("--predicted-w", type=_finite_float, default=125.0)
    sp.add_argument("--predicted-r", type=_finite_float, default=120.0)
    sp.add_argument("--g-N", dest="g_N", type=_positive_float, default=41.6)
    sp.add_argument("--kind", choices=KINDS, default="two-peak")
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--out", help="CSV output path")
    sp.add_argument("--plot", action="store_true")
    sp.set_defaults(func=cmd_table2)

    sp = sub.add_parser("synth", help="write a seeded synthetic scenario")
    sp.add_argument("--kind", choices=KINDS, default="two-peak")
    sp.add_argument("--T", type=int, default=24)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--w-total", type=_positive_float)
    sp.add_argument("--r-total", type=_positive_float)
    sp.add_argument("--preset", choices=("households",),
                    help="twenty-household fleet with matching daily totals")
    sp.add_argument("--users-out", help="fleet CSV path (with --preset)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("verify", help="recompute a report from its embedded inputs")
    sp.add_argument("report")
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, UsageError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except (InfeasibleBounds, NonpositiveTildeW) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except ConditionViolation as exc:
        sys.stderr.write(f"condition not satisfied: {exc}\n")
        return EXIT_CONDITION
    except (MaxIterExceeded, ArithmeticError) as exc:
        sys.stderr.write(f"solver failure: {exc}\n")
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
