"""Command-line interface: ``mpql estimate | simulate | study | vrtest``.

Exit codes: 0 success, 2 input error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .core import InvalidInputError, LambdaRule, PenaltyConfig, RawSeries, SolverConfig, SolverError
from .likelihood import first_order_residual, penalty, pqll
from .preprocess import (
    DEFAULT_TIE_NOISE,
    break_ties,
    log_transform,
    prepare_sample,
    split_by_gap,
    variance_ratio_test,
)
from .sim import convergence_study, simulate_bm, simulate_logistic
from .solver import continuation_solve
from .spline import eval_sigma

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 2, 3

log = logging.getLogger("mpql")


class InputError(Exception):
    """Bad command-line input; mapped to exit code 2."""


def _fmt(x: float) -> str:
    return repr(float(x))


def read_series(path: Path, day_count: float = 365.25) -> RawSeries:
    """Read a ``date,value`` (ISO dates) or ``t,value`` (years) CSV file."""
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as err:
        raise InputError(f"{path}: cannot open ({err.strerror})") from err
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        cols = [h.strip().lower() for h in header]
        if len(cols) < 2 or cols[1] != "value" or cols[0] not in ("date", "t"):
            raise InputError(f"{path}:1: header must be 'date,value' or 't,value', got {header!r}")
        dated = cols[0] == "date"
        stamps: List = []
        values: List[float] = []
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < 2:
                raise InputError(f"{path}:{line}: expected 2 columns, got {len(row)}")
            raw_t, raw_v = row[0].strip(), row[1].strip()
            try:
                stamps.append(datetime.fromisoformat(raw_t) if dated else float(raw_t))
            except ValueError:
                kind = "ISO-8601 date" if dated else "number"
                raise InputError(f"{path}:{line}: bad {kind} {raw_t!r}") from None
            try:
                v = float(raw_v)
            except ValueError:
                raise InputError(f"{path}:{line}: bad value {raw_v!r}") from None
            if not np.isfinite(v):
                raise InputError(f"{path}:{line}: value must be finite")
            values.append(v)
    if len(values) < 2:
        raise InputError(f"{path}: need at least 2 data rows")
    if dated:
        t0 = stamps[0]
        times = np.array([(s - t0).total_seconds() / 86400.0 for s in stamps]) / day_count
    else:
        times = np.array(stamps, dtype=float)
    try:
        return RawSeries(times, np.array(values), label=Path(path).stem)
    except InvalidInputError as err:
        raise InputError(f"{path}: {err}") from err


def write_series(series: RawSeries, out) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["t", "value"])
    for t, v in zip(series.times, series.values):
        writer.writerow([_fmt(t), _fmt(v)])


def _parse_thinning(text: str) -> tuple:
    try:
        factors = tuple(int(s) for s in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad thinning list {text!r}") from None
    return factors


def _open_out(path: Optional[str]):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline="", encoding="utf-8"), True


def cmd_estimate(args) -> int:
    series = read_series(Path(args.input), args.day_count)
    if args.log_transform:
        series = log_transform(series)
    series = break_ties(series, args.tie_noise, args.seed)
    sample = prepare_sample(series)
    m = args.m
    rule = LambdaRule.fixed(args.lam) if args.lam is not None else LambdaRule.schedule(args.lambda_kappa)
    factors = tuple(s for s in args.thinning if s == 1 or sample.n >= m * s) or (1,)
    if factors[-1] != 1:
        factors = factors + (1,)
    dropped = [s for s in args.thinning if s not in factors]
    if dropped:
        log.warning("dropping thinning strides %s: sample has only %d returns", dropped, sample.n)
    solver = SolverConfig(
        epsilon=args.epsilon,
        delta=args.delta,
        max_iter=args.max_iter,
        thinning_factors=factors,
        lambda_rule=rule,
    )
    result = continuation_solve(sample, m, solver)
    spline = result.spline

    lo = sample.min_level if args.x_min is None else args.x_min
    hi = sample.max_level if args.x_max is None else args.x_max
    x = np.linspace(lo, hi, args.grid_points)
    x[0], x[-1] = lo, hi
    sigma = eval_sigma(spline, x)
    extrapolated = (x < sample.min_level) | (x > sample.max_level)

    out, close = _open_out(args.output)
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["x", "sigma", "extrapolated"])
        for xi, si, ei in zip(x, sigma, extrapolated):
            writer.writerow([_fmt(xi), _fmt(si), int(ei)])
    finally:
        if close:
            out.close()

    config = PenaltyConfig(m, result.lam)
    report = {
        "input": str(args.input),
        "label": series.label,
        "n": sample.n,
        "m": m,
        "lambda": result.lam,
        "lambda_rule": {"fixed": rule.value} if rule.value is not None else {"kappa": rule.kappa},
        "thinning": list(factors),
        "iterations": result.iterations,
        "residual_norm": result.residual_norm,
        "a_star": [float(v) for v in result.a_star],
        "first_order_residuals": {
            "z": first_order_residual(sample, spline, result.lam, lambda z: z),
            "z^2": first_order_residual(sample, spline, result.lam, lambda z: z**2),
        },
        "pqll": pqll(sample, spline, config),
        "penalty": penalty(spline),
        "level_range": [sample.min_level, sample.max_level],
        "x_scale": "log" if args.log_transform else "level",
        "day_count": args.day_count,
        "tie_noise": args.tie_noise,
        "seed": args.seed,
        "version": __version__,
    }
    report_path = args.report or (None if args.output in (None, "-") else str(Path(args.output).with_suffix(".report.json")))
    if report_path:
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(f"n={sample.n} m={m} lambda={result.lam:.6g} iterations={result.iterations} "
          f"|F|={result.residual_norm:.3g}", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.model == "bm":
        series = simulate_bm(args.steps, args.dt, args.sigma0, args.y0, args.seed)
    else:
        series, _ = simulate_logistic(args.steps, args.dt, args.seed)
    out, close = _open_out(args.output)
    try:
        write_series(series, out)
    finally:
        if close:
            out.close()
    return EXIT_OK


def cmd_study(args) -> int:
    solver = SolverConfig(thinning_factors=args.thinning)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report = convergence_study(args.base_q, args.q_min, args.q_max, args.m, args.kappa,
                                   seed=args.seed, solver=solver, repetitions=args.repetitions,
                                   max_workers=args.workers)
    out, close = _open_out(args.output)
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["q", "n", "lambda", "rmise", "log2_rmise", "iterations", "converged"])
        for row in report.rows:
            writer.writerow([row.q, row.n, _fmt(row.lam), _fmt(row.rmise), _fmt(row.log2_rmise),
                             row.iterations, int(row.converged)])
    finally:
        if close:
            out.close()
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump({"m": report.m, "kappa": report.kappa, "intercept": report.intercept,
                       "slope": report.slope, "failed_q": list(report.failed),
                       "base_q": args.base_q, "seed": args.seed}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    print(f"log2 RMISE = {report.intercept:.3f} + ({report.slope:.3f}) q", file=sys.stderr)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return EXIT_OK


def cmd_vrtest(args) -> int:
    if args.input is not None:
        series = read_series(Path(args.input), args.day_count)
        short, long_ = split_by_gap(series, args.gap_days, args.day_count, scaled=args.scaled)
        if short.size < 2 or long_.size < 2:
            raise InputError(
                f"need at least 2 returns per group (short-gap: {short.size}, long-gap: {long_.size})"
            )
        std_a, n_a = float(np.std(short, ddof=1)), short.size
        std_b, n_b = float(np.std(long_, ddof=1)), long_.size
    else:
        if None in (args.std_a, args.n_a, args.std_b, args.n_b):
            raise InputError("give --input or all of --std-a --n-a --std-b --n-b")
        std_a, n_a, std_b, n_b = args.std_a, args.n_a, args.std_b, args.n_b
    res = variance_ratio_test(std_a, n_a, std_b, n_b)
    yes = {True: "yes", False: "no"}
    print(f"statistic={res.statistic:.6f} dof={res.dof[0]},{res.dof[1]} p={res.p_value:.4f} "
          f"reject_10pct={yes[res.reject_at_10pct]} reject_5pct={yes[res.reject_at_5pct]} "
          f"groups: std_a={std_a:.6g} n_a={n_a} std_b={std_b:.6g} n_b={n_b}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpql", description="Maximum penalized quasi-likelihood volatility estimation")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", help="estimate sigma from a CSV series")
    e.add_argument("input")
    e.add_argument("-o", "--output", help="grid CSV (default stdout)")
    e.add_argument("--report", help="run report JSON (default <output>.report.json)")
    e.add_argument("--m", type=int, choices=(1, 2), default=2)
    lam = e.add_mutually_exclusive_group()
    lam.add_argument("--lambda", dest="lam", type=float)
    lam.add_argument("--lambda-kappa", type=float, default=20.0)
    e.add_argument("--day-count", type=float, default=365.25)
    e.add_argument("--log-transform", action="store_true")
    e.add_argument("--tie-noise", type=float, default=DEFAULT_TIE_NOISE)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--grid-points", type=int, default=200)
    e.add_argument("--x-min", type=float)
    e.add_argument("--x-max", type=float)
    e.add_argument("--thinning", type=_parse_thinning, default=(16, 4, 1))
    e.add_argument("--epsilon", type=float, default=1e-10)
    e.add_argument("--delta", type=float, default=0.1)
    e.add_argument("--max-iter", type=int, default=500)
    e.set_defaults(func=cmd_estimate)

    s = sub.add_parser("simulate", help="simulate a path and write t,value CSV")
    s.add_argument("--model", choices=("bm", "logistic"), required=True)
    s.add_argument("--steps", type=int, default=2**13)
    s.add_argument("--dt", type=float, default=2.0**-13)
    s.add_argument("--sigma0", type=float, default=1.0)
    s.add_argument("--y0", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_simulate)

    st = sub.add_parser("study", help="empirical rate-of-convergence study on the logistic diffusion")
    st.add_argument("--base-q", type=int, default=16)
    st.add_argument("--q-min", type=int, default=10)
    st.add_argument("--q-max", type=int, default=16)
    st.add_argument("--m", type=int, choices=(1, 2), default=1)
    st.add_argument("--kappa", type=float)
    st.add_argument("--seed", type=int, default=0)
    st.add_argument("--repetitions", type=int, default=1)
    st.add_argument("--workers", type=int, default=1)
    st.add_argument("--thinning", type=_parse_thinning, default=(16, 4, 1))
    st.add_argument("-o", "--output")
    st.add_argument("--report")
    st.set_defaults(func=cmd_study)

    v = sub.add_parser("vrtest", help="variance-ratio test between short- and long-gap returns")
    v.add_argument("--std-a", type=float)
    v.add_argument("--n-a", type=int)
    v.add_argument("--std-b", type=float)
    v.add_argument("--n-b", type=int)
    v.add_argument("--input")
    v.add_argument("--gap-days", type=float, default=1.5)
    v.add_argument("--day-count", type=float, default=365.25)
    v.add_argument("--scaled", action="store_true", help="divide increments by sqrt(dt) first")
    v.set_defaults(func=cmd_vrtest)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "study" and args.kappa is None:
        # per-order defaults of the simulation study
        args.kappa = 30.0 if args.m == 1 else 20.0
    try:
        return args.func(args)
    except (InputError, InvalidInputError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except SolverError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        print("hint: add coarser thinning strides (e.g. --thinning 64,16,4,1), "
              "increase lambda, or raise --max-iter", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
