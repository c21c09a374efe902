"""Command-line front end: ``powerterm solve|sweep|calibrate|convert``.

Exit codes: 0 all checks pass, 1 a check failed, 2 infeasible market,
3 solver failure (4 for unusable input).  Every float written to a CSV uses
12 significant digits, so identical inputs give byte-identical files.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import ProductionHistory, fit_fleet
from .equilibrium import (InfeasibleMarketError, MarketError, SolverError, player_kkt_residuals,
                          solve_equilibrium, verify_nash)
from .extensions import forwards_from_futures, futures_from_forwards
from .scenario import Scenario, ScenarioError, apply_override, load_scenario
from .synthetic import synthetic_history

log = logging.getLogger("powerterm")

OUT_ENV = "POWERTERM_OUT"
EXIT_OK, EXIT_CHECK, EXIT_INFEASIBLE, EXIT_SOLVER, EXIT_INPUT = 0, 1, 2, 3, 4

KKT_TOL = 1e-7
NASH_TOL = 1e-6
CLEARING_TOL = 1e-8


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return "0" if v == 0 else f"{v:.12g}"
    return "" if x is None else str(x)


def write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


# ---------------------------------------------------------------- solve

@dataclass
class RunResult:
    exit_code: int
    message: str
    summary: dict


def _price_rows(market, sol):
    grid = market.grid
    for k in range(grid.flat_size):
        j, i = grid.unflat(k)
        yield j, grid.trading_times[j][i], sol.prices[k]


def _volume_rows(market, sol):
    grid = market.grid
    n = grid.flat_size
    fuels = list(market.fuels)
    producers = {p.id: p for p in market.producers}
    for pid, pos in sol.positions.items():
        for k in range(n):
            j, i = grid.unflat(k)
            yield pid, "V", k, j, grid.trading_times[j][i], "", pos["V"][k]
        if "F" in pos:
            for l, fuel in enumerate(fuels):
                for k in range(n):
                    j, i = grid.unflat(k)
                    yield pid, "F", k, j, grid.trading_times[j][i], fuel, pos["F"][l * n + k]
            for k in range(n):
                j, i = grid.unflat(k)
                yield pid, "O", k, j, grid.trading_times[j][i], "emissions", pos["O"][k]
            plants = producers[pid].plants_by_fuel(fuels)
            R = len(plants)
            for j in range(grid.n_deliveries):
                for r, plant in enumerate(plants):
                    yield pid, "W", "", j, grid.delivery_times[j], plant.name or str(r), pos["W"][j * R + r]


def market_volumes(market, sol) -> np.ndarray:
    """Volume changing hands per grid contract: half the sum of |V| over players."""
    return 0.5 * sum(np.abs(pos["V"]) for pos in sol.positions.values())


def summarize(market, sol) -> dict:
    """Term-structure and liquidity figures reported by ``sweep``."""
    grid = market.grid
    slopes = [sol.prices[grid.delivery_slice(j)][-1] - sol.prices[grid.delivery_slice(j)][0]
              for j in range(grid.n_deliveries)]
    vol = market_volumes(market, sol)
    # per-period volume: contracts grouped by position on their trading ladder
    depth = max(grid.counts)
    per_period = np.zeros(depth)
    for k in range(grid.flat_size):
        per_period[grid.unflat(k)[1]] += vol[k]
    mean = per_period.mean()
    total = vol.sum()
    return {
        "price_level": float(np.mean(sol.prices)),
        "slope": float(np.mean(slopes)),
        "slope_sign": int(np.sign(np.round(np.mean(slopes), 12))),
        "volume_dispersion": float((per_period.max() - per_period.min()) / mean) if mean > 0 else 0.0,
        "first_period_volume": float(per_period[0]),
        "total_volume": float(total),
    }


def _diagnostics(market, sol, nash_tol: float):
    rows = []
    thr = KKT_TOL * sol.assembled.problem().scale()
    for name, value in sol.kkt.as_dict().items():
        if name == "dual_feas":  # min multiplier, reported raw
            rows.append(("kkt_" + name, "", value, -thr, value >= -thr))
        else:
            rows.append(("kkt_" + name, "", value, thr, value <= thr))
    for (pid, rep), blk in zip(player_kkt_residuals(sol).items(), sol.assembled.blocks):
        limit = KKT_TOL * blk.problem(sol.price_slice).scale()
        rows.append(("player_kkt", pid, rep.worst(), limit, rep.worst() <= limit))
    demand = float(np.sum(market.curves.demand))
    nash = verify_nash(sol, tol=nash_tol, clearing_tol=CLEARING_TOL)
    for pid, gap in nash.gaps.items():
        limit = nash_tol * (1 + abs(nash.utilities[pid]))
        rows.append(("nash_gap", pid, gap, limit, gap <= limit))
    rows.append(("clearing_residual", "", sol.clearing_residual, CLEARING_TOL * (1 + demand),
                 sol.clearing_residual <= CLEARING_TOL * (1 + demand)))
    rows.append(("pinned_multiplier", "", nash.pinned, 0.0, nash.pinned == 0.0))
    rows.append(("iterations", "", sol.qp.iterations, "", True))
    if sol.price_nonunique is not None:
        rows.append(("price_nonunique_flag", "", sol.price_nonunique, "", True))
    for pid, u in sol.utilities.items():
        rows.append(("utility", pid, u, "", True))
    for pid, u in sol.retail_utilities.items():
        rows.append(("utility_with_retail", pid, u, "", True))
    return rows


DIAG_HEADER = ("check", "player", "value", "threshold", "pass")


def run_solve(market, out: Path, tol: float, nash_tol: float = NASH_TOL) -> RunResult:
    out.mkdir(parents=True, exist_ok=True)
    try:
        sol = solve_equilibrium(market, tol=tol)
    except InfeasibleMarketError as exc:
        write_csv(out / "diagnostics.csv", DIAG_HEADER,
                  [("infeasible", exc.player or "", exc.margin, 0.0, False),
                   ("constraint_family", exc.player or "", exc.family or "", "", False)])
        return RunResult(EXIT_INFEASIBLE, f"infeasible market: {exc}", {})
    except MarketError as exc:
        write_csv(out / "diagnostics.csv", DIAG_HEADER, [("invalid_market", "", str(exc), "", False)])
        return RunResult(EXIT_INPUT, f"invalid market: {exc}", {})
    except SolverError as exc:
        rows = [("solver_status", "", exc.solution.status if exc.solution else "", "", False)]
        if exc.solution is not None:
            rows += [("kkt_" + k, "", v, "", False) for k, v in exc.solution.kkt.as_dict().items()]
        write_csv(out / "diagnostics.csv", DIAG_HEADER, rows)
        return RunResult(EXIT_SOLVER, f"solver failure: {exc}", {})

    write_csv(out / "prices.csv", ("delivery", "trading_time", "expected_price"), _price_rows(market, sol))
    write_csv(out / "volumes.csv", ("player", "quantity", "contract", "delivery", "time", "item", "volume"),
              _volume_rows(market, sol))
    rows = _diagnostics(market, sol, nash_tol)
    write_csv(out / "diagnostics.csv", DIAG_HEADER, rows)
    failed = [f"{r[0]}{'[' + r[1] + ']' if r[1] else ''}" for r in rows if not r[4]]
    summary = summarize(market, sol)
    if failed:
        return RunResult(EXIT_CHECK, "checks failed: " + ", ".join(failed), summary)
    return RunResult(EXIT_OK, "all checks passed", summary)


# ---------------------------------------------------------------- sweep

def _value_dir(parameter: str, value: float) -> str:
    safe = "".join(ch if ch.isalnum() or ch in "._-" else "_" for ch in parameter)
    return f"{safe}={fmt(value)}"


def _sweep_one(args):
    market, parameter, value, out, tol = args
    try:
        result = run_solve(apply_override(market, parameter, value), out, tol)
    except Exception as exc:  # recorded per value, the sweep carries on
        return RunResult(EXIT_SOLVER, f"{type(exc).__name__}: {exc}", {})
    return result


SUMMARY_FIELDS = ("price_level", "slope", "slope_sign", "volume_dispersion", "first_period_volume", "total_volume")


def run_sweep(scenario: Scenario, out: Path, tol: float, jobs: int = 1, parameter=None, values=None):
    parameter = parameter or scenario.sweep_parameter
    values = tuple(values if values is not None else scenario.sweep_values)
    if not parameter or not values:
        raise ScenarioError("scenario has no sweep (give sweep.parameter and sweep.values)")
    tasks = [(scenario.market, parameter, v, out / _value_dir(parameter, v), tol) for v in values]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(t) for t in tasks]
    rows = []
    for v, res in zip(values, results):
        rows.append([parameter, v, res.exit_code, res.message]
                    + [res.summary.get(k, "") for k in SUMMARY_FIELDS])
    write_csv(out / "summary.csv", ("parameter", "value", "exit_code", "message") + SUMMARY_FIELDS, rows)
    return results


# ---------------------------------------------------------------- calibrate

HISTORY_FIELDS = ("plant", "production", "capacity", "elec_price", "fuel_price", "emission_price")


def read_histories(path: Path) -> list[ProductionHistory]:
    cols = {k: [] for k in HISTORY_FIELDS}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(HISTORY_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ScenarioError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            for k in HISTORY_FIELDS:
                cols[k].append(row[k])
    names = np.asarray(cols["plant"])
    data = {k: np.asarray(cols[k], dtype=float) for k in HISTORY_FIELDS[1:]}
    out = []
    for name in dict.fromkeys(names):  # first-seen order
        sel = names == name
        out.append(ProductionHistory(data["production"][sel], data["capacity"][sel], data["elec_price"][sel],
                                     data["fuel_price"][sel], data["emission_price"][sel], name=str(name)))
    return out


def write_histories(path: Path, histories) -> None:
    def rows():
        for h in histories:
            for t in range(h.production.size):
                yield (h.name, h.production[t], h.capacity[t], h.elec_price[t], h.fuel_price[t],
                       h.emission_price[t])
    write_csv(path, HISTORY_FIELDS, rows())


def _fit_or_flag(h, **kwargs):
    from .calibration import fit_plant
    try:
        return fit_plant(h, **kwargs), ""
    except ValueError as exc:
        return None, str(exc)


def run_calibrate(histories, out: Path, jobs: int = 1, truth=None) -> int:
    if jobs > 1:
        from joblib import Parallel, delayed
        fits = Parallel(n_jobs=jobs)(delayed(_fit_or_flag)(h) for h in histories)
    else:
        fits = [_fit_or_flag(h) for h in histories]
    rows = []
    for h, (fit, err) in zip(histories, fits):
        if fit is None:
            log.warning("plant %s skipped: %s", h.name, err)
            rows.append((h.name, "", "", "", "", False, False, False, 0, int(np.sum(h.capacity <= 0)), err))
            continue
        rows.append((h.name, fit.efficiency, fit.emission_intensity, fit.margin_offset, fit.sse, fit.converged,
                     fit.identifiable, fit.degenerate, fit.n_samples, fit.dropped, ""))
    write_csv(out / "calibration.csv",
              ("plant", "efficiency", "emission_intensity", "margin_offset", "sse", "converged",
               "identifiable", "degenerate", "samples", "dropped", "warning"), rows)
    if truth is not None:
        trows = []
        for (name, c, g, off), (fit, _) in zip(truth, fits):
            err = np.abs(fit.params - [c, g, off]) / np.abs([c, g, off]) if fit else [np.nan] * 3
            trows.append((name, c, g, off, *err))
        write_csv(out / "truth.csv", ("plant", "efficiency", "emission_intensity", "margin_offset",
                                      "rel_err_efficiency", "rel_err_emission_intensity", "rel_err_margin_offset"),
                  trows)
    return EXIT_OK


# ---------------------------------------------------------------- convert

def read_curve(path: Path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not {"trading_time", "price"} <= set(reader.fieldnames or ()):
            raise ScenarioError(f"{path}: need columns trading_time, price (and optionally delivery)")
        rows = list(reader)
    groups = {}
    for row in rows:
        groups.setdefault(row.get("delivery", "0"), []).append((float(row["trading_time"]), float(row["price"])))
    return groups


def run_convert(path: Path, out_file: Path, direction: str, rate: float) -> int:
    groups = read_curve(path)
    convert = forwards_from_futures if direction == "to-forwards" else futures_from_forwards
    rows = []
    for delivery, pts in groups.items():
        t = np.array([p[0] for p in pts])
        v = np.array([p[1] for p in pts])
        if np.any(np.diff(t) <= 0):
            raise ScenarioError(f"delivery {delivery}: trading times must be strictly increasing")
        for ti, pi in zip(t, convert(v, t, rate)):
            rows.append((delivery, ti, pi))
    write_csv(out_file, ("delivery", "trading_time", "price"), rows)
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def _out_dir(arg) -> Path:
    return Path(arg or os.environ.get(OUT_ENV, "out"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="powerterm", description="Equilibrium term structure of power forwards.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        if scenario:
            p.add_argument("--scenario", required=True,
                           help="YAML scenario file or the name of a bundled scenario (e.g. 'base')")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
        p.add_argument("--tol", type=float, help="solver tolerance (overrides the scenario)")
        p.add_argument("--seed", type=int, help="seed for generated inputs (overrides the scenario)")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    p = sub.add_parser("solve", help="solve one scenario")
    common(p)
    p.add_argument("--set", action="append", default=[], metavar="PARAM=VALUE",
                   help="apply a sweep parameter override before solving (repeatable)")

    p = sub.add_parser("sweep", help="solve a scenario for every value of its sweep axis")
    common(p)
    p.add_argument("--parameter", help="sweep parameter (overrides the scenario)")
    p.add_argument("--values", type=float, nargs="+", help="sweep values (override the scenario)")

    p = sub.add_parser("calibrate", help="fit plant parameters to production histories")
    common(p, scenario=False)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--history", help="CSV with columns " + ", ".join(HISTORY_FIELDS))
    src.add_argument("--synthetic", type=int, metavar="N", help="generate N synthetic plants and fit them")
    p.add_argument("--samples", type=int, default=5000, help="samples per synthetic plant")

    p = sub.add_parser("convert", help="convert a futures ladder to forwards or back")
    p.add_argument("--input", required=True, help="CSV with columns [delivery,] trading_time, price")
    p.add_argument("--direction", choices=("to-forwards", "to-futures"), required=True)
    p.add_argument("--rate", type=float, required=True, help="interest rate in reciprocal time units")
    p.add_argument("--out", help="output CSV (default <out dir>/converted.csv)")
    return parser


def _scenario(args) -> Scenario:
    scen = load_scenario(args.scenario)
    if args.seed is not None and args.seed != scen.seed:
        raw = dict(scen.raw, seed=args.seed)
        from .scenario import scenario_from_dict
        base = Path(args.scenario).parent if Path(args.scenario).exists() else Path(".")
        scen = scenario_from_dict(raw, base, scen.name)
    return scen


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        if args.command == "convert":
            out = Path(args.out) if args.out else _out_dir(None) / "converted.csv"
            code = run_convert(Path(args.input), out, args.direction, args.rate)
            print(f"wrote {out}")
            return code
        out = _out_dir(args.out)
        if args.command == "calibrate":
            if args.history:
                histories, truth = read_histories(Path(args.history)), None
            else:
                rng = np.random.default_rng(0 if args.seed is None else args.seed)
                truth, histories = [], []
                for r in range(args.synthetic):
                    c, g, off = rng.uniform(0.3, 0.9), rng.uniform(0.3, 1.0), rng.uniform(2.0, 15.0)
                    truth.append((f"plant{r}", c, g, off))
                    histories.append(synthetic_history(rng, c, g, off, n_samples=args.samples, name=f"plant{r}"))
                write_histories(out / "history.csv", histories)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore" if args.verbose == 0 else "default")
                code = run_calibrate(histories, out, jobs=args.jobs, truth=truth)
            print(f"wrote {out / 'calibration.csv'}")
            return code

        scen = _scenario(args)
        tol = args.tol if args.tol is not None else scen.tol
        if args.command == "solve":
            market = scen.market
            for item in args.set:
                name, _, value = item.partition("=")
                market = apply_override(market, name.strip(), float(value))
            res = run_solve(market, out, tol)
            print(res.message)
            return res.exit_code
        results = run_sweep(scen, out, tol, jobs=args.jobs, parameter=args.parameter, values=args.values)
        for res in results:
            if res.exit_code:
                print(res.message, file=sys.stderr)
        print(f"wrote {out / 'summary.csv'}")
        return max(r.exit_code for r in results)
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
