"""Command-line front end.

Every run hashes its mathematical configuration (everything except --out,
--config, and --workers) into a manifest written alongside the outputs; each
output file names that manifest on its first line, and rerunning with the same
manifest reproduces the bytes below that line exactly.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import os
import platform
import sys

import numpy as np
import scipy

from . import __version__
from .backtest import BacktestConfig, rank_compare, run_backtest
from .dependence import build_dependence
from .dvalues import compute_dvalues, local_fdr
from .errors import ConfigError, DataError, NumericalError
from .mixture import GridConfig, fit_mixture
from .panel import _parse_factors_csv, _parse_returns_csv, assemble_window, carhart_fit
from .selection import (
    bh_select,
    one_sided_pvalues,
    optimal_decision,
    select_fdr_stepup,
    select_unskilled,
    storey_select,
)
from .simlab import SimSetting, run_sim_study

_UNHASHED = {"command", "config", "out", "workers"}


class _Parser(argparse.ArgumentParser):
    """argparse that reports bad flags through our error channel."""

    def error(self, message):
        raise ConfigError(message)


def _window_arg(text: str) -> tuple[str, str]:
    parts = text.split(":")
    if len(parts) != 2 or not parts[0] or not parts[1]:
        raise argparse.ArgumentTypeError(f"window must be START:END, got {text!r}")
    return parts[0], parts[1]


def _float_list(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty grid")
    return vals


def _add_io(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--returns", help="monthly fund return CSV")
    sp.add_argument("--factors", help="factor + risk-free CSV")
    sp.add_argument("--window", type=_window_arg, help="estimation window START:END (YYYY-MM)")


def _add_grids(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--grid-m", type=_float_list, help="subset percentages, comma-separated")
    sp.add_argument("--grid-nu0", type=_float_list, help="spike locations, comma-separated")
    sp.add_argument("--grid-tau", type=_float_list, help="component variances, comma-separated")


def _add_common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="INI config file (section per subcommand; flags override)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=".", help="output directory")
    sp.add_argument("--workers", type=int, default=0, help="0 = all available cores")


def build_parser() -> tuple[_Parser, dict[str, _Parser]]:
    parser = _Parser(prog="fundselect", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True)
    by_name: dict[str, _Parser] = {}

    sp = subs.add_parser("fit", help="fit the alpha prior from a return panel")
    _add_io(sp)
    _add_grids(sp)
    _add_common(sp)
    by_name["fit"] = sp

    sp = subs.add_parser("dvalues", help="fit, then compute posterior d-values")
    _add_io(sp)
    _add_grids(sp)
    sp.add_argument("--mc-samples", type=int, default=2000)
    _add_common(sp)
    by_name["dvalues"] = sp

    sp = subs.add_parser("select", help="select skilled funds at a target FDR level")
    _add_io(sp)
    _add_grids(sp)
    sp.add_argument("--dvalues", help="precomputed d-value CSV instead of a panel")
    sp.add_argument("--theta", type=float, default=0.1, help="FDR target level")
    sp.add_argument("--lambda", dest="lam", type=float, help="loss tradeoff for the exact rule")
    sp.add_argument("--mc-samples", type=int, default=2000)
    _add_common(sp)
    by_name["select"] = sp

    sp = subs.add_parser("simulate", help="run a synthetic replication study")
    sp.add_argument("--p", type=int, default=500, help="number of funds")
    sp.add_argument("--sparsity", default="s1", help="mixture weights pattern (s1 | s2)")
    sp.add_argument("--dep", default="d1", help="dependence pattern (d1 | d2 | d3)")
    sp.add_argument("--theta", type=float, default=0.1)
    sp.add_argument("--reps", type=int, default=50)
    sp.add_argument("--months", type=int, default=120)
    sp.add_argument("--mc-samples", type=int, default=2000)
    _add_grids(sp)
    _add_common(sp)
    by_name["simulate"] = sp

    sp = subs.add_parser("backtest", help="rolling annual re-selection backtest")
    _add_io(sp)
    _add_grids(sp)
    sp.add_argument("--start-year", type=int, help="first holding year")
    sp.add_argument("--end-year", type=int, help="last holding year")
    sp.add_argument("--window-years", type=int, default=10)
    sp.add_argument("--theta", type=float, default=0.15)
    sp.add_argument("--initial-value", type=float, default=1.0)
    sp.add_argument("--fallback", choices=["hold-cash", "hold-index"], default="hold-cash")
    sp.add_argument("--benchmark", help="benchmark return CSV (date,ret)")
    sp.add_argument("--mc-samples", type=int, default=2000)
    _add_common(sp)
    by_name["backtest"] = sp

    sp = subs.add_parser("rank-compare", help="top-n by d-value vs top-n by p-value")
    _add_io(sp)
    _add_grids(sp)
    sp.add_argument("--dvalues", help="precomputed d-value CSV instead of a panel")
    sp.add_argument("--top-n", type=int, default=50)
    sp.add_argument("--mc-samples", type=int, default=2000)
    _add_common(sp)
    by_name["rank-compare"] = sp

    return parser, by_name


def _apply_config_file(argv, args, parser, by_name):
    """Merge INI values under the subcommand's section, then re-parse so
    explicit flags keep priority."""
    cp = configparser.ConfigParser()
    if not cp.read(args.config):
        raise ConfigError(f"config file not found: {args.config}")
    sub = by_name[args.command]
    if not cp.has_section(args.command):
        return args

    known: dict[str, str] = {}
    for action in sub._actions:
        if action.dest in ("help", "config"):
            continue
        known[action.dest] = action.dest
        for opt in action.option_strings:
            known[opt.lstrip("-").replace("-", "_")] = action.dest

    overrides: dict[str, str] = {}
    for key, value in cp.items(args.command):
        dest = known.get(key.replace("-", "_"))
        if dest is None:
            raise ConfigError(f"unknown key {key!r} in config section [{args.command}]")
        overrides[dest] = value
    sub.set_defaults(**overrides)
    return parser.parse_args(argv)


def _jsonable(value):
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in sorted(value.items())}
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        out = float(value)
        return out if math.isfinite(out) else None
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, list):
        return [_jsonable(v) for v in value]
    return value


class _RunContext:
    """Where outputs go and which manifest they cite."""

    def __init__(self, args):
        config = {
            k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in _UNHASHED
        }
        payload = json.dumps(
            {"command": args.command, "config": config},
            sort_keys=True,
            separators=(",", ":"),
        )
        self.hash = hashlib.sha256(payload.encode()).hexdigest()[:12]
        self.manifest_name = f"manifest-{self.hash}.json"
        self.out_dir = args.out
        self.manifest = {
            "command": args.command,
            "config": config,
            "hash": self.hash,
            "seed": args.seed,
            "versions": {
                "fundselect": __version__,
                "numpy": np.__version__,
                "python": platform.python_version(),
                "scipy": scipy.__version__,
            },
        }

    def write_manifest(self) -> None:
        os.makedirs(self.out_dir, exist_ok=True)
        path = os.path.join(self.out_dir, self.manifest_name)
        with open(path, "w", newline="\n") as fh:
            json.dump(self.manifest, fh, sort_keys=True, indent=2)
            fh.write("\n")

    def write_csv(self, name: str, header: str, rows: list[str]) -> str:
        path = os.path.join(self.out_dir, name)
        with open(path, "w", newline="\n") as fh:
            fh.write(f"# manifest: {self.manifest_name}\n")
            fh.write(header + "\n")
            for row in rows:
                fh.write(row + "\n")
        return path

    def write_json(self, name: str, obj) -> str:
        path = os.path.join(self.out_dir, name)
        with open(path, "w", newline="\n") as fh:
            fh.write(f"# manifest: {self.manifest_name}\n")
            json.dump(_jsonable(obj), fh, sort_keys=True, indent=2, allow_nan=False)
            fh.write("\n")
        return path


def _fmt(x) -> str:
    return repr(float(x))


def _grids(args) -> GridConfig | None:
    given = {
        name: getattr(args, attr)
        for name, attr in (("m_grid", "grid_m"), ("nu0_grid", "grid_nu0"), ("tau_grid", "grid_tau"))
        if getattr(args, attr) is not None
    }
    return GridConfig(**given) if given else None


def _workers(args) -> int:
    if args.workers and args.workers > 0:
        return args.workers
    return os.cpu_count() or 1


def _require_panel(args) -> None:
    missing = [
        flag
        for flag, val in (
            ("--returns", args.returns),
            ("--factors", args.factors),
            ("--window", args.window),
        )
        if val is None
    ]
    if missing:
        raise ConfigError(f"missing required flag(s): {', '.join(missing)}")


def _load_window(args):
    _require_panel(args)
    by_fund = _parse_returns_csv(args.returns)
    by_date = _parse_factors_csv(args.factors)
    return assemble_window(by_fund, by_date, tuple(args.window))


def _run_pipeline(args, need_dvalues: bool = True):
    """Shared panel -> fit (-> d-values) path for fit/dvalues/select/rank-compare."""
    panel, factors, cleaning = _load_window(args)
    estimates = carhart_fit(panel, factors)
    dep = build_dependence(estimates, panel)
    params, diag = fit_mixture(estimates.z, dep, grids=_grids(args), seed=args.seed)
    report = None
    if need_dvalues:
        report = compute_dvalues(
            estimates.z, dep, params, n_samples=args.mc_samples, seed=args.seed
        )
    return panel, cleaning, estimates, dep, params, diag, report


def _selection_summary(res) -> dict:
    return {
        "k": res.k,
        "threshold": res.threshold,
        "conditional_fdr": res.conditional_fdr,
        "conditional_fnr": res.conditional_fnr,
    }


def _read_dvalue_csv(path: str) -> tuple[list[str], dict[str, np.ndarray]]:
    """Read a d-value CSV (our own output format, or any file with at least a
    fund_id and d_value column); a leading '# manifest:' line is skipped."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in lines if ln.strip()]
    if lines and lines[0].startswith("#"):
        lines = lines[1:]
    if not lines:
        raise DataError(f"{path}: empty d-value file")
    header = [c.strip() for c in lines[0].split(",")]
    if "fund_id" not in header or "d_value" not in header:
        raise DataError(f"{path}: need fund_id and d_value columns, got {header}")
    idx = {name: i for i, name in enumerate(header)}
    fund_ids: list[str] = []
    numeric: dict[str, list[float]] = {name: [] for name in header if name != "fund_id"}
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(cells)}")
        fund_ids.append(cells[idx["fund_id"]].strip())
        for name, vals in numeric.items():
            try:
                vals.append(float(cells[idx[name]]))
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric {name}") from None
    cols = {name: np.asarray(vals, dtype=float) for name, vals in numeric.items()}
    d = cols["d_value"]
    if np.any(~np.isfinite(d)) or np.any(d < 0.0) or np.any(d > 1.0):
        raise DataError(f"{path}: d_value column must lie in [0, 1]")
    return fund_ids, cols


def _cmd_fit(args, ctx: _RunContext) -> None:
    _, cleaning, estimates, dep, params, diag, _ = _run_pipeline(args, need_dvalues=False)
    ctx.write_json("cleaning.json", cleaning)
    feasible = sum(1 for rec in diag.grid_trace if rec.get("feasible"))
    ctx.write_json(
        "mixture_params.json",
        {
            "params": params.as_dict(),
            "diagnostics": {
                "m_pct": diag.m_pct,
                "v_hat": diag.v_hat,
                "tv": diag.tv,
                "n_grid_points": len(diag.grid_trace),
                "n_feasible": feasible,
            },
            "n_funds": len(estimates.fund_ids),
            "n_factors_rank": dep.rank,
        },
    )


def _cmd_dvalues(args, ctx: _RunContext) -> None:
    _, cleaning, estimates, dep, params, diag, report = _run_pipeline(args)
    ctx.write_json("cleaning.json", cleaning)
    lfdr = local_fdr(estimates.z, params)
    rows = [
        f"{fid},{_fmt(z)},{_fmt(d)},{_fmt(q)},{_fmt(l)}"
        for fid, z, d, q, l in zip(
            estimates.fund_ids, estimates.z, report.d, report.los, lfdr
        )
    ]
    ctx.write_csv("dvalues.csv", "fund_id,z,d_value,los,local_fdr", rows)
    ctx.write_json(
        "dvalues_meta.json",
        {
            "ess": report.ess,
            "n_samples": report.n_samples,
            "params": params.as_dict(),
            "tv": diag.tv,
        },
    )


def _cmd_select(args, ctx: _RunContext) -> None:
    if args.dvalues is not None and args.returns is not None:
        raise ConfigError("give either --dvalues or a panel (--returns/--factors), not both")
    if args.dvalues is not None:
        fund_ids, cols = _read_dvalue_csv(args.dvalues)
        d = cols["d_value"]
        z = cols.get("z")
        los = cols.get("los")
    else:
        _, _, estimates, _, params, _, report = _run_pipeline(args)
        fund_ids = list(estimates.fund_ids)
        d, z, los = report.d, estimates.z, report.los

    skilled = select_fdr_stepup(d, args.theta)
    meta = {"theta": args.theta, "skilled": _selection_summary(skilled)}
    columns: list[tuple[str, list[str]]] = [
        ("fund_id", list(fund_ids)),
        ("d_value", [_fmt(v) for v in d]),
        ("selected_skilled", [str(int(v)) for v in skilled.decisions]),
    ]
    if los is not None:
        unskilled = select_unskilled(los, args.theta)
        columns.append(("selected_unskilled", [str(int(v)) for v in unskilled.decisions]))
        meta["unskilled"] = _selection_summary(unskilled)
    if z is not None:
        pvals = one_sided_pvalues(z)
        bh = bh_select(z, args.theta)
        storey = storey_select(z, args.theta)
        columns.append(("p_value", [_fmt(v) for v in pvals]))
        columns.append(("bh_selected", [str(int(v)) for v in bh.decisions]))
        columns.append(("storey_selected", [str(int(v)) for v in storey.decisions]))
        meta["bh"] = _selection_summary(bh)
        meta["storey"] = _selection_summary(storey)
    if args.lam is not None:
        exact = optimal_decision(d, args.lam)
        columns.append(("lambda_selected", [str(int(v)) for v in exact.decisions]))
        meta["lambda"] = {"lam": args.lam, **_selection_summary(exact)}

    header = ",".join(name for name, _ in columns)
    rows = [",".join(col[i] for _, col in columns) for i in range(len(fund_ids))]
    ctx.write_csv("selection.csv", header, rows)
    ctx.write_json("selection_meta.json", meta)


def _cmd_simulate(args, ctx: _RunContext) -> None:
    setting = SimSetting(
        p=args.p,
        sparsity=args.sparsity,
        dependence=args.dep,
        theta=args.theta,
        reps=args.reps,
        seed=args.seed,
        n_months=args.months,
    )
    metrics = run_sim_study(
        setting, grids=_grids(args), n_samples=args.mc_samples, workers=_workers(args)
    )
    order = ("dvalue", "bh", "storey")
    summary_rows = [
        f"{name},{_fmt(metrics[name].mean_fdp)},{_fmt(metrics[name].mean_fnp)},"
        f"{_fmt(metrics[name].mean_selected)}"
        for name in order
    ]
    ctx.write_csv("sim_summary.csv", "method,mean_fdp,mean_fnp,mean_selected", summary_rows)

    long_rows = []
    for name in order:
        m = metrics[name]
        for i, (fdp, fnp, sel) in enumerate(zip(m.fdp, m.fnp, m.selected)):
            long_rows.append(f"{i},{name},{_fmt(fdp)},{_fmt(fnp)},{int(sel)}")
    ctx.write_csv("sim_reps.csv", "rep,method,fdp,fnp,selected", long_rows)

    ctx.write_json(
        "sim_detail.json",
        {
            "setting": {
                "p": setting.p,
                "sparsity": setting.sparsity,
                "dependence": setting.dependence,
                "theta": setting.theta,
                "reps": setting.reps,
                "seed": setting.seed,
                "n_months": setting.n_months,
            },
            "metrics": {
                name: {
                    "mean_fdp": metrics[name].mean_fdp,
                    "mean_fnp": metrics[name].mean_fnp,
                    "mean_selected": metrics[name].mean_selected,
                    "fdp": metrics[name].fdp,
                    "fnp": metrics[name].fnp,
                    "selected": metrics[name].selected,
                }
                for name in order
            },
        },
    )


def _cmd_backtest(args, ctx: _RunContext) -> None:
    if args.start_year is None or args.end_year is None:
        raise ConfigError("backtest needs --start-year and --end-year")
    _require_panel_files(args)
    config = BacktestConfig(
        start_year=args.start_year,
        end_year=args.end_year,
        window_years=args.window_years,
        theta=args.theta,
        initial_value=args.initial_value,
        fallback=args.fallback,
        benchmark_csv=args.benchmark,
        n_samples=args.mc_samples,
        grids=_grids(args),
    )
    track = run_backtest(args.returns, args.factors, config, seed=args.seed)

    strategies = sorted(track.values)
    rows = []
    for name in strategies:
        rows.append(f"{track.years[0] - 1},{name},{_fmt(track.values[name][0])},0")
    for i, year in enumerate(track.years):
        for name in strategies:
            count = len(track.selections[name].get(year, []))
            rows.append(f"{year},{name},{_fmt(track.values[name][i + 1])},{count}")
    ctx.write_csv("backtest_track.csv", "year,strategy,value,selected_count", rows)
    ctx.write_json(
        "backtest_selections.json",
        {
            "annualized": track.annualized,
            "selections": {
                name: {str(y): funds for y, funds in sel.items()}
                for name, sel in track.selections.items()
            },
            "years": track.years,
        },
    )


def _require_panel_files(args) -> None:
    missing = [
        flag
        for flag, val in (("--returns", args.returns), ("--factors", args.factors))
        if val is None
    ]
    if missing:
        raise ConfigError(f"missing required flag(s): {', '.join(missing)}")


def _cmd_rank_compare(args, ctx: _RunContext) -> None:
    if args.dvalues is not None and args.returns is not None:
        raise ConfigError("give either --dvalues or a panel (--returns/--factors), not both")
    if args.dvalues is not None:
        fund_ids, cols = _read_dvalue_csv(args.dvalues)
        if "z" not in cols:
            raise DataError(f"{args.dvalues}: rank-compare needs a z column")
        d, z = cols["d_value"], cols["z"]
    else:
        _, _, estimates, _, _, _, report = _run_pipeline(args)
        fund_ids = list(estimates.fund_ids)
        d, z = report.d, estimates.z

    result = rank_compare(z, d, one_sided_pvalues(z), top_n=args.top_n)
    for key in ("overlap", "d_only", "p_only"):
        result[f"{key}_funds"] = [fund_ids[i] for i in result[key]]
    ctx.write_json("rank_compare.json", result)


_HANDLERS = {
    "fit": _cmd_fit,
    "dvalues": _cmd_dvalues,
    "select": _cmd_select,
    "simulate": _cmd_simulate,
    "backtest": _cmd_backtest,
    "rank-compare": _cmd_rank_compare,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, by_name = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            args = _apply_config_file(argv, args, parser, by_name)
        ctx = _RunContext(args)
        ctx.write_manifest()
        _HANDLERS[args.command](args, ctx)
    except ConfigError as exc:
        print(f"[config-error] {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"[config-error] file not found: {exc.filename}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"[data-error] {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"[numerical-error] {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
