"""Command line interface.

Subcommands: run, compare, rates, check-robustness, sweep.  Exit codes are
part of the contract:

    0  success (rates: fitted slope inside the tolerance band)
    1  rates only: fitted slope outside the tolerance band
    2  invalid config or data (unknown keys, mismatched budgets, stepsize
       violations under --strict, rate windows with too few rows)
    3  robustness certification failure (check-robustness always;
       run/compare under --strict)
    4  runtime fault (staleness bound violation, non-finite iterates)
"""

from __future__ import annotations

import argparse
import concurrent.futures
import glob as globlib
import json
import os
import sys

from . import __version__
from .config import (
    ConfigError,
    adversary_ids,
    build_attack,
    build_dictionary,
    build_oracle,
    build_problem,
    build_runplan,
    build_schedule,
    build_workers,
    load_config,
    resolve_x0,
    seeds_from,
    set_by_path,
)
from .dictionaries import CertificationBudgetError, certify
from .engine import EngineFault
from .metrics import (
    TRACE_COLUMNS,
    Trace,
    _fmt,
    export,
    fit_rate,
    git_describe,
    load_trace,
    merge_traces,
)
from .schedules import check_stepsize_assumptions

EXIT_OK = 0
EXIT_BAND = 1
EXIT_CONFIG = 2
EXIT_CERT = 3
EXIT_FAULT = 4

UNREACHED = "--"

# metrics where a target counts as reached from above (larger is better)
_UPWARD_METRICS = ("test_metric",)


def _err(msg: str) -> None:
    print(f"farsign: {msg}", file=sys.stderr)


def _out_dir(args, cfg) -> str:
    out = getattr(args, "out", None)
    if out is None:
        out = (cfg.get("output") or {}).get("dir")
    if out is None:
        out = os.environ.get("FARSIGN_OUT_DIR", "out")
    os.makedirs(out, exist_ok=True)
    return out


def _apply_seed_override(cfg, args) -> list[int]:
    if getattr(args, "seed", None) is not None:
        return [args.seed]
    return seeds_from(cfg)


# ---------------------------------------------------------------------------
# Single-seed execution (module level so worker processes can import it)
# ---------------------------------------------------------------------------


def execute_seed(cfg: dict, seed: int, algorithm: str, snapshot_path=None) -> Trace:
    """Build every object from the config and run one seed."""
    from .sim import run

    obj, diag = build_problem(cfg)
    n_workers = cfg["sim"]["n_workers"]
    dictionary = build_dictionary(cfg, obj.dim, n_workers)
    schedule = build_schedule(cfg, dictionary.n_directions, n_workers)
    oracle = build_oracle(cfg, schedule, obj)
    attack = build_attack(cfg)
    workers = build_workers(cfg)
    x0 = resolve_x0(cfg, obj, seed)
    plan = build_runplan(cfg, seed, algorithm, snapshot_path=snapshot_path)
    trace = run(
        plan,
        dictionary,
        schedule,
        obj,
        oracle,
        attack=attack,
        workers=workers,
        x0=x0,
        diag_obj=diag,
    )
    trace.meta["config"] = cfg
    trace.meta["git"] = git_describe()
    trace.meta["package_version"] = __version__
    return trace


def _run_seeds(cfg, seeds, algorithm, jobs, out_dir, prefix) -> list[Trace]:
    snap_cadence = (cfg.get("output") or {}).get("snapshot_cadence")

    def snap_path(seed):
        if snap_cadence is None:
            return None
        return os.path.join(out_dir, f"{prefix}_{algorithm}_seed{seed}_snap.npz")

    if jobs <= 1 or len(seeds) == 1:
        return [execute_seed(cfg, s, algorithm, snap_path(s)) for s in seeds]
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [
            pool.submit(execute_seed, cfg, s, algorithm, snap_path(s)) for s in seeds
        ]
        return [f.result() for f in futures]


def _export_traces(traces, seeds, out_dir, prefix, arm) -> list[str]:
    written = []
    for seed, trace in zip(seeds, traces):
        base = os.path.join(out_dir, f"{prefix}_{arm}_seed{seed}")
        export(trace, csv_path=base + ".csv", jsonl_path=base + ".jsonl")
        written.extend([base + ".csv", base + ".jsonl"])
    if len(traces) > 1:
        merged = merge_traces(traces)
        merged.meta["config"] = traces[0].meta.get("config")
        merged.meta["git"] = traces[0].meta.get("git")
        base = os.path.join(out_dir, f"{prefix}_{arm}_merged")
        export(merged, csv_path=base + ".csv", jsonl_path=base + ".jsonl")
        written.extend([base + ".csv", base + ".jsonl"])
    return written


def _summary_line(trace: Trace, arm: str) -> str:
    last = trace.rows[-1]
    meta = trace.meta
    parts = [
        f"{arm} seed={meta.get('seed')}",
        f"events={meta.get('events')}",
        f"calls={meta.get('oracle_calls')}",
        f"final_f={_fmt(last.f_val)}",
        f"final_grad_l1={_fmt(last.grad_l1)}",
        f"sim_time={_fmt(last.sim_time)}",
        f"max_staleness={meta.get('max_staleness')}",
    ]
    if last.test_metric is not None:
        parts.insert(5, f"test_metric={_fmt(last.test_metric)}")
    return "  ".join(parts)


# ---------------------------------------------------------------------------
# Pre-run gates (stepsize assumptions, robustness certification)
# ---------------------------------------------------------------------------


def _stepsize_gate(cfg, strict: bool) -> int | None:
    obj_dim = cfg["problem"].get("dim", 1)
    n_workers = cfg["sim"]["n_workers"]
    dictionary = build_dictionary(cfg, obj_dim, n_workers)
    schedule = build_schedule(cfg, dictionary.n_directions, n_workers)
    report = check_stepsize_assumptions(schedule)
    if report.satisfied:
        return None
    for line in report.describe_violations():
        _err(f"stepsize assumption violated: {line}")
    if strict:
        _err("refusing to run under --strict with stepsize violations")
        return EXIT_CONFIG
    _err("continuing despite stepsize violations (no --strict)")
    return None


def _certification_gate(cfg, strict: bool) -> int | None:
    n_workers = cfg["sim"]["n_workers"]
    ids = adversary_ids(cfg, n_workers)
    if not ids:
        return None
    obj_dim = cfg["problem"].get("dim", 1)
    dictionary = build_dictionary(cfg, obj_dim, n_workers)
    try:
        cert = certify(dictionary, len(ids))
    except CertificationBudgetError as exc:
        _err(f"robustness certification skipped: {exc}")
        if strict:
            return EXIT_CONFIG
        return None
    print(
        f"robustness: {cert.verdict} eta={cert.margin_eta:.6g} "
        f"f={cert.f_adv} worst_subset={list(cert.worst_subset)}"
    )
    if not cert.passed:
        _err(
            f"dictionary is not robust to {cert.f_adv} adversaries "
            f"(margin {cert.margin_eta:.6g} <= 0)"
        )
        if strict:
            return EXIT_CERT
        _err("continuing despite failed certification (no --strict)")
    return None


def _gates(cfg, strict: bool, need_schedule: bool) -> int | None:
    if need_schedule:
        code = _stepsize_gate(cfg, strict)
        if code is not None:
            return code
    return _certification_gate(cfg, strict)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    seeds = _apply_seed_override(cfg, args)
    out_dir = _out_dir(args, cfg)
    prefix = (cfg.get("output") or {}).get("prefix", "run")
    code = _gates(cfg, args.strict, need_schedule=True)
    if code is not None:
        return code
    traces = _run_seeds(cfg, seeds, "farsign", args.jobs, out_dir, prefix)
    written = _export_traces(traces, seeds, out_dir, prefix, "farsign")
    for trace in traces:
        print(_summary_line(trace, "farsign"))
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def _time_to_target(trace: Trace, metric: str, threshold: float) -> float | None:
    upward = metric in _UPWARD_METRICS
    for row in trace.rows:
        value = getattr(row, metric)
        if value is None:
            continue
        if (upward and value >= threshold) or (not upward and value <= threshold):
            return row.sim_time
    return None


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    if cfg.get("baseline") is None:
        raise ConfigError("compare requires a baseline block")
    b_budget = cfg["baseline"].get("budget")
    if b_budget is not None and b_budget != cfg["sim"]["budget"]:
        raise ConfigError(
            f"baseline.budget {b_budget} != sim.budget {cfg['sim']['budget']}; "
            "compared arms must consume equal oracle budgets"
        )
    targets = (cfg.get("compare") or {}).get("targets") or {}
    for metric, thr in targets.items():
        if metric not in TRACE_COLUMNS:
            raise ConfigError(f"compare.targets: unknown metric {metric!r}")
        if not isinstance(thr, (int, float)) or isinstance(thr, bool):
            raise ConfigError(f"compare.targets.{metric} must be a number")
    seeds = _apply_seed_override(cfg, args)
    out_dir = _out_dir(args, cfg)
    prefix = (cfg.get("output") or {}).get("prefix", "run")
    code = _gates(cfg, args.strict, need_schedule=True)
    if code is not None:
        return code

    rows = []
    for arm in ("farsign", "baseline"):
        traces = _run_seeds(cfg, seeds, arm, args.jobs, out_dir, prefix)
        _export_traces(traces, seeds, out_dir, prefix, arm)
        for seed, trace in zip(seeds, traces):
            last = trace.rows[-1]
            row = {
                "algorithm": arm,
                "seed": seed,
                "final_f": last.f_val,
                "final_grad_l1": last.grad_l1,
                "final_test_metric": last.test_metric,
                "final_sim_time": last.sim_time,
            }
            for metric, thr in sorted(targets.items()):
                row[f"time_to_{metric}"] = _time_to_target(trace, metric, thr)
            rows.append(row)

    header = list(rows[0].keys())
    table_path = os.path.join(out_dir, f"{prefix}_compare.csv")
    with open(table_path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = []
            for key in header:
                v = row[key]
                if v is None:
                    cells.append(UNREACHED if key.startswith("time_to_") else "")
                elif isinstance(v, str):
                    cells.append(v)
                elif isinstance(v, int):
                    cells.append(str(v))
                else:
                    cells.append(_fmt(v))
            fh.write(",".join(cells) + "\n")
    print("  ".join(header))
    for row in rows:
        print(
            "  ".join(
                UNREACHED
                if row[k] is None and k.startswith("time_to_")
                else ("" if row[k] is None else (str(row[k]) if isinstance(row[k], (str, int)) else _fmt(row[k])))
                for k in header
            )
        )
    print(f"wrote {table_path}")
    return EXIT_OK


def cmd_rates(args) -> int:
    paths: list[str] = []
    for pattern in args.traces:
        hits = sorted(globlib.glob(pattern))
        if not hits and os.path.exists(pattern):
            hits = [pattern]
        paths.extend(hits)
    if not paths:
        raise ConfigError(f"no trace files match {args.traces}")
    traces = [load_trace(p) for p in paths]
    trace = traces[0] if len(traces) == 1 else merge_traces(traces)
    try:
        fit = fit_rate(trace, args.metric, (args.window[0], args.window[1]))
    except ValueError as exc:
        raise ConfigError(f"rate fit failed: {exc}") from exc
    print(
        f"metric={args.metric} window=[{args.window[0]:g}, {args.window[1]:g}] "
        f"rows={fit.n_rows} slope={fit.slope:.6f} stderr={fit.stderr:.6f} "
        f"r2={fit.r_squared:.4f}"
    )
    if args.target is None:
        return EXIT_OK
    delta = abs(fit.slope - args.target)
    inside = delta <= args.tol
    print(
        f"target={args.target:g} tol={args.tol:g} |slope-target|={delta:.6f} "
        f"{'within' if inside else 'outside'} band"
    )
    return EXIT_OK if inside else EXIT_BAND


def cmd_check_robustness(args) -> int:
    cfg = load_config(args.config)
    n_workers = cfg["sim"]["n_workers"]
    obj_dim = cfg["problem"].get("dim", 1)
    dictionary = build_dictionary(cfg, obj_dim, n_workers)
    f_adv = args.f if args.f is not None else len(adversary_ids(cfg, n_workers))
    try:
        cert = certify(
            dictionary, f_adv, method=args.method, samples=args.samples
        )
    except CertificationBudgetError as exc:
        raise ConfigError(str(exc)) from exc
    print(f"workers={cert.n_workers} f={cert.f_adv} method={cert.method}")
    print(f"margin_eta={cert.margin_eta!r}")
    print(f"worst_subset={list(cert.worst_subset)}")
    print(f"verdict={cert.verdict}")
    return EXIT_OK if cert.passed else EXIT_CERT


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    sweep = cfg.get("sweep")
    if not sweep:
        raise ConfigError("sweep requires a sweep block with path and values")
    path, values = sweep.get("path"), sweep.get("values")
    if not path or not isinstance(values, list) or not values:
        raise ConfigError("sweep.path and a nonempty sweep.values are required")
    out_dir = _out_dir(args, cfg)
    prefix = (cfg.get("output") or {}).get("prefix", "run")

    rows = []
    for value in values:
        cfg_v = set_by_path(cfg, path, value)
        seeds = _apply_seed_override(cfg_v, args)
        code = _gates(cfg_v, args.strict, need_schedule=True)
        if code is not None:
            return code
        traces = _run_seeds(cfg_v, seeds, "farsign", args.jobs, out_dir, prefix)
        for seed, trace in zip(seeds, traces):
            last = trace.rows[-1]
            rows.append(
                {
                    "value": json.dumps(value),
                    "seed": seed,
                    "final_f": last.f_val,
                    "final_grad_l1": last.grad_l1,
                    "final_test_metric": last.test_metric,
                    "final_sim_time": last.sim_time,
                }
            )
        finals = [r["final_f"] for r in rows if r["value"] == json.dumps(value)]
        mean_f = sum(finals) / len(finals)
        print(f"{path}={json.dumps(value)}  seeds={len(finals)}  mean_final_f={_fmt(mean_f)}")

    table_path = os.path.join(out_dir, f"{prefix}_sweep.csv")
    header = ["value", "seed", "final_f", "final_grad_l1", "final_test_metric", "final_sim_time"]
    with open(table_path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = []
            for key in header:
                v = row[key]
                if v is None:
                    cells.append("")
                elif isinstance(v, (str, int)):
                    cells.append(str(v))
                else:
                    cells.append(_fmt(v))
            fh.write(",".join(cells) + "\n")
    print(f"wrote {table_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(sub, config_required: bool = True) -> None:
    sub.add_argument("--config", required=config_required, help="path to a JSON config")
    sub.add_argument("--seed", type=int, default=None, help="override sim.seeds with one seed")
    sub.add_argument("--jobs", type=int, default=1, help="parallel worker processes across seeds")
    sub.add_argument("--strict", action="store_true", help="turn gate warnings into failures")
    sub.add_argument("--out", default=None, help="output directory (default: output.dir, then $FARSIGN_OUT_DIR, then ./out)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="farsign",
        description="Simulate and measure sign-based resilient distributed optimization.",
    )
    parser.add_argument("--version", action="version", version=f"farsign {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p_run = subs.add_parser("run", help="run the signed-projection algorithm for each seed")
    _add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cmp = subs.add_parser("compare", help="run matched-budget arms against a buffered baseline")
    _add_common(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_rates = subs.add_parser("rates", help="fit a log-log rate over a window of a trace")
    p_rates.add_argument("--traces", nargs="+", required=True, help="trace files or globs (CSV or JSONL)")
    p_rates.add_argument("--metric", default="ergodic_avg", choices=[c for c in TRACE_COLUMNS if c != "n"])
    p_rates.add_argument("--window", nargs=2, type=float, required=True, metavar=("LO", "HI"))
    p_rates.add_argument("--target", type=float, default=None, help="expected slope")
    p_rates.add_argument("--tol", type=float, default=0.1, help="tolerance band around the target")
    p_rates.set_defaults(func=cmd_rates)

    p_chk = subs.add_parser("check-robustness", help="certify the dictionary's directional margin")
    p_chk.add_argument("--config", required=True)
    p_chk.add_argument("--f", type=int, default=None, help="override the adversary count")
    p_chk.add_argument("--method", default="auto", help="margin method (auto/analytic_identity/exact_2d/monte_carlo)")
    p_chk.add_argument("--samples", type=int, default=100_000)
    p_chk.add_argument("--strict", action="store_true")
    p_chk.set_defaults(func=cmd_check_robustness)

    p_sw = subs.add_parser("sweep", help="rerun the config across a list of values for one key")
    _add_common(p_sw)
    p_sw.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    except EngineFault as exc:
        _err(f"runtime fault: {exc}")
        return EXIT_FAULT
    except ValueError as exc:
        _err(f"invalid setup: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
