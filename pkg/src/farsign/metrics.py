"""Trace recording, the ergodic gradient statistic, rate fitting, and
deterministic exports.

Exports are byte-deterministic: floats are written with repr (shortest
round-trip form), JSON objects with sorted keys, and the run manifest is
the first JSONL line.  Rerunning the same config and seed reproduces the
files exactly.
"""

from __future__ import annotations

import csv
import json
import subprocess
from dataclasses import dataclass

import numpy as np

TRACE_COLUMNS = (
    "n",
    "sim_time",
    "f_val",
    "grad_l1",
    "track_err",
    "ergodic_avg",
    "oracle_calls",
    "test_metric",
)


@dataclass(frozen=True)
class TraceRow:
    n: int
    sim_time: float
    f_val: float
    grad_l1: float
    track_err: float | None
    ergodic_avg: float
    oracle_calls: int
    test_metric: float | None


class Trace:
    """Append-only sequence of rows plus a manifest dictionary."""

    def __init__(self, meta: dict | None = None):
        self.rows: list[TraceRow] = []
        self.meta: dict = meta if meta is not None else {}

    def append(self, row: TraceRow) -> None:
        if self.rows and row.n <= self.rows[-1].n:
            raise ValueError("row event counters must be strictly increasing")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        """Column as a float array; missing optional values become NaN."""
        if name not in TRACE_COLUMNS:
            raise KeyError(f"unknown trace column {name!r}")
        vals = [getattr(r, name) for r in self.rows]
        return np.array([np.nan if v is None else float(v) for v in vals])

    @property
    def ns(self) -> np.ndarray:
        return np.array([r.n for r in self.rows], dtype=np.int64)


class ErgodicAverage:
    """Running weighted average sum(alpha_k * g_k) / sum(alpha_k)."""

    def __init__(self) -> None:
        self.num = 0.0
        self.den = 0.0

    def update(self, alpha: float, grad_l1: float) -> float:
        if alpha <= 0:
            raise ValueError("ergodic weights must be positive")
        self.num += alpha * grad_l1
        self.den += alpha
        return self.num / self.den

    @property
    def value(self) -> float:
        if self.den == 0:
            raise ValueError("ergodic average undefined before the first update")
        return self.num / self.den


# ---------------------------------------------------------------------------
# Rate fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    window: tuple[float, float]
    slope: float
    intercept: float
    r_squared: float
    stderr: float
    n_rows: int


def fit_rate_series(ns, values, window) -> RateFit:
    """OLS of log(value) on log(n) over rows inside the window; rows with
    nonpositive or non-finite values are dropped."""
    ns = np.asarray(ns, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(window[0]), float(window[1])
    if lo <= 0 or hi <= lo:
        raise ValueError("window must satisfy 0 < lo < hi")
    mask = (ns >= lo) & (ns <= hi) & (values > 0) & np.isfinite(values)
    k = int(mask.sum())
    if k < 10:
        raise ValueError(f"need at least 10 usable rows in the window, found {k}")
    x = np.log(ns[mask])
    y = np.log(values[mask])
    xm = x - x.mean()
    sxx = float(xm @ xm)
    if sxx == 0:
        raise ValueError("window collapses to a single event count")
    slope = float(xm @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r_squared = 1.0 if ss_tot <= 1e-300 else max(0.0, 1.0 - ss_res / ss_tot)
    stderr = float(np.sqrt(max(ss_res, 0.0) / (k - 2) / sxx))
    return RateFit(
        window=(lo, hi),
        slope=slope,
        intercept=intercept,
        r_squared=min(1.0, r_squared),
        stderr=stderr,
        n_rows=k,
    )


def fit_rate(trace: Trace, metric: str, window) -> RateFit:
    return fit_rate_series(trace.ns, trace.column(metric), window)


def merge_traces(traces) -> Trace:
    """Average traces row-by-row; all inputs must share the same event grid
    (same config run under different seeds)."""
    traces = list(traces)
    if not traces:
        raise ValueError("no traces to merge")
    base = traces[0].ns
    for t in traces[1:]:
        if len(t) != len(traces[0]) or (t.ns != base).any():
            raise ValueError("traces have mismatched event grids; cannot merge")
    merged = Trace(meta={"merged_from": len(traces)})
    seeds = [t.meta.get("seed") for t in traces if "seed" in t.meta]
    if seeds:
        merged.meta["seeds"] = seeds
    for i in range(len(base)):
        rows = [t.rows[i] for t in traces]
        calls = rows[0].oracle_calls
        if any(r.oracle_calls != calls for r in rows):
            raise ValueError("traces disagree on oracle calls at a shared row")
        merged.append(
            TraceRow(
                n=int(base[i]),
                sim_time=float(np.mean([r.sim_time for r in rows])),
                f_val=float(np.mean([r.f_val for r in rows])),
                grad_l1=float(np.mean([r.grad_l1 for r in rows])),
                track_err=_mean_optional([r.track_err for r in rows]),
                ergodic_avg=float(np.mean([r.ergodic_avg for r in rows])),
                oracle_calls=calls,
                test_metric=_mean_optional([r.test_metric for r in rows]),
            )
        )
    return merged


def _mean_optional(vals) -> float | None:
    if any(v is None for v in vals):
        return None
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# Export / load
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def export_csv(trace: Trace, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for r in trace.rows:
            fh.write(",".join(_fmt(getattr(r, c)) for c in TRACE_COLUMNS) + "\n")


def export_jsonl(trace: Trace, path) -> None:
    with open(path, "w", newline="\n") as fh:
        manifest = {"kind": "manifest", **trace.meta}
        fh.write(json.dumps(manifest, sort_keys=True, allow_nan=False) + "\n")
        for r in trace.rows:
            obj = {c: getattr(r, c) for c in TRACE_COLUMNS}
            fh.write(json.dumps(obj, sort_keys=True, allow_nan=False) + "\n")


def export(trace: Trace, csv_path=None, jsonl_path=None) -> None:
    if csv_path is not None:
        export_csv(trace, csv_path)
    if jsonl_path is not None:
        export_jsonl(trace, jsonl_path)


def _parse_cell(name: str, cell: str):
    if cell == "":
        return None
    if name in ("n", "oracle_calls"):
        return int(cell)
    return float(cell)


def load_trace_csv(path) -> Trace:
    trace = Trace()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected CSV header {header}")
        for cells in reader:
            vals = {c: _parse_cell(c, cell) for c, cell in zip(TRACE_COLUMNS, cells)}
            trace.append(TraceRow(**vals))
    return trace


def load_trace_jsonl(path) -> Trace:
    trace = Trace()
    with open(path) as fh:
        first = json.loads(fh.readline())
        if first.get("kind") == "manifest":
            meta = dict(first)
            meta.pop("kind")
            trace.meta = meta
        else:
            trace.append(TraceRow(**{c: first[c] for c in TRACE_COLUMNS}))
        for line in fh:
            obj = json.loads(line)
            trace.append(TraceRow(**{c: obj[c] for c in TRACE_COLUMNS}))
    return trace


def load_trace(path) -> Trace:
    path = str(path)
    if path.endswith(".jsonl"):
        return load_trace_jsonl(path)
    return load_trace_csv(path)


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=10,
        )
    except (OSError, subprocess.TimeoutExpired):
        return "unknown"
    if out.returncode != 0:
        return "unknown"
    return out.stdout.strip() or "unknown"


# ---------------------------------------------------------------------------
# State snapshots and offline recomputation
# ---------------------------------------------------------------------------


def save_snapshots(path, ns, xs, ys, honest) -> None:
    """Store iterate/memory snapshots for offline diagnostic checks."""
    np.savez(
        path,
        ns=np.asarray(ns, dtype=np.int64),
        xs=np.asarray(xs, dtype=np.float64),
        ys=np.asarray(ys, dtype=np.float64),
        honest=np.asarray(honest, dtype=bool),
    )


def recompute_diagnostics(path, obj, dictionary) -> list[tuple[int, float, float]]:
    """Recompute (n, grad_l1, track_err) from saved snapshots; used to check
    the in-loop values offline."""
    with np.load(path) as data:
        ns, xs, ys, honest = data["ns"], data["xs"], data["ys"], data["honest"]
    out = []
    for i in range(len(ns)):
        g = obj.grad(xs[i])
        grad_l1 = float(np.abs(g).sum())
        if dictionary.is_identity:
            err = ys[i] - g[None, :]
        else:
            targets = np.stack([a.T @ g for a in dictionary.matrices])
            err = ys[i] - targets
        norms = np.sqrt((err * err).sum(axis=1))[honest]
        track = float(norms.mean()) if len(norms) else 0.0
        out.append((int(ns[i]), grad_l1, track))
    return out


if __name__ == "__main__":
    ns = np.arange(10, 2000, 7)
    fit = fit_rate_series(ns, 3.0 * ns ** (-0.5), (10, 2000))
    print("slope on exact n^-0.5 series:", fit.slope, "r2:", fit.r_squared)
    erg = ErgodicAverage()
    print("ergodic of (0, 2) with unit weights:", erg.update(1.0, 0.0), erg.update(1.0, 2.0))
