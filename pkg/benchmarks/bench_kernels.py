"""Benchmark the compiled kernel core against the pure-numpy fallback.

Runs the same workloads through both backends and reports per-call times
and the end-to-end event rate of a representative simulation loop.

    python3 benchmarks/bench_kernels.py [--events N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from farsign._kernels import _ops_py

try:
    from farsign._kernels import _core
except ImportError:
    _core = None


def _time_call(fn, repeats: int) -> float:
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_ops(backend, name: str, d: int, k: int, repeats: int) -> dict[str, float]:
    q = np.linspace(0.5, 3.0, d)
    c = np.zeros(d)
    x = np.linspace(-2.0, 2.0, d)
    y = np.linspace(-1.0, 1.0, d)
    w = np.full(d, 1.0 / d)
    idx = np.sort(np.random.default_rng(0).choice(d, size=k, replace=False)).astype(np.int64)
    vals = np.linspace(-0.5, 0.5, k)
    out = np.empty(k)
    rng = np.random.Generator(np.random.Philox(key=7))

    times = {
        "signed_update": _time_call(lambda: backend.signed_update(x, 1e-3, idx, w, y), repeats),
        "y_update": _time_call(lambda: backend.y_update(y, 1e-2, idx, vals), repeats),
        "batch_first_noisy": _time_call(
            lambda: backend.batch_values_native(1, q, c, 0.0, x, idx, 0, 0.5, 0.0, False, 0.0, rng, out),
            repeats,
        ),
        "batch_zeroth_coupled": _time_call(
            lambda: backend.batch_values_native(2, q, c, 1.0, x, idx, 1, 0.0, 0.0, True, 1e-3, rng, out),
            repeats,
        ),
        "native_grad_l1": _time_call(lambda: backend.native_grad_l1(1, q, c, 0.0, x), repeats),
    }
    print(f"{name} backend (d={d}, k={k}, {repeats} calls):")
    for label, sec in times.items():
        print(f"  {label:22s} {sec * 1e6:9.2f} us/call")
    return times


def bench_sim(events: int) -> None:
    """End-to-end event loop on both backends through the public API."""
    import importlib
    import os
    import subprocess
    import sys

    code = (
        "import time, numpy as np\n"
        "from farsign import (QuadraticObjective, OracleSpec, preset,\n"
        "    identity_dictionary, make_workers, RunPlan, run, kernel_backend)\n"
        "d = 50\n"
        "obj = QuadraticObjective(d, curvature=np.linspace(0.5, 2.0, d))\n"
        "plan = RunPlan(budget={budget}, directions_per_event=10, seed=1)\n"
        "sched = preset('fo_thm6', m=d, n_workers=8)\n"
        "oracle = OracleSpec(order='first', sigma=0.3)\n"
        "workers = make_workers(8)\n"
        "t0 = time.perf_counter()\n"
        "trace = run(plan, identity_dictionary(d, 8), sched, obj, oracle, workers=workers,\n"
        "            x0=np.ones(d))\n"
        "dt = time.perf_counter() - t0\n"
        "ev = trace.meta['events']\n"
        "print(f'{{kernel_backend}} backend: {{ev}} events in {{dt:.3f}}s '\n"
        "      f'({{ev / dt:,.0f}} events/s)')\n"
    ).format(budget=events * 10)
    for env_val in ("0", "1"):
        env = dict(os.environ, FARSIGN_PURE_PYTHON=env_val)
        subprocess.run([sys.executable, "-c", code], env=env, check=True)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--events", type=int, default=20_000, help="events for the end-to-end loop")
    parser.add_argument("--repeats", type=int, default=20_000, help="calls per micro-benchmark")
    args = parser.parse_args()

    for d, k in ((50, 10), (500, 64)):
        bench_ops(_ops_py, "python", d, k, args.repeats)
        if _core is not None:
            bench_ops(_core, "compiled", d, k, args.repeats)
        else:
            print("compiled backend unavailable; skipping")
    print()
    bench_sim(args.events)


if __name__ == "__main__":
    main()
