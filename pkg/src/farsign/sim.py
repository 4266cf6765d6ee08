"""Deterministic event-driven asynchronous simulation.

Workers hold at most one in-flight task; a priority queue on (ready_time,
worker index) orders completions.  A task is dispatched with a snapshot of
the current iterate, takes compute_time * c_oracle * calls virtual seconds,
and on completion reports either directional values (FAR-SIGN) or a dense
gradient estimate (baseline).  Staleness is the number of server events
between dispatch and completion; queue dynamics alone produce it (no
injected delays).

Randomness is split into fixed Philox streams keyed by (stream_id, seed):
arrivals (compute times and direction subsets), oracle noise, attack noise,
data shuffling, and initialization.  Stream isolation keeps attack on/off
runs paired: with kind="none" the adversary flags have no effect on the
trace.  Every worker consumes oracle calls (adversaries corrupt values the
oracle produced), so the call budget advances uniformly and the same
config always yields the same event grid.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from heapq import heappop, heappush

import numpy as np

from . import _kernels
from .attacks import AttackSpec, HonestStats, corrupt_vector
from .baselines import AggregatorSpec, BufferState, cyber0_estimate, gradient_estimate
from .dictionaries import DirectionDictionary
from .engine import EngineFault, FarSignEngine, FeedbackEvent
from .metrics import ErgodicAverage, Trace, TraceRow, save_snapshots
from .problems import Objective, OracleSpec, batch_feedback
from .schedules import ZEROTH_COUPLED, ZEROTH_DECOUPLED, ScheduleSpec, schedule_at

STREAM_ARRIVAL = 0
STREAM_ORACLE = 1
STREAM_ATTACK = 2
STREAM_DATA = 3
STREAM_INIT = 4

_MASK64 = (1 << 64) - 1

COMPUTE_KINDS = ("fixed", "uniform", "lognormal")


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent generator for one of the fixed streams of a run."""
    return np.random.Generator(np.random.Philox(key=(stream << 64) | (seed & _MASK64)))


# ---------------------------------------------------------------------------
# Worker models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComputeTime:
    """Per-task compute time distribution with bounded support.

    lognormal is clamped to [exp(mu - 3 sigma), exp(mu + 3 sigma)] (upper
    end capped at t_max when given); bounded support keeps the staleness
    bound finite.
    """

    kind: str = "fixed"
    t: float = 1.0
    lo: float = 1.0
    hi: float = 2.0
    mu: float = 0.0
    sigma: float = 0.25
    t_max: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in COMPUTE_KINDS:
            raise ValueError(f"compute time kind must be one of {COMPUTE_KINDS}")
        lb, ub = self.bounds()
        if not (0 < lb <= ub and math.isfinite(ub)):
            raise ValueError(f"compute time support [{lb}, {ub}] must be positive and finite")

    def bounds(self) -> tuple[float, float]:
        if self.kind == "fixed":
            return self.t, self.t
        if self.kind == "uniform":
            return self.lo, self.hi
        lb = math.exp(self.mu - 3.0 * self.sigma)
        ub = math.exp(self.mu + 3.0 * self.sigma)
        if self.t_max is not None:
            ub = min(ub, self.t_max)
        return lb, ub

    def sample(self, rng: np.random.Generator) -> float:
        if self.kind == "fixed":
            return self.t
        if self.kind == "uniform":
            return float(rng.uniform(self.lo, self.hi))
        lb, ub = self.bounds()
        raw = math.exp(self.mu + self.sigma * rng.standard_normal())
        return min(max(raw, lb), ub)


@dataclass(frozen=True)
class WorkerModel:
    id: int
    honest: bool = True
    compute: ComputeTime = field(default_factory=ComputeTime)


def make_workers(
    n_workers: int, compute: ComputeTime | None = None, adversarial=()
) -> list[WorkerModel]:
    compute = compute if compute is not None else ComputeTime()
    bad = set(int(i) for i in adversarial)
    if bad and (min(bad) < 0 or max(bad) >= n_workers):
        raise ValueError("adversarial worker index out of range")
    return [WorkerModel(id=i, honest=i not in bad, compute=compute) for i in range(n_workers)]


def staleness_bound(workers) -> int:
    """Integer bound on event staleness from the bounded compute supports.

    While one task of worker w is in flight (at most ub_w long), any other
    worker v completes at most floor(ub_w / lb_v) + 1 tasks, so the events
    applied in between are bounded by the sum over v != w.
    """
    n = len(workers)
    if n == 0:
        raise ValueError("no workers")
    if n == 1:
        return 0
    bounds = [w.compute.bounds() for w in workers]
    if all(w.compute.kind == "fixed" for w in workers):
        ts = {w.compute.t for w in workers}
        if len(ts) == 1:
            return n - 1
    best = 0
    for w in range(n):
        ub_w = bounds[w][1]
        total = sum(
            math.floor(ub_w / bounds[v][0]) + 1 for v in range(n) if v != w
        )
        best = max(best, total)
    return best


# ---------------------------------------------------------------------------
# Run plans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CostModel:
    """Virtual-time cost constants; None picks the documented defaults
    (c_upd = K, c_agg = d/100 + B) at run time."""

    c_oracle: float = 1.0
    c_upd: float | None = None
    c_agg: float | None = None

    def __post_init__(self) -> None:
        for v in (self.c_oracle, self.c_upd, self.c_agg):
            if v is not None and v < 0:
                raise ValueError("cost constants must be nonnegative")


BASELINE_ESTIMATORS = ("cyber0", "gradient")


@dataclass(frozen=True)
class BaselinePlan:
    aggregator: AggregatorSpec
    buffer_size: int | None = None
    gamma: float = 0.2
    decay: bool = False
    estimator: str = "cyber0"
    lam: float = 1e-3

    def __post_init__(self) -> None:
        if self.estimator not in BASELINE_ESTIMATORS:
            raise ValueError(f"estimator must be one of {BASELINE_ESTIMATORS}")
        if self.estimator == "cyber0" and self.lam <= 0:
            raise ValueError("cyber0 needs a positive perturbation radius")


@dataclass(frozen=True)
class RunPlan:
    budget: int
    algorithm: str = "farsign"
    directions_per_event: int = 1
    seed: int = 0
    cost: CostModel = field(default_factory=CostModel)
    eval_cadence: int = 1000
    trace_cadence: int = 100
    dense_until: int = 1000
    snapshot_cadence: int | None = None
    snapshot_path: str | None = None
    baseline: BaselinePlan | None = None
    progress: bool = False

    def __post_init__(self) -> None:
        if self.algorithm not in ("farsign", "baseline"):
            raise ValueError("algorithm must be 'farsign' or 'baseline'")
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if self.directions_per_event < 1:
            raise ValueError("directions_per_event must be at least 1")
        if self.eval_cadence < 1 or self.trace_cadence < 1:
            raise ValueError("cadences must be positive")
        if self.algorithm == "baseline" and self.baseline is None:
            raise ValueError("baseline runs need a baseline plan")
        if self.snapshot_cadence is not None and self.snapshot_path is None:
            raise ValueError("snapshot cadence set without a snapshot path")


# ---------------------------------------------------------------------------
# Run loop
# ---------------------------------------------------------------------------


class _Recorder:
    """Trace row bookkeeping shared by both run loops."""

    def __init__(self, plan: RunPlan, diag_obj: Objective, honest: np.ndarray):
        self.plan = plan
        self.diag_obj = diag_obj
        self.honest = honest
        self.trace = Trace()
        self.erg = ErgodicAverage()
        self.last_recorded = -1
        self.snap_ns: list[int] = []
        self.snap_xs: list[np.ndarray] = []
        self.snap_ys: list[np.ndarray] = []

    def due(self, n: int) -> bool:
        return n <= self.plan.dense_until or n % self.plan.trace_cadence == 0

    def record(
        self,
        n: int,
        sim_time: float,
        x: np.ndarray,
        calls: int,
        alpha: float,
        engine: FarSignEngine | None,
        per_event_ergodic: bool,
        final: bool = False,
    ) -> None:
        g = self.diag_obj.grad(x)
        grad_l1 = float(np.abs(g).sum())
        if not per_event_ergodic:
            self.erg.update(alpha, grad_l1)
        f_val = self.diag_obj.eval(x)
        if not math.isfinite(f_val) or not math.isfinite(grad_l1):
            raise EngineFault(f"non-finite objective diagnostics at event {n}")
        track = engine.mean_tracking_error(g, self.honest) if engine is not None else None
        test = None
        if final or n % self.plan.eval_cadence == 0:
            test = self.diag_obj.test_metric(x)
        self.trace.append(
            TraceRow(
                n=n,
                sim_time=sim_time,
                f_val=f_val,
                grad_l1=grad_l1,
                track_err=track,
                ergodic_avg=self.erg.value,
                oracle_calls=calls,
                test_metric=test,
            )
        )
        self.last_recorded = n

    def maybe_snapshot(self, n: int, x: np.ndarray, y: np.ndarray | None) -> None:
        cadence = self.plan.snapshot_cadence
        if cadence is None or n % cadence != 0:
            return
        self.snap_ns.append(n)
        self.snap_xs.append(x.copy())
        if y is not None:
            self.snap_ys.append(y.copy())

    def finish(self) -> None:
        if self.plan.snapshot_cadence is not None and self.snap_ns:
            ys = self.snap_ys if self.snap_ys else np.zeros((len(self.snap_ns), 0, 0))
            save_snapshots(self.plan.snapshot_path, self.snap_ns, self.snap_xs, ys, self.honest)


def _validate_workers(workers, expected: int | None) -> np.ndarray:
    ids = [w.id for w in workers]
    if ids != list(range(len(workers))):
        raise ValueError("worker ids must be 0..N-1 in order")
    if expected is not None and len(workers) != expected:
        raise ValueError(
            f"dictionary expects {expected} workers, got {len(workers)}"
        )
    return np.array([w.honest for w in workers], dtype=bool)


def run(
    plan: RunPlan,
    dictionary: DirectionDictionary | None,
    schedule: ScheduleSpec | None,
    obj: Objective,
    oracle: OracleSpec,
    attack: AttackSpec | None = None,
    workers=None,
    x0: np.ndarray | None = None,
    diag_obj: Objective | None = None,
) -> Trace:
    """Execute one run; the result is a deterministic function of the
    arguments.  diag_obj overrides the objective used for trace
    diagnostics (f_val, gradients, test metric), e.g. a fixed subsample
    of a large dataset."""
    if workers is None:
        raise ValueError("run needs a worker list (see make_workers)")
    attack = attack if attack is not None else AttackSpec()
    diag_obj = diag_obj if diag_obj is not None else obj
    if plan.algorithm == "farsign":
        return _run_farsign(plan, dictionary, schedule, obj, oracle, attack, workers, x0, diag_obj)
    return _run_baseline(plan, obj, oracle, attack, workers, x0, diag_obj, schedule)


def _run_farsign(plan, dictionary, schedule, obj, oracle, attack, workers, x0, diag_obj):
    if dictionary is None or schedule is None:
        raise ValueError("farsign runs need a dictionary and a schedule")
    if dictionary.dim != obj.dim:
        raise ValueError(f"dictionary dim {dictionary.dim} != objective dim {obj.dim}")
    honest = _validate_workers(workers, dictionary.n_workers)
    if attack.kind == "none":
        # no attack means every worker behaves honestly; dropping the flags
        # here keeps the trace bit-identical to an unflagged run
        honest = np.ones(len(workers), dtype=bool)
    m = dictionary.n_directions
    k = plan.directions_per_event
    if k > m:
        raise ValueError(f"directions_per_event = {k} exceeds m = {m}")
    zeroth = oracle.order == "zeroth"
    if zeroth != schedule.zeroth_order:
        raise ValueError("oracle order and schedule mode disagree")
    if schedule.mode == ZEROTH_COUPLED and not oracle.coupled:
        raise ValueError("coupled schedule mode with a decoupled oracle")
    if schedule.mode == ZEROTH_DECOUPLED and oracle.coupled:
        raise ValueError("decoupled schedule mode with a coupled oracle")

    rng_arr = stream_rng(plan.seed, STREAM_ARRIVAL)
    rng_orc = stream_rng(plan.seed, STREAM_ORACLE)
    rng_att = stream_rng(plan.seed, STREAM_ATTACK)
    rng_data = stream_rng(plan.seed, STREAM_DATA)
    obj.reseed_batches(rng_data)

    engine = FarSignEngine(dictionary, schedule, x0)
    tau_max = staleness_bound(workers)
    stats = HonestStats()
    calls_per_event = 2 * k if zeroth else k
    c_upd = plan.cost.c_upd if plan.cost.c_upd is not None else float(k)
    task_cost = plan.cost.c_oracle * calls_per_event
    rec = _Recorder(plan, diag_obj, honest)
    per_event_ergodic = obj.kernel_kind is not None and diag_obj is obj
    use_matrix = None if dictionary.is_identity else True
    idx_all = np.arange(m, dtype=np.int64) if k == m else None

    heap: list = []

    def dispatch(wid: int, now: float) -> None:
        duration = workers[wid].compute.sample(rng_arr) * task_cost
        if idx_all is not None:
            idx = idx_all
        else:
            idx = np.sort(rng_arr.choice(m, size=k, replace=False)).astype(np.int64)
        heappush(heap, (now + duration, wid, engine.n, idx, engine.x.copy()))

    for w in workers:
        dispatch(w.id, 0.0)

    calls = 0
    sim_time = 0.0
    max_stale = 0
    while calls + calls_per_event <= plan.budget:
        ready, wid, snap_n, idx, x_snap = heappop(heap)
        stale = engine.n - snap_n
        if stale > tau_max:
            raise EngineFault(f"staleness {stale} exceeds bound {tau_max} at event {engine.n}")
        max_stale = max(max_stale, stale)
        alpha, _, lam = schedule_at(schedule, engine.n)
        matrix = dictionary.matrices[wid] if use_matrix else None
        values, ev_calls = batch_feedback(
            obj, oracle, x_snap, idx, rng_orc, lam=lam, batch_id=engine.n, matrix=matrix
        )
        if honest[wid]:
            stats.update_many(values)
        else:
            values = np.asarray(
                corrupt_vector(attack, values, stats, rng_att), dtype=np.float64
            )
        engine.apply(FeedbackEvent(worker=wid, indices=idx, values=values, snapshot_n=snap_n))
        calls += ev_calls
        n_now = engine.n
        if per_event_ergodic:
            g_l1 = _kernels.ops.native_grad_l1(
                obj.kernel_kind, obj.kernel_q, obj.kernel_c, obj.kernel_rho, engine.x
            )
            rec.erg.update(alpha, g_l1)
        sim_time = sim_time_next(sim_time, ready, c_upd)
        if rec.due(n_now):
            rec.record(n_now, sim_time, engine.x, calls, alpha, engine, per_event_ergodic,
                       final=calls + calls_per_event > plan.budget)
        rec.maybe_snapshot(n_now, engine.x, engine.y)
        dispatch(wid, ready)
        if plan.progress and n_now % 100_000 == 0:
            print(
                f"[farsign seed={plan.seed}] events={n_now} calls={calls} t={sim_time:.1f}",
                file=sys.stderr,
            )

    if engine.n > 0 and rec.last_recorded != engine.n:
        alpha = schedule_at(schedule, engine.n - 1)[0]
        rec.record(engine.n, sim_time, engine.x, calls, alpha, engine, per_event_ergodic,
                   final=True)
    rec.finish()
    trace = rec.trace
    trace.meta = _run_meta(plan, workers, honest, attack, engine.n, calls, max_stale,
                           tau_max, sim_time, c_upd=c_upd)
    if plan.progress:
        print(
            f"[farsign seed={plan.seed}] done: events={engine.n} calls={calls} t={sim_time:.1f}",
            file=sys.stderr,
        )
    return trace


def sim_time_next(sim_time: float, ready: float, server_cost: float) -> float:
    return max(sim_time, ready) + server_cost


def _run_baseline(plan, obj, oracle, attack, workers, x0, diag_obj, schedule):
    bp = plan.baseline
    honest = _validate_workers(workers, None)
    if attack.kind == "none":
        honest = np.ones(len(workers), dtype=bool)
    d = obj.dim
    zeroth = bp.estimator == "cyber0"
    if zeroth and oracle.order != "zeroth":
        raise ValueError("cyber0 estimator needs a zeroth-order oracle spec")
    if not zeroth and oracle.order != "first":
        raise ValueError("gradient estimator needs a first-order oracle spec")

    rng_arr = stream_rng(plan.seed, STREAM_ARRIVAL)
    rng_orc = stream_rng(plan.seed, STREAM_ORACLE)
    rng_att = stream_rng(plan.seed, STREAM_ATTACK)
    rng_data = stream_rng(plan.seed, STREAM_DATA)
    obj.reseed_batches(rng_data)

    x_start = np.zeros(d) if x0 is None else np.asarray(x0, dtype=np.float64)
    buf = BufferState(
        n_workers=len(workers),
        byz_count=bp.aggregator.f,
        aggregator=bp.aggregator,
        x0=x_start,
        buffer_size=bp.buffer_size,
        gamma=bp.gamma,
        decay=bp.decay,
    )
    tau_max = staleness_bound(workers)
    stats = HonestStats()
    calls_per_event = 2 if zeroth else 1
    c_agg = plan.cost.c_agg if plan.cost.c_agg is not None else d / 100.0 + buf.b
    task_cost = plan.cost.c_oracle * calls_per_event
    rec = _Recorder(plan, diag_obj, honest)

    heap: list = []
    n = 0

    def dispatch(wid: int, now: float) -> None:
        duration = workers[wid].compute.sample(rng_arr) * task_cost
        heappush(heap, (now + duration, wid, n, buf.x.copy()))

    for w in workers:
        dispatch(w.id, 0.0)

    calls = 0
    sim_time = 0.0
    max_stale = 0
    rounds = 0
    while calls + calls_per_event <= plan.budget:
        ready, wid, snap_n, x_snap = heappop(heap)
        stale = n - snap_n
        if stale > tau_max:
            raise EngineFault(f"staleness {stale} exceeds bound {tau_max} at event {n}")
        max_stale = max(max_stale, stale)
        if zeroth:
            est = cyber0_estimate(obj, oracle, x_snap, bp.lam, rng_orc, batch_id=n)
        else:
            est = gradient_estimate(obj, oracle, x_snap, rng_orc, batch_id=n)
        if honest[wid]:
            stats.update(est)
        else:
            est = np.asarray(corrupt_vector(attack, est, stats, rng_att), dtype=np.float64)
        if not np.isfinite(est).all():
            raise EngineFault(f"non-finite estimate from worker {wid} at event {n}")
        fired = buf.buffered_step(wid, est)
        calls += calls_per_event
        n += 1
        if fired is not None:
            rounds += 1
            sim_time = sim_time_next(sim_time, ready, c_agg)
            if not np.isfinite(buf.x).all():
                raise EngineFault(f"baseline iterate diverged at round {rounds}")
        else:
            sim_time = max(sim_time, ready)
        if rec.due(n):
            rec.record(n, sim_time, buf.x, calls, 1.0, None, False,
                       final=calls + calls_per_event > plan.budget)
        rec.maybe_snapshot(n, buf.x, None)
        dispatch(wid, ready)
        if plan.progress and n % 100_000 == 0:
            print(
                f"[baseline seed={plan.seed}] events={n} rounds={rounds} t={sim_time:.1f}",
                file=sys.stderr,
            )

    if n > 0 and rec.last_recorded != n:
        rec.record(n, sim_time, buf.x, calls, 1.0, None, False, final=True)
    rec.finish()
    trace = rec.trace
    trace.meta = _run_meta(plan, workers, honest, attack, n, calls, max_stale, tau_max,
                           sim_time, c_agg=c_agg, rounds=rounds)
    if plan.progress:
        print(
            f"[baseline seed={plan.seed}] done: events={n} rounds={rounds} t={sim_time:.1f}",
            file=sys.stderr,
        )
    return trace


def _run_meta(plan, workers, honest, attack, events, calls, max_stale, tau_max, sim_time,
              c_upd=None, c_agg=None, rounds=None) -> dict:
    meta = {
        "algorithm": plan.algorithm,
        "seed": plan.seed,
        "events": events,
        "oracle_calls": calls,
        "budget": plan.budget,
        "max_staleness": max_stale,
        "staleness_bound": tau_max,
        "final_sim_time": sim_time,
        "n_workers": len(workers),
        "adversaries": [int(w.id) for w in workers if not w.honest],
        "attack_kind": attack.kind,
        "backend": _kernels.BACKEND,
        "eval_cadence": plan.eval_cadence,
        "trace_cadence": plan.trace_cadence,
        "dense_until": plan.dense_until,
        "c_oracle": plan.cost.c_oracle,
    }
    if c_upd is not None:
        meta["c_upd"] = c_upd
        meta["directions_per_event"] = plan.directions_per_event
    if c_agg is not None:
        meta["c_agg"] = c_agg
        meta["rounds"] = rounds
    return meta


if __name__ == "__main__":
    from .dictionaries import identity_dictionary
    from .problems import QuadraticObjective
    from .schedules import preset

    obj = QuadraticObjective(dim=10)
    dic = identity_dictionary(10, 5)
    sched = preset("fo_thm6", m=10, n_workers=5)
    plan = RunPlan(budget=20_000, directions_per_event=10, seed=7)
    tr = run(plan, dic, sched, obj, OracleSpec(order="first", sigma=0.5),
             workers=make_workers(5), x0=np.ones(10))
    print("rows:", len(tr), "final f:", tr.rows[-1].f_val, "meta:", tr.meta["max_staleness"])
