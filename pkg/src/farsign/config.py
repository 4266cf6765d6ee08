"""Config schema validation and object builders for the CLI.

Configs are versioned JSON documents.  Validation rejects unknown keys with
their full dotted path and checks types and cross-field constraints before
any objects are built, so a typo never silently falls back to a default.
"""

from __future__ import annotations

import copy
import json

import numpy as np

from .attacks import ATTACK_KINDS, AttackSpec
from .baselines import AGGREGATION_RULES, AggregatorSpec
from .dictionaries import (
    DirectionDictionary,
    ganesh_example_dictionary,
    identity_dictionary,
    load_dictionary,
)
from .problems import (
    Dataset,
    LogisticL2Objective,
    MlpCrossEntropyObjective,
    Objective,
    OracleSpec,
    QuadraticObjective,
    SeparableNonconvexObjective,
    load_mnist_idx,
    synthetic_blobs,
    synthetic_two_class,
)
from .schedules import (
    MODES,
    PRESET_NAMES,
    ScheduleSpec,
    preset,
)
from .sim import (
    BASELINE_ESTIMATORS,
    COMPUTE_KINDS,
    BaselinePlan,
    ComputeTime,
    CostModel,
    RunPlan,
    WorkerModel,
    make_workers,
)

CONFIG_VERSION = 1

PROBLEM_KINDS = ("quadratic", "separable_nonconvex", "logistic_l2", "mlp_ce_l2")
DATASET_SOURCES = ("two_class", "blobs", "mnist_idx")
DICTIONARY_KINDS = ("identity", "file", "ganesh_example")


class ConfigError(ValueError):
    """Invalid config; the message names every offending key or condition."""


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------

_NUM = (int, float)

# block -> key -> allowed python types (None entry means nullable)
_SCHEMA: dict[str, dict[str, tuple]] = {
    "problem": {
        "kind": (str,),
        "dim": (int,),
        "curvature": (int, float, list, type(None)),
        "linear": (list, type(None)),
        "rho": _NUM,
        "mu": _NUM,
        "batch": (int, type(None)),
        "x0": (int, float, list, type(None)),
        "diag_sample": (int, type(None)),
        "hidden": (list,),
        "dataset": (dict, type(None)),
    },
    "problem.dataset": {
        "source": (str,),
        "n": (int,),
        "seed": (int,),
        "separation": _NUM,
        "spread": _NUM,
        "classes": (int,),
        "test_n": (int,),
        "images": (str,),
        "labels": (str,),
        "test_images": (str, type(None)),
        "test_labels": (str, type(None)),
    },
    "dictionary": {
        "kind": (str,),
        "path": (str, type(None)),
    },
    "schedule": {
        "preset": (str, type(None)),
        "eps": (_NUM + (type(None),)),
        "eps1": (_NUM + (type(None),)),
        "eps2": (_NUM + (type(None),)),
        "mode": (str, type(None)),
        "alpha_scale": _NUM,
        "alpha_exp": _NUM,
        "beta_scale": _NUM,
        "beta_exp": _NUM,
        "lambda_scale": _NUM,
        "lambda_exp": _NUM,
    },
    "oracle": {
        "order": (str, type(None)),
        "sigma": _NUM,
        "zeta_std": _NUM,
        "coupled": (bool, type(None)),
        "minibatch": (bool, type(None)),
    },
    "adversary": {
        "count": (int, type(None)),
        "workers": (list, type(None)),
        "attack": (dict, type(None)),
    },
    "adversary.attack": {
        "kind": (str,),
        "kappa": _NUM,
        "c": _NUM,
        "sigma_a": _NUM,
        "z": _NUM,
    },
    "sim": {
        "n_workers": (int,),
        "directions_per_event": (int,),
        "budget": (int,),
        "seeds": (list,),
        "compute_time": (dict, type(None)),
        "cost": (dict, type(None)),
        "eval_cadence": (int,),
    },
    "sim.compute_time": {
        "kind": (str,),
        "t": _NUM,
        "lo": _NUM,
        "hi": _NUM,
        "mu": _NUM,
        "sigma": _NUM,
        "t_max": (_NUM + (type(None),)),
    },
    "sim.cost": {
        "c_oracle": _NUM,
        "c_upd": (_NUM + (type(None),)),
        "c_agg": (_NUM + (type(None),)),
    },
    "baseline": {
        "rule": (str,),
        "f": (int,),
        "multi_k": (int,),
        "B": (int, type(None)),
        "gamma": _NUM,
        "decay": (bool,),
        "estimator": (str,),
        "lam": _NUM,
        "rfa_iters": (int,),
        "rfa_nu": _NUM,
        "budget": (int, type(None)),
    },
    "output": {
        "dir": (str, type(None)),
        "prefix": (str,),
        "trace_cadence": (int,),
        "dense_until": (int,),
        "snapshot_cadence": (int, type(None)),
    },
    "compare": {
        "targets": (dict,),
    },
    "sweep": {
        "path": (str,),
        "values": (list,),
    },
}

_TOP_KEYS = (
    "version",
    "problem",
    "dictionary",
    "schedule",
    "oracle",
    "adversary",
    "sim",
    "baseline",
    "output",
    "compare",
    "sweep",
)

_REQUIRED_TOP = ("version", "problem", "schedule", "sim")


def _check_block(block, schema_key: str, path: str, errors: list[str]) -> None:
    allowed = _SCHEMA[schema_key]
    for key, value in block.items():
        if key not in allowed:
            errors.append(f"unknown key {path}.{key}")
            continue
        if not isinstance(value, allowed[key]) or (
            isinstance(value, bool) and bool not in allowed[key]
        ):
            names = "/".join(t.__name__ for t in allowed[key])
            errors.append(f"{path}.{key}: expected {names}, got {type(value).__name__}")


def validate_config(cfg) -> None:
    """Schema-level validation; raises ConfigError listing every problem."""
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    errors: list[str] = []
    for key in cfg:
        if key not in _TOP_KEYS:
            errors.append(f"unknown key {key}")
    for key in _REQUIRED_TOP:
        if key not in cfg:
            errors.append(f"missing required key {key}")
    if "version" in cfg and cfg["version"] != CONFIG_VERSION:
        errors.append(f"version: expected {CONFIG_VERSION}, got {cfg.get('version')!r}")
    for block_key in _TOP_KEYS[1:]:
        block = cfg.get(block_key)
        if block is None:
            continue
        if not isinstance(block, dict):
            errors.append(f"{block_key}: expected object")
            continue
        _check_block(block, block_key, block_key, errors)
        for sub in ("dataset", "attack", "compute_time", "cost"):
            schema_key = f"{block_key}.{sub}"
            if schema_key in _SCHEMA and isinstance(block.get(sub), dict):
                _check_block(block[sub], schema_key, schema_key, errors)
    if errors:
        raise ConfigError("; ".join(errors))


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    validate_config(cfg)
    return cfg


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def _build_dataset(ds: dict, dim: int, n_classes_hint: int):
    source = ds.get("source")
    if source not in DATASET_SOURCES:
        raise ConfigError(f"problem.dataset.source must be one of {DATASET_SOURCES}")
    if source == "mnist_idx":
        for key in ("images", "labels"):
            if key not in ds:
                raise ConfigError(f"problem.dataset.{key} is required for mnist_idx")
        train = load_mnist_idx(ds["images"], ds["labels"])
        test = None
        if ds.get("test_images") and ds.get("test_labels"):
            test = load_mnist_idx(ds["test_images"], ds["test_labels"])
        return train, test
    n = ds.get("n", 1000)
    seed = ds.get("seed", 0)
    test_n = ds.get("test_n", 0)
    if source == "two_class":
        sep = ds.get("separation", 3.0)
        train = synthetic_two_class(n, dim, seed=seed, separation=sep)
        test = (
            synthetic_two_class(test_n, dim, seed=seed + 1, separation=sep)
            if test_n > 0
            else None
        )
        return train, test
    classes = ds.get("classes", n_classes_hint)
    spread = ds.get("spread", 2.0)
    train = synthetic_blobs(n, dim, classes, seed=seed, spread=spread)
    test = (
        synthetic_blobs(test_n, dim, classes, seed=seed + 1, spread=spread)
        if test_n > 0
        else None
    )
    return train, test


def build_problem(cfg) -> tuple[Objective, Objective]:
    """Returns (objective, diagnostics objective).  The diagnostics
    objective differs only when problem.diag_sample subsamples a dataset."""
    p = cfg["problem"]
    kind = p.get("kind")
    if kind not in PROBLEM_KINDS:
        raise ConfigError(f"problem.kind must be one of {PROBLEM_KINDS}")
    if kind in ("quadratic", "separable_nonconvex"):
        if "dim" not in p:
            raise ConfigError(f"problem.dim is required for {kind}")
        dim = p["dim"]
        if kind == "quadratic":
            curvature = p.get("curvature")
            if isinstance(curvature, list):
                curvature = np.asarray(curvature, dtype=np.float64)
            linear = p.get("linear")
            if linear is not None:
                linear = np.asarray(linear, dtype=np.float64)
            obj = QuadraticObjective(dim, curvature=curvature, linear=linear)
        else:
            obj = SeparableNonconvexObjective(dim, rho=p.get("rho", 1.0))
        return obj, obj
    ds = p.get("dataset")
    if ds is None:
        raise ConfigError(f"problem.dataset is required for {kind}")
    mu = p.get("mu", 1e-4)
    batch = p.get("batch")
    if kind == "logistic_l2":
        if "dim" not in p:
            raise ConfigError("problem.dim is required for logistic_l2")
        train, test = _build_dataset(ds, p["dim"], 2)
        obj = LogisticL2Objective(train, mu=mu, batch=batch, test_dataset=test)
    else:
        hidden = [int(h) for h in p.get("hidden", [100])]
        if ds.get("source") != "mnist_idx" and "dim" not in p:
            raise ConfigError("problem.dim is required for synthetic datasets")
        train, test = _build_dataset(ds, p.get("dim", 0), 10)
        layers = [train.features.shape[1], *hidden, train.n_classes]
        obj = MlpCrossEntropyObjective(
            layers, train, mu=mu, batch=batch, test_dataset=test
        )
    diag = _diag_objective(obj, p.get("diag_sample"))
    return obj, diag


def _diag_objective(obj: Objective, diag_sample: int | None) -> Objective:
    if diag_sample is None or obj.dataset is None or diag_sample >= obj.dataset.n:
        return obj
    if diag_sample < 1:
        raise ConfigError("problem.diag_sample must be positive")
    rng = np.random.Generator(np.random.Philox(key=97))
    idx = np.sort(rng.choice(obj.dataset.n, size=diag_sample, replace=False))
    sub = Dataset(
        features=obj.dataset.features[idx],
        labels=obj.dataset.labels[idx],
        n_classes=obj.dataset.n_classes,
        name=obj.dataset.name + "_diag",
    )
    if isinstance(obj, LogisticL2Objective):
        return LogisticL2Objective(sub, mu=obj.mu, batch=None, test_dataset=obj.test_dataset)
    return MlpCrossEntropyObjective(
        obj.layers, sub, mu=obj.mu, batch=None, test_dataset=obj.test_dataset
    )


def build_dictionary(cfg, dim: int, n_workers: int) -> DirectionDictionary:
    d = cfg.get("dictionary") or {"kind": "identity"}
    kind = d.get("kind", "identity")
    if kind not in DICTIONARY_KINDS:
        raise ConfigError(f"dictionary.kind must be one of {DICTIONARY_KINDS}")
    if kind == "identity":
        return identity_dictionary(dim, n_workers)
    if kind == "ganesh_example":
        dic = ganesh_example_dictionary()
    else:
        path = d.get("path")
        if not path:
            raise ConfigError("dictionary.path is required for kind 'file'")
        dic = load_dictionary(path)
    if dic.dim != dim:
        raise ConfigError(f"dictionary dim {dic.dim} does not match problem dim {dim}")
    if dic.n_workers != n_workers:
        raise ConfigError(
            f"dictionary has {dic.n_workers} workers, sim.n_workers is {n_workers}"
        )
    return dic


def build_schedule(cfg, m: int, n_workers: int) -> ScheduleSpec:
    s = cfg["schedule"]
    name = s.get("preset")
    explicit = [k for k in ("mode", "alpha_scale", "alpha_exp", "beta_scale", "beta_exp") if k in s]
    if name is not None:
        if name not in PRESET_NAMES:
            raise ConfigError(f"schedule.preset must be one of {PRESET_NAMES}")
        if explicit:
            raise ConfigError(
                "schedule.preset and explicit schedule keys are mutually exclusive"
            )
        kwargs = {}
        for key in ("eps", "eps1", "eps2"):
            if s.get(key) is not None:
                kwargs[key] = float(s[key])
        if s.get("lambda_scale") is not None:
            kwargs["lambda_scale"] = float(s["lambda_scale"])
        try:
            return preset(name, m=m, n_workers=n_workers, **kwargs)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"schedule.preset {name}: {exc}") from exc
    needed = ("mode", "alpha_scale", "alpha_exp", "beta_scale", "beta_exp")
    missing = [k for k in needed if k not in s]
    if missing:
        raise ConfigError(
            "schedule needs either a preset or explicit keys; missing: "
            + ", ".join(f"schedule.{k}" for k in missing)
        )
    if s["mode"] not in MODES:
        raise ConfigError(f"schedule.mode must be one of {MODES}")
    try:
        return ScheduleSpec(
            mode=s["mode"],
            alpha_scale=float(s["alpha_scale"]),
            alpha_exp=float(s["alpha_exp"]),
            beta_scale=float(s["beta_scale"]),
            beta_exp=float(s["beta_exp"]),
            lambda_scale=float(s.get("lambda_scale", 0.0)),
            lambda_exp=float(s.get("lambda_exp", 0.0)),
        )
    except ValueError as exc:
        raise ConfigError(f"schedule: {exc}") from exc


def build_oracle(cfg, schedule: ScheduleSpec, obj: Objective) -> OracleSpec:
    o = cfg.get("oracle") or {}
    order = o.get("order")
    if order is None:
        order = "zeroth" if schedule.zeroth_order else "first"
    if order not in ("first", "zeroth"):
        raise ConfigError("oracle.order must be 'first' or 'zeroth'")
    if order == "zeroth" and not schedule.zeroth_order:
        raise ConfigError("oracle.order is 'zeroth' but the schedule has no perturbation radius")
    if order == "first" and schedule.zeroth_order:
        raise ConfigError("oracle.order is 'first' but the schedule is zeroth-order")
    coupled = o.get("coupled")
    if coupled is None:
        coupled = schedule.mode == "zeroth_coupled"
    use_batches = o.get("minibatch")
    if use_batches is None:
        use_batches = obj.batch is not None
    if use_batches and obj.batch is None:
        raise ConfigError("oracle.minibatch requires problem.batch")
    try:
        return OracleSpec(
            order=order,
            sigma=float(o.get("sigma", 0.0)),
            zeta_std=float(o.get("zeta_std", 0.0)),
            coupled=bool(coupled),
            minibatch=obj.batch if use_batches else None,
        )
    except ValueError as exc:
        raise ConfigError(f"oracle: {exc}") from exc


def build_attack(cfg) -> AttackSpec:
    adv = cfg.get("adversary") or {}
    a = adv.get("attack") or {}
    kind = a.get("kind", "none")
    if kind not in ATTACK_KINDS:
        raise ConfigError(f"adversary.attack.kind must be one of {ATTACK_KINDS}")
    try:
        return AttackSpec(
            kind=kind,
            kappa=float(a.get("kappa", 1.0)),
            c=float(a.get("c", 5.0)),
            sigma_a=float(a.get("sigma_a", 10.0)),
            z=float(a.get("z", 1.5)),
        )
    except ValueError as exc:
        raise ConfigError(f"adversary.attack: {exc}") from exc


def adversary_ids(cfg, n_workers: int) -> list[int]:
    adv = cfg.get("adversary") or {}
    count = adv.get("count")
    workers = adv.get("workers")
    if count is not None and workers is not None:
        raise ConfigError("adversary.count and adversary.workers are mutually exclusive")
    if workers is not None:
        ids = sorted(int(w) for w in workers)
        if ids and (ids[0] < 0 or ids[-1] >= n_workers):
            raise ConfigError("adversary.workers indices must lie in [0, n_workers)")
        if len(set(ids)) != len(ids):
            raise ConfigError("adversary.workers contains duplicates")
    else:
        count = count or 0
        if count < 0:
            raise ConfigError("adversary.count must be nonnegative")
        ids = list(range(count))
    if len(ids) >= n_workers and n_workers > 0 and len(ids) > 0:
        raise ConfigError(
            f"adversary count {len(ids)} must be smaller than sim.n_workers {n_workers}"
        )
    return ids


def build_workers(cfg) -> list[WorkerModel]:
    s = cfg["sim"]
    n = s.get("n_workers")
    if not isinstance(n, int) or n < 1:
        raise ConfigError("sim.n_workers must be a positive integer")
    ct = s.get("compute_time") or {"kind": "fixed", "t": 1.0}
    kind = ct.get("kind", "fixed")
    if kind not in COMPUTE_KINDS:
        raise ConfigError(f"sim.compute_time.kind must be one of {COMPUTE_KINDS}")
    try:
        compute = ComputeTime(
            kind=kind,
            t=float(ct.get("t", 1.0)),
            lo=float(ct.get("lo", 1.0)),
            hi=float(ct.get("hi", 2.0)),
            mu=float(ct.get("mu", 0.0)),
            sigma=float(ct.get("sigma", 0.25)),
            t_max=None if ct.get("t_max") is None else float(ct["t_max"]),
        )
    except ValueError as exc:
        raise ConfigError(f"sim.compute_time: {exc}") from exc
    return make_workers(n, compute, adversary_ids(cfg, n))


def build_cost(cfg) -> CostModel:
    c = cfg["sim"].get("cost") or {}
    try:
        return CostModel(
            c_oracle=float(c.get("c_oracle", 1.0)),
            c_upd=None if c.get("c_upd") is None else float(c["c_upd"]),
            c_agg=None if c.get("c_agg") is None else float(c["c_agg"]),
        )
    except ValueError as exc:
        raise ConfigError(f"sim.cost: {exc}") from exc


def build_baseline_plan(cfg) -> BaselinePlan | None:
    b = cfg.get("baseline")
    if b is None:
        return None
    rule = b.get("rule")
    if rule not in AGGREGATION_RULES:
        raise ConfigError(f"baseline.rule must be one of {AGGREGATION_RULES}")
    estimator = b.get("estimator", "cyber0")
    if estimator not in BASELINE_ESTIMATORS:
        raise ConfigError(f"baseline.estimator must be one of {BASELINE_ESTIMATORS}")
    try:
        agg = AggregatorSpec(
            rule=rule,
            f=b.get("f", 0),
            multi_k=b.get("multi_k", 1),
            rfa_iters=b.get("rfa_iters", 8),
            rfa_nu=float(b.get("rfa_nu", 1e-6)),
        )
        return BaselinePlan(
            aggregator=agg,
            buffer_size=b.get("B"),
            gamma=float(b.get("gamma", 0.2)),
            decay=b.get("decay", False),
            estimator=estimator,
            lam=float(b.get("lam", 1e-3)),
        )
    except ValueError as exc:
        raise ConfigError(f"baseline: {exc}") from exc


def seeds_from(cfg) -> list[int]:
    seeds = cfg["sim"].get("seeds")
    if not isinstance(seeds, list) or not seeds or not all(
        isinstance(s, int) and not isinstance(s, bool) for s in seeds
    ):
        raise ConfigError("sim.seeds must be a nonempty list of integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("sim.seeds contains duplicates")
    return list(seeds)


def build_runplan(cfg, seed: int, algorithm: str, snapshot_path=None) -> RunPlan:
    s = cfg["sim"]
    out = cfg.get("output") or {}
    budget = s.get("budget")
    if not isinstance(budget, int) or budget <= 0:
        raise ConfigError("sim.budget must be a positive integer")
    baseline = build_baseline_plan(cfg) if algorithm == "baseline" else None
    try:
        return RunPlan(
            budget=budget,
            algorithm=algorithm,
            directions_per_event=s.get("directions_per_event", 1),
            seed=seed,
            cost=build_cost(cfg),
            eval_cadence=s.get("eval_cadence", 1000),
            trace_cadence=out.get("trace_cadence", 100),
            dense_until=out.get("dense_until", 1000),
            snapshot_cadence=out.get("snapshot_cadence"),
            snapshot_path=snapshot_path,
            baseline=baseline,
        )
    except ValueError as exc:
        raise ConfigError(f"sim: {exc}") from exc


def resolve_x0(cfg, obj: Objective, seed: int):
    """Initial iterate: explicit config value, or a per-kind default
    (constant 1.0 for the synthetic objectives, zeros for logistic,
    seeded random init for the MLP)."""
    from .sim import STREAM_INIT, stream_rng

    p = cfg["problem"]
    x0 = p.get("x0")
    if x0 is not None:
        if isinstance(x0, list):
            arr = np.asarray(x0, dtype=np.float64)
            if arr.shape != (obj.dim,):
                raise ConfigError(f"problem.x0 must have length {obj.dim}")
            return arr
        return np.full(obj.dim, float(x0))
    kind = p.get("kind")
    if kind in ("quadratic", "separable_nonconvex"):
        return np.ones(obj.dim)
    if kind == "logistic_l2":
        return np.zeros(obj.dim)
    return obj.init_params(stream_rng(seed, STREAM_INIT))


def set_by_path(cfg: dict, dotted: str, value) -> dict:
    """Copy of cfg with the dotted key path replaced; path must exist in the
    schema (sweeps may not invent keys)."""
    parts = dotted.split(".")
    new = copy.deepcopy(cfg)
    node = new
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            node[part] = {}
        node = node[part]
    node[parts[-1]] = value
    validate_config(new)
    return new
