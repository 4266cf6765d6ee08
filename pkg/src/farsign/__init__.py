"""farsign: deterministic simulator and optimizer library for
adversary-resilient asynchronous optimization via signed directional
projections with two-timescale averaging, plus attack models and buffered
robust-aggregation baselines."""

from __future__ import annotations

from ._kernels import BACKEND as kernel_backend
from .attacks import AttackSpec, HonestStats, corrupt_scalar, corrupt_vector
from .baselines import (
    AggregatorSpec,
    BufferState,
    aggregate,
    cyber0_estimate,
    gradient_estimate,
)
from .config import CONFIG_VERSION, ConfigError, load_config, validate_config
from .dictionaries import (
    CertificationBudgetError,
    DirectionDictionary,
    RobustnessCertificate,
    certify,
    dictionary_from_matrices,
    ganesh_example_dictionary,
    identity_dictionary,
    load_dictionary,
    save_dictionary,
    subset_margin,
)
from .engine import EngineFault, FarSignEngine, FeedbackEvent, StepRecord
from .metrics import (
    ErgodicAverage,
    RateFit,
    Trace,
    TraceRow,
    export,
    fit_rate,
    fit_rate_series,
    load_trace,
    merge_traces,
)
from .problems import (
    Dataset,
    LogisticL2Objective,
    MlpCrossEntropyObjective,
    Objective,
    OracleSpec,
    QuadraticObjective,
    SeparableNonconvexObjective,
    first_order_feedback,
    load_mnist_idx,
    synthetic_blobs,
    synthetic_two_class,
    zeroth_order_feedback,
)
from .schedules import (
    AssumptionReport,
    ScheduleSpec,
    check_stepsize_assumptions,
    preset,
    schedule_at,
)
from .sim import (
    BaselinePlan,
    ComputeTime,
    CostModel,
    RunPlan,
    WorkerModel,
    make_workers,
    run,
    staleness_bound,
)

__version__ = "0.1.0"
