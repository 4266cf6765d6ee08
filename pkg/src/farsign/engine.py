"""Server-side state machine: signed directional x-updates driven by a
two-timescale memory of directional measurements.

One feedback event from worker l carries reported values for a subset of
that worker's directions.  The update order is fixed:

  1. x moves along the reported directions by sign(-y), reading the memory
     as it stood before the event;
  2. the memory entries for the reported directions relax toward the
     reported values with stepsize beta;
  3. the event counter increments.

Weights are 1 under uniform arrivals; with known arrival probabilities
pi_{l,i} each term is weighted 1/(m N pi_{l,i}), which reduces to 1 in the
uniform case.  Memory is stored dense (N x m); at the benchmark scales in
this package that is at most a few tens of megabytes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dictionaries import DirectionDictionary
from .schedules import ScheduleSpec, schedule_at


class EngineFault(RuntimeError):
    """A run cannot proceed meaningfully (non-finite values, bad event)."""


@dataclass(frozen=True)
class FeedbackEvent:
    """One worker report: values for a sorted subset of direction indices."""

    worker: int
    indices: np.ndarray
    values: np.ndarray
    snapshot_n: int = 0

    def __post_init__(self) -> None:
        if self.indices.ndim != 1 or self.indices.shape != self.values.shape:
            raise ValueError("indices and values must be 1-d and the same length")
        if len(self.indices) == 0:
            raise ValueError("event must report at least one direction")


@dataclass(frozen=True)
class StepRecord:
    """Optional per-event diagnostics from apply."""

    n: int
    worker: int
    x_norm_before: float
    x_norm_after: float
    displacement: float
    signs: np.ndarray
    staleness: int


class FarSignEngine:
    """Holds the iterate x, the memory y (N x m, zero-initialized), and the
    event counter n; applies feedback events in order."""

    def __init__(
        self,
        dictionary: DirectionDictionary,
        schedule: ScheduleSpec,
        x0: np.ndarray | None = None,
        arrival_probs: np.ndarray | None = None,
    ):
        self.dictionary = dictionary
        self.schedule = schedule
        d, n_workers, m = dictionary.dim, dictionary.n_workers, dictionary.n_directions
        if x0 is None:
            self.x = np.zeros(d)
        else:
            x0 = np.asarray(x0, dtype=np.float64)
            if x0.shape != (d,):
                raise ValueError(f"x0 must have shape ({d},)")
            self.x = x0.copy()
        self.y = np.zeros((n_workers, m))
        self.n = 0
        self.weights = self._weight_table(arrival_probs, n_workers, m)

    @staticmethod
    def _weight_table(arrival_probs, n_workers: int, m: int) -> np.ndarray:
        if arrival_probs is None:
            return np.ones((n_workers, m))
        p = np.asarray(arrival_probs, dtype=np.float64)
        if p.shape == (n_workers,):
            # Worker marginals with directions uniform within the worker:
            # pi_{l,i} = p_l / m, so 1/(m N pi) = 1/(N p_l).
            pairs = np.repeat(p[:, None] / m, m, axis=1)
        elif p.shape == (n_workers, m):
            pairs = p
        else:
            raise ValueError(
                f"arrival_probs must have shape ({n_workers},) or ({n_workers}, {m})"
            )
        if not np.isfinite(pairs).all() or (pairs <= 0).any():
            raise ValueError("arrival probabilities must be positive and finite")
        return 1.0 / (m * n_workers * pairs)

    def snapshot(self) -> tuple[np.ndarray, int]:
        """Immutable copy of the iterate plus the current event counter."""
        return self.x.copy(), self.n

    def apply(self, event: FeedbackEvent, record: bool = False) -> StepRecord | None:
        """Apply one feedback event; raises EngineFault on bad input.

        Direction indices must be sorted ascending (the dispatch side
        guarantees this); only the endpoints are range-checked here.
        """
        n_workers, m = self.y.shape
        if not 0 <= event.worker < n_workers:
            raise EngineFault(f"unknown worker {event.worker}")
        idx = event.indices
        if idx.dtype != np.int64:
            idx = idx.astype(np.int64)
        if idx[0] < 0 or idx[-1] >= m:
            raise EngineFault(f"direction index out of range [0, {m})")
        values = event.values
        if not np.isfinite(values).all():
            raise EngineFault(f"non-finite feedback values from worker {event.worker}")

        alpha, beta, _ = schedule_at(self.schedule, self.n)
        y_row = self.y[event.worker]
        w_row = self.weights[event.worker]
        if record:
            norm_before = float(np.linalg.norm(self.x))
            signs = -np.sign(y_row[idx])
            x_before = self.x.copy()
        if self.dictionary.is_identity:
            _kernels.ops.signed_update(self.x, alpha, idx, w_row, y_row)
        else:
            a = self.dictionary.matrices[event.worker]
            coef = alpha * w_row[idx] * -np.sign(y_row[idx])
            self.x += a[:, idx] @ coef
        _kernels.ops.y_update(y_row, beta, idx, np.ascontiguousarray(values))
        self.n += 1
        if record:
            return StepRecord(
                n=self.n,
                worker=event.worker,
                x_norm_before=norm_before,
                x_norm_after=float(np.linalg.norm(self.x)),
                displacement=float(np.linalg.norm(self.x - x_before)),
                signs=signs,
                staleness=self.n - 1 - event.snapshot_n,
            )
        return None

    def tracking_error(self, grad: np.ndarray, worker: int) -> float:
        """Euclidean norm of y^(w) - A_w^T grad for one worker."""
        if self.dictionary.is_identity:
            target = grad
        else:
            target = self.dictionary.matrices[worker].T @ grad
        return float(np.linalg.norm(self.y[worker] - target))

    def mean_tracking_error(self, grad: np.ndarray, honest: np.ndarray | None = None) -> float:
        """Mean over (honest) workers of the per-worker tracking error norm."""
        if self.dictionary.is_identity:
            err = self.y - grad[None, :]
        else:
            targets = np.stack([a.T @ grad for a in self.dictionary.matrices])
            err = self.y - targets
        norms = np.sqrt((err * err).sum(axis=1))
        if honest is not None:
            norms = norms[honest]
        if len(norms) == 0:
            return 0.0
        return float(norms.mean())


if __name__ == "__main__":
    from .dictionaries import identity_dictionary
    from .schedules import preset

    dic = identity_dictionary(1, 1)
    eng = FarSignEngine(dic, preset("remark_example"), x0=np.zeros(1))
    eng.y[0, 0] = 0.5
    alpha0 = schedule_at(eng.schedule, 0)[0]
    rec = eng.apply(
        FeedbackEvent(worker=0, indices=np.array([0]), values=np.array([1.0])),
        record=True,
    )
    print("x after one event:", eng.x, "(moved by alpha =", alpha0, ")")
    print("y after one event:", eng.y, "record:", rec)
