"""Buffered robust-aggregation baseline: workers report dense gradient
estimates, the server buffers them in fixed slots and applies a robust
aggregation rule to the slot means once every slot holds at least one
estimate.

Aggregation rules are deterministic and permutation-invariant; score ties
are broken by lexicographically smallest vector, never by input position.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problems import Objective, OracleSpec, zeroth_order_feedback

AGGREGATION_RULES = ("krum", "multi_krum", "median", "trimmed_mean", "rfa", "bulyan")


@dataclass(frozen=True)
class AggregatorSpec:
    rule: str
    f: int = 0
    multi_k: int = 1
    rfa_iters: int = 8
    rfa_nu: float = 1e-6

    def __post_init__(self) -> None:
        if self.rule not in AGGREGATION_RULES:
            raise ValueError(f"rule must be one of {AGGREGATION_RULES}")
        if self.f < 0:
            raise ValueError("tolerated Byzantine count f must be nonnegative")
        if self.multi_k < 1:
            raise ValueError("multi_k must be positive")
        if self.rfa_iters < 1 or self.rfa_nu <= 0:
            raise ValueError("rfa needs a positive iteration cap and smoothing")


# ---------------------------------------------------------------------------
# Aggregation rules
# ---------------------------------------------------------------------------


def _krum_scores(grads: np.ndarray, f: int) -> np.ndarray:
    """Sum of squared distances to the n-f-2 nearest other inputs."""
    n = len(grads)
    diff = grads[:, None, :] - grads[None, :, :]
    d2 = (diff * diff).sum(axis=-1)
    # Row-sorted distances start with the self distance 0.
    return np.sort(d2, axis=1)[:, 1 : n - f - 1].sum(axis=1)


def _lex_order(grads: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Candidate indices ordered by vector lexicographic comparison."""
    keys = [tuple(grads[i]) for i in candidates]
    return candidates[np.array(sorted(range(len(keys)), key=keys.__getitem__))]


def _score_rank(grads: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """All indices ordered by (score, lexicographic vector)."""
    order = []
    for s in np.unique(scores):
        tied = np.flatnonzero(scores == s)
        order.extend(_lex_order(grads, tied))
    return np.asarray(order)


def aggregate(spec: AggregatorSpec, grads) -> np.ndarray:
    """Aggregate a sequence of equal-length vectors under the chosen rule."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.ndim == 1:
        grads = grads[:, None]
    n = len(grads)
    if n == 0:
        raise ValueError("no input vectors to aggregate")
    f = spec.f
    if spec.rule == "krum" or spec.rule == "multi_krum":
        if n < f + 3:
            raise ValueError(f"krum needs at least f+3 = {f + 3} inputs, got {n}")
        scores = _krum_scores(grads, f)
        ranked = _score_rank(grads, scores)
        if spec.rule == "krum":
            return grads[ranked[0]].copy()
        if spec.multi_k > n:
            raise ValueError(f"multi_k = {spec.multi_k} exceeds input count {n}")
        return grads[ranked[: spec.multi_k]].mean(axis=0)
    if spec.rule == "median":
        return np.median(grads, axis=0)
    if spec.rule == "trimmed_mean":
        if n <= 2 * f:
            raise ValueError(f"trimmed_mean needs more than 2f = {2 * f} inputs, got {n}")
        ordered = np.sort(grads, axis=0)
        return ordered[f : n - f].mean(axis=0)
    if spec.rule == "rfa":
        z = np.median(grads, axis=0)
        for _ in range(spec.rfa_iters):
            dist = np.linalg.norm(grads - z, axis=1)
            wts = 1.0 / np.maximum(dist, spec.rfa_nu)
            z = (wts[:, None] * grads).sum(axis=0) / wts.sum()
        return z
    # bulyan: top n-2f by krum score, then coordinatewise trimmed mean.
    if n < 4 * f + 3:
        raise ValueError(f"bulyan needs at least 4f+3 = {4 * f + 3} inputs, got {n}")
    scores = _krum_scores(grads, f)
    chosen = grads[_score_rank(grads, scores)[: n - 2 * f]]
    ordered = np.sort(chosen, axis=0)
    return ordered[f : len(chosen) - f].mean(axis=0)


# ---------------------------------------------------------------------------
# Worker-side estimators
# ---------------------------------------------------------------------------


def cyber0_estimate(
    obj: Objective,
    ospec: OracleSpec,
    x_stale: np.ndarray,
    lam: float,
    rng: np.random.Generator,
    batch_id: int | None = None,
) -> np.ndarray:
    """Dense gradient reconstruction d * delta * u from one random unit
    direction u and a two-point difference delta (2 oracle calls)."""
    if lam <= 0:
        raise ValueError("perturbation radius lam must be positive")
    u = rng.standard_normal(obj.dim)
    u /= np.linalg.norm(u)
    delta = zeroth_order_feedback(obj, ospec, x_stale, u, lam, rng, batch_id)
    return obj.dim * delta * u


def gradient_estimate(
    obj: Objective,
    ospec: OracleSpec,
    x_stale: np.ndarray,
    rng: np.random.Generator,
    batch_id: int | None = None,
) -> np.ndarray:
    """Full first-order gradient estimate (1 oracle call)."""
    if ospec.minibatch is not None:
        return obj.batch_grad(x_stale, batch_id)
    g = obj.grad(x_stale)
    if ospec.sigma > 0:
        g = g + ospec.sigma * rng.standard_normal(obj.dim)
    return g


# ---------------------------------------------------------------------------
# Buffering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BufferedRound:
    """Record of one fired aggregation round."""

    round_index: int
    gamma: float
    aggregate_norm: float
    contributions: int


class BufferState:
    """Fixed-slot buffer: worker w feeds slot w mod B; an update fires only
    when every slot is nonempty (slots are then cleared)."""

    def __init__(
        self,
        n_workers: int,
        byz_count: int,
        aggregator: AggregatorSpec,
        x0: np.ndarray,
        buffer_size: int | None = None,
        gamma: float = 0.2,
        decay: bool = False,
        decay_factor: float = 0.99,
        decay_every: int = 100,
    ):
        required = 2 * byz_count + 1
        b = required if buffer_size is None else buffer_size
        if b < required:
            raise ValueError(
                f"buffer needs at least 2*{byz_count}+1 = {required} slots, got {b}"
            )
        if b > n_workers:
            raise ValueError(
                f"buffer size {b} exceeds worker count {n_workers}; empty slots never fill"
            )
        if gamma <= 0:
            raise ValueError("learning rate gamma must be positive")
        self.b = b
        self.n_workers = n_workers
        self.aggregator = aggregator
        self.x = np.asarray(x0, dtype=np.float64).copy()
        self.gamma = float(gamma)
        self.decay = decay
        self.decay_factor = decay_factor
        self.decay_every = decay_every
        self.slots: list[list[np.ndarray]] = [[] for _ in range(b)]
        self.round = 0
        self._pending = 0

    def slot_of(self, worker: int) -> int:
        if not 0 <= worker < self.n_workers:
            raise ValueError(f"unknown worker {worker}")
        return worker % self.b

    def buffered_step(self, worker: int, gradient: np.ndarray) -> BufferedRound | None:
        """Store one estimate; fire an aggregation step if the buffer filled."""
        slot = self.slots[self.slot_of(worker)]
        if not slot:
            self._pending += 1
        slot.append(gradient)
        if self._pending < self.b:
            return None
        contributions = 0
        means = np.empty((self.b, len(self.x)))
        for s, pending in enumerate(self.slots):
            means[s] = np.mean(pending, axis=0)
            contributions += len(pending)
        agg = aggregate(self.aggregator, means)
        self.x -= self.gamma * agg
        for pending in self.slots:
            pending.clear()
        self._pending = 0
        self.round += 1
        record = BufferedRound(
            round_index=self.round,
            gamma=self.gamma,
            aggregate_norm=float(np.linalg.norm(agg)),
            contributions=contributions,
        )
        if self.decay and self.round % self.decay_every == 0:
            self.gamma *= self.decay_factor
        return record


if __name__ == "__main__":
    krum_spec = AggregatorSpec(rule="krum", f=1)
    pts = np.array([[0.0], [0.1], [0.2], [10.0], [-9.0]])
    print("krum pick:", aggregate(krum_spec, pts))
    print("median:", aggregate(AggregatorSpec(rule="median"), np.array([[1.0], [2.0], [100.0]])))
    print(
        "trimmed f=1:",
        aggregate(
            AggregatorSpec(rule="trimmed_mean", f=1),
            np.array([[0.0], [1.0], [2.0], [3.0], [100.0]]),
        ),
    )
