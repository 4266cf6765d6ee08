"""Adversarial corruption models for reported feedback.

Attacks act on the value an honest worker would have produced: scalar
directional estimates for the signed-update path, whole gradient vectors for
the buffered baselines.  The 'alie' attack shades its output from running
statistics of the honest population, which the caller maintains via
``HonestStats`` (updated from honest values only).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ATTACK_KINDS = ("none", "sign_flip", "constant", "gaussian", "alie")
ATTACK_IDS = {name: i for i, name in enumerate(ATTACK_KINDS)}


@dataclass(frozen=True)
class AttackSpec:
    """Attack kind plus its per-kind parameters (unused ones are ignored).

    kappa: sign_flip scale, reported value is -kappa * honest.
    c: constant attack value.
    sigma_a: gaussian attack standard deviation (independent of honest value).
    z: alie shading factor, reported value is mean - z * std.
    """

    kind: str = "none"
    kappa: float = 1.0
    c: float = 5.0
    sigma_a: float = 10.0
    z: float = 1.5

    def __post_init__(self) -> None:
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}, expected one of {ATTACK_KINDS}")


class HonestStats:
    """Exponentially-decayed running mean/std of honest values (decay 0.99).

    Handles scalars or fixed-shape vectors; the first observation initializes
    the statistics exactly.  ``update_many`` folds a batch of scalars in
    sequential order using the closed-form decay weights.
    """

    def __init__(self, decay: float = 0.99):
        if not 0 < decay < 1:
            raise ValueError("decay must lie in (0, 1)")
        self.decay = decay
        self.count = 0
        self._mean = None
        self._m2 = None
        self._pow_cache: dict[int, tuple[np.ndarray, float]] = {}

    def update(self, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        sq = value * value
        if self.count == 0:
            self._mean = value.copy()
            self._m2 = sq.copy()
        else:
            d = self.decay
            self._mean = d * self._mean + (1 - d) * value
            self._m2 = d * self._m2 + (1 - d) * sq
        self.count += 1

    def update_many(self, values: np.ndarray) -> None:
        """Fold a 1-d batch of scalar observations, oldest first.

        Equivalent to calling ``update`` per element (up to float
        reassociation): after k new values v_1..v_k,
        mean' = d^k * mean + (1-d) * sum_j d^(k-j) v_j.
        """
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError("update_many expects a 1-d array of scalars")
        if values.size == 0:
            return
        start = 0
        if self.count == 0:
            self._mean = np.asarray(values[0], dtype=np.float64).copy()
            self._m2 = self._mean * self._mean
            self.count = 1
            start = 1
        tail = values[start:]
        k = tail.size
        if k:
            d = self.decay
            cached = self._pow_cache.get(k)
            if cached is None:
                weights = (1 - d) * d ** np.arange(k - 1, -1, -1, dtype=np.float64)
                cached = (weights, d**k)
                self._pow_cache[k] = cached
            weights, dk = cached
            self._mean = dk * self._mean + weights @ tail
            self._m2 = dk * self._m2 + weights @ (tail * tail)
            self.count += k

    @property
    def mean(self):
        if self.count == 0:
            return 0.0
        return self._mean if self._mean.ndim else float(self._mean)

    @property
    def std(self):
        if self.count == 0:
            return 0.0
        var = np.maximum(self._m2 - self._mean * self._mean, 0.0)
        out = np.sqrt(var)
        return out if out.ndim else float(out)


def corrupt_scalar(
    spec: AttackSpec, honest: float, stats: HonestStats, rng: np.random.Generator
) -> float:
    """Reported scalar under the attack; 'none' passes the honest value through."""
    if spec.kind == "none":
        return honest
    if spec.kind == "sign_flip":
        return -spec.kappa * honest
    if spec.kind == "constant":
        return spec.c
    if spec.kind == "gaussian":
        return spec.sigma_a * rng.standard_normal()
    mean, std = stats.mean, stats.std
    return float(np.asarray(mean) - spec.z * np.asarray(std))


def corrupt_vector(
    spec: AttackSpec, honest: np.ndarray, stats: HonestStats, rng: np.random.Generator
) -> np.ndarray:
    """Componentwise vector analogue of ``corrupt_scalar``."""
    if spec.kind == "none":
        return honest
    if spec.kind == "sign_flip":
        return -spec.kappa * honest
    if spec.kind == "constant":
        return np.full_like(honest, spec.c)
    if spec.kind == "gaussian":
        return spec.sigma_a * rng.standard_normal(honest.shape[0])
    mean = np.broadcast_to(np.asarray(stats.mean, dtype=np.float64), honest.shape)
    std = np.broadcast_to(np.asarray(stats.std, dtype=np.float64), honest.shape)
    return mean - spec.z * std
