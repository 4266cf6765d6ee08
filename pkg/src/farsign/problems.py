"""Objectives, datasets and the directional feedback oracles.

An Objective exposes exact ``eval``/``grad`` (used for diagnostics and
first-order feedback) plus optional minibatch variants when it wraps a
dataset.  Feedback oracles return scalar directional measurements:

    first order:  a^T (grad f(x_stale) + noise)
    zeroth order: (fhat(x_stale + lam a) - fhat(x_stale - lam a)) / (2 lam)

with fhat = f + zeta.  Coupled zeroth-order noise (zeta identical at both
evaluation points) cancels algebraically, so the coupled estimator is
computed noise-free and consumes no random draws.  With a minibatch oracle
both evaluation points share the batch, which couples the noise by
construction, and the Gaussian noise knobs are ignored.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from math import comb  # noqa: F401  (kept: handy in interactive use)

import numpy as np

from ._kernels import KERNEL_QUAD_DIAG, KERNEL_SEPARABLE

MNIST_IMAGE_MAGIC = 2051
MNIST_LABEL_MAGIC = 2049

_EMPTY = np.empty(0, dtype=np.float64)


@dataclass
class Dataset:
    """Feature matrix with integer labels."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    name: str = "synthetic"

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise ValueError("features must be 2-dimensional")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError(
                f"label count {self.labels.shape[0]} does not match "
                f"feature count {self.features.shape[0]}"
            )

    @property
    def n(self) -> int:
        return self.features.shape[0]


# ---------------------------------------------------------------------------
# Objectives
# ---------------------------------------------------------------------------


class Objective:
    """Base objective: exact oracle plus optional minibatch machinery."""

    kind = "abstract"

    def __init__(self, dim: int, smoothness: float | None = None):
        self.dim = dim
        self.smoothness = smoothness
        self.dataset: Dataset | None = None
        self.test_dataset: Dataset | None = None
        self.batch: int | None = None
        self._perm: np.ndarray | None = None
        # Native kernel descriptor; None kind means no compiled fast path.
        self.kernel_kind: int | None = None
        self.kernel_q: np.ndarray = _EMPTY
        self.kernel_c: np.ndarray = _EMPTY
        self.kernel_rho: float = 0.0
        self.supports_coordinate_eval = False

    def eval(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # Minibatch hooks: objectives without a dataset treat every batch as the
    # full problem, so batch ids are accepted everywhere.
    def batch_eval(self, x: np.ndarray, batch_id: int | None = None) -> float:
        return self.eval(x)

    def batch_grad(self, x: np.ndarray, batch_id: int | None = None) -> np.ndarray:
        return self.grad(x)

    def test_metric(self, x: np.ndarray) -> float | None:
        return None

    @property
    def n_batches(self) -> int:
        if self.dataset is None or self.batch is None:
            return 1
        return -(-self.dataset.n // self.batch)

    def reseed_batches(self, rng: np.random.Generator) -> None:
        if self.dataset is not None:
            self._perm = rng.permutation(self.dataset.n)

    def _batch_indices(self, batch_id: int | None) -> np.ndarray | slice:
        if self.dataset is None:
            raise ValueError("objective has no dataset")
        if batch_id is None or self.batch is None:
            return slice(None)
        if self._perm is None:
            self._perm = np.arange(self.dataset.n)
        b = int(batch_id) % self.n_batches
        return self._perm[b * self.batch : min((b + 1) * self.batch, self.dataset.n)]


class QuadraticObjective(Objective):
    """f(x) = 0.5 x^T Q x + c^T x with symmetric PSD Q.

    curvature may be None (identity), a scalar, a diagonal vector, or a full
    matrix; diagonal forms get the compiled fast path.
    """

    kind = "quadratic"

    def __init__(self, dim: int, curvature=None, linear=None):
        q_diag = None
        q_full = None
        if curvature is None:
            q_diag = np.ones(dim)
        elif np.isscalar(curvature):
            if curvature <= 0:
                raise ValueError("curvature must be positive")
            q_diag = np.full(dim, float(curvature))
        else:
            curvature = np.asarray(curvature, dtype=np.float64)
            if curvature.ndim == 1:
                if curvature.shape != (dim,) or (curvature < 0).any():
                    raise ValueError("diagonal curvature must be nonnegative length-dim")
                q_diag = curvature.copy()
            elif curvature.shape == (dim, dim):
                if not np.allclose(curvature, curvature.T):
                    raise ValueError("curvature matrix must be symmetric")
                q_full = curvature.copy()
            else:
                raise ValueError("curvature must be scalar, length-dim, or dim x dim")
        c = np.zeros(dim) if linear is None else np.asarray(linear, dtype=np.float64).copy()
        if c.shape != (dim,):
            raise ValueError("linear term must have length dim")
        if q_diag is not None:
            smoothness = float(q_diag.max())
        else:
            smoothness = float(np.linalg.eigvalsh(q_full).max())
        super().__init__(dim, smoothness)
        self.q_diag = q_diag
        self.q_full = q_full
        self.c = c
        if q_diag is not None:
            self.kernel_kind = KERNEL_QUAD_DIAG
            self.kernel_q = np.ascontiguousarray(q_diag)
            self.kernel_c = np.ascontiguousarray(c)

    def eval(self, x: np.ndarray) -> float:
        if self.q_diag is not None:
            return float(0.5 * np.dot(self.q_diag * x, x) + np.dot(self.c, x))
        return float(0.5 * np.dot(x, self.q_full @ x) + np.dot(self.c, x))

    def grad(self, x: np.ndarray) -> np.ndarray:
        if self.q_diag is not None:
            return self.q_diag * x + self.c
        return self.q_full @ x + self.c


class SeparableNonconvexObjective(Objective):
    """f(x) = sum_i x_i^2 / 2 + rho * sin^2(x_i); smooth, nonconvex, coercive."""

    kind = "separable_nonconvex"

    def __init__(self, dim: int, rho: float = 1.0):
        if rho < 0:
            raise ValueError("rho must be nonnegative")
        super().__init__(dim, smoothness=1.0 + 2.0 * rho)
        self.rho = float(rho)
        self.kernel_kind = KERNEL_SEPARABLE
        self.kernel_rho = self.rho

    def eval(self, x: np.ndarray) -> float:
        return float(0.5 * np.dot(x, x) + self.rho * np.sum(np.sin(x) ** 2))

    def grad(self, x: np.ndarray) -> np.ndarray:
        return x + self.rho * np.sin(2.0 * x)


class LogisticL2Objective(Objective):
    """Binary logistic loss with an L2 term keeping the problem coercive."""

    kind = "logistic_l2"

    def __init__(
        self,
        dataset: Dataset,
        mu: float = 1e-4,
        batch: int | None = None,
        test_dataset: Dataset | None = None,
    ):
        if mu <= 0:
            raise ValueError("mu must be positive for coercivity")
        if dataset.n_classes != 2:
            raise ValueError("logistic_l2 expects a two-class dataset")
        dim = dataset.features.shape[1]
        n = dataset.n
        if n * dim <= 5_000_000:
            data_l = float(np.linalg.norm(dataset.features, 2) ** 2) / (4.0 * n)
        else:
            data_l = float((dataset.features**2).sum()) / (4.0 * n)
        super().__init__(dim, smoothness=data_l + mu)
        self.dataset = dataset
        self.test_dataset = test_dataset
        self.mu = float(mu)
        self.batch = batch

    def _data_terms(self, x, batch_id):
        idx = self._batch_indices(batch_id)
        feats = self.dataset.features[idx]
        signs = 2.0 * self.dataset.labels[idx].astype(np.float64) - 1.0
        return feats, signs

    def batch_eval(self, x: np.ndarray, batch_id: int | None = None) -> float:
        feats, signs = self._data_terms(x, batch_id)
        margins = signs * (feats @ x)
        loss = float(np.logaddexp(0.0, -margins).mean())
        return loss + 0.5 * self.mu * float(np.dot(x, x))

    def batch_grad(self, x: np.ndarray, batch_id: int | None = None) -> np.ndarray:
        feats, signs = self._data_terms(x, batch_id)
        margins = signs * (feats @ x)
        weights = -signs / (1.0 + np.exp(margins))
        return feats.T @ weights / feats.shape[0] + self.mu * x

    def eval(self, x: np.ndarray) -> float:
        return self.batch_eval(x, None)

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.batch_grad(x, None)

    def test_metric(self, x: np.ndarray) -> float | None:
        ds = self.test_dataset if self.test_dataset is not None else self.dataset
        pred = (ds.features @ x > 0).astype(np.int64)
        return float((pred == ds.labels).mean())


def mlp_param_count(layers) -> int:
    return sum(layers[i] * layers[i + 1] + layers[i + 1] for i in range(len(layers) - 1))


class MlpCrossEntropyObjective(Objective):
    """Fully-connected tanh network with softmax cross-entropy and L2 term.

    Parameters are a flat vector laid out as (W1, b1, W2, b2, ...).  For
    single-hidden-layer networks, single-coordinate perturbations reuse a
    cached forward pass: bumping one weight touches one hidden unit (or one
    logit column), so the perturbed loss costs O(batch * classes) instead of
    a full forward pass.  That makes dense zeroth-order training runs
    tractable; exactness against the full forward pass is covered by tests.
    """

    kind = "mlp_ce_l2"

    def __init__(
        self,
        layers,
        dataset: Dataset,
        mu: float = 1e-4,
        batch: int | None = 64,
        test_dataset: Dataset | None = None,
    ):
        layers = tuple(int(v) for v in layers)
        if len(layers) < 2:
            raise ValueError("need at least input and output layer sizes")
        if mu <= 0:
            raise ValueError("mu must be positive for coercivity")
        if layers[0] != dataset.features.shape[1]:
            raise ValueError("input layer size must match feature dimension")
        if layers[-1] != dataset.n_classes:
            raise ValueError("output layer size must match n_classes")
        super().__init__(mlp_param_count(layers), smoothness=None)
        self.layers = layers
        self.dataset = dataset
        self.test_dataset = test_dataset
        self.mu = float(mu)
        self.batch = batch
        self._offsets = []
        pos = 0
        for i in range(len(layers) - 1):
            w_size = layers[i] * layers[i + 1]
            self._offsets.append((pos, pos + w_size, pos + w_size + layers[i + 1]))
            pos += w_size + layers[i + 1]
        self.supports_coordinate_eval = len(layers) == 3
        self._cache_key = None
        self._cache = None

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        """Gaussian init scaled by 1/sqrt(fan_in); biases zero."""
        theta = np.zeros(self.dim)
        for i, (w0, w1, b1) in enumerate(self._offsets):
            fan_in = self.layers[i]
            theta[w0:w1] = rng.standard_normal(w1 - w0) / np.sqrt(fan_in)
        return theta

    def _unpack(self, theta: np.ndarray):
        out = []
        for i, (w0, w1, b1) in enumerate(self._offsets):
            w = theta[w0:w1].reshape(self.layers[i], self.layers[i + 1])
            out.append((w, theta[w1:b1]))
        return out

    def _forward(self, theta, feats):
        acts = feats
        hidden = []
        params = self._unpack(theta)
        for w, b in params[:-1]:
            acts = np.tanh(acts @ w + b)
            hidden.append(acts)
        w, b = params[-1]
        logits = acts @ w + b
        return hidden, logits

    @staticmethod
    def _ce(logits: np.ndarray, labels: np.ndarray) -> float:
        shifted = logits - logits.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1))
        return float((logz - shifted[np.arange(len(labels)), labels]).mean())

    def batch_eval(self, x: np.ndarray, batch_id: int | None = None) -> float:
        idx = self._batch_indices(batch_id)
        feats = self.dataset.features[idx]
        labels = self.dataset.labels[idx]
        _, logits = self._forward(x, feats)
        return self._ce(logits, labels) + 0.5 * self.mu * float(np.dot(x, x))

    def batch_grad(self, x: np.ndarray, batch_id: int | None = None) -> np.ndarray:
        idx = self._batch_indices(batch_id)
        feats = self.dataset.features[idx]
        labels = self.dataset.labels[idx]
        hidden, logits = self._forward(x, feats)
        b = feats.shape[0]
        shifted = logits - logits.max(axis=1, keepdims=True)
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        probs[np.arange(b), labels] -= 1.0
        delta = probs / b
        grad = self.mu * x.copy()
        acts = [feats] + hidden
        for i in range(len(self._offsets) - 1, -1, -1):
            w0, w1, b1 = self._offsets[i]
            w = x[w0:w1].reshape(self.layers[i], self.layers[i + 1])
            grad[w0:w1] += (acts[i].T @ delta).ravel()
            grad[w1:b1] += delta.sum(axis=0)
            if i > 0:
                delta = (delta @ w.T) * (1.0 - acts[i] ** 2)
        return grad

    def eval(self, x: np.ndarray) -> float:
        return self.batch_eval(x, None)

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.batch_grad(x, None)

    def test_metric(self, x: np.ndarray) -> float | None:
        ds = self.test_dataset if self.test_dataset is not None else self.dataset
        _, logits = self._forward(x, ds.features)
        return float((logits.argmax(axis=1) == ds.labels).mean())

    # -- cached single-coordinate perturbations (single hidden layer only) --

    def coordinate_eval(
        self, x: np.ndarray, coord: int, delta: float, batch_id: int | None = None
    ) -> float:
        """f(x + delta * e_coord) on the given batch via the forward cache.

        The snapshot array x must not be mutated between calls sharing it;
        callers pass freshly copied iterate snapshots.
        """
        if not self.supports_coordinate_eval:
            bumped = x.copy()
            bumped[coord] += delta
            return self.batch_eval(bumped, batch_id)
        key = (id(x), batch_id)
        if self._cache_key != key:
            idx = self._batch_indices(batch_id)
            feats = self.dataset.features[idx]
            labels = self.dataset.labels[idx]
            w1, b1 = self._unpack(x)[0]
            pre = feats @ w1 + b1
            h = np.tanh(pre)
            w2, b2 = self._unpack(x)[1]
            logits = h @ w2 + b2
            self._cache_key = key
            self._cache = (feats, labels, pre, h, logits)
        feats, labels, pre, h, logits = self._cache
        n_in, n_hid, n_out = self.layers
        w0, w1_end, b1_end = self._offsets[0]
        w2_start, w2_end, b2_end = self._offsets[1]
        w2 = x[w2_start:w2_end].reshape(n_hid, n_out)

        if coord < w1_end:  # first-layer weight: one hidden unit shifts
            j_in, j_hid = divmod(coord - w0, n_hid)
            new_h = np.tanh(pre[:, j_hid] + delta * feats[:, j_in])
            new_logits = logits + (new_h - h[:, j_hid])[:, None] * w2[j_hid]
        elif coord < b1_end:  # first-layer bias
            j_hid = coord - w1_end
            new_h = np.tanh(pre[:, j_hid] + delta)
            new_logits = logits + (new_h - h[:, j_hid])[:, None] * w2[j_hid]
        elif coord < w2_end:  # second-layer weight: one logit column shifts
            j_hid, j_out = divmod(coord - w2_start, n_out)
            new_logits = logits.copy()
            new_logits[:, j_out] = logits[:, j_out] + delta * h[:, j_hid]
        else:  # second-layer bias
            j_out = coord - w2_end
            new_logits = logits.copy()
            new_logits[:, j_out] = logits[:, j_out] + delta
        reg = 0.5 * self.mu * (float(np.dot(x, x)) + 2.0 * x[coord] * delta + delta * delta)
        return self._ce(new_logits, labels) + reg


# ---------------------------------------------------------------------------
# Feedback oracles
# ---------------------------------------------------------------------------

ORACLE_ORDERS = ("first", "zeroth")


@dataclass(frozen=True)
class OracleSpec:
    """Feedback noise model.

    sigma: per-coordinate std of the additive first-order gradient noise,
        drawn fresh on the full gradient at every call.
    zeta_std: std of the zeroth-order evaluation noise zeta.
    coupled: zeroth-order only; zeta identical at both evaluation points.
    minibatch: batch size for dataset objectives.  When set, the minibatch
        itself is the noise source (both zeroth-order points share the
        batch) and sigma / zeta_std are ignored.
    """

    order: str = "first"
    sigma: float = 0.0
    zeta_std: float = 0.0
    coupled: bool = False
    minibatch: int | None = None

    def __post_init__(self) -> None:
        if self.order not in ORACLE_ORDERS:
            raise ValueError(f"order must be one of {ORACLE_ORDERS}")
        if self.sigma < 0 or self.zeta_std < 0:
            raise ValueError("noise levels must be nonnegative")
        if self.minibatch is not None and self.minibatch < 1:
            raise ValueError("minibatch size must be positive")


def _project(direction, vec: np.ndarray) -> float:
    if isinstance(direction, (int, np.integer)):
        return float(vec[direction])
    return float(np.dot(direction, vec))


def first_order_feedback(
    obj: Objective,
    ospec: OracleSpec,
    x_stale: np.ndarray,
    direction,
    rng: np.random.Generator,
    batch_id: int | None = None,
) -> float:
    """a^T (grad-estimate at the stale iterate); direction may be a column
    vector or a coordinate index (identity dictionaries)."""
    if ospec.minibatch is not None:
        g = obj.batch_grad(x_stale, batch_id)
        return _project(direction, g)
    g = obj.grad(x_stale)
    if ospec.sigma > 0:
        g = g + ospec.sigma * rng.standard_normal(obj.dim)
    return _project(direction, g)


def zeroth_order_feedback(
    obj: Objective,
    ospec: OracleSpec,
    x_stale: np.ndarray,
    direction,
    lam: float,
    rng: np.random.Generator,
    batch_id: int | None = None,
) -> float:
    """Two-point estimate (fhat(x + lam a) - fhat(x - lam a)) / (2 lam)."""
    if lam <= 0:
        raise ValueError("perturbation radius lam must be positive")
    if ospec.minibatch is not None:
        bid = batch_id
        if isinstance(direction, (int, np.integer)) and obj.supports_coordinate_eval:
            f1 = obj.coordinate_eval(x_stale, int(direction), lam, bid)
            f2 = obj.coordinate_eval(x_stale, int(direction), -lam, bid)
        else:
            f1 = obj.batch_eval(_bump(x_stale, direction, lam), bid)
            f2 = obj.batch_eval(_bump(x_stale, direction, -lam), bid)
        return (f1 - f2) / (2.0 * lam)
    f1 = obj.eval(_bump(x_stale, direction, lam))
    f2 = obj.eval(_bump(x_stale, direction, -lam))
    if not ospec.coupled and ospec.zeta_std > 0:
        f1 = f1 + ospec.zeta_std * rng.standard_normal()
        f2 = f2 + ospec.zeta_std * rng.standard_normal()
    # Coupled noise is identical at both points and cancels in the
    # difference, so no draws are consumed.
    return (f1 - f2) / (2.0 * lam)


def _bump(x: np.ndarray, direction, scale: float) -> np.ndarray:
    out = x.copy()
    if isinstance(direction, (int, np.integer)):
        out[direction] += scale
    else:
        out += scale * direction
    return out


def batch_feedback(
    obj: Objective,
    ospec: OracleSpec,
    x_stale: np.ndarray,
    dir_idx: np.ndarray,
    rng: np.random.Generator,
    lam: float = 0.0,
    batch_id: int | None = None,
    matrix: np.ndarray | None = None,
) -> tuple[np.ndarray, int]:
    """All directional values for one event; returns (values, oracle_calls).

    dir_idx are coordinate indices when matrix is None (identity dictionary),
    else column indices into the worker matrix.  Dispatches to the compiled
    kernel for native objectives on identity dictionaries; the fallback loop
    draws noise in the same order, so both routes consume the stream
    identically.
    """
    from . import _kernels

    k = len(dir_idx)
    values = np.empty(k)
    native = (
        matrix is None
        and obj.kernel_kind is not None
        and ospec.minibatch is None
    )
    if native:
        _kernels.ops.batch_values_native(
            obj.kernel_kind,
            obj.kernel_q,
            obj.kernel_c,
            obj.kernel_rho,
            x_stale,
            np.ascontiguousarray(dir_idx, dtype=np.int64),
            0 if ospec.order == "first" else 1,
            ospec.sigma,
            ospec.zeta_std,
            ospec.coupled,
            lam,
            rng,
            values,
        )
    else:
        for j, i in enumerate(dir_idx):
            direction = int(i) if matrix is None else matrix[:, int(i)]
            if ospec.order == "first":
                values[j] = first_order_feedback(obj, ospec, x_stale, direction, rng, batch_id)
            else:
                values[j] = zeroth_order_feedback(
                    obj, ospec, x_stale, direction, lam, rng, batch_id
                )
    calls = k if ospec.order == "first" else 2 * k
    return values, calls


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


def synthetic_two_class(
    n: int, dim: int, seed: int = 0, separation: float = 3.0, name: str = "two_class"
) -> Dataset:
    """Two Gaussian classes separated along a random unit direction."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    u = rng.standard_normal(dim)
    u /= np.linalg.norm(u)
    labels = rng.integers(0, 2, size=n).astype(np.int64)
    feats = rng.standard_normal((n, dim)) + np.outer(
        2.0 * labels - 1.0, 0.5 * separation * u
    )
    return Dataset(features=feats, labels=labels, n_classes=2, name=name)


def synthetic_blobs(
    n: int, dim: int, n_classes: int, seed: int = 0, spread: float = 2.0
) -> Dataset:
    """Gaussian blobs around per-class means; small multiclass test problems."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    means = spread * rng.standard_normal((n_classes, dim))
    labels = rng.integers(0, n_classes, size=n).astype(np.int64)
    feats = rng.standard_normal((n, dim)) + means[labels]
    return Dataset(features=feats, labels=labels, n_classes=n_classes, name="blobs")


def _read_idx(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    if len(data) < 4:
        raise ValueError(f"{path}: not an IDX file")
    magic = struct.unpack(">i", data[:4])[0]
    if magic == MNIST_IMAGE_MAGIC:
        ndim = 3
    elif magic == MNIST_LABEL_MAGIC:
        ndim = 1
    else:
        raise ValueError(f"{path}: unexpected IDX magic {magic}")
    dims = struct.unpack(f">{ndim}i", data[4 : 4 + 4 * ndim])
    body = np.frombuffer(data, dtype=np.uint8, offset=4 + 4 * ndim)
    expected = int(np.prod(dims))
    if body.size != expected:
        raise ValueError(f"{path}: payload holds {body.size} bytes, header says {expected}")
    return body.reshape(dims)


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label pair; pixels scaled to [0, 1], gzip detected
    from the magic bytes."""
    images = _read_idx(images_path)
    labels = _read_idx(labels_path)
    if images.ndim != 3:
        raise ValueError(f"{images_path}: expected image data, got shape {images.shape}")
    if labels.ndim != 1:
        raise ValueError(f"{labels_path}: expected label data, got shape {labels.shape}")
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"image count {images.shape[0]} does not match label count {labels.shape[0]}"
        )
    feats = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(
        features=feats,
        labels=labels.astype(np.int64),
        n_classes=10,
        name="mnist",
    )
