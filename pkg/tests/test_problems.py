"""Objectives, oracles, datasets, and the IDX loader."""

from __future__ import annotations

import gzip
import struct

import numpy as np
import pytest

from farsign.problems import (
    Dataset,
    LogisticL2Objective,
    MlpCrossEntropyObjective,
    OracleSpec,
    QuadraticObjective,
    SeparableNonconvexObjective,
    batch_feedback,
    first_order_feedback,
    load_mnist_idx,
    mlp_param_count,
    synthetic_blobs,
    synthetic_two_class,
    zeroth_order_feedback,
)


def _rng(seed=0):
    return np.random.Generator(np.random.Philox(key=seed))


def _numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(len(x)):
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (f(up) - f(dn)) / (2 * h)
    return g


# ---------------------------------------------------------------------------
# Native objectives
# ---------------------------------------------------------------------------


def test_quadratic_forms():
    x = np.array([1.0, -2.0, 3.0])
    obj = QuadraticObjective(3)  # unit curvature
    assert obj.eval(x) == pytest.approx(0.5 * (1 + 4 + 9))
    np.testing.assert_allclose(obj.grad(x), x)
    assert obj.smoothness == pytest.approx(1.0)

    q = np.array([2.0, 1.0, 4.0])
    c = np.array([0.5, 0.0, -1.0])
    obj = QuadraticObjective(3, curvature=q, linear=c)
    assert obj.eval(x) == pytest.approx(0.5 * float(q @ (x * x)) + float(c @ x))
    np.testing.assert_allclose(obj.grad(x), q * x + c)
    assert obj.smoothness == pytest.approx(4.0)
    assert obj.kernel_kind is not None

    a = np.array([[2.0, 0.5], [0.5, 1.0]])
    full = QuadraticObjective(2, curvature=a)
    x2 = np.array([1.0, 1.0])
    assert full.eval(x2) == pytest.approx(0.5 * float(x2 @ a @ x2))
    np.testing.assert_allclose(full.grad(x2), a @ x2)
    assert full.kernel_kind is None  # no separable kernel for coupled curvature
    assert full.smoothness == pytest.approx(max(np.linalg.eigvalsh(a)))


def test_quadratic_scalar_curvature():
    obj = QuadraticObjective(4, curvature=3.0)
    x = np.ones(4)
    np.testing.assert_allclose(obj.grad(x), 3.0 * x)
    assert obj.smoothness == pytest.approx(3.0)


def test_separable_nonconvex_forms():
    obj = SeparableNonconvexObjective(2, rho=1.5)
    x = np.array([0.3, -1.1])
    expected = 0.5 * (x**2).sum() + 1.5 * (np.sin(x) ** 2).sum()
    assert obj.eval(x) == pytest.approx(expected)
    np.testing.assert_allclose(obj.grad(x), x + 1.5 * np.sin(2 * x), rtol=1e-12)
    np.testing.assert_allclose(obj.grad(x), _numeric_grad(obj.eval, x), atol=1e-8)
    assert obj.smoothness == pytest.approx(1.0 + 2 * 1.5)


# ---------------------------------------------------------------------------
# Dataset objectives
# ---------------------------------------------------------------------------


def test_logistic_gradient_matches_numeric():
    ds = synthetic_two_class(40, 5, seed=2)
    obj = LogisticL2Objective(ds, mu=1e-2)
    x = _rng(1).standard_normal(5)
    np.testing.assert_allclose(obj.grad(x), _numeric_grad(obj.eval, x), atol=1e-7)


def test_logistic_test_metric_is_accuracy():
    feats = np.array([[1.0, 0.0], [2.0, 0.0], [-1.0, 0.0], [-3.0, 0.0]])
    labels = np.array([1, 1, 0, 0])
    ds = Dataset(features=feats, labels=labels, n_classes=2)
    obj = LogisticL2Objective(ds, mu=1e-4, test_dataset=ds)
    assert obj.test_metric(np.array([1.0, 0.0])) == pytest.approx(1.0)
    assert obj.test_metric(np.array([-1.0, 0.0])) == pytest.approx(0.0)


def test_logistic_batches_cycle_after_reseed():
    ds = synthetic_two_class(10, 3, seed=0)
    obj = LogisticL2Objective(ds, mu=1e-3, batch=4)
    assert obj.n_batches == 3  # ceil(10 / 4)
    obj.reseed_batches(_rng(7))
    f0 = obj.batch_eval(np.zeros(3), 0)
    f_again = obj.batch_eval(np.zeros(3), 0 + obj.n_batches)  # same slice, cycled
    assert f0 == pytest.approx(f_again)
    full = obj.batch_grad(np.zeros(3), None)
    np.testing.assert_allclose(full, obj.grad(np.zeros(3)))


def test_mlp_gradient_matches_numeric():
    ds = synthetic_blobs(30, 4, 3, seed=1)
    obj = MlpCrossEntropyObjective([4, 6, 3], ds, mu=1e-3, batch=None)
    x = obj.init_params(_rng(3))
    assert x.shape == (mlp_param_count([4, 6, 3]),)
    np.testing.assert_allclose(obj.grad(x), _numeric_grad(obj.eval, x, h=1e-5), atol=1e-5)


def test_mlp_coordinate_eval_exact():
    ds = synthetic_blobs(25, 4, 3, seed=4)
    obj = MlpCrossEntropyObjective([4, 5, 3], ds, mu=1e-3, batch=8)
    obj.reseed_batches(_rng(9))
    x = obj.init_params(_rng(5))
    assert obj.supports_coordinate_eval
    # probe one coordinate in each parameter region: W1, b1, W2, b2
    n_w1, n_b1, n_w2 = 4 * 5, 5, 5 * 3
    probes = [3, n_w1 + 2, n_w1 + n_b1 + 7, n_w1 + n_b1 + n_w2 + 1]
    for bid in (0, 1, 2):
        for i in probes:
            for delta in (1e-3, -1e-3, 0.37):
                bumped = x.copy()
                bumped[i] += delta
                slow = obj.batch_eval(bumped, bid)
                fast = obj.coordinate_eval(x, i, delta, bid)
                assert abs(fast - slow) < 1e-10, (i, delta, bid)


def test_mlp_deep_network_has_no_coordinate_path():
    ds = synthetic_blobs(10, 3, 2, seed=0)
    obj = MlpCrossEntropyObjective([3, 4, 4, 2], ds, mu=1e-3)
    assert not obj.supports_coordinate_eval


def test_mlp_test_metric_counts_argmax_accuracy():
    feats = np.array([[1.0, 0.0], [0.0, 1.0]])
    labels = np.array([0, 1])
    ds = Dataset(features=feats, labels=labels, n_classes=2)
    obj = MlpCrossEntropyObjective([2, 3, 2], ds, mu=1e-3, test_dataset=ds)
    x = obj.init_params(_rng(0))
    acc = obj.test_metric(x)
    assert acc in (0.0, 0.5, 1.0)


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def test_oracle_spec_validation():
    OracleSpec(order="zeroth", coupled=True)
    with pytest.raises(ValueError):
        OracleSpec(order="second")
    with pytest.raises(ValueError):
        OracleSpec(sigma=-1.0)
    with pytest.raises(ValueError):
        OracleSpec(minibatch=0)


def test_first_order_noiseless_is_projection():
    obj = QuadraticObjective(4, curvature=np.array([1.0, 2.0, 3.0, 4.0]))
    x = np.array([1.0, 1.0, -1.0, 0.5])
    spec = OracleSpec(order="first")
    assert first_order_feedback(obj, spec, x, 2, _rng()) == pytest.approx(-3.0)
    a = np.array([0.5, 0.5, 0.0, 0.0])
    assert first_order_feedback(obj, spec, x, a, _rng()) == pytest.approx(
        float(a @ obj.grad(x))
    )


def test_first_order_noise_is_full_dimensional_fresh_draw():
    obj = QuadraticObjective(3)
    x = np.ones(3)
    spec = OracleSpec(order="first", sigma=0.5)
    got = first_order_feedback(obj, spec, x, 1, _rng(42))
    xi = _rng(42).standard_normal(3)  # replay the draw
    assert got == pytest.approx(x[1] + 0.5 * xi[1], rel=1e-15)


def test_zeroth_order_two_point_values():
    obj = SeparableNonconvexObjective(3, rho=0.7)
    x = np.array([0.2, -0.4, 1.0])
    spec = OracleSpec(order="zeroth")
    lam = 1e-4
    got = zeroth_order_feedback(obj, spec, x, 0, lam, _rng())
    assert got == pytest.approx(obj.grad(x)[0], abs=1e-6)
    with pytest.raises(ValueError):
        zeroth_order_feedback(obj, spec, x, 0, 0.0, _rng())


def test_zeroth_coupled_noise_cancels_exactly():
    obj = QuadraticObjective(3)
    x = np.array([0.5, 1.5, -2.0])
    lam = 1e-3
    noiseless = zeroth_order_feedback(
        obj, OracleSpec(order="zeroth"), x, 1, lam, _rng(1)
    )
    coupled = zeroth_order_feedback(
        obj, OracleSpec(order="zeroth", zeta_std=5.0, coupled=True), x, 1, lam, _rng(1)
    )
    assert coupled == noiseless  # bit-exact: no draws happen
    rng = _rng(1)
    zeroth_order_feedback(
        obj, OracleSpec(order="zeroth", zeta_std=5.0, coupled=True), x, 1, lam, rng
    )
    assert rng.standard_normal() == _rng(1).standard_normal()  # stream untouched


def test_zeroth_decoupled_draw_order():
    obj = QuadraticObjective(2)
    x = np.array([1.0, 2.0])
    lam = 0.1
    spec = OracleSpec(order="zeroth", zeta_std=0.3)
    got = zeroth_order_feedback(obj, spec, x, 0, lam, _rng(9))
    r = _rng(9)
    z1, z2 = r.standard_normal(), r.standard_normal()
    f1 = obj.eval(x + lam * np.eye(2)[0]) + 0.3 * z1
    f2 = obj.eval(x - lam * np.eye(2)[0]) + 0.3 * z2
    assert got == pytest.approx((f1 - f2) / (2 * lam), rel=1e-15)


def test_minibatch_mode_shares_the_batch_and_ignores_gaussian_knobs():
    ds = synthetic_two_class(20, 4, seed=3)
    obj = LogisticL2Objective(ds, mu=1e-3, batch=8)
    obj.reseed_batches(_rng(11))
    x = 0.1 * np.ones(4)
    spec = OracleSpec(order="zeroth", sigma=9.0, zeta_std=9.0, minibatch=8)
    lam = 1e-5
    rng = _rng(2)
    state_before = repr(rng.bit_generator.state)
    got = zeroth_order_feedback(obj, spec, x, 1, lam, rng, batch_id=5)
    assert repr(rng.bit_generator.state) == state_before  # batch is the only noise
    e1 = np.eye(4)[1]
    manual = (obj.batch_eval(x + lam * e1, 5) - obj.batch_eval(x - lam * e1, 5)) / (
        2 * lam
    )
    assert got == pytest.approx(manual, rel=1e-12)
    # first-order minibatch projects the batch gradient
    fo = first_order_feedback(obj, OracleSpec(order="first", minibatch=8), x, 2, rng, 4)
    assert fo == pytest.approx(obj.batch_grad(x, 4)[2], rel=1e-12)


def test_batch_feedback_native_and_generic_routes_agree():
    # identity-dictionary native kernel vs the generic per-direction loop
    # (forced via an explicit identity matrix); same draws, same values.
    q = np.array([1.0, 2.0, 0.5, 3.0])
    obj = QuadraticObjective(4, curvature=q)
    x = np.array([0.3, -1.0, 2.0, 0.7])
    idx = np.array([0, 2, 3], dtype=np.int64)
    for spec, lam in (
        (OracleSpec(order="first", sigma=0.4), 0.0),
        (OracleSpec(order="zeroth", zeta_std=0.2), 1e-2),
        (OracleSpec(order="zeroth", coupled=True), 1e-2),
    ):
        native, calls_n = batch_feedback(obj, spec, x, idx, _rng(21), lam=lam)
        generic, calls_g = batch_feedback(
            obj, spec, x, idx, _rng(21), lam=lam, matrix=np.eye(4)
        )
        np.testing.assert_allclose(native, generic, rtol=1e-12)
        assert calls_n == calls_g
        expected_calls = len(idx) if spec.order == "first" else 2 * len(idx)
        assert calls_n == expected_calls


def test_batch_feedback_matrix_directions():
    obj = QuadraticObjective(2, curvature=np.array([1.0, 2.0]))
    x = np.array([1.0, -1.0])
    a = np.array([[2.0, 0.0], [1.0, 1.0]])
    vals, calls = batch_feedback(
        obj, OracleSpec(order="first"), x, np.array([0, 1]), _rng(), matrix=a
    )
    g = obj.grad(x)
    np.testing.assert_allclose(vals, a.T @ g)
    assert calls == 2


# ---------------------------------------------------------------------------
# Synthetic datasets and the IDX loader
# ---------------------------------------------------------------------------


def test_synthetic_datasets_deterministic():
    a = synthetic_two_class(50, 6, seed=5)
    b = synthetic_two_class(50, 6, seed=5)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.n_classes == 2 and a.n == 50
    blobs = synthetic_blobs(30, 4, 7, seed=2)
    assert blobs.n_classes == 7
    assert set(np.unique(blobs.labels)) <= set(range(7))


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(features=np.zeros(3), labels=np.zeros(3, dtype=np.int64), n_classes=2)
    with pytest.raises(ValueError):
        Dataset(
            features=np.zeros((3, 2)), labels=np.zeros(4, dtype=np.int64), n_classes=2
        )


def _write_idx_pair(tmp_path, n=7, rows=3, cols=2, gz=False):
    pixels = np.arange(n * rows * cols, dtype=np.uint8).reshape(n, rows, cols)
    labels = (np.arange(n) % 10).astype(np.uint8)
    img_bytes = struct.pack(">IIII", 2051, n, rows, cols) + pixels.tobytes()
    lab_bytes = struct.pack(">II", 2049, n) + labels.tobytes()
    opener = gzip.open if gz else open
    suffix = ".gz" if gz else ""
    ip, lp = tmp_path / f"img{suffix}", tmp_path / f"lab{suffix}"
    with opener(ip, "wb") as fh:
        fh.write(img_bytes)
    with opener(lp, "wb") as fh:
        fh.write(lab_bytes)
    return ip, lp, pixels, labels


def test_idx_loader_round_trip(tmp_path):
    ip, lp, pixels, labels = _write_idx_pair(tmp_path)
    ds = load_mnist_idx(ip, lp)
    assert ds.features.shape == (7, 6)
    np.testing.assert_allclose(ds.features, pixels.reshape(7, 6) / 255.0)
    np.testing.assert_array_equal(ds.labels, labels)
    assert ds.n_classes == 10


def test_idx_loader_gzip(tmp_path):
    ip, lp, pixels, _ = _write_idx_pair(tmp_path, gz=True)
    ds = load_mnist_idx(ip, lp)
    np.testing.assert_allclose(ds.features, pixels.reshape(7, 6) / 255.0)


def test_idx_loader_rejects_bad_magic_and_count(tmp_path):
    ip, lp, _, _ = _write_idx_pair(tmp_path)
    bad = tmp_path / "bad"
    bad.write_bytes(struct.pack(">IIII", 1234, 1, 2, 2) + bytes(4))
    with pytest.raises(ValueError, match="magic"):
        load_mnist_idx(bad, lp)
    short_lab = tmp_path / "short"
    short_lab.write_bytes(struct.pack(">II", 2049, 3) + bytes([0, 1, 2]))
    with pytest.raises(ValueError, match="3"):
        load_mnist_idx(ip, short_lab)
