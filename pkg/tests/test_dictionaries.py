"""Direction dictionaries, margins, and robustness certification."""

from __future__ import annotations

from itertools import combinations

import numpy as np
import pytest

from farsign.dictionaries import (
    CertificationBudgetError,
    DirectionDictionary,
    certify,
    dictionary_from_matrices,
    ganesh_example_dictionary,
    identity_dictionary,
    load_dictionary,
    save_dictionary,
    subset_margin,
)


# ---------------------------------------------------------------------------
# Construction and basic invariants
# ---------------------------------------------------------------------------


def test_identity_dictionary_shape():
    dic = identity_dictionary(7, 3)
    assert dic.is_identity
    assert (dic.dim, dic.n_workers, dic.n_directions) == (7, 3, 7)
    assert dic.a_bar == 1.0
    np.testing.assert_array_equal(dic.column(1, 4), np.eye(7)[4])
    np.testing.assert_array_equal(dic.matrix(0), np.eye(7))
    assert dic.stacked_rank() == 7


def test_from_matrices_a_bar_and_validation():
    mats = [np.array([[3.0, 0.0], [4.0, 1.0]]), np.eye(2)]
    dic = dictionary_from_matrices(mats)
    assert dic.a_bar == pytest.approx(5.0)  # column (3,4)
    assert not dic.is_identity
    with pytest.raises(ValueError):
        dictionary_from_matrices([])
    with pytest.raises(ValueError):
        dictionary_from_matrices([np.ones(3)])
    with pytest.raises(ValueError):
        DirectionDictionary(n_workers=1, dim=2, n_directions=3, matrices=None, a_bar=1.0)
    with pytest.raises(ValueError):
        DirectionDictionary(
            n_workers=2, dim=2, n_directions=1, matrices=(np.ones((2, 1)),), a_bar=1.0
        )


def test_save_load_round_trip(tmp_path):
    dic = ganesh_example_dictionary()
    path = tmp_path / "dict.txt"
    save_dictionary(dic, path)
    back = load_dictionary(path)
    assert back.n_workers == dic.n_workers
    assert back.dim == dic.dim
    assert back.n_directions == dic.n_directions
    for w in range(dic.n_workers):
        np.testing.assert_array_equal(back.matrix(w), dic.matrix(w))
    assert back.a_bar == dic.a_bar


# ---------------------------------------------------------------------------
# Margins: identity closed form and the 2-D exact oracle
# ---------------------------------------------------------------------------


def test_identity_margin_closed_form():
    dic = identity_dictionary(51, 51)
    assert subset_margin(dic, range(12)) == 27.0
    assert subset_margin(dic, range(5)) == 41.0
    dic4 = identity_dictionary(4, 4)
    assert subset_margin(dic4, (0, 1)) == 0.0


def test_ganesh_margins_exact():
    dic = ganesh_example_dictionary()
    assert subset_margin(dic, (2,), method="exact_2d") == pytest.approx(1.0 / 3.0)
    assert subset_margin(dic, (0, 3), method="exact_2d") == pytest.approx(-3.0)
    # certificate scans all subsets up to size f
    c1 = certify(dic, 1)
    assert c1.verdict == "certified_pass"
    assert c1.margin_eta == pytest.approx(1.0 / 3.0)
    assert c1.worst_subset == (2,)
    c2 = certify(dic, 2)
    assert c2.verdict == "certified_fail"
    assert c2.margin_eta == pytest.approx(-3.0)
    assert c2.worst_subset == (0, 3)
    assert not c2.passed and c1.passed


def test_exact_2d_matches_dense_grid_oracle():
    # Independent oracle: minimize over a dense l1-sphere sample rather than
    # the breakpoint sweep used by the implementation.
    dic = ganesh_example_dictionary()
    cols = [dic.matrices[w][:, 0] for w in range(4)]
    thetas = np.linspace(0.0, 2.0 * np.pi, 100_001)[:-1]
    pts = np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
    pts /= np.abs(pts).sum(axis=1, keepdims=True)
    table = np.stack([np.abs(pts @ c) for c in cols], axis=1)
    for subset in [(0,), (1,), (2,), (3,), (0, 3), (1, 2)]:
        mask = np.zeros(4, dtype=bool)
        mask[list(subset)] = True
        grid = float((table[:, ~mask].sum(axis=1) - table[:, mask].sum(axis=1)).min())
        exact = subset_margin(dic, subset, method="exact_2d")
        assert exact == pytest.approx(grid, abs=1e-3)
        # breakpoint sweep is a true minimum: never above the grid estimate
        assert exact <= grid + 1e-12


def test_monte_carlo_close_to_exact():
    dic = ganesh_example_dictionary()
    exact = subset_margin(dic, (2,), method="exact_2d")
    mc = subset_margin(dic, (2,), method="monte_carlo", samples=50_000, seed=3)
    assert abs(mc - exact) < 1e-2
    assert mc >= exact - 1e-12  # sampling can only miss the minimizer


def test_margin_monotone_in_subset():
    rng = np.random.Generator(np.random.Philox(key=11))
    dic = dictionary_from_matrices([rng.standard_normal((2, 1)) for _ in range(5)])
    for small in combinations(range(5), 1):
        for big in combinations(range(5), 2):
            if set(small) <= set(big):
                m_small = subset_margin(dic, small, method="exact_2d")
                m_big = subset_margin(dic, big, method="exact_2d")
                assert m_big <= m_small + 1e-12


# ---------------------------------------------------------------------------
# Certification
# ---------------------------------------------------------------------------


def test_identity_certification_margins():
    c = certify(identity_dictionary(51, 51), 12)
    assert c.verdict == "certified_pass"
    assert c.margin_eta == 27.0
    c = certify(identity_dictionary(4, 4), 2)
    assert c.verdict == "certified_fail"
    assert c.margin_eta == 0.0
    c = certify(identity_dictionary(3, 3), 0)
    assert c.passed and c.margin_eta == 3.0


def test_certification_input_validation():
    dic = identity_dictionary(4, 4)
    with pytest.raises(ValueError):
        certify(dic, 4)
    with pytest.raises(ValueError):
        certify(dic, -1)
    with pytest.raises(ValueError):
        subset_margin(dic, (9,))
    with pytest.raises(ValueError):
        subset_margin(dic, (0,), method="nope")


def test_certification_budget_error():
    rng = np.random.Generator(np.random.Philox(key=5))
    dic = dictionary_from_matrices([rng.standard_normal((2, 1)) for _ in range(30)])
    with pytest.raises(CertificationBudgetError):
        certify(dic, 10, method="exact_2d", subset_cap=1000)


def test_monte_carlo_verdict_labels():
    rng = np.random.Generator(np.random.Philox(key=6))
    dic = dictionary_from_matrices([rng.standard_normal((3, 2)) for _ in range(4)])
    c = certify(dic, 1, method="monte_carlo", samples=5_000)
    assert c.verdict in ("sampled_pass", "sampled_fail")
    assert c.method == "monte_carlo"
