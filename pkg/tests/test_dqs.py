import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import numeric_grad, rel_err
from pqdt import autodiff as ad
from pqdt.dqs import (QuerySelector, SelectionConfig, anneal_beta, gumbel_noise, gumbel_perturb,
                      pad_candidates, sample_padding, score, select_topk, standardize,
                      straight_through_tape, topk_indices)
from pqdt.layers import MLP


def test_selection_config_rejects_oversized_output():
    SelectionConfig(384, 128, 384)
    SelectionConfig(384, 256, 512)
    with pytest.raises(ValueError, match="exceeds"):
        SelectionConfig(4, 2, 7)


def test_pad_candidates_zero_features():
    c, f = pad_candidates(np.ones((3, 3)), np.ones((3, 5)), np.full((2, 3), 7.0))
    assert c.shape == (5, 3) and f.shape == (5, 5)
    np.testing.assert_array_equal(f.data[3:], 0.0)
    np.testing.assert_array_equal(c.data[3:], 7.0)


def test_pad_candidates_empty_is_identity():
    coords, feats = np.ones((3, 3)), np.ones((3, 5))
    c, f = pad_candidates(coords, feats, np.empty((0, 3)))
    np.testing.assert_array_equal(c.data, coords)
    np.testing.assert_array_equal(f.data, feats)


def test_padding_rows_come_from_source():
    src = np.random.default_rng(0).normal(size=(20, 3))
    pad = sample_padding(src, 8, np.random.default_rng(1))
    assert all(any((row == s).all() for s in src) for row in pad)
    assert len({tuple(r) for r in pad}) == 8


def test_standardize_constant_scores():
    np.testing.assert_array_equal(standardize(ad.Tensor(np.full(5, 3.0))).data, 0.0)


@given(st.integers(0, 2 ** 31), st.integers(2, 50))
def test_standardize_moments(seed, n):
    raw = np.random.default_rng(seed).normal(size=n) * 4 + 2
    z = standardize(ad.Tensor(raw)).data
    assert abs(z.mean()) < 1e-9
    assert abs(z.std() - 1) < 1e-9


def test_score_needs_two_rows():
    with pytest.raises(ValueError, match="at least 2"):
        score(ad.Tensor(np.ones((1, 4))), MLP([4, 1], np.random.default_rng(0)))


def test_gumbel_closed_form():
    class Half:
        def uniform(self, size):
            return np.full(size, 0.5)

    assert gumbel_noise(1, Half())[0] == pytest.approx(-math.log(math.log(2)), abs=1e-15)
    assert gumbel_noise(1, Half())[0] == pytest.approx(0.3665129205816643, abs=1e-15)


def test_gumbel_clamps_extremes():
    class Edge:
        def uniform(self, size):
            return np.array([0.0, 1.0])

    assert np.isfinite(gumbel_noise(2, Edge())).all()


def test_beta_zero_is_identity():
    z = np.random.default_rng(0).normal(size=10)
    np.testing.assert_array_equal(gumbel_perturb(z, 0.0, None).data, z)


def test_negative_beta_rejected():
    with pytest.raises(ValueError, match="beta"):
        gumbel_perturb(np.zeros(3), -0.1, np.random.default_rng(0))


def test_topk_hand_example_and_ties():
    assert sorted(topk_indices(np.array([3.0, 1.0, 2.0]), 2)) == [0, 2]
    assert list(topk_indices(np.array([1.0, 2.0, 2.0, 0.0]), 2)) == [1, 2]
    with pytest.raises(ValueError, match="k="):
        topk_indices(np.zeros(3), 4)


def test_topk_full_pool_is_permutation():
    s = np.random.default_rng(2).normal(size=12)
    assert sorted(topk_indices(s, 12)) == list(range(12))


def test_beta_zero_equals_deterministic_topk_100_fixtures():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(2, 60))
        k = int(rng.integers(1, n + 1))
        z = rng.normal(size=n)
        coords, feats = rng.normal(size=(n, 3)), rng.normal(size=(n, 4))
        res = select_topk(gumbel_perturb(z, 0.0, rng), k, coords, feats)
        expect = sorted(range(n), key=lambda i: (-z[i], i))[:k]
        assert list(res.indices) == expect
        np.testing.assert_array_equal(res.feats.data, feats[expect])
        np.testing.assert_array_equal(res.coords.data, coords[expect])


@given(st.integers(0, 2 ** 31), st.integers(2, 40), st.floats(0.0, 1.0))
def test_selected_indices_unique_and_in_pool(seed, n, beta):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, n + 1))
    s = gumbel_perturb(rng.normal(size=n), beta, rng)
    res = select_topk(s, k, rng.normal(size=(n, 3)), rng.normal(size=(n, 2)))
    assert len(set(res.indices.tolist())) == k
    assert res.indices.min() >= 0 and res.indices.max() < n
    assert (np.diff(s.data[res.indices]) <= 0).all()


def test_unselected_rows_get_zero_feature_gradient():
    rng = np.random.default_rng(3)
    for _ in range(20):
        feats = ad.Tensor(rng.normal(size=(10, 4)), requires_grad=True)
        s = ad.Tensor(rng.normal(size=10), requires_grad=True)
        res = select_topk(s, 4, rng.normal(size=(10, 3)), feats)
        ad.sum_(res.feats * rng.normal(size=(4, 4))).backward()
        unselected = np.setdiff1d(np.arange(10), res.indices)
        np.testing.assert_array_equal(feats.grad[unselected], 0.0)
        np.testing.assert_array_equal(s.grad[unselected], 0.0)
        assert np.abs(s.grad[res.indices]).sum() > 0


def test_straight_through_forward_is_plain_gather():
    rng = np.random.default_rng(4)
    feats = rng.normal(size=(8, 3))
    s = ad.Tensor(rng.normal(size=8) * 10, requires_grad=True)
    res = select_topk(s, 3, rng.normal(size=(8, 3)), ad.Tensor(feats))
    np.testing.assert_array_equal(res.feats.data, feats[res.indices])


def test_score_mlp_gradient_matches_replayed_surrogate():
    rng = np.random.default_rng(5)
    sel = QuerySelector(SelectionConfig(10, 2, 5), 4, rng)
    coords, feats = rng.normal(size=(10, 3)), rng.normal(size=(10, 4))
    pad = rng.normal(size=(2, 3))
    r = rng.normal(size=(5, 4))

    def run():
        return ad.sum_(sel(coords, feats, pad, 0.0, None).feats * r)

    tape = []
    with straight_through_tape("record", tape):
        run().backward()
    w = sel.mlp.layers[0].weight
    analytic = w.grad.copy()
    assert np.abs(analytic).sum() > 0

    def f():
        with straight_through_tape("replay", tape):
            return run().item()

    assert rel_err(analytic, numeric_grad(f, w.data)) < 1e-6


def test_selector_rejects_wrong_pool():
    rng = np.random.default_rng(6)
    sel = QuerySelector(SelectionConfig(10, 2, 5), 4, rng)
    with pytest.raises(ad.ShapeError, match="pool"):
        sel(rng.normal(size=(9, 3)), rng.normal(size=(9, 4)), rng.normal(size=(2, 3)), 0.0, None)


def test_selector_needs_rng_when_noisy():
    rng = np.random.default_rng(7)
    sel = QuerySelector(SelectionConfig(6, 0, 3), 4, rng)
    with pytest.raises(ValueError, match="rng"):
        sel(rng.normal(size=(6, 3)), rng.normal(size=(6, 4)), np.empty((0, 3)), 0.5, None)


def test_noise_varies_selection_on_near_ties():
    z = np.array([0.0, 1e-3, -1e-3, 2e-3, 5.0, -5.0])
    rng = np.random.default_rng(8)
    subsets = {tuple(sorted(topk_indices(gumbel_perturb(z, 1.0, rng).data, 2))) for _ in range(100)}
    assert len(subsets) > 1


def test_fixed_stream_bit_reproducible():
    rng0 = np.random.default_rng(9)
    sel = QuerySelector(SelectionConfig(12, 4, 6), 4, rng0)
    coords, feats, pad = rng0.normal(size=(12, 3)), rng0.normal(size=(12, 4)), rng0.normal(size=(4, 3))
    a = sel(coords, feats, pad, 0.7, np.random.default_rng(42))
    b = sel(coords, feats, pad, 0.7, np.random.default_rng(42))
    np.testing.assert_array_equal(a.indices, b.indices)
    assert a.feats.data.tobytes() == b.feats.data.tobytes()


def test_anneal_endpoints_and_monotone():
    assert anneal_beta(0.0) == 1.0
    assert anneal_beta(1.0) == 0.0
    grid = [anneal_beta(p) for p in np.linspace(-0.5, 1.5, 41)]
    assert all(a >= b for a, b in zip(grid, grid[1:]))
