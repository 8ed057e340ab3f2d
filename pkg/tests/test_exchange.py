import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from irforge.exchange import (
    AdapterWeights,
    AttentionKernels,
    ExchangeConfig,
    ExchangeParams,
    FeatureExchange,
    adapter_forward,
    channel_attention,
    exchange_backward,
    exchange_count,
    exchange_forward,
    expand_mask,
    hard_exchange,
    load_params,
    save_params,
    spatial_exchange,
    topk_select,
)
from irforge.exchange.core import MECHANISMS, SELECTIONS
from irforge.exchange.reference import (
    adapter_reference,
    attention_reference,
    exchange_reference,
    topk_reference,
)
from irforge.exchange.selection import expand_spatial_mask, fixed_select, random_select
from irforge.rng import derive_stream

from gradcheck import gradient_check


def setup(c, h, w, hidden=16, seed=0):
    rng = derive_stream(seed, 0)
    params = ExchangeParams.random(c, hidden, rng)
    return params, rng.standard_normal((c, h, w)), rng.standard_normal((c, h, w))


class TestAttention:
    def test_zero_input_and_weights(self):
        m = channel_attention(np.zeros((5, 3, 3)), AttentionKernels.zeros(5))
        assert np.array_equal(m, np.full(5, 0.5))

    def test_scalar_oracle(self):
        rng = derive_stream(1, 0)
        k = AttentionKernels.random(4, rng)
        x = rng.standard_normal((4, 3, 3))
        ref, _ = attention_reference(x, k)
        assert np.abs(channel_attention(x, k) - np.array(ref)).max() < 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 5), st.integers(1, 5), st.integers(0, 10_000))
    def test_bounded_and_equivariant(self, c, h, w, seed):
        rng = derive_stream(seed, 1)
        k = AttentionKernels.random(c, rng)
        x = rng.standard_normal((c, h, w)) * 3
        perm = rng.permutation(c)
        m = channel_attention(x, k)
        assert ((m > 0) & (m < 1)).all()
        assert np.array_equal(channel_attention(x[perm], k.permuted(perm)), m[perm])

    def test_wrong_channels(self):
        with pytest.raises(ValueError):
            channel_attention(np.zeros((3, 2, 2)), AttentionKernels.zeros(4))


class TestSelection:
    def test_example(self):
        sel = topk_select(np.array([0.9, 0.1, 0.5, 0.7]), 0.5)
        assert sel.k == 2 and sel.indices.tolist() == [0, 3] and sel.mask.tolist() == [1, 0, 0, 1]

    def test_ties_go_low(self):
        assert topk_select(np.full(4, 0.3), 0.5).indices.tolist() == [0, 1]

    def test_floor(self):
        assert topk_select(np.linspace(0, 1, 5), 0.5).k == 2

    def test_zero_k(self):
        with pytest.raises(ValueError):
            topk_select(np.array([0.2, 0.4]), 0.25)
        with pytest.raises(ValueError):
            exchange_count(4, 1.0)

    def test_count_rounding_guard(self):
        assert 100 * 0.29 < 29
        assert exchange_count(100, 0.29) == 29

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0.01, 0.99))
    def test_matches_reference(self, scores, p):
        k = exchange_count(len(scores), p)
        if k == 0:
            return
        sel = topk_select(np.array(scores), p)
        assert sel.indices.tolist() == topk_reference(scores, k)
        chosen = set(sel.indices.tolist())
        rest = [s for i, s in enumerate(scores) if i not in chosen]
        assert not rest or sel.values.min() >= max(rest)
        assert sel.mask.sum() == k

    def test_fixed_and_random(self):
        assert fixed_select(6, 0.5).indices.tolist() == [0, 1, 2]
        a = random_select(10, 0.3, derive_stream(4, 0))
        b = random_select(10, 0.3, derive_stream(4, 0))
        assert a.k == 3 and a.indices.tolist() == b.indices.tolist()
        assert len(set(a.indices.tolist())) == 3

    def test_expand(self):
        out = expand_mask(np.array([1, 0]), 2, 2)
        assert out.shape == (2, 2, 2) and (out[0] == 1).all() and (out[1] == 0).all()
        assert not expand_mask(np.zeros(3), 4, 1).any()
        s = expand_spatial_mask(np.eye(2), 3)
        assert s.shape == (3, 2, 2) and (s == np.eye(2)).all()


class TestAdapter:
    def test_zero_weights(self):
        out, _ = adapter_forward(np.random.default_rng(0).random((3, 2, 2)), AdapterWeights.zeros(3, 4))
        assert not out.any()

    def test_oracle(self):
        rng = derive_stream(2, 0)
        w = AdapterWeights.random(3, 4, rng)
        x = rng.standard_normal((3, 2, 2))
        out, _ = adapter_forward(x, w)
        assert np.abs(out - adapter_reference(x, w)).max() < 1e-12

    def test_disabled_is_identity_path(self):
        params, x1, x2 = setup(4, 2, 2)
        cfg = ExchangeConfig(adapter_enabled=False)
        e = np.array([1, 0, 1, 0])
        y1, y2 = hard_exchange(x1, x2, cfg, params, masks=(e, e))
        assert np.array_equal(y1[[0, 2]], x2[[0, 2]]) and np.array_equal(y1[[1, 3]], x1[[1, 3]])

    def test_shape_checks(self):
        with pytest.raises(ValueError):
            adapter_forward(np.zeros((3, 2, 2)), AdapterWeights.zeros(4, 4))
        bad = AdapterWeights(np.zeros((3, 4)), np.zeros(5), np.zeros((4, 3)), np.zeros(3))
        with pytest.raises(ValueError):
            adapter_forward(np.zeros((3, 2, 2)), bad)


class TestHardExchange:
    def test_channel_swap(self):
        params, x1, x2 = setup(2, 3, 3)
        cfg = ExchangeConfig(adapter_enabled=False)
        e = np.array([1, 0])
        y1, y2 = hard_exchange(x1, x2, cfg, params, masks=(e, e))
        assert np.array_equal(y1, np.stack([x2[0], x1[1]]))
        assert np.array_equal(y2, np.stack([x1[0], x2[1]]))

    @pytest.mark.parametrize("mechanism", sorted(MECHANISMS))
    def test_symmetry(self, mechanism):
        rng = derive_stream(8, 0)
        attn = AttentionKernels.random(4, rng)
        ad = AdapterWeights.random(4, 8, rng)
        params = ExchangeParams(attn, attn, ad, ad)
        x = rng.standard_normal((4, 4, 4))
        y1, y2 = hard_exchange(x, x.copy(), ExchangeConfig(mechanism=mechanism), params)
        assert np.array_equal(y1, y2)

    @pytest.mark.parametrize("mechanism", sorted(MECHANISMS))
    @pytest.mark.parametrize("selection", SELECTIONS)
    def test_brute_force(self, mechanism, selection):
        params, x1, x2 = setup(8, 4, 4, hidden=16, seed=3)
        cfg = ExchangeConfig(0.5, mechanism, selection, 16)
        y1, y2 = hard_exchange(x1, x2, cfg, params, derive_stream(1, 1))
        r1, r2 = exchange_reference(x1, x2, cfg, params, derive_stream(1, 1))
        assert np.abs(y1 - r1).max() < 1e-12 and np.abs(y2 - r2).max() < 1e-12

    def test_deterministic(self):
        params, x1, x2 = setup(6, 3, 3)
        cfg = ExchangeConfig(selection="random")
        a = hard_exchange(x1, x2, cfg, params, derive_stream(5, 5))
        b = hard_exchange(x1, x2, cfg, params, derive_stream(5, 5))
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_errors(self):
        params, x1, x2 = setup(4, 2, 2)
        with pytest.raises(ValueError):
            hard_exchange(x1, x2[:, :1], ExchangeConfig(), params)
        with pytest.raises(ValueError):
            hard_exchange(x1, x2, ExchangeConfig(selection="random"), params)
        with pytest.raises(ValueError):
            ExchangeConfig(p=0)
        with pytest.raises(ValueError):
            ExchangeConfig(mechanism="diagonal")

    def test_float32(self):
        params, x1, x2 = setup(4, 2, 2)
        y1, _ = hard_exchange(x1, x2, ExchangeConfig(dtype="float32"), params.astype(np.float32))
        assert y1.dtype == np.float32


class TestSpatialExchange:
    def test_empty_mask(self):
        params, x1, x2 = setup(3, 2, 2)
        cfg = ExchangeConfig(adapter_enabled=False)
        y1, y2 = spatial_exchange(x1, x2, cfg, params, masks=(np.zeros((2, 2)), np.zeros((2, 2))))
        assert np.array_equal(y1, x1) and np.array_equal(y2, x2)

    def test_full_mask(self):
        params, x1, x2 = setup(3, 2, 2)
        cfg = ExchangeConfig(adapter_enabled=False)
        y1, y2 = spatial_exchange(x1, x2, cfg, params, masks=(np.ones((2, 2)), np.ones((2, 2))))
        assert np.array_equal(y1, x2) and np.array_equal(y2, x1)

    def test_oracle(self):
        params, x1, x2 = setup(2, 2, 2, seed=9)
        cfg = ExchangeConfig(0.5, "spatial", adapter_hidden=16)
        y1, y2 = spatial_exchange(x1, x2, cfg, params)
        r1, r2 = exchange_reference(x1, x2, cfg, params)
        assert np.abs(y1 - r1).max() < 1e-12 and np.abs(y2 - r2).max() < 1e-12

    def test_positions_selected(self):
        params, x1, x2 = setup(3, 4, 4)
        _, _, cache = exchange_forward(x1, x2, ExchangeConfig(0.25, "spatial"), params)
        st_ = cache.stages[0]
        assert st_.selection1.k == 4
        assert (st_.mask1 == st_.mask1[0]).all()


class TestBackward:
    def test_zero_upstream(self):
        params, x1, x2 = setup(4, 3, 3)
        _, _, cache = exchange_forward(x1, x2, ExchangeConfig(adapter_hidden=16), params)
        z = np.zeros_like(x1)
        g = exchange_backward(cache, z, z, np.zeros(4), np.zeros(4))
        assert not g.x1.any() and not g.x2.any()
        assert all(not np.any(a) for _, a in g.params.named_arrays())

    def test_identity_structure(self):
        params, x1, x2 = setup(4, 2, 2)
        e = np.array([1, 0, 0, 1])
        _, _, cache = exchange_forward(x1, x2, ExchangeConfig(adapter_enabled=False), params, masks=(e, e))
        dy1 = np.random.default_rng(0).standard_normal(x1.shape)
        g = exchange_backward(cache, dy1, np.zeros_like(x1))
        # dY1/dX1 is the identity on kept channels and zero on sent ones.
        assert np.array_equal(g.x1[[1, 2]], dy1[[1, 2]])
        assert not g.x1[[0, 3]].any()
        assert np.array_equal(g.x2[[0, 3]], dy1[[0, 3]])

    @pytest.mark.parametrize("mechanism", sorted(MECHANISMS))
    def test_finite_differences(self, mechanism):
        err, tie = gradient_check(4, c=4, h=2, w=2, hidden=8, mechanism=mechanism)
        assert not tie
        assert err < 1e-4


class TestWeightsIO:
    def test_round_trip(self, tmp_path):
        params, _, _ = setup(5, 1, 1, hidden=7)
        save_params(params, tmp_path / "w.bin")
        assert (tmp_path / "w.bin.json").exists()
        loaded = load_params(tmp_path / "w.bin")
        for (n1, a), (n2, b) in zip(params.named_arrays(), loaded.named_arrays()):
            assert n1 == n2 and np.array_equal(a, b)

    def test_truncated(self, tmp_path):
        params, _, _ = setup(3, 1, 1, hidden=4)
        save_params(params, tmp_path / "w.bin")
        data = (tmp_path / "w.bin").read_bytes()
        (tmp_path / "w.bin").write_bytes(data[:-8])
        with pytest.raises(ValueError):
            load_params(tmp_path / "w.bin")


class TestFeatureExchange:
    def test_clone_and_params(self):
        est = FeatureExchange(p=0.25, mechanism="spatial", random_state=3)
        assert clone(est).get_params() == est.get_params()

    def test_fit_transform(self):
        X = derive_stream(0, 9).standard_normal((3, 2, 4, 3, 3))
        est = FeatureExchange(adapter_hidden=8)
        Y = est.fit(X).transform(X)
        assert Y.shape == X.shape and est.n_channels_ == 4
        for i in range(3):
            y1, y2 = hard_exchange(X[i, 0], X[i, 1], est._config(), est.params_)
            assert np.array_equal(Y[i, 0], y1) and np.array_equal(Y[i, 1], y2)
        sel = est.selected_channels(X[0])
        assert len(sel) == 1 and len(sel[0][0]) == 2

    def test_bad_shapes(self):
        est = FeatureExchange().fit(np.zeros((2, 4, 2, 2)))
        with pytest.raises(ValueError):
            est.transform(np.zeros((2, 3, 2, 2)))
        with pytest.raises(ValueError):
            FeatureExchange().fit(np.zeros((3, 4, 2, 2)))
