import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adstruct import kernels as K
from adstruct.aggregation import (
    SoftDBoFConfig,
    aggregate,
    aggregate_graph,
    attention_mass,
    cluster_assign,
    expand_np,
    group_attention,
    init_softdbof,
    nextvlad_param_count,
    softdbof_param_count,
)
from adstruct.errors import DimensionError, ValidationError
from gradcheck import check_gradients


def make_params(cfg, seed=0, scale=1.0):
    store = K.ParamStore()
    init_softdbof(store, "a", cfg, np.random.default_rng(seed))
    return {k: v * scale for k, v in store.params.items()}


def zero_params(cfg):
    return {k: np.zeros_like(v) for k, v in make_params(cfg).items()}


class TestExpand:
    def test_identity(self):
        cfg = SoftDBoFConfig(input_dim=3, expansion=1, groups=1, clusters=2)
        p = zero_params(cfg)
        p["a/expand/W"] = np.eye(3)
        x = np.array([[0.5, -1.0, 2.0]])
        assert np.array_equal(expand_np(x, p, "a"), x)

    def test_shape(self):
        cfg = SoftDBoFConfig(input_dim=2, expansion=2, groups=1, clusters=2)
        assert expand_np(np.ones((1, 2)), make_params(cfg), "a").shape == (1, 4)

    def test_matches_naive(self):
        cfg = SoftDBoFConfig(input_dim=5, expansion=2, groups=2, clusters=3)
        p = make_params(cfg)
        x = np.random.default_rng(1).normal(size=(1, 5))
        W, b = p["a/expand/W"], p["a/expand/b"] + 0.3
        p["a/expand/b"] = b
        naive = [sum(x[0, i] * W[i, j] for i in range(5)) + b[j] for j in range(10)]
        assert np.allclose(expand_np(x, p, "a")[0], naive, atol=1e-13)

    def test_width_mismatch(self):
        cfg = SoftDBoFConfig(input_dim=5, expansion=2, groups=2, clusters=3)
        with pytest.raises(DimensionError):
            expand_np(np.ones((1, 4)), make_params(cfg), "a")


class TestGroupAttention:
    cfg = SoftDBoFConfig(input_dim=1, expansion=2, groups=1, clusters=2)

    def test_zero(self):
        assert group_attention(np.zeros(2), 0, zero_params(self.cfg), "a") == 0.5

    def test_saturation(self):
        p = zero_params(self.cfg)
        p["a/att/b"][:] = 50.0
        assert group_attention(np.zeros(2), 0, p, "a") == pytest.approx(1.0, abs=1e-15)

    def test_hand(self):
        p = zero_params(self.cfg)
        p["a/att/W"][:, 0] = [2.0, 1.0]
        assert group_attention(np.array([1.0, -1.0]), 0, p, "a") == pytest.approx(1 / (1 + np.exp(-1)), abs=1e-15)


class TestClusterAssign:
    cfg = SoftDBoFConfig(input_dim=2, expansion=1, groups=2, clusters=4)

    def test_uniform(self):
        a = cluster_assign(np.ones(2), 1, zero_params(self.cfg), "a")
        assert np.allclose(a, 0.25, atol=1e-15)

    def test_one_large_bias(self):
        p = zero_params(self.cfg)
        p["a/cluster/b"][4 + 2] = 20.0  # group 1, cluster 2
        assert cluster_assign(np.ones(2), 1, p, "a")[2] > 0.999

    def test_shift_invariance(self):
        p = make_params(self.cfg)
        xe = np.array([0.3, -0.7])
        base = cluster_assign(xe, 0, p, "a")
        p["a/cluster/b"] = p["a/cluster/b"] + 3.0
        assert np.allclose(cluster_assign(xe, 0, p, "a"), base, atol=1e-14)
        assert base.sum() == pytest.approx(1.0, abs=1e-9)


class TestAggregate:
    def test_zero_weight_closed_form(self):
        cfg = SoftDBoFConfig(input_dim=3, expansion=1, groups=1, clusters=2)
        y = aggregate(np.random.default_rng(0).normal(size=(4, 3)), zero_params(cfg), "a", cfg)
        assert np.array_equal(y, [1.0, 1.0])

    @pytest.mark.parametrize("T,G,Kc", [(5, 3, 4), (1, 1, 1), (9, 8, 16)])
    def test_zero_weight_general(self, T, G, Kc):
        cfg = SoftDBoFConfig(input_dim=2, expansion=1, groups=G, clusters=Kc)
        y = aggregate(np.ones((T, 2)), zero_params(cfg), "a", cfg)
        assert np.allclose(y, T * G * 0.5 / Kc, rtol=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 12), st.integers(0, 10_000))
    def test_sum_identity_and_bounds(self, T, seed):
        cfg = SoftDBoFConfig(input_dim=4, expansion=2, groups=3, clusters=5)
        p = make_params(cfg, seed, scale=2.0)
        X = np.random.default_rng(seed).normal(size=(T, 4))
        y = aggregate(X, p, "a", cfg)
        assert abs(y.sum() - attention_mass(X, p, "a", cfg)) < 1e-9
        assert np.all(y >= 0) and np.all(y <= T * cfg.groups)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 15), st.integers(0, 10_000))
    def test_permutation_invariance(self, T, seed):
        cfg = SoftDBoFConfig(input_dim=4, expansion=2, groups=3, clusters=5)
        p = make_params(cfg, seed)
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(T, 4))
        a = aggregate(X, p, "a", cfg)
        b = aggregate(X[rng.permutation(T)], p, "a", cfg)
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_empty_rejected(self):
        cfg = SoftDBoFConfig(input_dim=4, expansion=2, groups=3, clusters=5)
        with pytest.raises(ValidationError):
            aggregate(np.zeros((0, 4)), make_params(cfg), "a", cfg)

    def test_normalize_by_length(self):
        cfg = SoftDBoFConfig(input_dim=4, expansion=1, groups=2, clusters=3)
        p = make_params(cfg)
        X = np.random.default_rng(0).normal(size=(6, 4))
        y = aggregate(X, p, "a", cfg)
        cfg_n = SoftDBoFConfig(input_dim=4, expansion=1, groups=2, clusters=3, normalize_by_length=True)
        assert np.allclose(aggregate(X, p, "a", cfg_n), y / 6, atol=1e-15)

    def test_gradients(self):
        cfg = SoftDBoFConfig(input_dim=4, expansion=2, groups=2, clusters=3)
        p = make_params(cfg, 1)
        X = np.random.default_rng(2).normal(size=(5, 4))
        w = np.random.default_rng(3).normal(size=3)

        def build(g, params):
            y = aggregate_graph(g, X, params, "a", cfg)
            return K.sum_(K.mul(y, g.constant(w)))

        assert check_gradients(build, p, n_probes=40) < 1e-5


@pytest.mark.parametrize("N,lam,G,Kc", [(64, 2, 8, 64), (1024, 2, 8, 128), (4, 1, 1, 1)])
def test_fewer_params_than_nextvlad(N, lam, G, Kc):
    sd = softdbof_param_count(N, lam, G, Kc)
    assert sd < nextvlad_param_count(N, lam, G, Kc)
    cfg = SoftDBoFConfig(input_dim=N, expansion=lam, groups=G, clusters=Kc)
    assert sum(v.size for v in make_params(cfg).values()) == sd
