import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adstruct import kernels as K
from adstruct.data_io import SyntheticConfig, generate_synthetic
from adstruct.errors import ConfigurationError, DimensionError, ValidationError
from adstruct.segmentation import (
    Boundary,
    SegmenterConfig,
    boundaries_to_segments,
    decode_boundaries,
    ensemble_boundary_probs,
    init_segmenter,
    load_segmenter,
    save_segmenter,
    segmenter_forward,
    train_segmenter,
    transform_ground_truth,
)

SMALL = SegmenterConfig(input_dim=6, hidden=8, epochs=1, batch_size=4)


def random_tiling(rng, T, rate):
    """Scene list tiling [0, T / rate) at random snippet-aligned cuts."""
    n_cuts = int(rng.integers(0, min(6, T - 1) + 1)) if T > 1 else 0
    cuts = sorted(rng.choice(np.arange(1, T), size=n_cuts, replace=False)) if n_cuts else []
    edges = [0.0] + [c / rate for c in cuts] + [T / rate]
    return [(a, b) for a, b in zip(edges, edges[1:])]


class TestGroundTruth:
    def test_three_scenes(self):
        y = transform_ground_truth([(0, 3), (3, 7), (7, 10)], 10, 1.0)
        assert set(np.flatnonzero(y)) == {0, 3, 7, 9}

    def test_single_scene(self):
        y = transform_ground_truth([(0, 10)], 10, 1.0)
        assert set(np.flatnonzero(y)) == {0, 9}

    def test_original_mode(self):
        y = transform_ground_truth([(0, 3), (3, 7), (7, 10)], 10, 1.0, mode="original")
        assert set(np.flatnonzero(y)) == {3, 7, 9}

    def test_empty(self):
        assert not transform_ground_truth([], 5, 1.0).any()

    def test_band_width(self):
        y = transform_ground_truth([(0, 3), (3, 10)], 10, 1.0, width=1)
        assert set(np.flatnonzero(y)) == {0, 1, 2, 3, 4, 8, 9}

    def test_unknown_mode(self):
        with pytest.raises(ConfigurationError):
            transform_ground_truth([(0, 1)], 2, 1.0, mode="both")

    def test_superset_over_random_tilings(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            T = int(rng.integers(2, 60))
            rate = float(rng.choice([1.0, 2.0, 4.0]))
            scenes = random_tiling(rng, T, rate)
            mod = set(np.flatnonzero(transform_ground_truth(scenes, T, rate)))
            orig = set(np.flatnonzero(transform_ground_truth(scenes, T, rate, mode="original")))
            assert orig < mod
            assert len(mod) >= 2


class TestForward:
    def test_zero_classifier_gives_half(self):
        m = init_segmenter(SMALL)
        m.store.params["cls/W"][:] = 0.0
        m.store.shadow["cls/W"][:] = 0.0
        p = segmenter_forward(m, np.random.default_rng(1).normal(size=(9, 6)))
        assert np.array_equal(p, np.full(9, 0.5))

    @pytest.mark.parametrize("T", [1, 7, 31, 100])
    def test_length(self, T):
        p = segmenter_forward(init_segmenter(SMALL), np.ones((T, 6)))
        assert p.shape == (T,) and np.all((p > 0) & (p < 1))

    def test_width_mismatch(self):
        with pytest.raises(DimensionError, match="6"):
            segmenter_forward(init_segmenter(SMALL), np.ones((5, 4)))

    def test_eval_is_deterministic(self):
        m = init_segmenter(SMALL)
        x = np.random.default_rng(2).normal(size=(20, 6))
        assert np.array_equal(segmenter_forward(m, x), segmenter_forward(m, x))

    def test_training_mode_uses_dropout(self):
        m = init_segmenter(SMALL)
        x = np.random.default_rng(2).normal(size=(20, 6))
        a = segmenter_forward(m, x, training=True, seed=np.random.default_rng(0))
        assert not np.array_equal(a, segmenter_forward(m, x))

    def test_receptive_field(self):
        cfg = replace(SMALL, branch_init=1.0)
        m = init_segmenter(cfg)
        r = m.receptive_radius
        assert r == 31
        T, t0 = 120, 60
        x = np.random.default_rng(3).normal(size=(T, 6))
        y = x.copy()
        y[t0] += 5.0
        diff = np.abs(segmenter_forward(m, x) - segmenter_forward(m, y))
        outside = np.r_[0:t0 - r, t0 + r + 1:T]
        assert np.all(diff[outside] == 0.0)
        assert diff[t0] > 0

    def test_translation_consistency(self):
        m = init_segmenter(SMALL)
        r, s, T = m.receptive_radius, 5, 100
        x = np.random.default_rng(4).normal(size=(T, 6))
        shifted = np.vstack([np.zeros((s, 6)), x[:-s]])
        a, b = segmenter_forward(m, x), segmenter_forward(m, shifted)
        inner = np.arange(r + s, T - r)
        assert np.allclose(b[inner], a[inner - s], atol=1e-12)


class TestDecode:
    def test_hand_example(self):
        b = decode_boundaries([.1, .9, .1, .1, .8, .1], 1.0, 0.5, 0.0)
        assert [x.time for x in b] == [1.0, 4.0]
        assert [x.confidence for x in b] == [0.9, 0.8]

    def test_below_threshold(self):
        assert decode_boundaries([0.1, 0.2, 0.3], 1.0, 0.5) == []

    def test_strict_local_max(self):
        # plateau: neither is a strict maximum
        assert decode_boundaries([0.1, 0.9, 0.9, 0.1], 1.0, 0.5) == []

    def test_min_gap_keeps_higher(self):
        b = decode_boundaries([.1, .7, .1, .1, .9, .1], 1.0, 0.5, min_gap_seconds=4.0)
        assert [x.time for x in b] == [4.0]

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0.1, 0.9), st.floats(0.01, 0.09))
    def test_threshold_monotone(self, probs, hi, delta):
        a = {x.time for x in decode_boundaries(probs, 2.0, hi)}
        b = {x.time for x in decode_boundaries(probs, 2.0, hi - delta)}
        assert a <= b

    def test_bad_threshold(self):
        with pytest.raises(ConfigurationError):
            decode_boundaries([0.5], 1.0, 1.0)


class TestSegments:
    def test_interior(self):
        assert boundaries_to_segments([3.0, 7.0], 10.0) == [(0, 3), (3, 7), (7, 10)]

    def test_empty(self):
        assert boundaries_to_segments([], 10.0) == [(0, 10)]

    def test_endpoints_deduplicated(self):
        assert boundaries_to_segments([Boundary(0.0, 1), Boundary(10.0, 1)], 10.0) == [(0, 10)]

    def test_edge_snap(self):
        assert boundaries_to_segments([0.25, 5.0, 9.75], 10.0, edge_snap=0.5) == [(0, 5), (5, 10)]

    def test_beyond_duration(self):
        with pytest.raises(ValidationError):
            boundaries_to_segments([11.0], 10.0)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=50), st.sampled_from([1.0, 2.0, 4.0]))
    def test_decode_then_tile(self, probs, rate):
        dur = len(probs) / rate
        segs = boundaries_to_segments(decode_boundaries(probs, rate, 0.5), dur)
        assert segs[0][0] == 0 and segs[-1][1] == dur
        assert all(a[1] == b[0] and a[0] < a[1] for a, b in zip(segs, segs[1:]))


class TestEnsemble:
    def test_identity(self):
        x = np.array([0.1, 0.7])
        assert np.array_equal(ensemble_boundary_probs([x]), x)

    def test_pair(self):
        assert ensemble_boundary_probs([[0.2], [0.8]])[0] == pytest.approx(0.5)

    def test_permutation(self):
        rng = np.random.default_rng(0)
        xs = [rng.random(5) for _ in range(4)]
        assert np.allclose(ensemble_boundary_probs(xs), ensemble_boundary_probs(xs[::-1]), atol=1e-15)

    @pytest.mark.parametrize("n", [1, 2, 3, 5, 7])
    def test_duplicates_bit_exact(self, n):
        x = np.random.default_rng(n).random(200)
        assert np.array_equal(ensemble_boundary_probs([x] * n), x)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            ensemble_boundary_probs([[0.1], [0.1, 0.2]])


@pytest.fixture(scope="module")
def tiny_data():
    return generate_synthetic(SyntheticConfig(n_videos=4, D=6, C=3, t_range=(20, 30), seed=1))


class TestTraining:
    def test_zero_lr_leaves_params(self, tiny_data):
        init = init_segmenter(SMALL)
        m = train_segmenter(tiny_data, replace(SMALL, lr=0.0), model=init_segmenter(SMALL))
        for k, v in init.store.params.items():
            assert np.array_equal(m.store.params[k], v)
        assert m.store.step == 1

    def test_deterministic(self, tiny_data):
        cfg = replace(SMALL, epochs=3)
        a = train_segmenter(tiny_data, cfg).history
        b = train_segmenter(tiny_data, cfg).history
        assert a == b

    def test_unannotated_rejected(self, tiny_data):
        bare = replace(tiny_data[0], scenes=())
        with pytest.raises(ValidationError, match=bare.id):
            train_segmenter([bare], SMALL)

    def test_focal_matches_half_bce(self, tiny_data):
        base = replace(SMALL, epochs=3, dropout=0.0, pos_weight=1.0)
        focal = train_segmenter(tiny_data, replace(base, loss="focal", focal_gamma=0.0, focal_alpha=0.5))
        bce = train_segmenter(tiny_data, replace(base, loss="bce", loss_scale=0.5))
        for k, v in bce.store.params.items():
            assert np.allclose(focal.store.params[k], v, rtol=1e-9, atol=1e-12)

    def test_resume_continues_step(self, tiny_data, tmp_path):
        cfg = replace(SMALL, epochs=2)
        m = train_segmenter(tiny_data, cfg)
        path = tmp_path / "seg.ckpt"
        save_segmenter(m, path)
        back = load_segmenter(path)
        assert back.store.step == m.store.step
        assert back.history == m.history
        more = train_segmenter(tiny_data, cfg, model=back)
        assert more.store.step == 2 * m.store.step
        assert len(more.history) == 4

    def test_loss_decreases(self, tiny_data):
        m = train_segmenter(tiny_data, replace(SMALL, epochs=30, lr=3e-3))
        assert m.history[-1]["loss"] < m.history[0]["loss"]

    def test_log_file(self, tiny_data, tmp_path):
        log = tmp_path / "log.jsonl"
        train_segmenter(tiny_data, replace(SMALL, epochs=2), log_path=log)
        assert len(log.read_text().splitlines()) == 2


def test_receptive_radius_arithmetic():
    cfg = SegmenterConfig()
    per_block = sum(d * (cfg.kernel_size - 1) // 2 for d in (1, 2, 4, 8))
    assert init_segmenter(cfg).receptive_radius == cfg.n_blocks * per_block + 1 == 31
    assert math.isclose(K.sigmoid(K.Graph().constant(np.zeros(1))).value[0], 0.5)
