from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adstruct import kernels as K
from adstruct.data_io import SyntheticConfig, generate_synthetic
from adstruct.errors import ConfigurationError, DimensionError, ValidationError
from adstruct.evaluation import ScenePrediction
from adstruct.tagging import (
    HEADS,
    SWEEP_THRESHOLDS,
    SceneInput,
    TaggerConfig,
    _forward,
    apply_score_threshold,
    ensemble_scene_scores,
    init_tagger,
    is_head_param,
    load_tagger,
    save_tagger,
    scene_inputs,
    tag_scene,
    tag_segments,
    tagging_loss,
    tagging_loss_graph,
    train_tagger,
)
from adstruct.text_fusion import build_input
from gradcheck import check_gradients

TINY = TaggerConfig(n_classes=3, input_dim=4, expansion=2, groups=2, clusters=4, vocab_size=16,
                    embed_dim=4, text_out=3, max_len=12, epochs=1, batch_size=4)


def scene(T=3, D=4, seed=0):
    return np.random.default_rng(seed).normal(size=(T, D))


class TestTagScene:
    def test_zero_fusion_head(self):
        m = init_tagger(TINY)
        for store in (m.store.params, m.store.shadow):
            store["head_f/W"][:] = 0.0
        s = tag_scene(m, scene(), [["a"], ["b"], []], ["c"])
        assert np.array_equal(s, np.full(3, 0.5))

    def test_82_classes_by_default(self):
        cfg = TaggerConfig(input_dim=8, clusters=8, vocab_size=64, embed_dim=8, text_out=8)
        assert tag_scene(init_tagger(cfg), np.ones((5, 8)), [[]] * 5, []).shape == (82,)

    @pytest.mark.parametrize("seed", range(5))
    def test_snippet_permutation(self, seed):
        m = init_tagger(TINY)
        X = scene(T=6, seed=seed)
        ocr = [["x", "y"], ["z"], [], ["x"], [], ["w"]]
        perm = np.random.default_rng(seed).permutation(6)
        a = tag_scene(m, X, ocr, ["q"])
        b = tag_scene(m, X[perm], ocr, ["q"])
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_empty_scene(self):
        with pytest.raises(ValidationError):
            tag_scene(init_tagger(TINY), np.zeros((0, 4)), [], [])

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            tag_scene(init_tagger(TINY), np.zeros((2, 5)), [[], []], [])

    def test_average_fusion_in_unit_interval(self):
        m = init_tagger(replace(TINY, fusion="average"))
        s = tag_scene(m, scene(), [[], [], []], ["a"])
        assert np.all((s > 0) & (s < 1))

    def test_multi_stream(self):
        cfg = replace(TINY, input_dim=6, stream_dims=(4, 2))
        m = init_tagger(cfg)
        assert "vis1/expand/W" in m.store.params
        assert tag_scene(m, scene(D=6), [[]] * 3, []).shape == (3,)


class TestLoss:
    def test_two_ln_two(self):
        assert tagging_loss([0.5, 0.5], {0}) == pytest.approx(2 * np.log(2), abs=1e-12)

    def test_perfect_near_zero(self):
        assert 0 <= tagging_loss([1.0, 0.0, 1.0], {0, 2}) < 1e-6

    @pytest.mark.parametrize("C", [1, 5, 82])
    def test_additive_in_c(self, C):
        assert tagging_loss(np.full(C, 0.5), set()) == pytest.approx(C * np.log(2), rel=1e-12)

    def test_invalid_class(self):
        with pytest.raises(ValidationError):
            tagging_loss([0.5, 0.5], {2})

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=10), st.data())
    def test_nonnegative(self, scores, data):
        labels = data.draw(st.sets(st.integers(0, len(scores) - 1)))
        assert tagging_loss(scores, labels) >= 0


class TestEnsembleAndThreshold:
    def test_identity(self):
        x = np.array([0.3, 0.9])
        assert np.array_equal(ensemble_scene_scores([x]), x)

    def test_pair(self):
        assert np.allclose(ensemble_scene_scores([[0.2, 0.8], [0.6, 0.4]]), [0.4, 0.6], atol=1e-15)

    def test_agreeing_rankings_preserved(self):
        rng = np.random.default_rng(0)
        base = np.sort(rng.random(6))
        members = [base * rng.uniform(0.5, 1.0) for _ in range(3)]
        assert list(np.argsort(ensemble_scene_scores(members))) == list(range(6))

    def test_empty(self):
        with pytest.raises(ValidationError):
            ensemble_scene_scores([])

    def test_duplicates_bit_exact(self):
        x = np.random.default_rng(1).random(82)
        assert np.array_equal(ensemble_scene_scores([x, x, x]), x)

    def test_threshold_example(self):
        assert apply_score_threshold(ScenePrediction((0, 1), np.array([0.6, 0.4, 0.5])), 0.5) == (0, 2)

    def test_argmax_fallback(self):
        assert apply_score_threshold(np.array([0.1, 0.3, 0.2]), 0.5) == (1,)

    def test_sweep_values(self):
        assert SWEEP_THRESHOLDS == (0.5, 0.45, 0.4, 0.35)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
    def test_monotone(self, scores):
        sets = [set(apply_score_threshold(np.array(scores), t)) for t in SWEEP_THRESHOLDS]
        assert all(a <= b for a, b in zip(sets, sets[1:]))

    def test_bad_theta(self):
        with pytest.raises(ConfigurationError):
            apply_score_threshold(np.array([0.5]), 0.0)


def test_full_pipeline_gradients():
    m = init_tagger(TINY, seed=3)
    params = {k: v.copy() for k, v in m.store.params.items()}
    params["head_f/W"] += np.random.default_rng(0).normal(0, 0.3, params["head_f/W"].shape)
    inp = SceneInput(scene(T=3, seed=4), build_input([5, 6], [7, 8, 9], 12))

    def build(g, p):
        return tagging_loss_graph(_forward(g, p, TINY, inp), {0, 2})

    assert check_gradients(build, params, n_probes=60, seed=2) < 1e-5


@pytest.fixture(scope="module")
def tiny_data():
    return generate_synthetic(SyntheticConfig(n_videos=3, D=4, C=3, t_range=(20, 30), vocab=30, seed=2))


class TestTraining:
    def test_head_names(self):
        assert HEADS == ("head_v", "head_t", "head_f")
        assert is_head_param("head_t/W") and not is_head_param("text/proj")

    def test_zero_lr(self, tiny_data):
        init = init_tagger(TINY)
        m = train_tagger(tiny_data, replace(TINY, lr_head=0.0, lr_rest=0.0))
        for k, v in init.store.params.items():
            assert np.array_equal(m.store.params[k], v)

    @pytest.mark.parametrize("lr_head,lr_rest", [(1e-2, 0.0), (0.0, 1e-2)])
    def test_parameter_groups(self, tiny_data, lr_head, lr_rest):
        init = init_tagger(TINY)
        m = train_tagger(tiny_data, replace(TINY, lr_head=lr_head, lr_rest=lr_rest))
        for k, v in init.store.params.items():
            changed = not np.array_equal(m.store.params[k], v)
            moves = is_head_param(k) == (lr_head > 0)
            if not moves:
                assert not changed, k
        assert any(not np.array_equal(m.store.params[k], v) for k, v in init.store.params.items())

    def test_deterministic(self, tiny_data):
        cfg = replace(TINY, epochs=2)
        assert train_tagger(tiny_data, cfg).history == train_tagger(tiny_data, cfg).history

    def test_no_scenes(self, tiny_data):
        with pytest.raises(ValidationError):
            train_tagger([replace(r, scenes=()) for r in tiny_data], TINY)

    def test_checkpoint_round_trip(self, tiny_data, tmp_path):
        m = train_tagger(tiny_data, replace(TINY, epochs=2))
        save_tagger(m, tmp_path / "t.ckpt")
        back = load_tagger(tmp_path / "t.ckpt")
        assert back.config == m.config and back.store.step == m.store.step
        rec = tiny_data[0]
        segs = [(s.start, s.end) for s in rec.scenes]
        for a, b in zip(tag_segments(m, rec, segs), tag_segments(back, rec, segs)):
            assert np.array_equal(a, b)

    def test_scene_inputs_are_local(self, tiny_data):
        rec = tiny_data[0]
        s0 = rec.scenes[0]
        inp = scene_inputs(rec, (s0.start, s0.end), TINY)
        assert inp.features.shape[0] == round((s0.end - s0.start) * rec.snippet_rate)
