"""Behavior-head checks: shape/pooling contracts, label decoding rules, and
the analytic parameter-count oracle for the tiny preset."""

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from driversight import tensor as T
from driversight.classifier import (
    TINY_CLASSIFIER,
    BehaviorClassifier,
    BehaviorLabel,
    classify,
    predict_label,
)
from driversight.tensor import Tensor


class TestClassify:
    def test_logits_shape_and_finite(self):
        model = BehaviorClassifier(rng=np.random.default_rng(0))
        feat = np.random.default_rng(1).random((3, 64, 64), dtype=np.float32)
        out = classify(Tensor(feat), model)
        assert out.shape == (3,)
        assert np.isfinite(out.data).all()

    def test_softmax_of_logits_normalises(self):
        model = BehaviorClassifier(rng=np.random.default_rng(2))
        feat = np.random.default_rng(3).random((1, 3, 32, 32), dtype=np.float32)
        probs = T.softmax(model(Tensor(feat)), axis=-1).data
        npt.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-6)

    def test_average_pool_of_constant_map_is_constant(self):
        x = Tensor(np.full((1, 4, 6, 6), 2.5))
        npt.assert_allclose(x.mean(axis=(2, 3)).data, 2.5, rtol=1e-15)

    def test_average_pool_permutation_invariant(self):
        rng = np.random.default_rng(4)
        x = rng.random((1, 2, 4, 4))
        perm = x.reshape(1, 2, 16)[:, :, rng.permutation(16)].reshape(1, 2, 4, 4)
        npt.assert_allclose(
            Tensor(x).mean(axis=(2, 3)).data, Tensor(perm).mean(axis=(2, 3)).data, rtol=1e-12
        )

    def test_rejects_non_finite_input(self):
        model = BehaviorClassifier(rng=np.random.default_rng(5))
        bad = np.zeros((1, 3, 32, 32), dtype=np.float32)
        bad[0, 0, 0, 0] = np.inf
        with pytest.raises(ValueError, match="non-finite"):
            model(Tensor(bad))


class TestPredictLabel:
    def test_clear_winner(self):
        assert predict_label(np.array([2.0, 0.1, 0.1])) is BehaviorLabel.BRAKE

    def test_tie_breaks_to_lowest_index(self):
        assert predict_label(np.array([1.0, 1.0, 0.5])) is BehaviorLabel.BRAKE

    def test_third_class(self):
        assert predict_label(np.array([0.0, 0.1, 0.9])) is BehaviorLabel.TURN_LEFT

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="non-finite"):
            predict_label(np.array([np.nan, 0.0, 0.0]))

    @given(st.floats(-5, 5), st.floats(0.1, 10))
    @settings(max_examples=30, deadline=None)
    def test_invariant_to_shift_and_positive_scale(self, shift, scale):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal(3)
        base = predict_label(logits)
        assert predict_label(logits * scale + shift) is base


class TestParameterCount:
    def test_tiny_preset_matches_analytic_sum(self):
        model = BehaviorClassifier(TINY_CLASSIFIER, rng=np.random.default_rng(6))
        # layer-by-layer shape products for the tiny preset:
        # stem 3x3x3->16 conv (no bias) + BN(16)
        expected = 3 * 16 * 9 + 2 * 16
        # stage (8, 16, 1, 1) bottleneck from 16: 1x1 16->8, 3x3 8->8, 1x1 8->16, BNs
        expected += 16 * 8 + 8 * 8 * 9 + 8 * 16 + 2 * (8 + 8 + 16)
        # stage (16, 32, 1, 2): strided block with a 1x1 projection 16->32
        expected += 16 * 16 + 16 * 16 * 9 + 16 * 32 + 2 * (16 + 16 + 32)
        expected += 16 * 32 + 2 * 32  # projection conv + its BN
        # stage (32, 64, 1, 2): strided block with a 1x1 projection 32->64
        expected += 32 * 32 + 32 * 32 * 9 + 32 * 64 + 2 * (32 + 32 + 64)
        expected += 32 * 64 + 2 * 64  # projection conv + its BN
        # MLP 64 -> 128 -> 3 with biases
        expected += 64 * 128 + 128 + 128 * 3 + 3
        assert model.parameter_count() == expected

    def test_count_agrees_with_shape_products(self):
        model = BehaviorClassifier(TINY_CLASSIFIER, rng=np.random.default_rng(7))
        total = sum(int(np.prod(p.data.shape)) for _, p in model.named_parameters())
        assert model.parameter_count() == total
