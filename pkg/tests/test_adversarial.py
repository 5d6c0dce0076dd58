import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from kwspot.adversarial import (AugmentConfig, augment_dataset, equal_budget, fgsm_perturb, normalize_pixels,
                                sign_perturb, std_perturb)
from kwspot.errors import ParameterError
from kwspot.features import FeatureSet, Mode
from kwspot.models import build_low_latency
from kwspot.optim import InitSpec

images = arrays(np.float32, (3, 6, 5), elements=st.floats(0, 1, width=32))


def feature_set(n=10, h=28, w=28, seed=0):
    rng = np.random.default_rng(seed)
    return FeatureSet(Mode.SPECTROGRAM, rng.random((n, h, w)), rng.integers(0, 12, n))


class TestNormalize:
    def test_values(self):
        np.testing.assert_allclose(normalize_pixels([0, 128, 255]), [0.0, 128 / 255, 1.0])
        assert normalize_pixels([128])[0] == pytest.approx(0.50196, abs=1e-5)

    def test_out_of_range(self):
        with pytest.raises(ParameterError):
            normalize_pixels([256])
        with pytest.raises(ParameterError):
            normalize_pixels([-1])


class TestSign:
    def test_examples(self):
        np.testing.assert_array_equal(sign_perturb(np.zeros((4, 4))), 0.0)
        np.testing.assert_allclose(sign_perturb(np.full((4, 4), 0.5)), 0.501)

    @given(images, st.floats(0, 0.1))
    @settings(max_examples=40, deadline=None)
    def test_bounded_and_in_range(self, x, eps):
        out = sign_perturb(x, eps)
        assert np.max(np.abs(out - x)) <= eps + 1e-7
        assert out.min() >= 0 and out.max() <= 1


class TestStd:
    def test_constant_is_identity(self):
        x = np.full((2, 3, 3), 0.3)
        np.testing.assert_array_equal(std_perturb(x), x)

    def test_known_std(self):
        x = np.array([0.25, 0.75] * 8).reshape(4, 4)
        assert np.std(x) == 0.25
        np.testing.assert_allclose(std_perturb(x) - x, 0.00025)

    @given(images)
    @settings(max_examples=40, deadline=None)
    def test_uniform_shift(self, x):
        shift = 0.001 * float(np.std(x, dtype=np.float64))
        out = std_perturb(x)
        inside = x < 1 - 2 * shift - 1e-6
        diffs = (out - x)[inside]
        if diffs.size:
            np.testing.assert_allclose(diffs, diffs[0], atol=1e-7)
        assert np.max(np.abs(out - x)) <= shift + 1e-7
        assert out.min() >= 0 and out.max() <= 1


class TestAugment:
    def test_triples_in_block_order(self):
        fs = feature_set(100)
        aug = augment_dataset(fs)
        assert len(aug) == 300
        np.testing.assert_array_equal(aug.labels, np.tile(fs.labels, 3))
        np.testing.assert_array_equal(aug.provenance, np.repeat([0, 1, 2], 100))
        np.testing.assert_array_equal(aug.images[:100], fs.images)
        np.testing.assert_array_equal(np.bincount(aug.labels, minlength=12), 3 * np.bincount(fs.labels, minlength=12))

    def test_disabled_is_identity(self):
        fs = feature_set(5)
        aug = augment_dataset(fs, AugmentConfig(sign=False, std=False))
        np.testing.assert_array_equal(aug.images, fs.images)
        assert AugmentConfig.from_vat("off").multiplier == 1

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            augment_dataset(FeatureSet(Mode.SPECTROGRAM, np.zeros((0, 2, 2)), np.zeros(0)))

    def test_negative_epsilon(self):
        with pytest.raises(ParameterError):
            AugmentConfig(sign_epsilon=-1)

    def test_fgsm_mode(self):
        fs = feature_set(6, 40, 98)
        net = build_low_latency(init=InitSpec(seed=0))
        out = fgsm_perturb(net, fs.images, fs.labels, 0.01)
        assert np.max(np.abs(out - fs.images)) <= 0.01 + 1e-6
        assert not np.array_equal(out, fs.images)
        assert all(not p.grad.any() for p in net.parameters())
        aug = augment_dataset(fs, AugmentConfig.from_vat("fgsm"), net)
        assert len(aug) == 12
        with pytest.raises(ParameterError):
            augment_dataset(fs, AugmentConfig.from_vat("fgsm"))

    def test_equal_budget(self):
        aug = augment_dataset(feature_set(20))
        sample = equal_budget(aug, 20, seed=1)
        assert len(sample) == 20
        np.testing.assert_array_equal(sample.labels, equal_budget(aug, 20, seed=1).labels)
        with pytest.raises(ParameterError):
            equal_budget(aug, 61, seed=1)
