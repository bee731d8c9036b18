import numpy as np
import pytest

from shinelab.backbone import predict_velocity
from shinelab.dsg import DsgConfig, dsg_combine, negative_velocity
from shinelab.studies import make_toy_instance


class TestNegativeVelocity:
    def test_tiny_blur_matches_positive(self, instance):
        v_pos, _ = predict_velocity(
            instance.params, instance.adapter, instance.z_t, instance.t, instance.text,
            instance.subject,
        )
        v_neg = negative_velocity(
            instance.params, instance.adapter, instance.z_t, instance.t, instance.text,
            instance.subject, blur_sigma=1e-6,
        )
        np.testing.assert_allclose(v_neg, v_pos, atol=1e-6)

    def test_deterministic(self, instance):
        args = (
            instance.params, instance.adapter, instance.z_t, instance.t, instance.text,
            instance.subject,
        )
        np.testing.assert_array_equal(
            negative_velocity(*args, blur_sigma=10.0), negative_velocity(*args, blur_sigma=10.0)
        )

    def test_differs_from_positive_at_full_blur(self):
        for seed in range(5):
            inst = make_toy_instance(seed)
            v_pos, _ = predict_velocity(
                inst.params, inst.adapter, inst.z_t, inst.t, inst.text, inst.subject
            )
            v_neg = negative_velocity(
                inst.params, inst.adapter, inst.z_t, inst.t, inst.text, inst.subject,
                blur_sigma=10.0,
            )
            assert np.linalg.norm(v_pos - v_neg) > 0.0

    def test_nonpositive_sigma_rejected(self, instance):
        with pytest.raises(ValueError):
            negative_velocity(
                instance.params, instance.adapter, instance.z_t, instance.t,
                instance.text, instance.subject, blur_sigma=0.0,
            )


class TestCombine:
    def test_eta_zero_returns_positive_exactly(self, rng):
        v_pos = rng.normal(size=(2, 3, 3))
        v_neg = rng.normal(size=(2, 3, 3))
        np.testing.assert_array_equal(dsg_combine(v_pos, v_neg, 0.0), v_pos)

    def test_equal_branches_fixed_point(self, rng):
        v = rng.normal(size=(2, 3, 3))
        for eta in (0.0, 0.5, 2.0):
            np.testing.assert_allclose(dsg_combine(v, v.copy(), eta), v, atol=1e-15)

    def test_scalar_arithmetic(self):
        v_pos = np.full((1, 1, 1), 2.0)
        v_neg = np.full((1, 1, 1), 1.0)
        np.testing.assert_allclose(dsg_combine(v_pos, v_neg, 0.5), 2.5, atol=1e-15)

    def test_affine_in_eta(self, rng):
        v_pos = rng.normal(size=(2, 4, 4))
        v_neg = rng.normal(size=(2, 4, 4))
        slope = v_pos - v_neg
        for eta in (0.0, 0.25, 0.5, 1.0, 2.0):
            out = dsg_combine(v_pos, v_neg, eta)
            np.testing.assert_allclose(out - v_pos, eta * slope, atol=1e-12)

    def test_extrapolates_away_from_negative(self, rng):
        v_pos = rng.normal(size=(1, 2, 2))
        v_neg = rng.normal(size=(1, 2, 2))
        out = dsg_combine(v_pos, v_neg, 0.7)
        np.testing.assert_allclose(out - v_pos, 0.7 * (v_pos - v_neg), atol=1e-12)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            dsg_combine(np.zeros((1, 2, 2)), np.zeros((1, 2, 3)), 0.5)


class TestConfig:
    def test_defaults(self):
        cfg = DsgConfig()
        assert cfg.eta == 0.5
        assert cfg.blur_sigma == 10.0
        assert cfg.active_range == (14, 0)

    def test_active_range(self):
        cfg = DsgConfig(active_range=(10, 2))
        assert cfg.active_at(10)
        assert cfg.active_at(2)
        assert not cfg.active_at(11)
        assert not cfg.active_at(1)

    def test_negative_eta_rejected(self):
        with pytest.raises(ValueError):
            DsgConfig(eta=-0.1)
