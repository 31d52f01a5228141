import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from phaserot.channel import ChannelParams, draw_symbols, transmit
from phaserot.constellation import square_qam
from phaserot.receivers import (
    LLR_CLAMP, JointDetectorConfig, QuadratureWarning, candidate_indices, exact_posterior, exact_posterior_oracle,
    joint_map_detect, joint_metric, per_channel_detect, per_channel_soft, slice_symbols, soft_demap,
)
from phaserot.rotations import RotationRecipe, givens, hadamard_rotation, identity_rotation, RotationMatrix


def _batch(order, recipe, snr, s2, n_blocks, seed, n=2):
    c = square_qam(order)
    rot = RotationRecipe(recipe).build(n) if isinstance(recipe, str) else recipe
    p = ChannelParams.from_snr_db(n, snr, s2)
    rng = np.random.default_rng(seed)
    idx = draw_symbols(rng, n_blocks, n, order)
    return c, rot, p, transmit(c.points[idx], rot, p, rng, indices=idx)


class TestPerChannel:
    @pytest.mark.parametrize("recipe", ["identity", "hadamard", "ser4"])
    def test_noiseless_recovery(self, recipe):
        c = square_qam(64)
        idx = np.arange(64).reshape(32, 2)
        rot = RotationRecipe(recipe).build(2)
        np.testing.assert_array_equal(per_channel_detect(rot.forward(c.points[idx]), rot, c), idx)

    def test_tie_lowest_index(self):
        c = square_qam(4)
        # midway between the two upper points on the imaginary axis
        r = np.array([[1j / math.sqrt(2), 0.0]])
        dec = per_channel_detect(r, identity_rotation(2), c)
        upper = [k for k in range(4) if c.points[k].imag > 0]
        assert dec[0, 0] == min(upper)
        assert dec[0, 1] == 0

    @given(st.floats(-3, 3), st.floats(-3, 3))
    def test_slicer_is_nearest_point(self, x, y):
        c = square_qam(16)
        z = np.array([x + 1j * y])
        k = slice_symbols(z, c)[0]
        d = np.abs(c.points - z[0])
        assert d[k] <= d.min() + 1e-12


class TestSoft:
    def test_sign_pattern_on_point(self):
        c = square_qam(16)
        llr = soft_demap(c.points, c, 1e-4)
        # positive LLR favours bit 1
        np.testing.assert_array_equal(llr > 0, c.labels.astype(bool))
        assert np.all(np.abs(llr) == LLR_CLAMP)

    def test_qpsk_origin_zero(self):
        np.testing.assert_allclose(soft_demap(np.zeros(1, complex), square_qam(4), 0.3), 0.0, atol=1e-15)

    @pytest.mark.parametrize("order,alpha", [(4, 1.0), (16, 0.9), (64, 1.0), (64, 0.95)])
    def test_matches_naive_two_sum(self, order, alpha, rng):
        c = square_qam(order)
        n0 = 0.05
        r = alpha * c.points[rng.integers(0, order, 200)] + 0.2 * (rng.standard_normal(200) + 1j * rng.standard_normal(200))
        llr = soft_demap(r, c, n0, alpha)
        w = np.exp(-np.abs(r[:, None] - alpha * c.points[None]) ** 2 / n0)
        for k in range(c.bits_per_symbol):
            one = c.labels[:, k] == 1
            naive = np.log(w[:, one].sum(1)) - np.log(w[:, ~one].sum(1))
            np.testing.assert_allclose(llr[:, k], np.clip(naive, -LLR_CLAMP, LLR_CLAMP), atol=1e-9)

    def test_extreme_inputs_finite(self):
        c = square_qam(256)
        llr = soft_demap(np.array([1e6 + 1e6j, -1e-9j]), c, 1e-12)
        assert np.all(np.isfinite(llr)) and np.all(np.abs(llr) <= LLR_CLAMP)

    def test_per_channel_soft_derotates(self, rng):
        c, rot, p, b = _batch(16, "hadamard", 20.0, 0.0, 50, 1)
        np.testing.assert_allclose(per_channel_soft(b.received, rot, c, p.n0, 1.0),
                                   soft_demap(rot.inverse(b.received), c, p.n0), atol=1e-12)
        with pytest.raises(ValueError):
            per_channel_soft(b.received, rot, c, p.n0, 1.5)


class TestJoint:
    def test_config_errors(self):
        c = square_qam(64)
        JointDetectorConfig(c, hadamard_rotation(8), 0.01, 1e-2)  # 64^4 == 2^24 is admitted
        with pytest.raises(ValueError):
            JointDetectorConfig(square_qam(256), hadamard_rotation(8), 0.01, 1e-2)
        with pytest.raises(ValueError):
            JointDetectorConfig(c, hadamard_rotation(4), 0.01, 0.0)

    def test_noiseless_truth(self):
        c = square_qam(16)
        rot = hadamard_rotation(4)
        idx = candidate_indices(16, 2)
        r = rot.forward(c.points[idx])
        np.testing.assert_array_equal(joint_map_detect(r, JointDetectorConfig(c, rot, 1e-6, 1e-4)), idx)

    @pytest.mark.parametrize("order,recipe,s2", [(4, "hadamard", 1e-2), (16, "hadamard", 3e-2), (16, "ser4", 0.2),
                                                 (64, "hadamard", 1e-2), (16, "identity", 1e-1)])
    def test_kernel_matches_dense_metric(self, order, recipe, s2):
        c, rot, p, b = _batch(order, recipe, 15.0, s2, 300, 2)
        cfg = JointDetectorConfig(c, rot, p.n0, s2)
        dense = candidate_indices(order, 2)[np.argmax(joint_metric(b.received, cfg), axis=1)]
        np.testing.assert_array_equal(joint_map_detect(b.received, cfg), dense)

    def test_general_kernel_n4(self):
        c, rot, p, b = _batch(4, "hadamard", 12.0, 5e-2, 200, 3, n=4)
        cfg = JointDetectorConfig(c, rot, p.n0, 5e-2)
        dense = candidate_indices(4, 4)[np.argmax(joint_metric(b.received, cfg), axis=1)]
        np.testing.assert_array_equal(joint_map_detect(b.received, cfg), dense)

    def test_tie_break_lowest_index(self):
        c = square_qam(4)
        cfg = JointDetectorConfig(c, identity_rotation(2), 0.1, 1e-2)
        np.testing.assert_array_equal(joint_map_detect(np.zeros((1, 2), complex), cfg), [[0, 0]])

    def test_unrotated_tiny_phase_noise_equals_per_channel(self):
        c, rot, p, b = _batch(16, "identity", 15.0, 1e-6, 100_000, 4)
        cfg = JointDetectorConfig(c, rot, p.n0, 1e-6)
        np.testing.assert_array_equal(joint_map_detect(b.received, cfg), per_channel_detect(b.received, rot, c))

    def test_phase_shift_gauge_invariance(self):
        # Per-channel phase shifts on top of R leave the joint error rate unchanged on matched draws.
        c = square_qam(16)
        p = ChannelParams.from_snr_db(2, 15.0, 3e-2)
        base = hadamard_rotation(4)
        shifted = RotationMatrix(givens(4, 1, 2, 0.7).entries @ givens(4, 3, 4, -1.3).entries @ base.entries)
        ser = []
        for rot in (base, shifted):
            rng = np.random.default_rng(5)
            idx = draw_symbols(rng, 50_000, 2, 16)
            b = transmit(c.points[idx], rot, p, rng)
            ser.append(np.mean(joint_map_detect(b.received, JointDetectorConfig(c, rot, p.n0, p.sigma2_p)) != idx))
        se = math.sqrt(ser[0] * (1 - ser[0]) / 100_000)
        assert abs(ser[0] - ser[1]) < 3 * math.sqrt(2) * se


class TestOracle:
    def test_pmf_normalized(self):
        c, rot, p, b = _batch(4, "hadamard", 10.0, 5e-2, 50, 6)
        res = exact_posterior(b.received, JointDetectorConfig(c, rot, p.n0, 5e-2))
        np.testing.assert_allclose(np.exp(res.log_pmf).sum(1), 1.0, atol=1e-9)
        assert res.converged and res.max_rel_error <= 1e-9

    def test_phase_integral_against_fine_grid(self):
        c, rot, p, b = _batch(4, "hadamard", 10.0, 0.1, 5, 7)
        cfg = JointDetectorConfig(c, rot, p.n0, 0.1)
        res = exact_posterior(b.received, cfg)
        cands = candidate_indices(4, 2)
        tx = rot.forward(c.points[cands])
        sd = math.sqrt(0.1)
        th = np.linspace(-8 * sd, 8 * sd, 200_001)
        prior = np.exp(-th ** 2 / 0.2) / math.sqrt(2 * math.pi * 0.1)
        ref = np.zeros((5, 16))
        for i in range(2):
            d = np.abs(b.received[:, None, i, None] - tx[None, :, i, None] * np.exp(1j * th)) ** 2
            lik = np.exp(-d / p.n0) / (math.pi * p.n0) * prior
            ref += np.log(np.trapezoid(lik, th, axis=-1))
        ref -= np.log(np.exp(ref).sum(1, keepdims=True))
        np.testing.assert_allclose(res.log_pmf, ref, atol=1e-6)

    def test_tiny_phase_noise_is_min_distance(self):
        c, rot, p, b = _batch(4, "hadamard", 10.0, 1e-8, 10_000, 8)
        cfg = JointDetectorConfig(c, rot, p.n0, 1e-8)
        oracle = exact_posterior_oracle(b.received, cfg)
        np.testing.assert_array_equal(oracle, per_channel_detect(b.received, rot, c))
        assert np.mean(np.all(joint_map_detect(b.received, cfg) == oracle, axis=1)) >= 0.9999

    def test_agreement_moderate_phase_noise(self):
        c, rot, p, b = _batch(4, "hadamard", 15.0, 1e-2, 5000, 9)
        cfg = JointDetectorConfig(c, rot, p.n0, 1e-2)
        agree = np.mean(np.all(joint_map_detect(b.received, cfg) == exact_posterior_oracle(b.received, cfg), axis=1))
        assert agree >= 0.999

    def test_non_convergence_warns(self):
        c, rot, p, b = _batch(4, "hadamard", 10.0, 0.5, 3, 10)
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            res = exact_posterior(b.received, JointDetectorConfig(c, rot, p.n0, 0.5), rtol=1e-14, max_depth=3)
        assert not res.converged
        assert any(issubclass(x.category, QuadratureWarning) for x in w)
