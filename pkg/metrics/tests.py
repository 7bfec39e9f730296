"""
Tests for the training losses and PSNR.
"""

import numpy as np
from django.test import SimpleTestCase

from metrics.losses import (
    DEFAULT_ETA, combined_loss, gradient_difference_loss, loss_breakdown, mse_loss, weighted_loss
)
from metrics.quality import mean_frame_baseline, psnr, psnr_per_frame
from shared.exceptions import ConfigurationError, ContractViolation
from substrate.gradcheck import finite_diff_check
from substrate.params import ParamSet


def _gd_oracle(y, x):
    """Independent loop evaluation of the gradient difference loss for [m, C, H, W]."""
    total = 0.0
    m, channels, height, width = x.shape
    for i in range(m):
        for ch in range(channels):
            for u in range(1, height):
                for v in range(width):
                    total += (abs(x[i, ch, u, v] - x[i, ch, u - 1, v]) - abs(y[i, ch, u, v] - y[i, ch, u - 1, v])) ** 2
            for u in range(height):
                for v in range(1, width):
                    total += (abs(x[i, ch, u, v - 1] - x[i, ch, u, v]) - abs(y[i, ch, u, v - 1] - y[i, ch, u, v])) ** 2
    return total / m


class MseLossTest(SimpleTestCase):
    """Test cases for mse_loss"""

    def test_identical_frames(self):
        """Y = X gives zero"""
        x = np.random.default_rng(0).random((3, 2, 4, 4))
        self.assertEqual(mse_loss(x, x).item(), 0.0)

    def test_constant_offset(self):
        """One frame differing by 0.5 everywhere gives 0.25 * P"""
        x = np.zeros((1, 3, 4, 5))
        self.assertAlmostEqual(mse_loss(x + 0.5, x).item(), 0.25 * 60)

    def test_symmetry(self):
        """mse_loss(Y, X) = mse_loss(X, Y)"""
        rng = np.random.default_rng(1)
        y, x = rng.random((2, 1, 3, 3)), rng.random((2, 1, 3, 3))
        self.assertEqual(mse_loss(y, x).item(), mse_loss(x, y).item())

    def test_mean_over_frames(self):
        """Frame sums are averaged over frames"""
        x = np.zeros((2, 1, 2, 2))
        y = x.copy()
        y[0] += 1.0
        self.assertAlmostEqual(mse_loss(y, x).item(), 2.0)

    def test_shape_mismatch(self):
        """Different shapes are a contract violation"""
        with self.assertRaises(ContractViolation):
            mse_loss(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))


class GradientDifferenceLossTest(SimpleTestCase):
    """Test cases for gradient_difference_loss"""

    def test_constant_images(self):
        """Constant images (any constants) give zero"""
        self.assertEqual(gradient_difference_loss(np.full((2, 3, 4, 4), 0.2), np.full((2, 3, 4, 4), 0.9)).item(), 0.0)

    def test_identical_frames(self):
        """Y = X gives zero"""
        x = np.random.default_rng(2).random((2, 3, 5, 5))
        self.assertEqual(gradient_difference_loss(x, x).item(), 0.0)

    def test_hand_evaluated_example(self):
        """x=[[0,1],[0,1]], y=0: horizontal terms 2, vertical 0"""
        x = np.array([[0.0, 1.0], [0.0, 1.0]]).reshape(1, 1, 2, 2)
        y = np.zeros_like(x)
        self.assertEqual(gradient_difference_loss(y, x).item(), 2.0)

    def test_matches_loop_oracle(self):
        """Random frames agree with the nested-loop evaluation"""
        rng = np.random.default_rng(3)
        y, x = rng.random((3, 2, 5, 4)), rng.random((3, 2, 5, 4))
        self.assertAlmostEqual(gradient_difference_loss(y, x).item(), _gd_oracle(y, x), places=10)

    def test_tiny_frames_rejected(self):
        """Frames below 2x2 are a contract violation"""
        with self.assertRaises(ContractViolation):
            gradient_difference_loss(np.zeros((1, 1, 1, 4)), np.zeros((1, 1, 1, 4)))


class CombinedLossTest(SimpleTestCase):
    """Test cases for combined_loss"""

    def test_default_eta(self):
        """0.4 is the shipped default"""
        self.assertEqual(DEFAULT_ETA, 0.4)

    def test_eta_zero_is_mse(self):
        """eta = 0 equals mse_loss exactly"""
        rng = np.random.default_rng(4)
        y, x = rng.random((2, 3, 4, 4)), rng.random((2, 3, 4, 4))
        self.assertEqual(combined_loss(y, x, eta=0.0).item(), mse_loss(y, x).item())

    def test_weighted_arithmetic(self):
        """mse=2, gd=5, eta=0.4 gives 3.2"""
        self.assertAlmostEqual(weighted_loss(2.0, 5.0, 0.4), 3.2)

    def test_linear_in_components(self):
        """The combination uses weights summing to one"""
        rng = np.random.default_rng(5)
        y, x = rng.random((2, 1, 4, 4)), rng.random((2, 1, 4, 4))
        parts = loss_breakdown(y, x, eta=0.25)
        self.assertAlmostEqual(parts.combined.item(), 0.75 * parts.mse.item() + 0.25 * parts.gd.item())

    def test_eta_out_of_range(self):
        """eta outside [0, 1] is a configuration error"""
        with self.assertRaises(ConfigurationError):
            combined_loss(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 2)), eta=1.5)

    def test_gradients_match_finite_differences(self):
        """Both losses differentiate correctly w.r.t. Y"""
        rng = np.random.default_rng(6)
        x = rng.random((2, 2, 4, 4))
        params = ParamSet.from_arrays({'y': rng.random((2, 2, 4, 4))})
        for fn in (mse_loss, gradient_difference_loss):
            report = finite_diff_check(lambda: fn(params['y'], x), params, tolerance=1e-6, sample_size=64)
            self.assertTrue(report.passed, report.failures[:3])


class PsnrTest(SimpleTestCase):
    """Test cases for psnr and the mean-frame baseline"""

    def test_identical_is_capped(self):
        """y = x gives the 100 dB cap"""
        x = np.random.default_rng(7).random((3, 4, 4))
        self.assertEqual(psnr(x, x), 100.0)

    def test_closed_form(self):
        """Per-pixel MSE 0.01 gives 20 dB"""
        x = np.zeros((1, 4, 4))
        self.assertAlmostEqual(psnr(x + 0.1, x), 20.0, places=10)

    def test_monotone_and_symmetric(self):
        """PSNR decreases with error and is symmetric"""
        x = np.full((1, 2, 2), 0.5)
        values = [psnr(x + d, x) for d in (0.01, 0.05, 0.2)]
        self.assertTrue(values[0] > values[1] > values[2])
        y = np.random.default_rng(8).random((1, 2, 2))
        self.assertEqual(psnr(y, x), psnr(x, y))

    def test_per_frame(self):
        """psnr_per_frame evaluates each frame"""
        x = np.zeros((2, 1, 2, 2))
        y = x.copy()
        y[1] += 0.1
        np.testing.assert_allclose(psnr_per_frame(y, x), [100.0, 20.0])

    def test_baseline_of_identical_frames(self):
        """k identical frames average to that frame"""
        frame = np.random.default_rng(9).random((3, 4, 4))
        np.testing.assert_allclose(mean_frame_baseline(np.stack([frame] * 4)), frame)

    def test_baseline_of_black_and_white(self):
        """Constant 0 and 1 frames average to 0.5"""
        frames = np.stack([np.zeros((3, 2, 2)), np.ones((3, 2, 2))])
        np.testing.assert_array_equal(mean_frame_baseline(frames), np.full((3, 2, 2), 0.5))

    def test_baseline_requires_frames(self):
        """An empty sequence is a contract violation"""
        with self.assertRaises(ContractViolation):
            mean_frame_baseline(np.zeros((0, 3, 2, 2)))
