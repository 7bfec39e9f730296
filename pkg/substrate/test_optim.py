"""
Tests for ADAM and the learning-rate schedule.
"""

import numpy as np
from django.test import SimpleTestCase

from shared.exceptions import ConfigurationError, NumericalError
from substrate.optim import AdamState, adam_update, exp_decay_lr
from substrate.params import ParamSet


def _params_with_grad(value, grad):
    params = ParamSet.from_arrays({'w': np.asarray(value, dtype=np.float64)})
    params['w'].grad = np.asarray(grad, dtype=np.float64)
    return params


class AdamUpdateTest(SimpleTestCase):
    """Test cases for adam_update"""

    def test_zero_gradients_leave_parameters(self):
        """Zero gradients everywhere do not move parameters"""
        params = _params_with_grad([1.0, -2.0, 3.0], np.zeros(3))
        state = AdamState.for_params(params)
        adam_update(params, state, lr=0.1)
        np.testing.assert_array_equal(params['w'].data, [1.0, -2.0, 3.0])
        self.assertEqual(state.t, 1)

    def test_first_step_magnitude(self):
        """From t=0 a constant gradient g moves each entry by lr*|g|/(|g|+eps)"""
        g = np.array([0.5, -2.0, 1e-3])
        params = _params_with_grad(np.zeros(3), g)
        state = AdamState.for_params(params)
        adam_update(params, state, lr=1e-3)
        expected = -1e-3 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(params['w'].data, expected, rtol=1e-12)

    def test_second_identical_step_is_not_larger(self):
        """A repeated constant gradient keeps the bias-corrected step at most as large"""
        params = _params_with_grad([0.0], [0.3])
        state = AdamState.for_params(params)
        adam_update(params, state, lr=1e-2)
        first = abs(params['w'].data[0])
        adam_update(params, state, lr=1e-2)
        second = abs(params['w'].data[0]) - first
        self.assertLessEqual(second, first + 1e-15)
        self.assertEqual(state.t, 2)

    def test_accumulated_second_moment_shrinks_step(self):
        """After a large gradient, v keeps later steps smaller than lr"""
        params = _params_with_grad([0.0], [1.0])
        state = AdamState.for_params(params)
        adam_update(params, state, lr=1.0)
        before = params['w'].data[0]
        params['w'].grad = np.array([0.0])
        adam_update(params, state, lr=1.0)
        # m_hat = 0.09/0.19, v_hat = 0.000999/0.001999
        expected = (0.09 / 0.19) / (np.sqrt(0.000999 / 0.001999) + 1e-8)
        self.assertAlmostEqual(before - params['w'].data[0], expected, places=10)
        self.assertLess(expected, 1.0)

    def test_second_moment_non_negative(self):
        """v stays elementwise >= 0"""
        params = _params_with_grad(np.zeros(4), [-3.0, 2.0, 0.0, -1e-4])
        state = AdamState.for_params(params)
        for _ in range(3):
            adam_update(params, state, lr=0.01)
        self.assertTrue(np.all(state.v['w'] >= 0))

    def test_non_finite_gradient_names_parameter(self):
        """A NaN gradient aborts before any update"""
        params = _params_with_grad([1.0, 2.0], [np.nan, 0.0])
        state = AdamState.for_params(params)
        with self.assertRaisesMessage(NumericalError, "'w'"):
            adam_update(params, state, lr=0.1)
        self.assertEqual(state.t, 0)
        np.testing.assert_array_equal(params['w'].data, [1.0, 2.0])

    def test_zero_learning_rate(self):
        """lr=0 leaves parameters unchanged"""
        params = _params_with_grad([1.0], [5.0])
        state = AdamState.for_params(params)
        adam_update(params, state, lr=0.0)
        np.testing.assert_array_equal(params['w'].data, [1.0])


class ExpDecayTest(SimpleTestCase):
    """Test cases for exp_decay_lr"""

    def test_step_zero_is_lr0(self):
        """lr(0) = lr0"""
        self.assertEqual(exp_decay_lr(0, 1e-3, 0.95, 50), 1e-3)

    def test_one_period_halves(self):
        """step = period with gamma 0.5 halves lr0"""
        self.assertAlmostEqual(exp_decay_lr(50, 1e-3, 0.5, 50), 5e-4, places=15)

    def test_strictly_decreasing(self):
        """lr(a) > lr(b) whenever a < b"""
        values = [exp_decay_lr(s, 1e-3, 0.95, 10) for s in range(0, 100, 7)]
        self.assertTrue(all(a > b for a, b in zip(values, values[1:])))

    def test_invalid_gamma(self):
        """gamma outside (0, 1) is a configuration error"""
        with self.assertRaises(ConfigurationError):
            exp_decay_lr(1, 1e-3, 1.0, 10)
