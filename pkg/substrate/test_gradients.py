"""
Finite-difference checks of every differentiable operation.
"""

import numpy as np
from django.test import SimpleTestCase

from substrate.gradcheck import finite_diff_check
from substrate.ops import GateWeights, conv2d, convlstm_step, layer_norm, lstm_step, transposed_conv2d
from substrate.params import ParamSet
from substrate.rng import RngStream


def _params(**arrays):
    return ParamSet.from_arrays({k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()})


def _projection(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape)


class FiniteDiffCheckTest(SimpleTestCase):
    """Test cases for the finite-difference checker itself"""

    def test_quadratic_is_exact(self):
        """f = sum(theta^2) has analytic gradient 2*theta"""
        params = _params(theta=np.random.default_rng(0).standard_normal(20))
        report = finite_diff_check(lambda: params['theta'].square().sum(), params, tolerance=1e-8)
        self.assertTrue(report.passed, report.failures)
        self.assertLess(report.max_relative_error, 1e-8)

    def test_corrupted_gradient_fails(self):
        """Doubling one analytic entry is detected"""
        params = _params(theta=np.random.default_rng(1).standard_normal(10))
        params.zero_grad()
        params['theta'].square().sum().backward()
        corrupted = {'theta': params.gradient('theta').copy()}
        corrupted['theta'][3] *= 2.0
        report = finite_diff_check(
            lambda: params['theta'].square().sum(), params, analytic=corrupted, sample_size=10
        )
        self.assertFalse(report.passed)
        self.assertEqual(report.worst_entry, ('theta', 3))

    def test_non_finite_evaluation_is_a_failure(self):
        """Evaluations that overflow are reported, not raised"""
        params = _params(theta=[1.0])

        def explode():
            return (params['theta'] * np.inf).sum()

        report = finite_diff_check(explode, params, analytic={'theta': np.zeros(1)})
        self.assertFalse(report.passed)

    def test_parameters_restored(self):
        """Probing leaves parameter values untouched"""
        params = _params(theta=np.arange(5.0))
        finite_diff_check(lambda: params['theta'].square().sum(), params)
        np.testing.assert_array_equal(params['theta'].data, np.arange(5.0))

    def test_requires_float64(self):
        """32-bit parameters are rejected"""
        from shared.exceptions import ConfigurationError
        params = ParamSet.from_arrays({'theta': np.ones(3, dtype=np.float32)})
        with self.assertRaises(ConfigurationError):
            finite_diff_check(lambda: params['theta'].sum(), params)


class OperationGradientTest(SimpleTestCase):
    """Every differentiable operation agrees with central differences"""

    def assertGradientsMatch(self, fn, params):
        report = finite_diff_check(fn, params, step=1e-5, sample_size=100)
        self.assertTrue(report.passed, report.failures[:5])

    def test_conv2d(self):
        """conv2d w.r.t. input, kernel and bias, strided and same-padded"""
        rng = np.random.default_rng(10)
        params = _params(x=rng.standard_normal((2, 3, 5, 6)), k=rng.standard_normal((4, 3, 3, 3)), b=rng.standard_normal(4))
        weight = _projection((2, 4, 3, 3), 11)
        self.assertGradientsMatch(
            lambda: (conv2d(params['x'], params['k'], params['b'], stride=2) * weight).sum(), params
        )

    def test_conv2d_valid(self):
        """conv2d with valid padding"""
        rng = np.random.default_rng(12)
        params = _params(x=rng.standard_normal((1, 2, 6, 6)), k=rng.standard_normal((3, 2, 2, 2)), b=np.zeros(3))
        weight = _projection((1, 3, 5, 5), 13)
        self.assertGradientsMatch(
            lambda: (conv2d(params['x'], params['k'], params['b'], padding='valid') * weight).sum(), params
        )

    def test_transposed_conv2d(self):
        """transposed_conv2d w.r.t. input, kernel and bias"""
        rng = np.random.default_rng(14)
        params = _params(x=rng.standard_normal((2, 3, 3, 3)), k=rng.standard_normal((3, 2, 3, 3)), b=rng.standard_normal(2))
        weight = _projection((2, 2, 6, 6), 15)
        self.assertGradientsMatch(
            lambda: (transposed_conv2d(params['x'], params['k'], params['b'], stride=2) * weight).sum(), params
        )

    def test_lstm_step(self):
        """Gradient of ||h'||^2 w.r.t. every weight"""
        rng = np.random.default_rng(16)
        params = _params(
            x=rng.standard_normal((2, 3)), h=rng.standard_normal((2, 4)), c=rng.standard_normal((2, 4)),
            kernel=rng.standard_normal((7, 16)) * 0.5, bias=rng.standard_normal(16) * 0.5
        )

        def loss():
            h, c = lstm_step(params['x'], params['h'], params['c'], GateWeights(params['kernel'], params['bias']))
            return h.square().sum() + (c * _projection((2, 4), 17)).sum()

        report = finite_diff_check(loss, params, sample_size=1000)
        self.assertTrue(report.passed, report.failures[:5])

    def test_convlstm_step(self):
        """Convolutional cell w.r.t. input, state, kernel and bias"""
        rng = np.random.default_rng(18)
        params = _params(
            x=rng.standard_normal((2, 2, 4, 4)), h=rng.standard_normal((2, 3, 4, 4)), c=rng.standard_normal((2, 3, 4, 4)),
            kernel=rng.standard_normal((12, 5, 3, 3)) * 0.3, bias=rng.standard_normal(12) * 0.3
        )

        def loss():
            h, c = convlstm_step(params['x'], params['h'], params['c'], GateWeights(params['kernel'], params['bias']))
            return (h * _projection((2, 3, 4, 4), 19)).sum() + (c * _projection((2, 3, 4, 4), 20)).sum()

        self.assertGradientsMatch(loss, params)

    def test_layer_norm(self):
        """layer_norm w.r.t. input, per-channel gain and bias"""
        rng = np.random.default_rng(21)
        params = _params(x=rng.standard_normal((3, 2, 4, 4)), gain=rng.standard_normal((2, 1, 1)), bias=rng.standard_normal((2, 1, 1)))
        weight = _projection((3, 2, 4, 4), 22)
        self.assertGradientsMatch(
            lambda: (layer_norm(params['x'], params['gain'], params['bias']) * weight).sum(), params
        )

    def test_elementwise_nonlinearities(self):
        """sigmoid, tanh, abs and square"""
        rng = np.random.default_rng(23)
        params = _params(x=rng.standard_normal(30) + 0.1)
        self.assertGradientsMatch(
            lambda: (params['x'].sigmoid() + params['x'].tanh() * params['x'].abs()).square().sum(), params
        )

    def test_seeded_dropout_is_differentiable(self):
        """With a re-seeded stream, dropout is a fixed linear mask"""
        from substrate.ops import dropout
        params = _params(x=np.random.default_rng(24).standard_normal((4, 8)))
        self.assertGradientsMatch(
            lambda: dropout(params['x'], 0.2, RngStream(5), training=True).tanh().sum(), params
        )
