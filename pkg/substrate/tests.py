"""
Tests for tensors, operations, parameter sets and random streams.
"""

import numpy as np
from django.test import SimpleTestCase

from shared.exceptions import ConfigurationError, ContractViolation
from substrate.ops import (
    GateWeights, conv2d, convlstm_step, dropout, layer_norm, lstm_step, transposed_conv2d
)
from substrate.rng import RngStream
from substrate.tensor import Tensor, concat


def _t(array, requires_grad=False):
    return Tensor(np.asarray(array, dtype=np.float64), requires_grad=requires_grad)


class TensorTapeTest(SimpleTestCase):
    """Test cases for the reverse-mode tape"""

    def test_shared_subexpression_accumulates(self):
        """A node used twice receives both gradient contributions"""
        x = _t([1.0, 2.0, 3.0], requires_grad=True)
        y = (x * x + x).sum()
        y.backward()
        np.testing.assert_allclose(x.grad, 2 * x.data + 1)

    def test_concat_splits_gradient(self):
        """concat routes each slice of the gradient to its source"""
        a = _t(np.ones((2, 2)), requires_grad=True)
        b = _t(np.ones((2, 3)), requires_grad=True)
        out = concat([a, b], axis=1)
        (out * _t(np.arange(10.0).reshape(2, 5))).sum().backward()
        np.testing.assert_array_equal(a.grad, [[0, 1], [5, 6]])
        np.testing.assert_array_equal(b.grad, [[2, 3, 4], [7, 8, 9]])

    def test_broadcast_gradient_is_reduced(self):
        """Gradients of broadcast operands are summed back to their shape"""
        x = _t(np.ones((3, 4)))
        b = _t(np.zeros(4), requires_grad=True)
        (x + b).sum().backward()
        np.testing.assert_array_equal(b.grad, [3, 3, 3, 3])

    def test_backward_requires_scalar_seed(self):
        """Non-scalar backward without a seed is rejected"""
        x = _t(np.ones(3), requires_grad=True)
        with self.assertRaises(ContractViolation):
            (x * 2.0).backward()

    def test_sigmoid_of_zero_is_half(self):
        """sigmoid(0) is exactly 0.5"""
        self.assertEqual(_t(0.0).sigmoid().item(), 0.5)


class Conv2dTest(SimpleTestCase):
    """Test cases for conv2d forward contracts"""

    def test_identity_kernel(self):
        """1x1 identity kernel, zero bias, stride 1 returns the input"""
        rng = np.random.default_rng(0)
        x = rng.random((3, 5, 5))
        kernel = np.eye(3).reshape(3, 3, 1, 1)
        out = conv2d(_t(x), _t(kernel), _t(np.zeros(3)), stride=1, padding='same')
        np.testing.assert_allclose(out.data, x)

    def test_zero_kernel_gives_bias(self):
        """All-zero kernel yields the per-channel bias everywhere"""
        x = np.random.default_rng(1).random((2, 4, 4))
        out = conv2d(_t(x), _t(np.zeros((3, 2, 3, 3))), _t([0.5, -1.0, 2.0]), stride=1, padding='same')
        for j, b in enumerate([0.5, -1.0, 2.0]):
            np.testing.assert_array_equal(out.data[j], np.full((4, 4), b))

    def test_hand_evaluated_valid_correlation(self):
        """[[1..9]] with kernel [[1,0],[0,1]] valid gives [[6,8],[12,14]]"""
        x = np.arange(1.0, 10.0).reshape(1, 3, 3)
        kernel = np.array([[1.0, 0.0], [0.0, 1.0]]).reshape(1, 1, 2, 2)
        out = conv2d(_t(x), _t(kernel), None, stride=1, padding='valid')
        np.testing.assert_array_equal(out.data, [[[6.0, 8.0], [12.0, 14.0]]])

    def test_against_nested_loop_oracle(self):
        """Strided same-padded output matches an explicit sum-of-products"""
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 3, 7, 6))
        kernel = rng.standard_normal((4, 3, 3, 3))
        bias = rng.standard_normal(4)
        out = conv2d(_t(x), _t(kernel), _t(bias), stride=2, padding='same').data
        self.assertEqual(out.shape, (2, 4, 4, 3))
        padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (0, 1)))
        expected = np.zeros_like(out)
        for n in range(2):
            for o in range(4):
                for r in range(4):
                    for c in range(3):
                        patch = padded[n, :, 2 * r:2 * r + 3, 2 * c:2 * c + 3]
                        expected[n, o, r, c] = np.sum(patch * kernel[o]) + bias[o]
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_same_padding_output_extent(self):
        """Same padding with stride s gives ceil(H/s)"""
        out = conv2d(_t(np.zeros((1, 9, 8))), _t(np.zeros((2, 1, 3, 3))), None, stride=2, padding='same')
        self.assertEqual(out.shape, (2, 5, 4))

    def test_channel_mismatch_names_dimension(self):
        """Channel mismatch is a contract violation naming the channels"""
        with self.assertRaisesMessage(ContractViolation, 'channels'):
            conv2d(_t(np.zeros((2, 4, 4))), _t(np.zeros((1, 3, 3, 3))))

    def test_oversized_valid_kernel(self):
        """A valid-padded kernel larger than the input names the height"""
        with self.assertRaisesMessage(ContractViolation, 'height'):
            conv2d(_t(np.zeros((1, 2, 5))), _t(np.zeros((1, 1, 3, 3))), padding='valid')

    def test_invalid_stride(self):
        """Stride below 1 is a configuration error"""
        with self.assertRaises(ConfigurationError):
            conv2d(_t(np.zeros((1, 4, 4))), _t(np.zeros((1, 1, 3, 3))), stride=0)


class TransposedConv2dTest(SimpleTestCase):
    """Test cases for transposed_conv2d"""

    def test_zero_input_gives_bias(self):
        """Zero input yields constant bias per channel"""
        out = transposed_conv2d(
            _t(np.zeros((2, 3, 3))), _t(np.ones((2, 2, 3, 3))), _t([0.25, -0.5]), stride=2, padding='same'
        )
        self.assertEqual(out.shape, (2, 6, 6))
        np.testing.assert_array_equal(out.data[0], np.full((6, 6), 0.25))
        np.testing.assert_array_equal(out.data[1], np.full((6, 6), -0.5))

    def test_single_pixel_scatters_kernel(self):
        """A unit pixel with stride 2 and a 2x2 kernel reproduces the kernel"""
        kernel = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        out = transposed_conv2d(_t(np.ones((1, 1, 1))), _t(kernel), None, stride=2, padding='same')
        np.testing.assert_array_equal(out.data[0], kernel[0, 0])

    def test_inverts_strided_extent(self):
        """Stride-2 same conv maps 2H to H; the transpose maps H back to 2H"""
        kernel = _t(np.zeros((4, 3, 3, 3)))
        down = conv2d(_t(np.zeros((3, 8, 8))), kernel, None, stride=2)
        up = transposed_conv2d(down, kernel, None, stride=2)
        self.assertEqual(down.shape, (4, 4, 4))
        self.assertEqual(up.shape, (3, 8, 8))

    def test_adjoint_identity(self):
        """<conv2d(x), y> == <x, transposed_conv2d(y)> for matched configurations"""
        rng = np.random.default_rng(3)
        for stride, padding, size in [(2, 'same', 6), (2, 'same', 5), (1, 'same', 5), (2, 'valid', 7), (1, 'valid', 6)]:
            kernel = rng.standard_normal((4, 3, 3, 3))
            x = rng.standard_normal((2, 3, size, size))
            forward = conv2d(_t(x), _t(kernel), None, stride=stride, padding=padding).data
            y = rng.standard_normal(forward.shape)
            back = transposed_conv2d(
                _t(y), _t(kernel), None, stride=stride, padding=padding, output_size=(size, size)
            ).data
            self.assertAlmostEqual(float(np.sum(forward * y)), float(np.sum(x * back)), delta=1e-10)

    def test_matches_explicit_matrix_transpose(self):
        """The transpose equals M^T y where M is the explicit convolution matrix"""
        rng = np.random.default_rng(4)
        kernel = rng.standard_normal((2, 2, 3, 3))
        shape_in = (2, 4, 4)
        columns = []
        for k in range(int(np.prod(shape_in))):
            basis = np.zeros(int(np.prod(shape_in)))
            basis[k] = 1.0
            columns.append(conv2d(_t(basis.reshape(shape_in)), _t(kernel), None, stride=2).data.reshape(-1))
        matrix = np.stack(columns, axis=1)
        y = rng.standard_normal(matrix.shape[0])
        back = transposed_conv2d(_t(y.reshape(2, 2, 2)), _t(kernel), None, stride=2).data.reshape(-1)
        np.testing.assert_allclose(back, matrix.T @ y, atol=1e-12)

    def test_non_invertible_output_size(self):
        """An output size that does not map back to the input is a configuration error"""
        with self.assertRaises(ConfigurationError):
            transposed_conv2d(_t(np.zeros((1, 3, 3))), _t(np.zeros((1, 1, 3, 3))), stride=2, output_size=(9, 9))


class RecurrentCellTest(SimpleTestCase):
    """Test cases for lstm_step and convlstm_step"""

    def test_zero_lstm_stays_zero(self):
        """Zero weights, inputs and state keep h and c at zero"""
        weights = GateWeights(_t(np.zeros((7, 16))), _t(np.zeros(16)))
        h, c = lstm_step(_t(np.zeros(3)), _t(np.zeros(4)), _t(np.zeros(4)), weights)
        np.testing.assert_array_equal(h.data, np.zeros(4))
        np.testing.assert_array_equal(c.data, np.zeros(4))

    def test_zero_lstm_halves_cell(self):
        """Zero weights: c' = c/2 and h' = 0.5 * tanh(c/2)"""
        c0 = np.array([-2.0, 0.3, 1.0, 4.0])
        weights = GateWeights(_t(np.zeros((7, 16))), _t(np.zeros(16)))
        h, c = lstm_step(_t(np.ones(3)), _t(np.ones(4)), _t(c0), weights)
        np.testing.assert_allclose(c.data, c0 / 2)
        np.testing.assert_allclose(h.data, 0.5 * np.tanh(c0 / 2))

    def test_lstm_dimension_mismatch(self):
        """Hidden and cell of different widths are rejected"""
        weights = GateWeights(_t(np.zeros((7, 16))), _t(np.zeros(16)))
        with self.assertRaises(ContractViolation):
            lstm_step(_t(np.zeros(3)), _t(np.zeros(4)), _t(np.zeros(5)), weights)

    def test_zero_convlstm(self):
        """Zero kernels: zero state stays zero, arbitrary c is halved per pixel"""
        weights = GateWeights(_t(np.zeros((8, 5, 3, 3))), _t(np.zeros(8)))
        zeros = _t(np.zeros((2, 4, 4)))
        h, c = convlstm_step(_t(np.zeros((3, 4, 4))), zeros, zeros, weights)
        np.testing.assert_array_equal(h.data, zeros.data)
        np.testing.assert_array_equal(c.data, zeros.data)
        c0 = np.random.default_rng(5).standard_normal((2, 4, 4))
        _, c = convlstm_step(_t(np.ones((3, 4, 4))), _t(np.ones((2, 4, 4))), _t(c0), weights)
        np.testing.assert_allclose(c.data, c0 / 2)

    def test_convlstm_preserves_spatial_size(self):
        """Output state keeps the input's spatial extent"""
        rng = np.random.default_rng(6)
        weights = GateWeights(_t(rng.standard_normal((12, 5, 3, 3))), _t(np.zeros(12)))
        h, c = convlstm_step(_t(rng.random((2, 2, 6, 5))), _t(np.zeros((2, 3, 6, 5))), _t(np.zeros((2, 3, 6, 5))), weights)
        self.assertEqual(h.shape, (2, 3, 6, 5))
        self.assertEqual(c.shape, (2, 3, 6, 5))

    def test_convlstm_spatial_mismatch(self):
        """Input and state with different spatial extents are rejected"""
        weights = GateWeights(_t(np.zeros((8, 5, 3, 3))), _t(np.zeros(8)))
        with self.assertRaises(ContractViolation):
            convlstm_step(_t(np.zeros((3, 4, 4))), _t(np.zeros((2, 5, 5))), _t(np.zeros((2, 5, 5))), weights)

    def test_convlstm_on_single_pixel_equals_lstm(self):
        """At 1x1 spatial extent the convolutional cell reduces to the dense cell"""
        rng = np.random.default_rng(7)
        cx, ch = 3, 4
        kernel = rng.standard_normal((4 * ch, cx + ch, 3, 3))
        bias = rng.standard_normal(4 * ch)
        x, h, c = rng.standard_normal(cx), rng.standard_normal(ch), rng.standard_normal(ch)
        h_conv, c_conv = convlstm_step(
            _t(x.reshape(cx, 1, 1)), _t(h.reshape(ch, 1, 1)), _t(c.reshape(ch, 1, 1)),
            GateWeights(_t(kernel), _t(bias))
        )
        dense = GateWeights(_t(kernel[:, :, 1, 1].T), _t(bias))
        h_lstm, c_lstm = lstm_step(_t(x), _t(h), _t(c), dense)
        np.testing.assert_allclose(h_conv.data.reshape(-1), h_lstm.data, atol=1e-12)
        np.testing.assert_allclose(c_conv.data.reshape(-1), c_lstm.data, atol=1e-12)


class LayerNormTest(SimpleTestCase):
    """Test cases for layer_norm"""

    def test_constant_input_gives_zero(self):
        """Zero variance is guarded by epsilon and yields zeros"""
        out = layer_norm(_t(np.full((2, 3, 4, 4), 7.0)), _t(np.ones((3, 1, 1))), _t(np.zeros((3, 1, 1))))
        np.testing.assert_array_equal(out.data, np.zeros((2, 3, 4, 4)))

    def test_shift_and_scale_invariance(self):
        """layer_norm(a*x + b) equals layer_norm(x) for a > 0"""
        x = np.random.default_rng(8).standard_normal((3, 20))
        gain, bias = _t(np.ones(20)), _t(np.zeros(20))
        base = layer_norm(_t(x), gain, bias, epsilon=1e-10).data
        for a, b in [(3.0, -2.0), (0.5, 10.0)]:
            moved = layer_norm(_t(a * x + b), gain, bias, epsilon=1e-10).data
            np.testing.assert_allclose(moved, base, atol=1e-6)

    def test_normalized_moments(self):
        """Unit gain, zero bias: per-sample mean ~0 and variance ~1"""
        x = np.random.default_rng(9).standard_normal((4, 2, 5, 5)) * 3 + 1
        out = layer_norm(_t(x), _t(np.ones((2, 1, 1))), _t(np.zeros((2, 1, 1)))).data
        for sample in out:
            self.assertLess(abs(sample.mean()), 1e-6)
            self.assertAlmostEqual(sample.var(), 1.0, delta=1e-4)


class DropoutTest(SimpleTestCase):
    """Test cases for inverted dropout"""

    def test_identity_in_evaluation(self):
        """training=False returns the input for any rate"""
        x = _t(np.arange(6.0))
        np.testing.assert_array_equal(dropout(x, 0.5, RngStream(0), training=False).data, x.data)

    def test_zero_rate_is_identity(self):
        """rate=0 in training returns the input"""
        x = _t(np.arange(6.0))
        np.testing.assert_array_equal(dropout(x, 0.0, RngStream(0), training=True).data, x.data)

    def test_inverted_scaling_keeps_mean(self):
        """rate=0.15 on 1e5 ones keeps the mean within 3 sigma of 1"""
        rate, count = 0.15, 100000
        out = dropout(_t(np.ones(count)), rate, RngStream(11), training=True).data
        sigma = np.sqrt(rate * (1 - rate) / count) / (1 - rate)
        self.assertLess(abs(out.mean() - 1.0), 3 * sigma)
        self.assertTrue(set(np.unique(out)).issubset({0.0, 1.0 / (1 - rate)}))

    def test_rate_one_rejected(self):
        """rate >= 1 is a configuration error"""
        with self.assertRaises(ConfigurationError):
            dropout(_t(np.ones(3)), 1.0, RngStream(0), training=True)

    def test_same_seed_same_mask(self):
        """Identical seeds give identical masks"""
        a = dropout(_t(np.ones(50)), 0.3, RngStream(4), training=True).data
        b = dropout(_t(np.ones(50)), 0.3, RngStream(4), training=True).data
        np.testing.assert_array_equal(a, b)


class RngStreamTest(SimpleTestCase):
    """Test cases for RngStream"""

    def test_same_seed_same_sequence(self):
        """Identical seeds reproduce the sequence"""
        np.testing.assert_array_equal(RngStream(42).uniform(10), RngStream(42).uniform(10))

    def test_children_are_independent_and_stable(self):
        """Child streams are reproducible and differ from each other"""
        root = RngStream(42)
        np.testing.assert_array_equal(root.child(1).normal(5), RngStream(42).child(1).normal(5))
        self.assertFalse(np.array_equal(root.child(1).normal(5), root.child(2).normal(5)))

    def test_clone_continues_from_same_position(self):
        """A clone replays the stream from the current position"""
        stream = RngStream(3)
        stream.uniform(4)
        twin = stream.clone()
        np.testing.assert_array_equal(stream.normal(6), twin.normal(6))
