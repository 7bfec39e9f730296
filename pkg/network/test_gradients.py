"""
Finite-difference checks of the full composite network.
"""

import numpy as np
from django.test import SimpleTestCase

from metrics.losses import combined_loss
from network.composite import CompositeNetwork
from network.tests import random_episode, tiny_config
from shared.constants import MODE_EVAL, MODE_TRAIN
from substrate.gradcheck import finite_diff_check
from substrate.params import subset_names
from substrate.rng import RngStream

# gradient entries smaller than this are compared absolutely
GRADIENT_FLOOR = 1e-5


class CompositeGradientTest(SimpleTestCase):
    """End-to-end finite-difference checks of the composite loss"""

    def setUp(self):
        self.config = tiny_config(dropout_rate=0.1, latent_noise=0.1)
        self.network = CompositeNetwork(self.config)
        self.params = self.network.init_params(RngStream(21))
        self.frames = random_episode(self.config, seed=22).frames

    def test_eval_loss_gradient(self):
        """Random 100-parameter subset matches central differences"""
        def loss():
            return self.network.forward_composite(self.frames, self.params, MODE_EVAL).losses.combined

        report = finite_diff_check(loss, self.params, sample_size=100, seed=1, floor=GRADIENT_FLOOR)
        self.assertEqual(report.checked, 100)
        self.assertTrue(report.passed, report.failures[:5])

    def test_training_loss_gradient(self):
        """With fixed dropout masks and latent noise the training loss differentiates correctly"""
        rng = RngStream(23)

        def loss():
            return self.network.forward_composite(self.frames, self.params, MODE_TRAIN, rng.clone()).losses.combined

        report = finite_diff_check(loss, self.params, sample_size=100, seed=2, floor=GRADIENT_FLOOR)
        self.assertTrue(report.passed, report.failures[:5])

    def test_reconstruction_decoder_gradient(self):
        """Reconstruction loss w.r.t. the reconstruction decoder's parameters"""
        k = self.config.encoder_length
        target = self.frames[:k]
        latent = self.network.encode(target, self.params, MODE_EVAL).detach()

        def loss():
            return combined_loss(self.network.decode_reconstruct(latent, self.params), target)

        report = finite_diff_check(
            loss, self.params, sample_size=80, seed=3, floor=GRADIENT_FLOOR,
            names=subset_names(self.params, 'reconstruct')
        )
        self.assertTrue(report.passed, report.failures[:5])

    def test_corrupted_gradient_detected(self):
        """Doubling one analytic entry makes the check fail"""
        def loss():
            return self.network.forward_composite(self.frames, self.params, MODE_EVAL).losses.combined

        self.params.zero_grad()
        loss().backward()
        analytic = {name: self.params.gradient(name).copy() for name in self.params}
        name = 'predict.output.bias'
        analytic[name][0] = 2.0 * analytic[name][0] + 1.0
        report = finite_diff_check(loss, self.params, analytic=analytic, names=[name], sample_size=10)
        self.assertFalse(report.passed)
        self.assertTrue(np.isfinite(report.max_relative_error))
