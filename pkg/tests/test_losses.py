"""Loss terms, patch discriminator, perceptual feature extractors."""

import math

import numpy as np
import pytest

from voxray import autodiff as ad
from voxray.autodiff import Tape, Tensor, grad_check
from voxray.checkpoint import save_container
from voxray.losses import (
    ConvFeatureExtractor,
    Discriminator,
    DiscriminatorConfig,
    FilterBankExtractor,
    LossWeights,
    adversarial_losses,
    bce_with_logits,
    combined_loss,
    discriminator_accuracy,
    l1_loss,
    luma,
    mse_loss,
    perceptual_loss,
)


@pytest.fixture
def rng():
    return np.random.default_rng(55)


def tiny_disc(seed=8, widths=(4, 8), dtype=np.float32):
    return Discriminator(DiscriminatorConfig(widths=widths),
                         rng=np.random.default_rng(seed), dtype=dtype)


class TestReconstructionLosses:
    def test_l1_hand_value(self):
        pred = Tensor(np.array([1.0, 3.0, -2.0]))
        assert abs(float(l1_loss(pred, np.array([0.0, 1.0, 0.0])).data) - 5 / 3) < 1e-12

    def test_mse_hand_value(self):
        pred = Tensor(np.array([[1.0, 2.0]]))
        assert abs(float(mse_loss(pred, np.array([[0.0, 0.0]])).data) - 2.5) < 1e-12

    def test_l1_gradient_is_sign_over_n(self):
        pred = Tensor(np.array([2.0, -3.0, 5.0]), requires_grad=True)
        with Tape() as tape:
            tape.backward(l1_loss(pred, np.zeros(3)))
        np.testing.assert_allclose(pred.grad, [1 / 3, -1 / 3, 1 / 3], atol=1e-12)

    def test_target_receives_no_gradient(self):
        pred = Tensor(np.ones(4), requires_grad=True)
        target = Tensor(np.zeros(4), requires_grad=True)
        with Tape() as tape:
            tape.backward(mse_loss(pred, target))
        assert pred.grad is not None
        assert target.grad is None


class TestBCE:
    def test_zero_logits_give_log_two(self):
        z = Tensor(np.zeros((1, 2, 2)))
        assert abs(float(bce_with_logits(z, real=True).data) - math.log(2)) < 1e-7
        assert abs(float(bce_with_logits(z, real=False).data) - math.log(2)) < 1e-7

    def test_matches_textbook_formula(self, rng):
        z = rng.standard_normal((3, 4))
        sig = 1 / (1 + np.exp(-z))
        got_real = float(bce_with_logits(Tensor(z), real=True).data)
        got_fake = float(bce_with_logits(Tensor(z), real=False).data)
        np.testing.assert_allclose(got_real, -np.mean(np.log(sig)), rtol=1e-6)
        np.testing.assert_allclose(got_fake, -np.mean(np.log(1 - sig)), rtol=1e-6)

    def test_generator_gradient_does_not_saturate(self):
        """At a strongly rejected fake the gradient stays near -1, not 0."""
        z = Tensor(np.array([-20.0]), requires_grad=True)
        with Tape() as tape:
            tape.backward(bce_with_logits(z, real=True))
        np.testing.assert_allclose(z.grad, [-1.0], atol=1e-6)

    def test_extreme_logits_stay_finite(self):
        z = Tensor(np.array([-500.0, 500.0]))
        assert np.isfinite(bce_with_logits(z, real=True).data)
        assert np.isfinite(bce_with_logits(z, real=False).data)


class TestCombinedLoss:
    def _term(self, v):
        return Tensor(np.asarray(float(v)))

    def test_weighted_sum_and_breakdown(self):
        w = LossWeights(high=1.0, adversarial=0.0, perceptual=0.5, low=2.0)
        total, parts = combined_loss(w, high=self._term(0.3),
                                     perceptual=self._term(0.4),
                                     low=self._term(0.1))
        assert abs(float(total.data) - (0.3 + 0.2 + 0.2)) < 1e-12
        assert parts == {"high": 0.3, "perceptual": 0.4, "low": 0.1}

    def test_zero_weight_term_must_not_be_computed(self):
        w = LossWeights(adversarial=0.0)
        with pytest.raises(ValueError, match="zero weight"):
            combined_loss(w, high=self._term(1), adversarial=self._term(1),
                          perceptual=self._term(1), low=self._term(1))

    def test_missing_weighted_term_rejected(self):
        with pytest.raises(ValueError, match="not provided"):
            combined_loss(LossWeights(), high=self._term(1), low=self._term(1))

    def test_unknown_term_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            combined_loss(LossWeights(), style=self._term(1))

    def test_default_weights(self):
        w = LossWeights()
        assert (w.high, w.adversarial, w.perceptual, w.low) == (1.0, 0.02, 0.5, 1.0)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(perceptual=-0.1)


class TestDiscriminator:
    def test_logit_map_shape(self, rng):
        disc = tiny_disc()
        x = Tensor(rng.uniform(0, 1, size=(3, 16, 16)).astype(np.float32))
        assert disc(x).shape == (1, 4, 4)

    def test_too_small_patch_rejected(self, rng):
        disc = tiny_disc()
        with pytest.raises(ValueError, match="at least"):
            disc(Tensor(np.zeros((3, 2, 2), dtype=np.float32)))

    def test_fresh_discriminator_gives_log_two_losses(self, rng):
        """Zeroed weights produce zero logits: G loss ln 2, D loss 2 ln 2."""
        disc = tiny_disc()
        for p in disc.parameters().values():
            p.data[:] = 0.0
        real = rng.uniform(0, 1, size=(3, 16, 16)).astype(np.float32)
        fake = Tensor(rng.uniform(0, 1, size=(3, 16, 16)).astype(np.float32))
        loss_g, loss_d = adversarial_losses(disc, real, fake)
        assert abs(float(loss_g.data) - math.log(2)) < 1e-6
        assert abs(float(loss_d.data) - 2 * math.log(2)) < 1e-6

    def test_d_loss_never_reaches_generator(self, rng):
        disc = tiny_disc()
        real = rng.uniform(0, 1, size=(3, 16, 16)).astype(np.float32)
        fake = Tensor(rng.uniform(0, 1, size=(3, 16, 16)).astype(np.float32),
                      requires_grad=True)
        with Tape() as tape:
            _, loss_d = adversarial_losses(disc, real, fake)
            tape.backward(loss_d)
        assert fake.grad is None
        assert all(p.grad is not None for p in disc.parameters().values())

    def test_g_loss_reaches_generator(self, rng):
        disc = tiny_disc()
        real = rng.uniform(0, 1, size=(3, 16, 16)).astype(np.float32)
        fake = Tensor(rng.uniform(0, 1, size=(3, 16, 16)).astype(np.float32),
                      requires_grad=True)
        with Tape() as tape:
            loss_g, _ = adversarial_losses(disc, real, fake)
            tape.backward(loss_g)
        assert fake.grad is not None and np.any(fake.grad != 0)

    def test_accuracy_counts_signs(self, rng):
        disc = tiny_disc()
        real = rng.uniform(0, 1, size=(3, 16, 16)).astype(np.float32)
        fake = Tensor(rng.uniform(0, 1, size=(3, 16, 16)).astype(np.float32))
        acc = discriminator_accuracy(disc, real, fake)
        assert 0.0 <= acc <= 1.0
        logits_r = disc(Tensor(real)).data
        logits_f = disc(fake).data
        expect = (np.sum(logits_r > 0) + np.sum(logits_f <= 0)) / (
            logits_r.size + logits_f.size)
        assert acc == pytest.approx(expect)

    def test_gradcheck(self, rng):
        disc = tiny_disc(seed=4, dtype=np.float64)
        x = Tensor(rng.uniform(0.1, 0.9, size=(3, 16, 16)), requires_grad=True)
        params = list(disc.parameters().values()) + [x]

        def f(*_):
            return bce_with_logits(disc(x), real=True)

        assert grad_check(f, params) < 1e-4


class TestPerceptual:
    def test_luma_weights(self):
        img = Tensor(np.ones((3, 2, 2)))
        np.testing.assert_allclose(luma(img).data, 1.0, atol=1e-7)
        red = np.zeros((3, 2, 2)); red[0] = 1.0
        np.testing.assert_allclose(luma(Tensor(red)).data, 0.299, atol=1e-7)

    def test_filters_ignore_constant_interior(self):
        ext = FilterBankExtractor(n_levels=1)
        img = Tensor(np.full((3, 8, 8), 0.6, dtype=np.float32))
        maps = ext.features(img)
        np.testing.assert_allclose(maps[0].data[:, 1:-1, 1:-1], 0.0, atol=1e-6)

    def test_pyramid_level_shapes(self, rng):
        ext = FilterBankExtractor(n_levels=2)
        img = Tensor(rng.uniform(0, 1, size=(3, 16, 12)).astype(np.float32))
        maps = ext.features(img)
        assert [m.shape for m in maps] == [(8, 16, 12), (8, 8, 6)]

    def test_identical_images_give_zero_loss(self, rng):
        ext = FilterBankExtractor()
        img = Tensor(rng.uniform(0, 1, size=(3, 8, 8)).astype(np.float32))
        assert float(perceptual_loss(ext, img, img.data).data) == 0.0

    def test_edges_are_detected(self):
        ext = FilterBankExtractor(n_levels=1)
        img = np.zeros((3, 8, 8), dtype=np.float32)
        img[:, :, 4:] = 1.0
        loss = perceptual_loss(ext, Tensor(img), np.zeros((3, 8, 8), np.float32))
        assert float(loss.data) > 1e-3

    def test_gradient_reaches_pred_only(self, rng):
        ext = FilterBankExtractor()
        pred = Tensor(rng.uniform(0, 1, size=(3, 8, 8)), requires_grad=True)
        target = Tensor(rng.uniform(0, 1, size=(3, 8, 8)), requires_grad=True)
        with Tape() as tape:
            tape.backward(perceptual_loss(ext, pred, target))
        assert pred.grad is not None and np.any(pred.grad != 0)
        assert target.grad is None

    def test_gradcheck(self, rng):
        ext = FilterBankExtractor(dtype=np.float64)
        pred = Tensor(rng.uniform(0.1, 0.9, size=(3, 8, 8)), requires_grad=True)
        target = rng.uniform(0, 1, size=(3, 8, 8))

        def f(p):
            return perceptual_loss(ext, p, target)

        assert grad_check(f, [pred]) < 1e-6

    def test_conv_extractor_loads_from_container(self, tmp_path, rng):
        tensors = {
            "features.conv0.w": rng.standard_normal((4, 3, 3, 3)).astype(np.float32) * 0.2,
            "features.conv0.b": np.zeros(4, dtype=np.float32),
            "features.conv1.w": rng.standard_normal((6, 4, 3, 3)).astype(np.float32) * 0.2,
            "features.conv1.b": np.zeros(6, dtype=np.float32),
        }
        path = tmp_path / "backbone.vxr"
        save_container(path, tensors, {})
        ext = ConvFeatureExtractor.from_file(path)
        maps = ext.features(Tensor(rng.uniform(0, 1, (3, 16, 16)).astype(np.float32)))
        assert [m.shape for m in maps] == [(4, 8, 8), (6, 4, 4)]
        loss = perceptual_loss(ext, Tensor(np.ones((3, 16, 16), np.float32)),
                               np.ones((3, 16, 16), np.float32))
        assert float(loss.data) == 0.0

    def test_conv_extractor_rejects_incomplete_weights(self):
        with pytest.raises(ValueError, match="missing bias"):
            ConvFeatureExtractor({"features.conv0.w": np.zeros((2, 3, 3, 3),
                                                               np.float32)})
        with pytest.raises(ValueError, match="no features"):
            ConvFeatureExtractor({})
