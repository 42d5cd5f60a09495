import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from amodalhands.grids import MaskQuad
from amodalhands.inpainter import (
    FeaturePyramid,
    InpainterConfig,
    InpainterTrainConfig,
    LossWeights,
    PartialConv2d,
    RecoveryNet,
    adversarial_losses,
    bundle_to_tensors,
    gram_matrix,
    l1_loss,
    make_recovery_example,
    original_from_bundle,
    perceptual_loss,
    recover,
    style_loss,
    total_recovery_loss,
    train_inpainter,
)
from amodalhands.maskops import build_recovery_input

from gradcheck import directional_grad_check


def partial_conv_oracle(x, m, weight, bias, stride, padding):
    """Scalar re-implementation of the renormalized masked convolution."""
    c_in, h, w = x.shape
    c_out, _, k, _ = weight.shape
    xp = np.zeros((c_in, h + 2 * padding, w + 2 * padding))
    mp = np.zeros((h + 2 * padding, w + 2 * padding))
    xp[:, padding:padding + h, padding:padding + w] = x
    mp[padding:padding + h, padding:padding + w] = m
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (w + 2 * padding - k) // stride + 1
    out = np.zeros((c_out, out_h, out_w))
    validity = np.zeros((out_h, out_w))
    for oy in range(out_h):
        for ox in range(out_w):
            ys, xs = oy * stride, ox * stride
            mwin = mp[ys:ys + k, xs:xs + k]
            s = mwin.sum()
            if s == 0:
                continue
            validity[oy, ox] = 1.0
            xwin = xp[:, ys:ys + k, xs:xs + k] * mwin
            for co in range(c_out):
                acc = (weight[co] * xwin).sum()
                out[co, oy, ox] = acc * (k * k / s) + bias[co]
    return out, validity


class TestPartialConv:
    def test_all_valid_equals_standard_conv(self):
        torch.manual_seed(0)
        for _ in range(100):
            pc = PartialConv2d(3, 4, 3, stride=1, padding=0)
            x = torch.randn(1, 3, 9, 9)
            m = torch.ones(1, 1, 9, 9)
            out, validity = pc(x, m)
            want = F.conv2d(x, pc.conv.weight, pc.bias)
            assert torch.max(torch.abs(out - want)).item() < 1e-5
            assert torch.all(validity == 1)

    def test_all_invalid_gives_zero(self):
        pc = PartialConv2d(3, 4, 3, padding=1)
        x = torch.randn(1, 3, 8, 8)
        out, validity = pc(x, torch.zeros(1, 1, 8, 8))
        assert torch.all(out == 0)
        assert torch.all(validity == 0)

    def test_five_valid_pixels_renormalized(self):
        torch.manual_seed(1)
        pc = PartialConv2d(1, 1, 3, padding=0)
        x = torch.randn(1, 1, 3, 3)
        m = torch.zeros(1, 1, 3, 3)
        m.view(-1)[[0, 2, 4, 6, 8]] = 1.0
        out, validity = pc(x, m)
        masked = x * m
        want = (pc.conv.weight * masked).sum() * (9.0 / 5.0) + pc.bias[0]
        assert abs(out.item() - want.item()) < 1e-6
        assert validity.item() == 1.0

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(2)
        torch.manual_seed(2)
        for trial in range(100):
            stride = int(rng.integers(1, 3))
            padding = int(rng.integers(0, 2))
            pc = PartialConv2d(2, 3, 3, stride=stride, padding=padding)
            x = rng.standard_normal((2, 8, 8)).astype(np.float32)
            m = (rng.random((8, 8)) < 0.6).astype(np.float32)
            out, validity = pc(torch.from_numpy(x)[None],
                               torch.from_numpy(m)[None, None])
            want, want_v = partial_conv_oracle(
                x, m, pc.conv.weight.detach().numpy(),
                pc.bias.detach().numpy(), stride, padding)
            assert np.max(np.abs(out[0].detach().numpy() - want)) < 1e-5
            assert np.array_equal(validity[0, 0].numpy(), want_v)


class TestSimpleLosses:
    def test_l1_identical_is_zero(self):
        a = torch.rand(1, 3, 8, 8)
        assert l1_loss(a, a.clone()).item() == 0.0

    def test_l1_constant_offset(self):
        a = torch.rand(1, 3, 8, 8, dtype=torch.float64) * 0.5
        assert abs(l1_loss(a, a + 0.1).item() - 0.1) < 1e-12

    def test_l1_matches_scalar_oracle(self):
        rng = np.random.default_rng(3)
        a = rng.random((3, 4, 4))
        b = rng.random((3, 4, 4))
        got = l1_loss(torch.from_numpy(a), torch.from_numpy(b)).item()
        want = 0.0
        for c in range(3):
            for y in range(4):
                for x in range(4):
                    want += abs(a[c, y, x] - b[c, y, x])
        want /= 48.0
        assert abs(got - want) < 1e-9

    def test_perceptual_zero_and_symmetric(self):
        ext = FeaturePyramid(stages=2).double()
        a = torch.rand(1, 3, 16, 16, dtype=torch.float64)
        b = torch.rand(1, 3, 16, 16, dtype=torch.float64)
        assert perceptual_loss(a, a.clone(), ext).item() == 0.0
        assert abs(perceptual_loss(a, b, ext).item()
                   - perceptual_loss(b, a, ext).item()) < 1e-12

    def test_perceptual_matches_straight_line_reimplementation(self):
        ext = FeaturePyramid(stages=2).double()
        rng = np.random.default_rng(4)
        a = torch.from_numpy(rng.random((1, 3, 16, 16)))
        b = torch.from_numpy(rng.random((1, 3, 16, 16)))
        got = perceptual_loss(a, b, ext).item()

        want = 0.0
        ha, hb = a, b
        for conv in ext.convs:
            ha = torch.relu(F.conv2d(ha, conv.weight, conv.bias, stride=2, padding=1))
            hb = torch.relu(F.conv2d(hb, conv.weight, conv.bias, stride=2, padding=1))
            want += float(np.mean(np.abs(ha.numpy() - hb.numpy())))
        assert abs(got - want) < 1e-6

    def test_style_zero_for_identical(self):
        ext = FeaturePyramid(stages=2)
        a = torch.rand(1, 3, 16, 16)
        assert style_loss(a, a.clone(), ext).item() == 0.0

    def test_gram_permutation_invariance(self):
        rng = np.random.default_rng(5)
        feat = torch.from_numpy(rng.random((1, 4, 3, 3)))
        perm = torch.from_numpy(
            feat.numpy()[:, :, :, :].reshape(1, 4, 9)[:, :, rng.permutation(9)]
            .reshape(1, 4, 3, 3).copy())
        ga, gp = gram_matrix(feat), gram_matrix(perm)
        assert torch.max(torch.abs(ga - gp)).item() < 1e-12

    def test_gram_matches_inner_product_oracle(self):
        rng = np.random.default_rng(6)
        feat = rng.random((2, 3, 3))
        got = gram_matrix(torch.from_numpy(feat)[None])[0].numpy()
        flat = feat.reshape(2, 9)
        for i in range(2):
            for j in range(2):
                want = sum(flat[i, k] * flat[j, k] for k in range(9)) / (2 * 3 * 3)
                assert abs(got[i, j] - want) < 1e-9


class ConstantDisc(torch.nn.Module):
    def __init__(self, value: float):
        super().__init__()
        self.value = value

    def forward(self, img):
        return torch.full((img.shape[0], 1, 4, 4), self.value)


class TestAdversarial:
    def test_indifferent_discriminator(self):
        fake = torch.rand(1, 3, 8, 8)
        real = torch.rand(1, 3, 8, 8)
        g_term, d_term = adversarial_losses(ConstantDisc(0.0), fake, real)
        assert abs(d_term.item() - 2 * math.log(2)) < 1e-6
        assert abs(g_term.item() - (-math.log(2))) < 1e-6

    def test_confident_correct_discriminator(self):
        fake = torch.rand(1, 3, 8, 8)
        real = torch.rand(1, 3, 8, 8)

        class SignDisc(torch.nn.Module):
            def forward(self, img):
                # +inf logits for the real batch, -inf for the fake one
                sign = 1.0 if img is real else -1.0
                return torch.full((1, 1, 4, 4), sign * 1e9)

        _, d_term = adversarial_losses(SignDisc(), fake, real)
        assert d_term.item() < 1e-5

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(7)
        logits_fake = rng.standard_normal((1, 1, 4, 4))
        logits_real = rng.standard_normal((1, 1, 4, 4))

        class FixedDisc(torch.nn.Module):
            def forward(self, img):
                same_as_fake = torch.equal(img, fake)
                return torch.from_numpy(logits_fake if same_as_fake else logits_real)

        fake = torch.rand(1, 3, 8, 8, dtype=torch.float64)
        real = torch.rand(1, 3, 8, 8, dtype=torch.float64)
        g_term, d_term = adversarial_losses(FixedDisc(), fake, real)

        def sigmoid(v):
            return 1.0 / (1.0 + math.exp(-v))

        g_want = np.mean([math.log(1 - sigmoid(v)) for v in logits_fake.ravel()])
        d_want = (-np.mean([math.log(sigmoid(v)) for v in logits_real.ravel()])
                  - np.mean([math.log(1 - sigmoid(v)) for v in logits_fake.ravel()]))
        assert abs(g_term.item() - g_want) < 1e-7
        assert abs(d_term.item() - d_want) < 1e-7


class TestTotalLoss:
    def test_all_zero(self):
        assert total_recovery_loss(0.0, 0.0, 0.0, 0.0, LossWeights()) == 0.0

    def test_unit_components_weighted_sum(self):
        got = total_recovery_loss(1.0, 1.0, 1.0, 1.0, LossWeights())
        assert got == 0.1 * 1.0 + 3.0 * 1.0 + 0.1 * 1.0 + 250.0 * 1.0

    def test_random_components_match_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            g, l1v, p, s = rng.random(4)
            w = LossWeights()
            got = total_recovery_loss(g, l1v, p, s, w)
            want = w.gan * g + w.l1 * l1v + w.perceptual * p + w.style * s
            assert got == want

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(l1=-1.0)


class TestGradients:
    def test_l1_gradient(self):
        rng = np.random.default_rng(9)
        b = torch.from_numpy(rng.random((1, 3, 8, 8)))
        x = torch.from_numpy(rng.random((1, 3, 8, 8)))
        err = directional_grad_check(lambda t: l1_loss(t, b), x, eps=1e-3)
        assert err < 1e-3

    def test_perceptual_gradient(self):
        ext = FeaturePyramid(stages=2).double()
        rng = np.random.default_rng(10)
        b = torch.from_numpy(rng.random((1, 3, 16, 16)))
        x = torch.from_numpy(rng.random((1, 3, 16, 16)))
        err = directional_grad_check(lambda t: perceptual_loss(t, b, ext), x, eps=1e-3)
        assert err < 1e-3

    def test_style_gradient(self):
        ext = FeaturePyramid(stages=2).double()
        rng = np.random.default_rng(11)
        b = torch.from_numpy(rng.random((1, 3, 16, 16)))
        x = torch.from_numpy(rng.random((1, 3, 16, 16)))
        # smaller step: the FD interval must not straddle relu/abs kinks
        err = directional_grad_check(lambda t: style_loss(t, b, ext), x, eps=1e-4)
        assert err < 1e-3

    def test_total_loss_gradient_gan_frozen(self):
        ext = FeaturePyramid(stages=2).double()
        rng = np.random.default_rng(12)
        b = torch.from_numpy(rng.random((1, 3, 16, 16)))
        x = torch.from_numpy(rng.random((1, 3, 16, 16)))
        w = LossWeights(gan=0.0)

        def fn(t):
            return total_recovery_loss(0.0, l1_loss(t, b), perceptual_loss(t, b, ext),
                                       style_loss(t, b, ext), w)

        assert directional_grad_check(fn, x, eps=1e-3) < 1e-3


def small_interacting_crop(rng, size=64):
    ra = np.zeros((size, size), dtype=np.float32)
    ra[18:46, 14:42] = 1
    la = np.zeros((size, size), dtype=np.float32)
    la[26:54, 30:58] = 1
    lv = la.copy()
    rv = ra * (1 - la)
    quad = MaskQuad(ra, rv, la, lv)
    img = rng.random((size, size, 3)).astype(np.float32)
    target = rng.random((size, size, 3)).astype(np.float32)
    return img, quad, target


class TestRecoveryNet:
    def test_output_shape_and_range(self):
        rng = np.random.default_rng(13)
        img, quad, _ = small_interacting_crop(rng)
        bundle = build_recovery_input(img, quad)
        model = RecoveryNet(InpainterConfig(input_size=64, widths=(8, 16, 32, 48)))
        out = recover(model, bundle)
        assert out.shape == (64, 64, 3)
        assert np.all(np.isfinite(out))
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_empty_holes_identity_bit_exact(self):
        rng = np.random.default_rng(14)
        size = 64
        ra = np.zeros((size, size), dtype=np.float32)
        ra[10:30, 10:30] = 1
        quad = MaskQuad(ra, ra.copy(), np.zeros_like(ra), np.zeros_like(ra))
        img = rng.random((size, size, 3)).astype(np.float32)
        bundle = build_recovery_input(img, quad)
        assert bundle.hole_mask().sum() == 0
        model = RecoveryNet(InpainterConfig(input_size=64, widths=(8, 16, 32, 48)))
        out = recover(model, bundle)
        assert np.array_equal(out, img)

    def test_original_reconstruction_exact(self):
        rng = np.random.default_rng(15)
        img, quad, _ = small_interacting_crop(rng)
        bundle = build_recovery_input(img, quad)
        assert np.array_equal(original_from_bundle(bundle), img)

    def test_validity_grows_through_net(self):
        # encoder masks shrink only at fully-invalid windows; after enough
        # partial convs the validity frontier expands
        rng = np.random.default_rng(16)
        img, quad, _ = small_interacting_crop(rng)
        bundle = build_recovery_input(img, quad)
        x, v = bundle_to_tensors(bundle)
        model = RecoveryNet(InpainterConfig(input_size=64, widths=(8, 16, 32, 48)))
        e0, m0 = model.enc0(x[None], v[None])
        e1, m1 = model.enc1(torch.relu(e0), m0)
        assert m0.mean() >= F.avg_pool2d(v[None], 2).gt(0).float().mean() - 1e-6
        assert m1.mean() >= m0[:, :, ::2, ::2].mean() - 1e-6

    def test_batch_determinism(self):
        rng = np.random.default_rng(17)
        img, quad, _ = small_interacting_crop(rng)
        bundle = build_recovery_input(img, quad)
        x, v = bundle_to_tensors(bundle)
        model = RecoveryNet(InpainterConfig(input_size=64, widths=(8, 16, 32, 48)))
        model.eval()
        with torch.no_grad():
            out = model(torch.stack([x, x]), torch.stack([v, v]))
        assert torch.equal(out[0], out[1])


class TestTrainInpainter:
    def test_single_sample_overfit_without_gan(self):
        rng = np.random.default_rng(18)
        img, quad, target = small_interacting_crop(rng)
        # a reachable target: identical to the input outside holes
        hole = np.maximum(quad.right_amodal * (1 - quad.right_visible),
                          (1 - quad.right_amodal) * quad.left_visible)
        target = np.where(hole[..., None] > 0, target * 0.0 + 0.5, img).astype(np.float32)
        example = make_recovery_example(img, quad, target)
        cfg = InpainterConfig(input_size=64, widths=(8, 16, 24, 32),
                              transformer_blocks=1)
        tcfg = InpainterTrainConfig(stage1_steps=120, batch_size=2,
                                    weights=LossWeights(gan=0.0), seed=0)
        model, rows = train_inpainter([example], cfg, tcfg)
        assert rows[-1]["l1"] < rows[0]["l1"] / 5

    def test_seed_reproducibility(self):
        rng = np.random.default_rng(19)
        img, quad, target = small_interacting_crop(rng)
        example = make_recovery_example(img, quad, target)
        cfg = InpainterConfig(input_size=64, widths=(8, 16, 24, 32),
                              transformer_blocks=1)
        tcfg = InpainterTrainConfig(stage1_steps=10, batch_size=2,
                                    weights=LossWeights(gan=0.0), seed=7)
        _, rows_a = train_inpainter([example], cfg, tcfg)
        _, rows_b = train_inpainter([example], cfg, tcfg)
        assert [r["total"] for r in rows_a] == [r["total"] for r in rows_b]

    def test_stage2_with_identical_masks_matches_longer_stage1(self):
        # a perfect mask source makes stage 2 behave like stage 1 resumed
        rng = np.random.default_rng(21)
        img, quad, target = small_interacting_crop(rng)
        example = make_recovery_example(img, quad, target)
        cfg = InpainterConfig(input_size=64, widths=(8, 16, 24, 32),
                              transformer_blocks=1)
        one_stage = InpainterTrainConfig(stage1_steps=10, batch_size=2,
                                         weights=LossWeights(gan=0.0), seed=3)
        _, rows_long = train_inpainter([example], cfg, one_stage)

        two_stage = InpainterTrainConfig(stage1_steps=6, stage2_steps=4,
                                         batch_size=2, lr_stage2=one_stage.lr_stage1,
                                         weights=LossWeights(gan=0.0), seed=3)
        _, rows_split = train_inpainter([example], cfg, two_stage,
                                        stage2_examples=[example])
        assert [r["total"] for r in rows_split] == [r["total"] for r in rows_long]

    def test_stage2_skipped_with_warning(self):
        rng = np.random.default_rng(20)
        img, quad, target = small_interacting_crop(rng)
        example = make_recovery_example(img, quad, target)
        cfg = InpainterConfig(input_size=64, widths=(8, 16, 24, 32),
                              transformer_blocks=1)
        tcfg = InpainterTrainConfig(stage1_steps=3, stage2_steps=5, batch_size=1,
                                    weights=LossWeights(gan=0.0), seed=0)
        with pytest.warns(UserWarning, match="stage-2"):
            _, rows = train_inpainter([example], cfg, tcfg)
        assert len(rows) == 3
