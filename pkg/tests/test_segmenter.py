import math

import numpy as np
import pytest
import torch

from amodalhands.errors import GridError
from amodalhands.grids import MaskQuad
from amodalhands.segmenter import (
    SegModelConfig,
    SegTrainConfig,
    bce_loss,
    build_segmenter,
    enforce_containment,
    quad_bce_loss,
    seg_forward,
    train_segmenter,
)

from gradcheck import directional_grad_check

TINY = SegModelConfig(input_size=32, encoder_widths=(8, 16, 24, 32),
                      encoder_depths=(1, 1, 1, 1), head_channels=16)


def bce_oracle(pred, target, eps=1e-7):
    total = 0.0
    for p, y in zip(pred.ravel(), target.ravel()):
        p = min(max(p, eps), 1 - eps)
        total += -(y * math.log(p) + (1 - y) * math.log(1 - p))
    return total / pred.size


class TestBceLoss:
    def test_perfect_prediction(self):
        y = torch.tensor([[0.0, 1.0], [1.0, 0.0]])
        assert bce_loss(y.clone(), y).item() <= 1e-6 + 2e-7 * 16

    def test_uniform_half_gives_ln2(self):
        pred = torch.full((4, 4), 0.5)
        target = (torch.rand(4, 4) < 0.5).float()
        assert abs(bce_loss(pred, target).item() - math.log(2)) < 1e-6

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(0)
        pred = rng.uniform(0.01, 0.99, (4, 4))
        target = (rng.random((4, 4)) < 0.5).astype(np.float64)
        got = bce_loss(torch.from_numpy(pred), torch.from_numpy(target)).item()
        assert abs(got - bce_oracle(pred, target)) < 1e-9

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        target = torch.from_numpy((rng.random((4, 4)) < 0.5).astype(np.float64))
        pred = torch.from_numpy(rng.uniform(0.2, 0.8, (4, 4)))
        err = directional_grad_check(lambda p: bce_loss(p, target), pred, eps=1e-4)
        assert err < 1e-4

    def test_rejects_non_binary_target(self):
        with pytest.raises(GridError):
            bce_loss(torch.full((4, 4), 0.5), torch.full((4, 4), 0.3))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(GridError):
            bce_loss(torch.zeros(4, 4), torch.zeros(4, 5))

    def test_nonnegative(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            pred = torch.from_numpy(rng.uniform(0, 1, (3, 3)))
            target = torch.from_numpy((rng.random((3, 3)) < 0.5).astype(np.float64))
            assert bce_loss(pred, target).item() >= 0


class TestQuadLoss:
    def test_perfect_heads_near_zero(self):
        target = (torch.rand(1, 4, 8, 8) < 0.5).float()
        total, _ = quad_bce_loss(target.clone(), target)
        assert total.item() < 1e-5

    def test_uniform_half_gives_4_ln2(self):
        pred = torch.full((1, 4, 8, 8), 0.5)
        target = (torch.rand(1, 4, 8, 8) < 0.5).float()
        total, per_head = quad_bce_loss(pred, target)
        assert abs(total.item() - 4 * math.log(2)) < 1e-6
        assert len(per_head) == 4

    def test_matches_compositional_oracle(self):
        rng = np.random.default_rng(3)
        pred = rng.uniform(0.01, 0.99, (1, 4, 4, 4))
        target = (rng.random((1, 4, 4, 4)) < 0.5).astype(np.float64)
        total, _ = quad_bce_loss(torch.from_numpy(pred), torch.from_numpy(target))
        want = sum(bce_oracle(pred[0, i], target[0, i]) for i in range(4))
        assert abs(total.item() - want) < 1e-9


class TestContainment:
    def test_visible_clipped_to_amodal(self):
        ra = np.zeros((8, 8), dtype=np.float32)
        ra[2:6, 2:6] = 0.9
        rv = np.full((8, 8), 0.9, dtype=np.float32)  # visible leaks everywhere
        la = np.zeros((8, 8), dtype=np.float32)
        lv = np.zeros((8, 8), dtype=np.float32)
        soft = MaskQuad(ra, rv, la, lv)
        fixed = enforce_containment(soft)
        fixed.validate()
        assert np.array_equal(fixed.right_visible, fixed.right_amodal)

    def test_contested_pixels_follow_soft_probability(self):
        shape = (8, 8)
        ra = np.full(shape, 0.9, dtype=np.float32)
        la = np.full(shape, 0.9, dtype=np.float32)
        rv = np.full(shape, 0.7, dtype=np.float32)
        lv = np.full(shape, 0.8, dtype=np.float32)
        fixed = enforce_containment(MaskQuad(ra, rv, la, lv))
        fixed.validate()
        assert np.all(fixed.left_visible == 1)  # left was more confident
        assert np.all(fixed.right_visible == 0)

    def test_tie_goes_to_right(self):
        shape = (8, 8)
        quad = MaskQuad(*(np.full(shape, 0.8, dtype=np.float32) for _ in range(4)))
        fixed = enforce_containment(quad)
        assert np.all(fixed.right_visible == 1)
        assert np.all(fixed.left_visible == 0)

    def test_random_predictions_always_valid(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            quad = MaskQuad(*(rng.random((8, 8)).astype(np.float32) for _ in range(4)))
            enforce_containment(quad).validate()


class TestSegForward:
    def test_shape_and_range_contract(self):
        model = build_segmenter(TINY, seed=0)
        img = np.random.default_rng(5).random((32, 32, 3)).astype(np.float32)
        pred = seg_forward(model, img)
        for m in pred.soft.all():
            assert m.shape == (32, 32)
            assert np.all((m > 0) & (m < 1))
        pred.binary.validate()

    def test_batch_determinism(self):
        model = build_segmenter(TINY, seed=0)
        model.eval()
        img = torch.rand(1, 3, 32, 32)
        with torch.no_grad():
            out = model(torch.cat([img, img]))
        assert torch.equal(out[0], out[1])

    def test_wrong_input_size_rejected(self):
        model = build_segmenter(TINY, seed=0)
        with pytest.raises(GridError):
            seg_forward(model, np.zeros((64, 64, 3), dtype=np.float32))


def one_sample_dataset(rng, size=32):
    img = rng.random((size, size, 3)).astype(np.float32)
    ra = np.zeros((size, size), dtype=np.float32)
    ra[6:20, 4:18] = 1
    la = np.zeros((size, size), dtype=np.float32)
    la[12:28, 14:30] = 1
    lv = la.copy()
    rv = ra * (1 - la)
    return [(img, MaskQuad(ra, rv, la, lv))]


class TestTrainSegmenter:
    def test_single_sample_overfit(self):
        examples = one_sample_dataset(np.random.default_rng(6))
        _, rows = train_segmenter(examples, TINY,
                                  SegTrainConfig(steps=300, batch_size=2, seed=0))
        assert rows[-1]["total"] < rows[0]["total"] / 10

    def test_zero_lr_freezes_weights(self):
        examples = one_sample_dataset(np.random.default_rng(7))
        model_before = build_segmenter(TINY, seed=3)
        init = {k: v.clone() for k, v in model_before.state_dict().items()}
        model, _ = train_segmenter(examples, TINY,
                                   SegTrainConfig(steps=5, batch_size=1, lr=0.0, seed=3))
        after = model.state_dict()
        assert all(torch.equal(init[k], after[k]) for k in init)

    def test_resume_matches_uninterrupted(self, tmp_path):
        examples = one_sample_dataset(np.random.default_rng(8))
        cfg_full = SegTrainConfig(steps=12, batch_size=2, seed=1)
        _, rows_full = train_segmenter(examples, TINY, cfg_full)

        cfg_half = SegTrainConfig(steps=6, batch_size=2, seed=1)
        model_half, rows_half = train_segmenter(examples, TINY, cfg_half,
                                                out_dir=tmp_path)
        from amodalhands.storage import load_checkpoint

        payload = load_checkpoint(tmp_path / "segmenter.pt")
        _, rows_resumed = train_segmenter(examples, TINY, cfg_full, resume=payload)
        combined = [r["total"] for r in rows_half] + [r["total"] for r in rows_resumed]
        assert combined == [r["total"] for r in rows_full]

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train_segmenter([], TINY, SegTrainConfig(steps=3))
