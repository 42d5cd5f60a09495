import numpy as np

from amodalhands.presets import synth_config
from amodalhands.synth import generate_samples
from amodalhands.viz import draw_skeleton, mask_overlay, render_panel


SAMPLE = generate_samples(1, 0.0, seed=21, cfg=synth_config(fast=True))[0]


def test_mask_overlay_changes_masked_pixels_only():
    out = mask_overlay(SAMPLE.image, SAMPLE.masks)
    changed = np.any(out != SAMPLE.image, axis=-1)
    quad_union = np.zeros_like(SAMPLE.masks.right_amodal)
    for m in SAMPLE.masks.all():
        quad_union = np.maximum(quad_union, m)
    assert not np.any(changed & (quad_union == 0))
    assert out.min() >= 0 and out.max() <= 1


def test_draw_skeleton_produces_valid_image():
    out = draw_skeleton(SAMPLE.image, SAMPLE.joints_right)
    assert out.shape == SAMPLE.image.shape
    assert out.min() >= 0 and out.max() <= 1


def test_render_panel_grid_shape():
    tiles = [SAMPLE.image.copy() for _ in range(2)]
    panel = render_panel(SAMPLE.image, SAMPLE.masks, tiles,
                         [SAMPLE.joints_right, SAMPLE.joints_left])
    assert panel.ndim == 3 and panel.shape[2] == 3
    # 5 tiles in 3 columns -> 2 rows
    assert panel.shape[0] > SAMPLE.image.shape[0]
    assert panel.shape[1] >= 3 * SAMPLE.image.shape[1]
