"""Desk-scale end-to-end training: all three models from one sample set."""

from __future__ import annotations

from pathlib import Path

from .data import pose_examples, recovery_examples, seg_examples
from .inpainter import InpainterTrainConfig, LossWeights, train_inpainter
from .pipeline import Pipeline
from .posenet import PoseTrainConfig, train_posenet
from .presets import inpaint_config, pose_config, seg_config
from .segmenter import SegTrainConfig, train_segmenter
from .synth import SynthSample


def train_desk_pipeline(
    samples: list[SynthSample],
    seed: int = 0,
    fast: bool = True,
    seg_steps: int = 400,
    inpaint_steps: int = 400,
    stage2_steps: int | None = None,
    pose_steps: int = 600,
    batch_size: int = 8,
    use_gan: bool = True,
    crop_expansion: float = 1.3,
    threshold: float = 0.5,
    out_dir=None,
) -> Pipeline:
    """Train segmenter, inpainter (two-stage) and pose net, then assemble
    the inference pipeline.  ``stage2_steps`` defaults to half the stage-1
    budget; the stage-2 masks come from the freshly trained segmenter."""
    seg_cfg = seg_config(fast)
    inp_cfg = inpaint_config(fast)
    pose_cfg = pose_config(fast)

    out = Path(out_dir) if out_dir is not None else None

    segmenter, _ = train_segmenter(
        seg_examples(samples, seg_cfg.input_size), seg_cfg,
        SegTrainConfig(steps=seg_steps, batch_size=batch_size, seed=seed),
        out_dir=(out / "seg") if out else None)

    if stage2_steps is None:
        stage2_steps = inpaint_steps // 2
    # recovery crops are 16 channels each; cap the example count for memory
    stage1 = recovery_examples(samples[:1000], inp_cfg.input_size,
                               expansion=crop_expansion)
    stage2 = None
    if stage2_steps > 0:
        stage2 = recovery_examples(samples[:500], inp_cfg.input_size,
                                   expansion=crop_expansion,
                                   segmenter=segmenter, threshold=threshold)
    weights = LossWeights() if use_gan else LossWeights(gan=0.0)
    inpainter, _ = train_inpainter(
        stage1, inp_cfg,
        InpainterTrainConfig(stage1_steps=inpaint_steps, stage2_steps=stage2_steps,
                             batch_size=batch_size, weights=weights, seed=seed,
                             crop_expansion=crop_expansion),
        stage2_examples=stage2,
        out_dir=(out / "inpaint") if out else None)

    posenet, _ = train_posenet(
        pose_examples(samples, pose_cfg, expansion=crop_expansion), pose_cfg,
        PoseTrainConfig(steps=pose_steps, batch_size=batch_size, seed=seed),
        out_dir=(out / "pose") if out else None)

    return Pipeline(segmenter, inpainter, posenet,
                    crop_expansion=crop_expansion, threshold=threshold)
