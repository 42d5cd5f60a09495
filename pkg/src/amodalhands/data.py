"""Adapters from generated samples to per-module training examples."""

from __future__ import annotations

import numpy as np

from .errors import HandAbsentError
from .grids import CropTransform, HandSide, JointSet, MaskQuad, resample
from .inpainter import RecoveryExample, make_recovery_example
from .maskops import crop_for_hand
from .posenet import PoseExample, PoseModelConfig, make_pose_example
from .synth import SynthSample

SIDES = (HandSide.RIGHT, HandSide.LEFT)


def frame_transform(height: int, width: int, out_size: int) -> CropTransform:
    """Whole-frame square resize (frames are square by construction)."""
    return CropTransform(center=(width / 2.0, height / 2.0),
                         side_len=float(max(height, width)), out_size=out_size)


def seg_examples(samples: list[SynthSample], input_size: int
                 ) -> list[tuple[np.ndarray, MaskQuad]]:
    """(full frame, ground-truth quad) pairs at the segmenter input size."""
    out = []
    for s in samples:
        h, w = s.image.shape[:2]
        if h == input_size and w == input_size:
            out.append((s.image, s.masks))
            continue
        t = frame_transform(h, w, input_size)
        img = resample(s.image, t, mode="bilinear")
        quad = MaskQuad(*(resample(m, t, mode="nearest") for m in s.masks.all()))
        out.append((img, quad))
    return out


def crop_joints(joints: JointSet, t: CropTransform, crop_size: int) -> JointSet:
    """Map a joint set into a (possibly flipped) crop frame."""
    j2 = t.points_to_crop(joints.joints_2d)
    j3 = joints.joints_3d.copy()
    if t.flipped:
        j3[:, 0] = -j3[:, 0]
    valid = (joints.valid
             & (j2[:, 0] >= 0) & (j2[:, 0] < crop_size)
             & (j2[:, 1] >= 0) & (j2[:, 1] < crop_size))
    return JointSet(joints_2d=j2, joints_3d=j3, valid=valid,
                    root_index=joints.root_index)


def clean_plate_quad(sample: SynthSample, side: HandSide) -> MaskQuad:
    """Quad for a clean single-hand plate: the hand is fully visible."""
    amodal = sample.masks.amodal(side)
    zero = np.zeros_like(amodal)
    if side is HandSide.RIGHT:
        return MaskQuad(amodal, amodal.copy(), zero, zero.copy())
    return MaskQuad(zero, zero.copy(), amodal, amodal.copy())


def pose_examples(samples: list[SynthSample], model_cfg: PoseModelConfig,
                  expansion: float = 1.3) -> list[PoseExample]:
    """Pose-training crops taken from the clean single-hand target plates."""
    out = []
    for s in samples:
        for side in SIDES:
            target = s.target(side)
            if target is None:
                continue
            quad = clean_plate_quad(s, side)
            try:
                crop, _, t = crop_for_hand(target, quad, side, expansion,
                                           model_cfg.input_size)
            except HandAbsentError:
                continue
            joints = crop_joints(s.joints(side).root_relative(), t,
                                 model_cfg.input_size)
            if not joints.valid.any():
                continue
            out.append(make_pose_example(crop, joints, model_cfg))
    return out


def recovery_examples(samples: list[SynthSample], crop_size: int,
                      expansion: float = 1.3,
                      segmenter=None, threshold: float = 0.5
                      ) -> list[RecoveryExample]:
    """Inpainter-training crops; masks are ground truth unless a segmenter
    is given (fine-tune stage)."""
    from .segmenter import segment_frame

    out = []
    for s in samples:
        if segmenter is not None:
            quad = segment_frame(segmenter, s.image, threshold)
        else:
            quad = s.masks
        for side in SIDES:
            target = s.target(side)
            if target is None:
                continue
            try:
                crop, crop_quad, t = crop_for_hand(s.image, quad, side,
                                                   expansion, crop_size)
            except HandAbsentError:
                continue
            target_crop = resample(target, t, mode="bilinear")
            out.append(make_recovery_example(crop, crop_quad, target_crop))
    return out
