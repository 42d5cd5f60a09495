"""Interacting-hand pose estimation via de-occlusion and distractor removal.

The pipeline segments amodal/visible masks for both hands, recovers each
hand's occluded appearance while inpainting away the other (distracting)
hand, and runs a single-hand 2.5D pose estimator on the result.  A
procedural synthetic-data generator and an evaluation/ablation harness
round out the package.
"""

from .grids import (
    CropTransform,
    HandSide,
    JointSet,
    MaskQuad,
    binarize,
    hflip,
    identity_transform,
    resample,
)
from .maskops import (
    RecoveryInput,
    background_visible,
    build_recovery_input,
    crop_for_hand,
    distractor_region,
    erase,
    occluded_region,
)
from .metrics import EvalRecord, aggregate, epe2d, mpjpe, split_subsets
from .pipeline import Pipeline, PipelineConfig, timing_probe
from .synth import SynthConfig, SynthSample, generate_dataset, generate_samples

__all__ = [
    "CropTransform",
    "EvalRecord",
    "HandSide",
    "JointSet",
    "MaskQuad",
    "Pipeline",
    "PipelineConfig",
    "RecoveryInput",
    "SynthConfig",
    "SynthSample",
    "aggregate",
    "background_visible",
    "binarize",
    "build_recovery_input",
    "crop_for_hand",
    "distractor_region",
    "epe2d",
    "erase",
    "generate_dataset",
    "generate_samples",
    "hflip",
    "identity_transform",
    "mpjpe",
    "occluded_region",
    "resample",
    "split_subsets",
    "timing_probe",
]
