"""Model/config presets: full 256px defaults and the fast 64px test mode."""

from __future__ import annotations

from .inpainter import InpainterConfig
from .posenet import PoseModelConfig
from .segmenter import SegModelConfig
from .synth import SynthConfig


def seg_config(fast: bool = False) -> SegModelConfig:
    # the fast segmenter runs at 2x the 64px frame size: mask heads decode
    # at 1/4 resolution, and 16px logit grids cannot resolve fingers
    if fast:
        return SegModelConfig(input_size=128, encoder_widths=(16, 32, 48, 64),
                              encoder_depths=(1, 1, 1, 1), head_channels=32)
    return SegModelConfig()


def inpaint_config(fast: bool = False) -> InpainterConfig:
    if fast:
        return InpainterConfig(input_size=64, widths=(16, 32, 64, 96))
    return InpainterConfig()


def pose_config(fast: bool = False) -> PoseModelConfig:
    if fast:
        return PoseModelConfig(input_size=64, widths=(24, 48, 96))
    return PoseModelConfig()


def synth_config(fast: bool = False, **overrides) -> SynthConfig:
    if fast:
        return SynthConfig(image_size=64, **overrides)
    return SynthConfig(**overrides)
