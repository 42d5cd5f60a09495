"""End-to-end inference: segment, crop, recover, estimate pose.

Each present hand is cropped around its amodal mask, passed through the
de-occlusion/removal inpainter (unless running the baseline variant) and
then through the single-hand pose estimator; left hands ride the same
right-role path via horizontal flipping.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import GridError, HandAbsentError, PipelineStageError
from .grids import CropTransform, HandSide, JointSet, MaskQuad
from .inpainter import (
    RecoveryNet,
    composite_recovery,
    load_inpainter,
    original_from_bundle,
    recover,
    recover_raw,
)
from .maskops import build_recovery_input, crop_for_hand
from .posenet import PoseNet, decode_pose, load_posenet, pose_forward
from .segmenter import SegNet, load_segmenter, segment_frame
from .storage import read_json, write_json

VARIANTS = ("baseline", "no_removal", "no_deocclusion", "full")

# single-thread per-stage milliseconds of the reference three-stage design,
# used only for informational share comparison in timing reports
REFERENCE_STAGE_MS = {"segment": 12.6, "recover": 0.6, "pose": 34.0}


@dataclass
class PipelineConfig:
    seg_checkpoint: str | None = None
    inpaint_checkpoint: str | None = None
    pose_checkpoint: str | None = None
    crop_expansion: float = 1.3
    threshold: float = 0.5
    variant: str = "full"
    mask_source: str = "model"    # "model" | "gt"
    seed: int = 0
    threads: int | None = None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "seg_checkpoint", "inpaint_checkpoint", "pose_checkpoint",
            "crop_expansion", "threshold", "variant", "mask_source",
            "seed", "threads")}

    @staticmethod
    def from_dict(d: dict) -> "PipelineConfig":
        known = {k: d[k] for k in PipelineConfig().to_dict() if k in d}
        return PipelineConfig(**known)

    @staticmethod
    def load(path) -> "PipelineConfig":
        return PipelineConfig.from_dict(read_json(path))

    def save(self, path) -> None:
        write_json(path, self.to_dict())


@dataclass
class HandResult:
    joints: JointSet
    confidence: np.ndarray
    crop: CropTransform
    recovered_crop: np.ndarray | None = None
    input_crop: np.ndarray | None = None


@dataclass
class InferResult:
    hands: dict[str, HandResult] = field(default_factory=dict)
    skipped: dict[str, str] = field(default_factory=dict)
    seg: object = None

    def to_json_dict(self) -> dict:
        out = {"hands": {}, "skipped": dict(self.skipped)}
        for side, hand in self.hands.items():
            out["hands"][side] = {
                "side": side,
                "joints_2d": hand.joints.joints_2d.tolist(),
                "joints_3d": hand.joints.joints_3d.tolist(),
                "valid": hand.joints.valid.astype(int).tolist(),
                "confidence": hand.confidence.tolist(),
            }
        return out


class Pipeline:
    """Holds the three trained models plus crop/threshold settings."""

    def __init__(self, segmenter: SegNet | None, inpainter: RecoveryNet | None,
                 posenet: PoseNet, crop_expansion: float = 1.3,
                 threshold: float = 0.5, variant: str = "full"):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
        self.segmenter = segmenter
        self.inpainter = inpainter
        self.posenet = posenet
        self.crop_expansion = crop_expansion
        self.threshold = threshold
        self.variant = variant
        self.crop_size = posenet.config.input_size

    @classmethod
    def from_config(cls, cfg: PipelineConfig) -> "Pipeline":
        if cfg.threads:
            import torch

            torch.set_num_threads(cfg.threads)
        seg = load_segmenter(cfg.seg_checkpoint) if cfg.seg_checkpoint else None
        inp = load_inpainter(cfg.inpaint_checkpoint) if cfg.inpaint_checkpoint else None
        if not cfg.pose_checkpoint:
            raise ValueError("pipeline config needs a pose checkpoint")
        pose = load_posenet(cfg.pose_checkpoint)
        return cls(seg, inp, pose, crop_expansion=cfg.crop_expansion,
                   threshold=cfg.threshold, variant=cfg.variant)

    # -- stages -------------------------------------------------------

    def segment(self, image: np.ndarray) -> MaskQuad:
        """Predict the mask quad; frames are resampled through the
        segmenter's native resolution when the sizes differ."""
        if self.segmenter is None:
            raise PipelineStageError("segment", "no segmenter loaded and no masks provided")
        try:
            return segment_frame(self.segmenter, image, self.threshold)
        except GridError as e:
            raise PipelineStageError("segment", str(e)) from e

    def composite_region(self, bundle, variant: str | None = None) -> np.ndarray | None:
        variant = variant or self.variant
        if variant == "full":
            return bundle.hole_mask()
        if variant == "no_removal":
            return bundle.occluded_mask
        if variant == "no_deocclusion":
            return bundle.distractor_mask
        return None  # baseline

    def process_hand_variants(self, image: np.ndarray, quad: MaskQuad,
                              side: HandSide,
                              variants: tuple[str, ...]) -> dict[str, HandResult]:
        """One crop and one inpainter forward shared by all variants; the
        variants differ only in the composited region."""
        try:
            crop, crop_quad, t = crop_for_hand(image, quad, side,
                                               self.crop_expansion, self.crop_size)
        except GridError as e:
            raise PipelineStageError("crop", str(e)) from e

        raw_img = None
        bundle = None
        if self.inpainter is not None and any(v != "baseline" for v in variants):
            try:
                bundle = build_recovery_input(crop, crop_quad)
                raw_img = recover_raw(self.inpainter, bundle)
            except GridError as e:
                raise PipelineStageError("recover", str(e)) from e

        results = {}
        for variant in variants:
            if variant == "baseline" or raw_img is None:
                recovered = crop
            else:
                region = self.composite_region(bundle, variant)
                recovered = composite_recovery(raw_img, original_from_bundle(bundle),
                                               region)
            try:
                maps = pose_forward(self.posenet, recovered)
            except GridError as e:
                raise PipelineStageError("pose", str(e)) from e
            joints, confidence = decode_pose(maps, t, self.posenet.config.coord_scale)
            results[variant] = HandResult(joints=joints, confidence=confidence,
                                          crop=t, recovered_crop=recovered,
                                          input_crop=crop)
        return results

    def process_hand(self, image: np.ndarray, quad: MaskQuad,
                     side: HandSide) -> HandResult:
        return self.process_hand_variants(image, quad, side,
                                          (self.variant,))[self.variant]

    def infer(self, image: np.ndarray, masks: MaskQuad | None = None) -> InferResult:
        """Full-frame inference; ``masks`` overrides the segmenter."""
        quad = masks if masks is not None else self.segment(image)
        result = InferResult(seg=quad)
        for side in (HandSide.RIGHT, HandSide.LEFT):
            try:
                result.hands[side.value] = self.process_hand(image, quad, side)
            except HandAbsentError as e:
                result.skipped[side.value] = str(e)
        return result

    def infer_variants(self, image: np.ndarray,
                       variants: tuple[str, ...],
                       masks: MaskQuad | None = None) -> dict[str, InferResult]:
        """All variants in one pass: segmentation, crops and the inpainter
        forward are shared."""
        quad = masks if masks is not None else self.segment(image)
        results = {v: InferResult(seg=quad) for v in variants}
        for side in (HandSide.RIGHT, HandSide.LEFT):
            try:
                per_variant = self.process_hand_variants(image, quad, side, variants)
                for v, hand in per_variant.items():
                    results[v].hands[side.value] = hand
            except HandAbsentError as e:
                for v in variants:
                    results[v].skipped[side.value] = str(e)
        return results


def infer_to_json(pipeline: Pipeline, image: np.ndarray,
                  masks: MaskQuad | None = None) -> str:
    result = pipeline.infer(image, masks=masks)
    return json.dumps(result.to_json_dict(), sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# timing
# ---------------------------------------------------------------------------

def timing_probe(pipeline: Pipeline, images: list[np.ndarray],
                 masks: list[MaskQuad] | None = None, warmup: int = 3) -> dict:
    """Mean wall-clock per stage over a warm run; also reports stage
    shares next to the reference profile (informational, no gating)."""
    if not images:
        raise ValueError("timing probe needs at least one image")

    def run_once(img, quad, record):
        t0 = time.perf_counter()
        q = quad if quad is not None else pipeline.segment(img)
        t1 = time.perf_counter()
        recover_ms = 0.0
        pose_ms = 0.0
        for side in (HandSide.RIGHT, HandSide.LEFT):
            try:
                crop, crop_quad, t = crop_for_hand(img, q, side,
                                                   pipeline.crop_expansion,
                                                   pipeline.crop_size)
            except HandAbsentError:
                continue
            ta = time.perf_counter()
            if pipeline.inpainter is not None and pipeline.variant != "baseline":
                bundle = build_recovery_input(crop, crop_quad)
                recovered = recover(pipeline.inpainter, bundle,
                                    composite_mask=pipeline.composite_region(bundle))
            else:
                recovered = crop
            tb = time.perf_counter()
            maps = pose_forward(pipeline.posenet, recovered)
            decode_pose(maps, t, pipeline.posenet.config.coord_scale)
            tc = time.perf_counter()
            recover_ms += (tb - ta) * 1e3
            pose_ms += (tc - tb) * 1e3
        if record is not None:
            record.append({"segment": (t1 - t0) * 1e3, "recover": recover_ms,
                           "pose": pose_ms})

    quads = masks if masks is not None else [None] * len(images)
    for img, quad in zip(images[:warmup], quads[:warmup]):
        run_once(img, quad, None)
    rows: list[dict] = []
    for img, quad in zip(images, quads):
        run_once(img, quad, rows)

    stages = ("segment", "recover", "pose")
    means = {s: float(np.mean([r[s] for r in rows])) for s in stages}
    totals = np.array([sum(r[s] for s in stages) for r in rows])
    total_mean = float(totals.mean())
    shares = {s: means[s] / total_mean if total_mean > 0 else 0.0 for s in stages}
    ref_total = sum(REFERENCE_STAGE_MS.values())
    ref_shares = {s: REFERENCE_STAGE_MS[s] / ref_total for s in stages}
    cv = float(totals.std() / totals.mean()) if totals.mean() > 0 else 0.0
    return {"stage_ms": means, "total_ms": total_mean, "frames": len(rows),
            "stage_share": shares, "reference_share": ref_shares,
            "total_cv": cv}


def format_timing_table(report: dict) -> str:
    lines = ["| stage | mean ms | share | reference share |",
             "|---|---|---|---|"]
    for stage in ("segment", "recover", "pose"):
        lines.append(f"| {stage} | {report['stage_ms'][stage]:.2f} "
                     f"| {report['stage_share'][stage]:.3f} "
                     f"| {report['reference_share'][stage]:.3f} |")
    lines.append(f"| total | {report['total_ms']:.2f} | 1.000 | 1.000 |")
    return "\n".join(lines)
