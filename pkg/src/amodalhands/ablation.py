"""Evaluation runner: per-variant metrics and the ablation report.

Variants share one set of trained weights; they differ in which recovered
region is composited into the crop before pose estimation (none at all
for the baseline).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import EvalRecord, aggregate, epe2d, mpjpe, split_subsets
from .nnutil import write_metrics_csv
from .pipeline import VARIANTS, Pipeline
from .synth import SynthSample


def evaluate_pipeline(pipeline: Pipeline, samples: list[SynthSample],
                      mask_source: str = "model") -> list[EvalRecord]:
    """Run inference over generated samples and collect eval records."""
    records = []
    for s in samples:
        masks = s.masks if mask_source == "gt" else None
        result = pipeline.infer(s.image, masks=masks)
        pred = {side: (result.hands[side].joints if side in result.hands else None)
                for side in ("right", "left")}
        gt = {"right": s.joints_right.root_relative(),
              "left": s.joints_left.root_relative()}
        records.append(EvalRecord(sample_id=s.meta.get("id", "?"), pred=pred, gt=gt))
    return split_subsets(records)


def evaluate_variants(pipeline: Pipeline, samples: list[SynthSample],
                      variants: tuple[str, ...] = VARIANTS,
                      mask_source: str = "model") -> dict[str, dict[str, float | None]]:
    """Metric table per variant over one evaluation set.  Segmentation,
    crops and the inpainter forward are shared across variants."""
    variants = tuple(dict.fromkeys(variants))  # drop duplicate listings
    per_variant_records: dict[str, list[EvalRecord]] = {v: [] for v in variants}
    for s in samples:
        masks = s.masks if mask_source == "gt" else None
        results = pipeline.infer_variants(s.image, variants, masks=masks)
        gt = {"right": s.joints_right.root_relative(),
              "left": s.joints_left.root_relative()}
        for v in variants:
            pred = {side: (results[v].hands[side].joints
                           if side in results[v].hands else None)
                    for side in ("right", "left")}
            per_variant_records[v].append(
                EvalRecord(sample_id=s.meta.get("id", "?"), pred=pred, gt=gt))
    out = {}
    for v in variants:
        records = split_subsets(per_variant_records[v])
        out[v] = {"mpjpe_mm": aggregate(records, mpjpe),
                  "epe_px": aggregate(records, epe2d),
                  "n": len(records)}
    return out


VARIANT_LABELS = {
    "baseline": "pose estimator only",
    "no_removal": "w/o removal",
    "no_deocclusion": "w/o de-occlusion",
    "full": "full recovery",
}


@dataclass
class AblationReport:
    rows: list[dict]

    def to_markdown(self) -> str:
        lines = ["| variant | subset | MPJPE_mm | EPE_px | dAbs | dRel |",
                 "|---|---|---|---|---|---|"]
        for r in self.rows:
            mp = "n/a" if r["MPJPE_mm"] is None else f"{r['MPJPE_mm']:.3f}"
            ep = "n/a" if r["EPE_px"] is None else f"{r['EPE_px']:.3f}"
            da = "-" if r["dAbs"] is None else f"{r['dAbs']:+.3f}"
            dr = "-" if r["dRel"] is None else f"{r['dRel'] * 100:+.1f}%"
            lines.append(f"| {r['variant']} | {r['subset']} | {mp} | {ep} | {da} | {dr} |")
        return "\n".join(lines)

    def save(self, out_dir) -> None:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out / "ablation.csv", self.rows)
        (out / "ablation.md").write_text(self.to_markdown() + "\n")

    def variant_mpjpe(self, variant: str) -> float | None:
        for r in self.rows:
            if r["variant"] == variant:
                return r["MPJPE_mm"]
        return None


def run_ablation(runs: list[tuple[Pipeline, list[SynthSample]]],
                 variants: tuple[str, ...] = VARIANTS,
                 mask_source: str = "model",
                 subset: str = "IH") -> AblationReport:
    """Average each variant's metrics over (pipeline, eval set) runs,
    typically one run per training seed, and report deltas against the
    full-recovery variant."""
    if not runs:
        raise ValueError("run_ablation needs at least one (pipeline, samples) run")

    per_variant: dict[str, dict[str, list[float]]] = {
        v: {"mpjpe": [], "epe": []} for v in variants}
    for pipeline, samples in runs:
        table = evaluate_variants(pipeline, samples, variants, mask_source)
        for v in variants:
            if table[v]["mpjpe_mm"] is not None:
                per_variant[v]["mpjpe"].append(table[v]["mpjpe_mm"])
            if table[v]["epe_px"] is not None:
                per_variant[v]["epe"].append(table[v]["epe_px"])

    def mean_or_none(values):
        return float(np.mean(values)) if values else None

    means = {v: {"mpjpe": mean_or_none(per_variant[v]["mpjpe"]),
                 "epe": mean_or_none(per_variant[v]["epe"])} for v in variants}
    reference = means.get("full", {}).get("mpjpe")

    rows = []
    for v in variants:
        mp = means[v]["mpjpe"]
        d_abs = (mp - reference) if (mp is not None and reference is not None) else None
        d_rel = (d_abs / reference) if (d_abs is not None and reference) else None
        rows.append({"variant": v, "subset": subset,
                     "MPJPE_mm": mp, "EPE_px": means[v]["epe"],
                     "dAbs": d_abs, "dRel": d_rel})
    return AblationReport(rows=rows)
