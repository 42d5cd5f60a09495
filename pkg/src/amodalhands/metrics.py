"""Pose metrics and evaluation-subset tagging.

MPJPE translates both joint sets so their roots coincide before averaging
Euclidean distances (per hand); the 2D end-point error uses raw pixel
coordinates with no alignment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grids import JointSet

INTER_VALID_THRESHOLD = 30  # both-hands total valid keypoints must exceed this


def mpjpe(pred: JointSet, gt: JointSet) -> float | None:
    """Root-aligned mean per-joint 3D error (mm); None without any
    mutually valid joint."""
    mask = pred.valid & gt.valid
    if not mask.any():
        return None
    p = pred.joints_3d - pred.joints_3d[pred.root_index]
    g = gt.joints_3d - gt.joints_3d[gt.root_index]
    return float(np.linalg.norm(p[mask] - g[mask], axis=1).mean())


def epe2d(pred: JointSet, gt: JointSet) -> float | None:
    """Mean 2D end-point error (pixels) over mutually valid joints."""
    mask = pred.valid & gt.valid
    if not mask.any():
        return None
    return float(np.linalg.norm(pred.joints_2d[mask] - gt.joints_2d[mask],
                                axis=1).mean())


@dataclass
class EvalRecord:
    """Per-sample evaluation entry; hands map side name -> JointSet or None."""

    sample_id: str
    pred: dict[str, JointSet | None]
    gt: dict[str, JointSet | None]
    tags: set[str] = field(default_factory=set)

    def present_sides(self) -> list[str]:
        return [s for s in ("right", "left") if self.gt.get(s) is not None]

    def hand_means(self, metric) -> float | None:
        """Per-hand metric averaged over hands present; None if no hand or
        no prediction yields a defined value."""
        values = []
        for side in self.present_sides():
            pred = self.pred.get(side)
            gt = self.gt[side]
            if pred is None:
                continue
            v = metric(pred, gt)
            if v is not None:
                values.append(v)
        if not values:
            return None
        return float(np.mean(values))


def split_subsets(records: list[EvalRecord]) -> list[EvalRecord]:
    """Tag records: SH (one hand), IH (two hands), Inter (IH with more
    than 30 valid ground-truth keypoints over both hands).  Tags depend on
    ground truth only."""
    for rec in records:
        sides = rec.present_sides()
        rec.tags.clear()
        if len(sides) == 1:
            rec.tags.add("SH")
        elif len(sides) == 2:
            rec.tags.add("IH")
            total_valid = sum(int(rec.gt[s].valid.sum()) for s in sides)
            if total_valid > INTER_VALID_THRESHOLD:
                rec.tags.add("Inter")
    return records


def aggregate(records: list[EvalRecord], metric, subset: str | None = None
              ) -> float | None:
    """Per-sample mean then dataset mean; records without a defined value
    are excluded."""
    values = []
    for rec in records:
        if subset is not None and subset not in rec.tags:
            continue
        v = rec.hand_means(metric)
        if v is not None:
            values.append(v)
    if not values:
        return None
    return float(np.mean(values))
