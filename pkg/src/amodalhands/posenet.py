"""Single-hand 2.5D pose estimation.

Predicts per-joint 2D heatmaps, per-joint 3D location maps and per-bone
unit-direction (delta) maps at 1/8 input resolution; decoding reads the
location map at each heatmap argmax.  3D coordinates are root-relative
and normalized by a per-dataset scale constant.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import GridError
from .grids import NUM_JOINTS, CropTransform, JointSet
from .nnutil import (
    batch_indices,
    group_norm,
    image_to_tensor,
    seed_torch,
    write_metrics_csv,
)
from .skeleton import BONES, ROOT_INDEX

NUM_BONES = len(BONES)
MAP_STRIDE = 8


@dataclass(frozen=True)
class PoseModelConfig:
    input_size: int = 256
    widths: tuple[int, int, int] = (32, 64, 128)
    sigma: float = 2.0          # map pixels
    coord_scale: float = 100.0  # mm per normalized 3D unit

    def __post_init__(self):
        if self.input_size % MAP_STRIDE != 0:
            raise ValueError(f"input_size must be divisible by {MAP_STRIDE}")

    @property
    def map_size(self) -> int:
        return self.input_size // MAP_STRIDE

    def to_dict(self) -> dict:
        return {"input_size": self.input_size, "widths": list(self.widths),
                "sigma": self.sigma, "coord_scale": self.coord_scale}

    @staticmethod
    def from_dict(d: dict) -> "PoseModelConfig":
        return PoseModelConfig(input_size=d["input_size"], widths=tuple(d["widths"]),
                               sigma=d["sigma"], coord_scale=d["coord_scale"])


@dataclass
class PoseMaps:
    """Stacked prediction/target maps; numpy on the API surface."""

    heat: np.ndarray    # (21, h, w) in [0, 1]
    loc: np.ndarray     # (21, 3, h, w)
    delta: np.ndarray   # (20, 3, h, w)


@dataclass
class PoseTargets:
    maps: PoseMaps
    disks: np.ndarray        # (21, h, w) supervision disks
    valid: np.ndarray        # (21,) bool
    bone_valid: np.ndarray   # (20,) bool


def map_coords_from_pixels(xy: np.ndarray, stride: float) -> np.ndarray:
    """Continuous map coordinates of input-pixel points (cell centers)."""
    return (np.asarray(xy, dtype=np.float64) + 0.5) / stride - 0.5


def pixels_from_map_coords(mxy: np.ndarray, stride: float) -> np.ndarray:
    return (np.asarray(mxy, dtype=np.float64) + 0.5) * stride - 0.5


def render_target_maps(joints: JointSet, input_size: int, map_size: int,
                       sigma: float, coord_scale: float) -> PoseTargets:
    """Build training targets from crop-frame joints.

    Heatmaps are Gaussians with peak 1 at the map pixel nearest each
    joint; location maps broadcast the joint's normalized root-relative
    3D coordinate inside its sigma-disk; delta maps broadcast the parent-
    to-child unit direction inside the child's disk.  Joints outside the
    crop frame are marked invalid.
    """
    stride = input_size / map_size
    heat = np.zeros((NUM_JOINTS, map_size, map_size), dtype=np.float32)
    loc = np.zeros((NUM_JOINTS, 3, map_size, map_size), dtype=np.float32)
    delta = np.zeros((NUM_BONES, 3, map_size, map_size), dtype=np.float32)
    disks = np.zeros((NUM_JOINTS, map_size, map_size), dtype=np.float32)
    valid = joints.valid.copy()

    centers = np.rint(map_coords_from_pixels(joints.joints_2d, stride)).astype(np.int64)
    in_frame = ((joints.joints_2d[:, 0] >= 0) & (joints.joints_2d[:, 0] < input_size)
                & (joints.joints_2d[:, 1] >= 0) & (joints.joints_2d[:, 1] < input_size)
                & (centers[:, 0] >= 0) & (centers[:, 0] < map_size)
                & (centers[:, 1] >= 0) & (centers[:, 1] < map_size))
    valid = valid & in_frame

    yy, xx = np.meshgrid(np.arange(map_size), np.arange(map_size), indexing="ij")
    rel = joints.joints_3d / coord_scale
    for j in range(NUM_JOINTS):
        if not valid[j]:
            continue
        mx, my = centers[j]
        d2 = (xx - mx) ** 2 + (yy - my) ** 2
        heat[j] = np.exp(-d2 / (2.0 * sigma * sigma))
        disks[j] = (d2 <= sigma * sigma).astype(np.float32)
        loc[j] = rel[j][:, None, None] * disks[j]

    bone_valid = np.zeros(NUM_BONES, dtype=bool)
    for b, (parent, child) in enumerate(BONES):
        if not (valid[parent] and valid[child]):
            continue
        v = joints.joints_3d[child] - joints.joints_3d[parent]
        norm = np.linalg.norm(v)
        if norm < 1e-9:
            continue
        bone_valid[b] = True
        delta[b] = (v / norm)[:, None, None] * disks[child]

    return PoseTargets(maps=PoseMaps(heat, loc, delta), disks=disks,
                       valid=valid, bone_valid=bone_valid)


def decode_pose(maps: PoseMaps, crop_t: CropTransform,
                coord_scale: float) -> tuple[JointSet, np.ndarray]:
    """Decode joints from predicted maps, mapped back to the source frame.

    The 2D joint is the heatmap argmax (ties break to the lowest linear
    index); the 3D joint is the location map at the argmax, re-aligned so
    the root sits at the origin.  Flipped crops mirror x back.  Joints
    whose heatmap is identically zero come back invalid.
    """
    n_joints, h, w = maps.heat.shape
    stride = crop_t.out_size / w
    peaks = np.empty(n_joints)
    coords = np.empty((n_joints, 2), dtype=np.int64)
    for j in range(n_joints):
        flat = int(np.argmax(maps.heat[j]))
        coords[j] = (flat % w, flat // w)
        peaks[j] = maps.heat[j, coords[j, 1], coords[j, 0]]
    valid = peaks > 0

    crop_xy = pixels_from_map_coords(coords.astype(np.float64), stride)
    source_xy = crop_t.points_to_source(crop_xy)

    rel = np.stack([maps.loc[j, :, coords[j, 1], coords[j, 0]]
                    for j in range(n_joints)]) * coord_scale
    rel = rel - rel[ROOT_INDEX]
    if crop_t.flipped:
        rel[:, 0] = -rel[:, 0]

    return JointSet(joints_2d=source_xy, joints_3d=rel, valid=valid,
                    root_index=ROOT_INDEX), peaks


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

class PoseConvBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm = group_norm(channels)

    def forward(self, x):
        return F.relu(self.norm(self.conv(x)) + x)


class PoseNet(nn.Module):
    """Conv encoder to 1/8 resolution, one head per map family."""

    def __init__(self, config: PoseModelConfig):
        super().__init__()
        self.config = config
        w0, w1, w2 = config.widths
        self.encoder = nn.Sequential(
            nn.Conv2d(3, w0, 3, stride=2, padding=1), group_norm(w0), nn.ReLU(),
            nn.Conv2d(w0, w1, 3, stride=2, padding=1), group_norm(w1), nn.ReLU(),
            nn.Conv2d(w1, w2, 3, stride=2, padding=1), group_norm(w2), nn.ReLU(),
            PoseConvBlock(w2), PoseConvBlock(w2),
        )
        self.head = nn.Conv2d(w2, NUM_JOINTS * 4 + NUM_BONES * 3, 1)

    def forward(self, x: torch.Tensor) -> dict[str, torch.Tensor]:
        if x.shape[-1] != self.config.input_size or x.shape[-2] != self.config.input_size:
            raise GridError(
                f"pose net expects {self.config.input_size}px input, got {tuple(x.shape[-2:])}")
        out = self.head(self.encoder(x))
        b, _, h, w = out.shape
        heat = torch.sigmoid(out[:, :NUM_JOINTS])
        loc = out[:, NUM_JOINTS:NUM_JOINTS * 4].reshape(b, NUM_JOINTS, 3, h, w)
        delta = out[:, NUM_JOINTS * 4:].reshape(b, NUM_BONES, 3, h, w)
        return {"heat": heat, "loc": loc, "delta": delta}


def build_posenet(config: PoseModelConfig, seed: int = 0) -> PoseNet:
    seed_torch(seed)
    return PoseNet(config)


def pose_forward(model: PoseNet, crop: np.ndarray) -> PoseMaps:
    """Inference on one (S, S, 3) crop."""
    model.eval()
    with torch.no_grad():
        out = model(image_to_tensor(crop)[None])
    return PoseMaps(heat=out["heat"][0].numpy(),
                    loc=out["loc"][0].numpy(),
                    delta=out["delta"][0].numpy())


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def pose_loss(pred: dict[str, torch.Tensor], target: dict[str, torch.Tensor],
              disks: torch.Tensor, valid: torch.Tensor, bone_valid: torch.Tensor,
              model: nn.Module | None = None, reg_weight: float = 1e-5) -> dict[str, torch.Tensor]:
    """Heatmap MSE + disk-restricted location/delta MSE + l2 weight term.

    ``valid``/``bone_valid`` are (B, 21)/(B, 20) masks; invalid joints do
    not contribute.  Returns the individual terms plus "total".
    """
    if not bool(valid.any()):
        warnings.warn("pose_loss: all joints invalid, returning zero loss")
        zero = pred["heat"].sum() * 0.0
        return {"heat": zero, "loc": zero, "delta": zero, "reg": zero, "total": zero}

    v = valid.to(pred["heat"].dtype)[..., None, None]                      # (B,21,1,1)
    heat_count = v.sum() * pred["heat"].shape[-1] * pred["heat"].shape[-2]
    l_heat = (((pred["heat"] - target["heat"]) ** 2) * v).sum() / heat_count

    disk_v = disks * v                                                     # (B,21,h,w)
    loc_count = disk_v.sum() * 3
    if float(loc_count) > 0:
        l_loc = (((pred["loc"] - target["loc"]) ** 2) * disk_v[:, :, None]).sum() / loc_count
    else:
        l_loc = pred["loc"].sum() * 0.0

    bv = bone_valid.to(pred["delta"].dtype)[..., None, None]               # (B,20,1,1)
    child_disks = disks[:, [c for _, c in BONES]] * bv                     # (B,20,h,w)
    delta_count = child_disks.sum() * 3
    if float(delta_count) > 0:
        l_delta = (((pred["delta"] - target["delta"]) ** 2)
                   * child_disks[:, :, None]).sum() / delta_count
    else:
        l_delta = pred["delta"].sum() * 0.0

    if model is not None and reg_weight > 0:
        l_reg = reg_weight * sum((p ** 2).sum() for p in model.parameters())
    else:
        l_reg = pred["heat"].sum() * 0.0

    total = l_heat + l_loc + l_delta + l_reg
    return {"heat": l_heat, "loc": l_loc, "delta": l_delta, "reg": l_reg, "total": total}


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class PoseExample:
    image: torch.Tensor        # (3, S, S)
    heat: torch.Tensor         # (21, h, w)
    loc: torch.Tensor          # (21, 3, h, w)
    delta: torch.Tensor        # (20, 3, h, w)
    disks: torch.Tensor        # (21, h, w)
    valid: torch.Tensor        # (21,) bool
    bone_valid: torch.Tensor   # (20,) bool


def make_pose_example(crop: np.ndarray, joints: JointSet,
                      config: PoseModelConfig) -> PoseExample:
    targets = render_target_maps(joints, config.input_size, config.map_size,
                                 config.sigma, config.coord_scale)
    return PoseExample(
        image=image_to_tensor(crop),
        heat=torch.from_numpy(targets.maps.heat),
        loc=torch.from_numpy(targets.maps.loc),
        delta=torch.from_numpy(targets.maps.delta),
        disks=torch.from_numpy(targets.disks),
        valid=torch.from_numpy(targets.valid),
        bone_valid=torch.from_numpy(targets.bone_valid),
    )


@dataclass
class PoseTrainConfig:
    steps: int = 500
    batch_size: int = 8
    lr: float = 1.0e-3
    reg_weight: float = 1e-5
    seed: int = 0
    # step-decay milestones as fractions of the step budget
    lr_decay_at: tuple[float, ...] = (0.6, 0.85)
    lr_decay_factor: float = 0.1


def train_posenet(examples: list[PoseExample], model_cfg: PoseModelConfig,
                  train_cfg: PoseTrainConfig, out_dir=None) -> tuple[PoseNet, list[dict]]:
    if not examples:
        raise ValueError("empty pose dataset")

    model = build_posenet(model_cfg, seed=train_cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.lr)

    imgs = torch.stack([e.image for e in examples])
    tgt = {"heat": torch.stack([e.heat for e in examples]),
           "loc": torch.stack([e.loc for e in examples]),
           "delta": torch.stack([e.delta for e in examples])}
    disks = torch.stack([e.disks for e in examples])
    valid = torch.stack([e.valid for e in examples])
    bone_valid = torch.stack([e.bone_valid for e in examples])

    milestones = {int(f * train_cfg.steps) for f in train_cfg.lr_decay_at}
    rows = []
    model.train()
    for step in range(train_cfg.steps):
        if step in milestones:
            for group in opt.param_groups:
                group["lr"] *= train_cfg.lr_decay_factor
        idx = batch_indices(train_cfg.seed, step, len(examples), train_cfg.batch_size)
        pred = model(imgs[idx])
        terms = pose_loss(pred, {k: v[idx] for k, v in tgt.items()},
                          disks[idx], valid[idx], bone_valid[idx],
                          model=model, reg_weight=train_cfg.reg_weight)
        opt.zero_grad()
        terms["total"].backward()
        opt.step()
        rows.append({"step": step, **{k: float(v.detach()) for k, v in terms.items()}})
    model.eval()

    if out_dir is not None:
        from pathlib import Path

        from .storage import save_checkpoint

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "posenet.pt", model.state_dict(), model_cfg.to_dict(),
                        extra={"optimizer": opt.state_dict()})
        write_metrics_csv(out / "posenet_metrics.csv", rows)
    return model, rows


def load_posenet(path) -> PoseNet:
    from .storage import load_checkpoint

    payload = load_checkpoint(path)
    model = PoseNet(PoseModelConfig.from_dict(payload["config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
