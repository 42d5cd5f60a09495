"""Two-hand amodal segmentation: one shared encoder, four mask heads.

The four heads predict right-amodal, right-visible, left-amodal and
left-visible masks for a full two-hand frame.  Heads are supervised with
per-head binary cross entropy; binarized predictions go through a
containment-enforcement step so downstream mask algebra always sees a
consistent quad.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import GridError
from .grids import MaskQuad
from .nnutil import (
    batch_indices,
    group_norm,
    image_to_tensor,
    seed_torch,
    write_metrics_csv,
)

NUM_MASK_HEADS = 4
BCE_EPS = 1e-7


@dataclass(frozen=True)
class SegModelConfig:
    input_size: int = 256
    encoder_widths: tuple[int, ...] = (32, 64, 160, 256)
    encoder_depths: tuple[int, ...] = (1, 1, 1, 1)
    head_channels: int = 64

    def __post_init__(self):
        if len(self.encoder_widths) != len(self.encoder_depths):
            raise ValueError("encoder_widths and encoder_depths length mismatch")
        factor = 2 ** len(self.encoder_widths)
        if self.input_size % factor != 0:
            raise ValueError(f"input_size must be divisible by {factor}")

    def to_dict(self) -> dict:
        return {"input_size": self.input_size,
                "encoder_widths": list(self.encoder_widths),
                "encoder_depths": list(self.encoder_depths),
                "head_channels": self.head_channels}

    @staticmethod
    def from_dict(d: dict) -> "SegModelConfig":
        return SegModelConfig(input_size=d["input_size"],
                              encoder_widths=tuple(d["encoder_widths"]),
                              encoder_depths=tuple(d["encoder_depths"]),
                              head_channels=d["head_channels"])


class ConvBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm = group_norm(channels)

    def forward(self, x):
        return F.relu(self.norm(self.conv(x)) + x)


class SegNet(nn.Module):
    """Hierarchical encoder with a lightweight fuse-and-predict decoder.

    Each stage halves resolution; stage features are projected to a common
    width, upsampled to 1/4 scale, fused, and decoded into four mask
    logits which are upsampled bilinearly to the input resolution.
    """

    def __init__(self, config: SegModelConfig):
        super().__init__()
        self.config = config
        widths = config.encoder_widths
        stages = []
        in_ch = 3
        for w, depth in zip(widths, config.encoder_depths):
            blocks = [nn.Conv2d(in_ch, w, 3, stride=2, padding=1), group_norm(w), nn.ReLU()]
            blocks += [ConvBlock(w) for _ in range(depth)]
            stages.append(nn.Sequential(*blocks))
            in_ch = w
        self.stages = nn.ModuleList(stages)
        hc = config.head_channels
        self.projections = nn.ModuleList([nn.Conv2d(w, hc, 1) for w in widths])
        self.fuse = nn.Sequential(
            nn.Conv2d(hc * len(widths), hc, 1), group_norm(hc), nn.ReLU())
        self.heads = nn.Conv2d(hc, NUM_MASK_HEADS, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, 3, S, S) image -> (B, 4, S, S) mask logits."""
        if x.shape[-1] != self.config.input_size or x.shape[-2] != self.config.input_size:
            raise GridError(
                f"segmenter expects {self.config.input_size}px input, got {tuple(x.shape[-2:])}")
        feats = []
        h = x
        for stage in self.stages:
            h = stage(h)
            feats.append(h)
        quarter = feats[1].shape[-2:]
        up = [F.interpolate(proj(f), size=quarter, mode="bilinear", align_corners=False)
              for proj, f in zip(self.projections, feats)]
        fused = self.fuse(torch.cat(up, dim=1))
        logits = self.heads(fused)
        return F.interpolate(logits, size=x.shape[-2:], mode="bilinear", align_corners=False)


def build_segmenter(config: SegModelConfig, seed: int = 0) -> SegNet:
    seed_torch(seed)
    return SegNet(config)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def bce_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean binary cross entropy; pred is a probability map, target binary."""
    if pred.shape != target.shape:
        raise GridError(f"bce shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if not torch.all((target == 0) | (target == 1)):
        raise GridError("bce target must be binary")
    p = pred.clamp(BCE_EPS, 1.0 - BCE_EPS)
    return -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p)).mean()


def quad_bce_loss(pred: torch.Tensor, target: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
    """Sum of the four per-head BCE terms. pred/target are (B, 4, H, W)."""
    per_head = [bce_loss(pred[:, i], target[:, i]) for i in range(NUM_MASK_HEADS)]
    total = per_head[0]
    for term in per_head[1:]:
        total = total + term
    return total, per_head


# ---------------------------------------------------------------------------
# prediction with containment enforcement
# ---------------------------------------------------------------------------

@dataclass
class SegPrediction:
    soft: MaskQuad
    binary: MaskQuad


def enforce_containment(soft: MaskQuad, threshold: float = 0.5) -> MaskQuad:
    """Binarize a soft quad and force the set relations the mask algebra
    needs: each visible mask inside its amodal mask, visible masks disjoint
    (contested pixels go to the hand with higher soft probability, ties to
    the right hand)."""
    b = soft.binarized(threshold)
    rv = b.right_visible * b.right_amodal
    lv = b.left_visible * b.left_amodal
    contested = rv * lv
    right_wins = (soft.right_visible >= soft.left_visible).astype(np.float32)
    rv = rv * (1 - contested) + contested * right_wins
    lv = lv * (1 - contested) + contested * (1 - right_wins)
    return MaskQuad(b.right_amodal, rv.astype(np.float32),
                    b.left_amodal, lv.astype(np.float32))


def seg_forward(model: SegNet, img: np.ndarray, threshold: float = 0.5) -> SegPrediction:
    """Run inference on one (S, S, 3) frame at the model's native size."""
    model.eval()
    with torch.no_grad():
        logits = model(image_to_tensor(img)[None])
        probs = torch.sigmoid(logits)[0].numpy()
    soft = MaskQuad(*(probs[i] for i in range(NUM_MASK_HEADS)))
    return SegPrediction(soft=soft, binary=enforce_containment(soft, threshold))


def segment_frame(model: SegNet, image: np.ndarray,
                  threshold: float = 0.5) -> MaskQuad:
    """Predict binary masks for a frame of any size, resampling through the
    model's native resolution when needed."""
    from .grids import CropTransform, resample

    h, w = image.shape[:2]
    side = model.config.input_size
    if (h, w) == (side, side):
        return seg_forward(model, image, threshold).binary
    t_up = CropTransform(center=(w / 2.0, h / 2.0),
                         side_len=float(max(h, w)), out_size=side)
    pred = seg_forward(model, resample(image, t_up), threshold)
    t_down = CropTransform(center=(side / 2.0, side / 2.0),
                           side_len=float(side), out_size=max(h, w))
    return MaskQuad(*(resample(m, t_down, mode="nearest")[:h, :w]
                      for m in pred.binary.all()))


def quad_to_array(quad: MaskQuad) -> np.ndarray:
    return np.stack(quad.all(), axis=0)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class SegTrainConfig:
    steps: int = 500
    batch_size: int = 8
    lr: float = 2.5e-3
    seed: int = 0
    log_every: int = 10


def train_segmenter(
    examples: list[tuple[np.ndarray, MaskQuad]],
    model_cfg: SegModelConfig,
    train_cfg: SegTrainConfig,
    out_dir=None,
    resume: dict | None = None,
) -> tuple[SegNet, list[dict]]:
    """Train the four-head segmenter on (image, mask quad) pairs.

    Deterministic for a fixed seed under serial execution; ``resume`` takes
    a checkpoint payload and continues with identical per-step behavior.
    """
    if not examples:
        raise ValueError("empty segmentation dataset")

    model = build_segmenter(model_cfg, seed=train_cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.lr)
    start_step = 0
    if resume is not None:
        model.load_state_dict(resume["state_dict"])
        opt.load_state_dict(resume["extra"]["optimizer"])
        start_step = resume["extra"]["step"]

    imgs = torch.stack([image_to_tensor(img) for img, _ in examples])
    quads = torch.stack([torch.from_numpy(quad_to_array(q.binarized())) for _, q in examples])

    rows = []
    model.train()
    for step in range(start_step, train_cfg.steps):
        idx = batch_indices(train_cfg.seed, step, len(examples), train_cfg.batch_size)
        x, y = imgs[idx], quads[idx]
        probs = torch.sigmoid(model(x))
        total, per_head = quad_bce_loss(probs, y)
        opt.zero_grad()
        total.backward()
        opt.step()
        rows.append({
            "step": step,
            "loss_ra": float(per_head[0].detach()), "loss_rv": float(per_head[1].detach()),
            "loss_la": float(per_head[2].detach()), "loss_lv": float(per_head[3].detach()),
            "total": float(total.detach()),
        })
    model.eval()

    if out_dir is not None:
        from pathlib import Path

        from .storage import save_checkpoint

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "segmenter.pt", model.state_dict(), model_cfg.to_dict(),
                        extra={"optimizer": opt.state_dict(), "step": train_cfg.steps})
        write_metrics_csv(out / "segmenter_metrics.csv", rows)
    return model, rows


def load_segmenter(path) -> SegNet:
    from .storage import load_checkpoint

    payload = load_checkpoint(path)
    model = SegNet(SegModelConfig.from_dict(payload["config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
