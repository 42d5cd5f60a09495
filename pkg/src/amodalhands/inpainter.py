"""De-occlusion/removal inpainting network and its losses.

A U-shaped partial-convolution encoder-decoder with transformer blocks at
the 1/8-resolution bottleneck.  Input is the 8-channel bundle built by
``maskops.build_recovery_input``; the output fills only the erased
regions, known pixels are pasted back by compositing.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import GridError
from .grids import MaskQuad
from .maskops import RecoveryInput, build_recovery_input
from .nnutil import batch_indices, image_to_tensor, seed_torch, tensor_to_image, write_metrics_csv

SIGMOID_EPS = 1e-7


@dataclass(frozen=True)
class InpainterConfig:
    input_size: int = 256
    widths: tuple[int, ...] = (32, 64, 128, 256)
    transformer_blocks: int = 2
    attn_heads: int = 4

    def to_dict(self) -> dict:
        return {"input_size": self.input_size, "widths": list(self.widths),
                "transformer_blocks": self.transformer_blocks,
                "attn_heads": self.attn_heads}

    @staticmethod
    def from_dict(d: dict) -> "InpainterConfig":
        return InpainterConfig(input_size=d["input_size"], widths=tuple(d["widths"]),
                               transformer_blocks=d["transformer_blocks"],
                               attn_heads=d["attn_heads"])


@dataclass(frozen=True)
class LossWeights:
    """Weights of the four recovery-loss terms."""

    gan: float = 0.1
    l1: float = 3.0
    perceptual: float = 0.1
    style: float = 250.0

    def __post_init__(self):
        for name in ("gan", "l1", "perceptual", "style"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")


# ---------------------------------------------------------------------------
# partial convolution
# ---------------------------------------------------------------------------

class PartialConv2d(nn.Module):
    """Convolution renormalized over valid pixels, with mask update.

    Per output pixel with window validity sum s: if s > 0 the output is
    ``conv(x * m) * (k^2 / s) + bias`` and the pixel becomes valid;
    otherwise output and validity are 0.  The validity mask has a single
    channel.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, padding: int = 0, bias: bool = True):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size,
                              stride=stride, padding=padding, bias=False)
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None
        self.register_buffer("window_ones",
                             torch.ones(1, 1, kernel_size, kernel_size))
        self.window_area = float(kernel_size * kernel_size)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        # mask: (B, 1, H, W) in {0, 1}
        out = self.conv(x * mask)
        with torch.no_grad():
            counts = F.conv2d(mask, self.window_ones.to(mask.dtype), bias=None,
                              stride=self.conv.stride, padding=self.conv.padding)
            valid = (counts > 0).to(x.dtype)
            scale = self.window_area / counts.clamp(min=1.0)
        out = out * scale
        if self.bias is not None:
            out = out + self.bias.view(1, -1, 1, 1)
        out = out * valid
        return out, valid


class TransformerBlock(nn.Module):
    """Pre-norm self-attention + MLP over flattened spatial tokens."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float = 2.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        h = self.norm1(tokens)
        tokens = tokens + self.attn(h, h, h, need_weights=False)[0]
        return tokens + self.mlp(self.norm2(tokens))


class RecoveryNet(nn.Module):
    """Partial-conv U-net: 8-channel bundle -> 3-channel recovered image."""

    def __init__(self, config: InpainterConfig):
        super().__init__()
        self.config = config
        w0, w1, w2, w3 = config.widths
        self.enc0 = PartialConv2d(8, w0, 7, stride=2, padding=3)
        self.enc1 = PartialConv2d(w0, w1, 5, stride=2, padding=2)
        self.enc2 = PartialConv2d(w1, w2, 3, stride=2, padding=1)
        self.enc3 = PartialConv2d(w2, w3, 3, stride=1, padding=1)
        tokens = (config.input_size // 8) ** 2
        self.pos_embed = nn.Parameter(torch.zeros(1, tokens, w3))
        self.blocks = nn.ModuleList(
            [TransformerBlock(w3, config.attn_heads) for _ in range(config.transformer_blocks)])
        self.dec2 = PartialConv2d(w3 + w2, w2, 3, padding=1)
        self.dec1 = PartialConv2d(w2 + w1, w1, 3, padding=1)
        self.dec0 = PartialConv2d(w1 + w0, w0, 3, padding=1)
        self.out = PartialConv2d(w0 + 8, 3, 3, padding=1)

    @staticmethod
    def _up(x: torch.Tensor) -> torch.Tensor:
        return F.interpolate(x, scale_factor=2, mode="nearest")

    def forward(self, x: torch.Tensor, validity: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.config.input_size:
            raise GridError(
                f"inpainter expects {self.config.input_size}px input, got {tuple(x.shape[-2:])}")
        e0, m0 = self.enc0(x, validity)
        e0 = F.relu(e0)
        e1, m1 = self.enc1(e0, m0)
        e1 = F.relu(e1)
        e2, m2 = self.enc2(e1, m1)
        e2 = F.relu(e2)
        e3, m3 = self.enc3(e2, m2)
        e3 = F.relu(e3)

        b, c, hh, ww = e3.shape
        tokens = e3.flatten(2).transpose(1, 2) + self.pos_embed
        for block in self.blocks:
            tokens = block(tokens)
        h = tokens.transpose(1, 2).reshape(b, c, hh, ww)

        d2, md = self.dec2(torch.cat([h, e2], dim=1), torch.maximum(m3, m2))
        d2 = F.leaky_relu(d2, 0.2)
        d1, md = self.dec1(torch.cat([self._up(d2), e1], dim=1),
                           torch.maximum(self._up(md), m1))
        d1 = F.leaky_relu(d1, 0.2)
        d0, md = self.dec0(torch.cat([self._up(d1), e0], dim=1),
                           torch.maximum(self._up(md), m0))
        d0 = F.leaky_relu(d0, 0.2)
        out, _ = self.out(torch.cat([self._up(d0), x], dim=1),
                          torch.maximum(self._up(md), validity))
        return out


class PatchDiscriminator(nn.Module):
    """Strided patch discriminator over 3-channel images; outputs a logits grid."""

    def __init__(self, widths: tuple[int, int, int] = (32, 64, 128)):
        super().__init__()
        w0, w1, w2 = widths
        self.net = nn.Sequential(
            nn.Conv2d(3, w0, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(w0, w1, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(w1, w2, 4, stride=2, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(w2, 1, 3, padding=1),
        )

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        return self.net(img)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def l1_loss(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise GridError(f"l1 shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


class FeaturePyramid(nn.Module):
    """Fixed (never trained) conv pyramid used by perceptual/style losses."""

    def __init__(self, stages: int = 3, base_channels: int = 16, seed: int = 2024):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        convs = []
        in_ch = 3
        ch = base_channels
        for _ in range(stages):
            conv = nn.Conv2d(in_ch, ch, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen)
                                  * (2.0 / (in_ch * 9)) ** 0.5)
                conv.bias.zero_()
            convs.append(conv)
            in_ch, ch = ch, ch * 2
        self.convs = nn.ModuleList(convs)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = []
        h = x
        for conv in self.convs:
            h = F.relu(conv(h))
            feats.append(h)
        return feats


def perceptual_loss(a: torch.Tensor, b: torch.Tensor, extractor: FeaturePyramid) -> torch.Tensor:
    total = None
    for fa, fb in zip(extractor(a), extractor(b)):
        term = (fa - fb).abs().mean()
        total = term if total is None else total + term
    return total


def gram_matrix(feat: torch.Tensor) -> torch.Tensor:
    """(B, C, H, W) -> (B, C, C) Gram matrix normalized by C*H*W."""
    b, c, h, w = feat.shape
    flat = feat.reshape(b, c, h * w)
    return flat @ flat.transpose(1, 2) / float(c * h * w)


def style_loss(a: torch.Tensor, b: torch.Tensor, extractor: FeaturePyramid) -> torch.Tensor:
    total = None
    for fa, fb in zip(extractor(a), extractor(b)):
        term = (gram_matrix(fa) - gram_matrix(fb)).abs().mean()
        total = term if total is None else total + term
    return total


def adversarial_losses(disc: nn.Module, fake: torch.Tensor,
                       real: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """(generator term, discriminator term) under the log(1 - sigmoid) split.

    The discriminator minimizes ``d_term``; the generator minimizes
    ``g_term`` (which is <= 0, and decreases as the discriminator is
    fooled).  Probabilities are clamped so saturated logits stay finite.
    """
    p_fake = torch.sigmoid(disc(fake)).clamp(SIGMOID_EPS, 1.0 - SIGMOID_EPS)
    p_real = torch.sigmoid(disc(real)).clamp(SIGMOID_EPS, 1.0 - SIGMOID_EPS)
    g_term = torch.log(1.0 - p_fake).mean()
    d_term = -torch.log(p_real).mean() - torch.log(1.0 - torch.sigmoid(disc(fake.detach()))
                                                   .clamp(SIGMOID_EPS, 1.0 - SIGMOID_EPS)).mean()
    return g_term, d_term


def total_recovery_loss(gan_term, l1_term, perceptual_term, style_term,
                        weights: LossWeights):
    """Weighted sum of the four loss components."""
    return (weights.gan * gan_term + weights.l1 * l1_term
            + weights.perceptual * perceptual_term + weights.style * style_term)


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def bundle_to_tensors(bundle: RecoveryInput) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack the 8-channel input and its initial validity mask."""
    x = torch.cat([
        image_to_tensor(bundle.image_deoccl),
        image_to_tensor(bundle.target_visible),
        image_to_tensor(bundle.image_removal),
        image_to_tensor(bundle.bg_visible),
    ], dim=0)
    hole = np.maximum(bundle.occluded_mask, bundle.distractor_mask)
    validity = torch.from_numpy((1.0 - hole).astype(np.float32))[None]
    return x, validity


def original_from_bundle(bundle: RecoveryInput) -> np.ndarray:
    """The un-erased crop: the two erased images are complementary."""
    m_d = bundle.occluded_mask[..., None]
    return bundle.image_deoccl + bundle.image_removal * m_d


def recover_raw(model: RecoveryNet, bundle: RecoveryInput) -> np.ndarray:
    """Network output alone, clipped to [0, 1]; no compositing."""
    bundle.validate()
    model.eval()
    x, validity = bundle_to_tensors(bundle)
    with torch.no_grad():
        raw = model(x[None], validity[None])[0]
    return np.clip(tensor_to_image(raw), 0.0, 1.0)


def composite_recovery(raw_img: np.ndarray, original: np.ndarray,
                       region: np.ndarray) -> np.ndarray:
    """Paste the recovered pixels inside ``region``, keep the original
    elsewhere; with an empty region this is the original, bit for bit."""
    m = region[..., None]
    return (raw_img * m + original * (1.0 - m)).astype(np.float32)


def recover(model: RecoveryNet, bundle: RecoveryInput,
            composite_mask: np.ndarray | None = None) -> np.ndarray:
    """Run the inpainter and composite: network output inside the fill
    region, original pixels outside.  ``composite_mask`` defaults to the
    whole hole (occluded + distractor); passing a sub-mask restricts which
    recovered region is used."""
    raw_img = recover_raw(model, bundle)
    if composite_mask is None:
        composite_mask = bundle.hole_mask()
    return composite_recovery(raw_img, original_from_bundle(bundle), composite_mask)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class InpainterTrainConfig:
    stage1_steps: int = 500
    stage2_steps: int = 0
    batch_size: int = 8
    lr_stage1: float = 1.5e-3
    lr_stage2: float = 1.0e-3
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    crop_expansion: float = 1.3


@dataclass
class RecoveryExample:
    """One training crop: 8ch input, validity, original, target, hole."""

    inputs: torch.Tensor      # (8, S, S)
    validity: torch.Tensor    # (1, S, S)
    original: torch.Tensor    # (3, S, S)
    target: torch.Tensor      # (3, S, S)
    hole: torch.Tensor        # (1, S, S)


def make_recovery_example(crop_img: np.ndarray, crop_quad: MaskQuad,
                          target_crop: np.ndarray) -> RecoveryExample:
    bundle = build_recovery_input(crop_img, crop_quad)
    x, validity = bundle_to_tensors(bundle)
    return RecoveryExample(
        inputs=x, validity=validity,
        original=image_to_tensor(crop_img),
        target=image_to_tensor(target_crop),
        hole=image_to_tensor(bundle.hole_mask()),
    )


def train_inpainter(
    examples: list[RecoveryExample],
    model_cfg: InpainterConfig,
    train_cfg: InpainterTrainConfig,
    stage2_examples: list[RecoveryExample] | None = None,
    out_dir=None,
) -> tuple[RecoveryNet, list[dict]]:
    """Two-stage training: clean-mask examples first, then (optionally)
    examples whose masks come from a trained segmenter.  Generator and
    discriminator alternate 1:1 when the adversarial weight is nonzero."""
    if not examples:
        raise ValueError("empty recovery dataset")

    seed_torch(train_cfg.seed)
    model = RecoveryNet(model_cfg)
    disc = PatchDiscriminator()
    extractor = FeaturePyramid()
    opt_g = torch.optim.Adam(model.parameters(), lr=train_cfg.lr_stage1)
    opt_d = torch.optim.Adam(disc.parameters(), lr=train_cfg.lr_stage1)

    if train_cfg.stage2_steps > 0 and stage2_examples is None:
        warnings.warn("no stage-2 examples provided; skipping the fine-tune stage")

    stages = [(train_cfg.stage1_steps, train_cfg.lr_stage1, examples)]
    if train_cfg.stage2_steps > 0 and stage2_examples:
        stages.append((train_cfg.stage2_steps, train_cfg.lr_stage2, stage2_examples))

    rows = []
    step_base = 0
    w = train_cfg.weights
    for steps, lr, stage_examples in stages:
        for group in opt_g.param_groups:
            group["lr"] = lr
        for group in opt_d.param_groups:
            group["lr"] = lr
        xs = torch.stack([e.inputs for e in stage_examples])
        vs = torch.stack([e.validity for e in stage_examples])
        origs = torch.stack([e.original for e in stage_examples])
        tgts = torch.stack([e.target for e in stage_examples])
        holes = torch.stack([e.hole for e in stage_examples])

        model.train()
        for step in range(steps):
            idx = batch_indices(train_cfg.seed, step_base + step,
                                len(stage_examples), train_cfg.batch_size)
            x, v, orig, tgt, hole = xs[idx], vs[idx], origs[idx], tgts[idx], holes[idx]
            raw = model(x, v)
            comp = raw * hole + orig * (1.0 - hole)

            if w.gan > 0:
                # discriminator first (sees the generator output detached),
                # then the generator term through the updated discriminator
                _, d_term = adversarial_losses(disc, comp, tgt)
                opt_d.zero_grad()
                d_term.backward()
                opt_d.step()
                g_term, _ = adversarial_losses(disc, comp, tgt)
            else:
                g_term = torch.zeros(())
                d_term = torch.zeros(())

            l1_term = l1_loss(comp, tgt)
            perc_term = perceptual_loss(comp, tgt, extractor)
            style_term = style_loss(comp, tgt, extractor)
            total = total_recovery_loss(g_term if w.gan > 0 else 0.0,
                                        l1_term, perc_term, style_term, w)
            opt_g.zero_grad()
            total.backward()
            opt_g.step()
            rows.append({
                "step": step_base + step, "l1": float(l1_term.detach()),
                "perceptual": float(perc_term.detach()),
                "style": float(style_term.detach()),
                "gan_g": float(g_term.detach()), "gan_d": float(d_term.detach()),
                "total": float(total.detach()),
            })
        step_base += steps
    model.eval()

    if out_dir is not None:
        from pathlib import Path

        from .storage import save_checkpoint

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "inpainter.pt", model.state_dict(), model_cfg.to_dict(),
                        extra={"discriminator": disc.state_dict()})
        write_metrics_csv(out / "inpainter_metrics.csv", rows)
    return model, rows


def load_inpainter(path) -> RecoveryNet:
    from .storage import load_checkpoint

    payload = load_checkpoint(path)
    model = RecoveryNet(InpainterConfig.from_dict(payload["config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
