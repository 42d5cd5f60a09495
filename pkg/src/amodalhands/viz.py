"""Qualitative panels: input, masks, recovered crops and skeleton overlay.

One PNG per sample, laid out as two rows of three tiles:
row 1: input frame | mask overlay | skeleton overlay
row 2: right crop before/after recovery | left crop before/after | blank
"""

from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw

from .grids import JointSet, MaskQuad
from .skeleton import BONES
from .storage import to_u8

MASK_COLORS = {
    "right_amodal": (1.0, 0.25, 0.25),
    "right_visible": (1.0, 0.6, 0.2),
    "left_amodal": (0.25, 0.4, 1.0),
    "left_visible": (0.2, 0.85, 1.0),
}

BONE_COLOR = (40, 220, 90)
JOINT_COLOR = (250, 240, 60)


def mask_overlay(image: np.ndarray, quad: MaskQuad, alpha: float = 0.45) -> np.ndarray:
    out = image.copy()
    for name, mask in zip(MASK_COLORS, quad.all()):
        color = np.array(MASK_COLORS[name])
        sel = mask > 0.5
        out[sel] = out[sel] * (1 - alpha) + color * alpha
    return np.clip(out, 0, 1)


def draw_skeleton(image: np.ndarray, joints: JointSet, upscale: int = 1) -> np.ndarray:
    h, w = image.shape[:2]
    pil = Image.fromarray(to_u8(image)).resize((w * upscale, h * upscale),
                                               Image.NEAREST)
    draw = ImageDraw.Draw(pil)
    pts = (joints.joints_2d + 0.5) * upscale - 0.5
    for parent, child in BONES:
        if joints.valid[parent] and joints.valid[child]:
            draw.line([tuple(pts[parent]), tuple(pts[child])],
                      fill=BONE_COLOR, width=max(1, upscale // 2))
    r = max(1, upscale // 2)
    for j in range(len(pts)):
        if joints.valid[j]:
            x, y = pts[j]
            draw.ellipse([x - r, y - r, x + r, y + r], fill=JOINT_COLOR)
    return np.asarray(pil).astype(np.float32) / 255.0


def _tile_grid(tiles: list[np.ndarray], cols: int, pad: int = 2) -> np.ndarray:
    size = max(t.shape[0] for t in tiles)
    norm = []
    for t in tiles:
        if t.shape[0] != size:
            img = Image.fromarray(to_u8(t)).resize((size, size), Image.NEAREST)
            t = np.asarray(img).astype(np.float32) / 255.0
        norm.append(t)
    rows = int(np.ceil(len(norm) / cols))
    canvas = np.ones((rows * size + (rows + 1) * pad,
                      cols * size + (cols + 1) * pad, 3), dtype=np.float32)
    for i, t in enumerate(norm):
        r, c = divmod(i, cols)
        y = pad + r * (size + pad)
        x = pad + c * (size + pad)
        canvas[y:y + size, x:x + size] = t
    return canvas


def render_panel(image: np.ndarray, quad: MaskQuad,
                 hand_tiles: list[np.ndarray],
                 joints: list[JointSet]) -> np.ndarray:
    """Compose the qualitative panel; ``hand_tiles`` are per-hand crops
    (input and recovered), ``joints`` the decoded joint sets to overlay."""
    overlay = image
    for j in joints:
        overlay = draw_skeleton(overlay, j, upscale=1)
    tiles = [image, mask_overlay(image, quad), overlay]
    tiles.extend(hand_tiles)
    return _tile_grid(tiles, cols=3)
