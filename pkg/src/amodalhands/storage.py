"""On-disk formats: 8-bit PNGs, JSON sidecars, checkpoint archives.

Images are RGB PNGs, masks grayscale PNGs; a mask quad is packed into one
RGBA PNG (channels: right-amodal, right-visible, left-amodal, left-visible).
All writes are deterministic for identical pixel data.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .grids import CropTransform, JointSet, MaskQuad


def to_u8(a: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(a, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def from_u8(a: np.ndarray) -> np.ndarray:
    return (a.astype(np.float32) / 255.0)


def save_image(path: str | Path, img: np.ndarray) -> None:
    Image.fromarray(to_u8(img), mode="RGB").save(path, format="PNG")


def load_image(path: str | Path) -> np.ndarray:
    return from_u8(np.asarray(Image.open(path).convert("RGB")))


def save_mask(path: str | Path, mask: np.ndarray) -> None:
    Image.fromarray(to_u8(mask), mode="L").save(path, format="PNG")


def load_mask(path: str | Path) -> np.ndarray:
    return from_u8(np.asarray(Image.open(path).convert("L")))


def save_mask_quad(path: str | Path, quad: MaskQuad) -> None:
    packed = np.stack([to_u8(m) for m in quad.all()], axis=-1)
    Image.fromarray(packed, mode="RGBA").save(path, format="PNG")


def load_mask_quad(path: str | Path) -> MaskQuad:
    packed = np.asarray(Image.open(path))
    if packed.ndim != 3 or packed.shape[2] != 4:
        raise ValueError(f"expected RGBA mask quad at {path}, got {packed.shape}")
    return MaskQuad(*(from_u8(packed[..., i]) for i in range(4)))


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def read_json(path: str | Path):
    return json.loads(Path(path).read_text())


def crop_to_dict(t: CropTransform) -> dict:
    return {"center": [t.center[0], t.center[1]], "side_len": t.side_len,
            "out_size": t.out_size, "flipped": t.flipped}


def crop_from_dict(d: dict) -> CropTransform:
    return CropTransform(center=(d["center"][0], d["center"][1]),
                         side_len=d["side_len"], out_size=d["out_size"],
                         flipped=d["flipped"])


def joints_to_dict(j: JointSet) -> dict:
    return {"joints_2d": j.joints_2d.tolist(), "joints_3d": j.joints_3d.tolist(),
            "valid": j.valid.astype(int).tolist(), "root_index": j.root_index}


def joints_from_dict(d: dict) -> JointSet:
    return JointSet(joints_2d=np.array(d["joints_2d"]),
                    joints_3d=np.array(d["joints_3d"]),
                    valid=np.array(d["valid"], dtype=bool),
                    root_index=d.get("root_index", 0))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path: str | Path, state_dict: dict, config: dict,
                    extra: dict | None = None) -> None:
    """Single-file archive: named weight tensors + JSON-able config."""
    import torch

    payload = {"state_dict": state_dict, "config": config, "extra": extra or {}}
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> dict:
    import torch

    return torch.load(path, map_location="cpu", weights_only=False)
