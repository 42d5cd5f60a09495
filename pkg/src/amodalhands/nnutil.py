"""Small torch helpers shared by the trainable modules."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import torch


def seed_torch(seed: int) -> None:
    torch.manual_seed(seed & 0xFFFFFFFFFFFF)


def image_to_tensor(img: np.ndarray) -> torch.Tensor:
    """(H, W, C) or (H, W) float array -> (C, H, W) float32 tensor."""
    a = np.asarray(img, dtype=np.float32)
    if a.ndim == 2:
        a = a[None]
    else:
        a = np.transpose(a, (2, 0, 1))
    return torch.from_numpy(np.ascontiguousarray(a))


def tensor_to_image(t: torch.Tensor) -> np.ndarray:
    """(C, H, W) tensor -> (H, W, C) or (H, W) float32 array."""
    a = t.detach().cpu().numpy()
    if a.shape[0] == 1:
        return a[0]
    return np.transpose(a, (1, 2, 0))


def batch_indices(seed: int, step: int, n: int, batch_size: int) -> np.ndarray:
    """Stateless per-step batch sampling; resume-safe by construction."""
    rng = np.random.default_rng([seed & 0xFFFFFFFF, step])
    return rng.integers(0, n, size=batch_size)


def group_norm(channels: int) -> torch.nn.GroupNorm:
    groups = 8 if channels % 8 == 0 else 1
    return torch.nn.GroupNorm(groups, channels)


def write_metrics_csv(path: str | Path, rows: list[dict]) -> None:
    if not rows:
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
