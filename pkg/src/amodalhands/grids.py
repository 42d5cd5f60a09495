"""Core raster types and primitives.

Images are float32 numpy arrays in [0, 1]: ``(H, W, 3)`` for color,
``(H, W)`` for single-channel masks.  Continuous coordinates follow the
texture convention (pixel ``i`` spans ``[i, i+1)``, center ``i + 0.5``),
while point/joint coordinates are stored in the usual index convention
(``x = i`` is the center of column ``i``).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import GridError

MIN_SIDE = 8
NUM_JOINTS = 21


# ---------------------------------------------------------------------------
# validation helpers
# ---------------------------------------------------------------------------

def check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Validate a (H, W, 3) color image in [0, 1]."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise GridError(f"{name}: expected (H, W, 3), got {img.shape}")
    _check_common(img, name)
    return img


def check_mask(mask: np.ndarray, name: str = "mask") -> np.ndarray:
    """Validate a (H, W) single-channel mask in [0, 1]."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise GridError(f"{name}: expected (H, W), got {mask.shape}")
    _check_common(mask, name)
    return mask


def _check_common(a: np.ndarray, name: str) -> None:
    h, w = a.shape[:2]
    if h < MIN_SIDE or w < MIN_SIDE:
        raise GridError(f"{name}: grid too small ({h}x{w}), minimum side is {MIN_SIDE}")
    if not np.all(np.isfinite(a)):
        raise GridError(f"{name}: non-finite values")
    if a.min() < 0.0 or a.max() > 1.0:
        raise GridError(f"{name}: values outside [0, 1] (min={a.min()}, max={a.max()})")


# ---------------------------------------------------------------------------
# elementary operations
# ---------------------------------------------------------------------------

def binarize(mask: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Threshold a soft mask to {0, 1}: 1 where mask >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise GridError(f"threshold must be in (0, 1), got {threshold}")
    mask = np.asarray(mask)
    if not np.all(np.isfinite(mask)):
        raise GridError("binarize: non-finite mask values")
    return (mask >= threshold).astype(np.float32)


def hflip(img: np.ndarray) -> np.ndarray:
    """Mirror horizontally: out[y, x] = in[y, W-1-x]. An exact involution."""
    img = np.asarray(img)
    return np.ascontiguousarray(img[:, ::-1])


@dataclass(frozen=True)
class CropTransform:
    """Square crop of a source image, resampled to ``out_size`` pixels.

    ``center`` is in continuous source coordinates (pixel i spans [i, i+1)),
    ``side_len`` is the side of the source square.  When ``flipped`` the
    resampled patch is mirrored horizontally (left-hand crops are flipped
    into right-hand role).
    """

    center: tuple[float, float]
    side_len: float
    out_size: int
    flipped: bool = False

    def __post_init__(self):
        if self.side_len <= 0:
            raise GridError(f"side_len must be > 0, got {self.side_len}")
        if self.out_size <= 0:
            raise GridError(f"out_size must be > 0, got {self.out_size}")

    @property
    def scale(self) -> float:
        """Source pixels per output pixel."""
        return self.side_len / self.out_size

    def source_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Continuous source coordinates sampled by each output pixel (pre-flip)."""
        n = self.out_size
        offs = (np.arange(n, dtype=np.float64) + 0.5 - n / 2.0) * self.scale
        return self.center[0] + offs, self.center[1] + offs

    def points_to_crop(self, pts: np.ndarray) -> np.ndarray:
        """Map (N, 2) index-coordinate source points into crop coordinates."""
        pts = np.asarray(pts, dtype=np.float64)
        cx, cy = self.center
        n = self.out_size
        out = np.empty_like(pts)
        out[:, 0] = (pts[:, 0] + 0.5 - cx) / self.scale + n / 2.0 - 0.5
        out[:, 1] = (pts[:, 1] + 0.5 - cy) / self.scale + n / 2.0 - 0.5
        if self.flipped:
            out[:, 0] = (n - 1) - out[:, 0]
        return out

    def points_to_source(self, pts: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`points_to_crop`."""
        pts = np.asarray(pts, dtype=np.float64).copy()
        n = self.out_size
        if self.flipped:
            pts[:, 0] = (n - 1) - pts[:, 0]
        cx, cy = self.center
        out = np.empty_like(pts)
        out[:, 0] = (pts[:, 0] + 0.5 - n / 2.0) * self.scale + cx - 0.5
        out[:, 1] = (pts[:, 1] + 0.5 - n / 2.0) * self.scale + cy - 0.5
        return out


def identity_transform(height: int, width: int) -> CropTransform:
    """Transform whose resample is the identity map (requires height == width)."""
    return CropTransform(center=(width / 2.0, height / 2.0),
                         side_len=float(width), out_size=width, flipped=False)


def resample(img: np.ndarray, t: CropTransform, mode: str = "bilinear") -> np.ndarray:
    """Resample a crop window to ``out_size`` x ``out_size``.

    Out-of-bounds source pixels read as zero.  ``mode`` is "bilinear" for
    images and "nearest" for masks.  The horizontal flip, when requested,
    is applied after resampling.
    """
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape[:2]
    xs, ys = t.source_grid()
    gx, gy = np.meshgrid(xs, ys)  # (out, out)

    if mode == "nearest":
        xi = np.floor(gx).astype(np.int64)
        yi = np.floor(gy).astype(np.int64)
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        xi = np.clip(xi, 0, w - 1)
        yi = np.clip(yi, 0, h - 1)
        out = img[yi, xi]
        out = np.where(valid if img.ndim == 2 else valid[..., None], out, 0.0)
    elif mode == "bilinear":
        u = gx - 0.5
        v = gy - 0.5
        x0 = np.floor(u).astype(np.int64)
        y0 = np.floor(v).astype(np.int64)
        fx = (u - x0).astype(np.float32)
        fy = (v - y0).astype(np.float32)
        out = None
        for dy in (0, 1):
            for dx in (0, 1):
                xi, yi = x0 + dx, y0 + dy
                valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
                val = img[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
                val = np.where(valid if img.ndim == 2 else valid[..., None], val, 0.0)
                wgt = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
                term = val * (wgt if img.ndim == 2 else wgt[..., None])
                out = term if out is None else out + term
    else:
        raise GridError(f"unknown resample mode: {mode}")

    out = out.astype(np.float32)
    if t.flipped:
        out = hflip(out)
    return out


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

class HandSide(enum.Enum):
    RIGHT = "right"
    LEFT = "left"

    @property
    def other(self) -> "HandSide":
        return HandSide.LEFT if self is HandSide.RIGHT else HandSide.RIGHT


@dataclass(frozen=True)
class MaskQuad:
    """The four per-pixel masks of a two-hand image.

    Invariants (on binarized masks): each visible mask is contained in its
    amodal mask, and the two visible masks are disjoint.
    """

    right_amodal: np.ndarray
    right_visible: np.ndarray
    left_amodal: np.ndarray
    left_visible: np.ndarray

    def __post_init__(self):
        shapes = {m.shape for m in self.all()}
        if len(shapes) != 1:
            raise GridError(f"mask quad shape mismatch: {shapes}")

    def all(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (self.right_amodal, self.right_visible,
                self.left_amodal, self.left_visible)

    def amodal(self, side: HandSide) -> np.ndarray:
        return self.right_amodal if side is HandSide.RIGHT else self.left_amodal

    def visible(self, side: HandSide) -> np.ndarray:
        return self.right_visible if side is HandSide.RIGHT else self.left_visible

    def binarized(self, threshold: float = 0.5) -> "MaskQuad":
        return MaskQuad(*(binarize(m, threshold) for m in self.all()))

    def hflip_swapped(self) -> "MaskQuad":
        """Mirror all masks and swap left/right roles."""
        return MaskQuad(
            right_amodal=hflip(self.left_amodal),
            right_visible=hflip(self.left_visible),
            left_amodal=hflip(self.right_amodal),
            left_visible=hflip(self.right_visible),
        )

    def validate(self) -> None:
        """Check containment/disjointness on the binarized quad."""
        b = self.binarized()
        if np.any(b.right_visible > b.right_amodal):
            raise GridError("right visible mask not contained in right amodal mask")
        if np.any(b.left_visible > b.left_amodal):
            raise GridError("left visible mask not contained in left amodal mask")
        if np.any(b.right_visible * b.left_visible > 0):
            raise GridError("visible masks overlap")


@dataclass
class JointSet:
    """21 hand keypoints: 2D pixel coords, root-relative 3D (mm), validity."""

    joints_2d: np.ndarray          # (21, 2) float64, index pixel coords
    joints_3d: np.ndarray          # (21, 3) float64, mm, root-relative
    valid: np.ndarray              # (21,) bool
    root_index: int = 0

    def __post_init__(self):
        self.joints_2d = np.asarray(self.joints_2d, dtype=np.float64).reshape(NUM_JOINTS, 2)
        self.joints_3d = np.asarray(self.joints_3d, dtype=np.float64).reshape(NUM_JOINTS, 3)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(NUM_JOINTS)

    def root_relative(self) -> "JointSet":
        """Translate 3D joints so the root lands at the origin."""
        shifted = self.joints_3d - self.joints_3d[self.root_index]
        return JointSet(self.joints_2d.copy(), shifted, self.valid.copy(), self.root_index)

    def copy(self) -> "JointSet":
        return JointSet(self.joints_2d.copy(), self.joints_3d.copy(),
                        self.valid.copy(), self.root_index)


# ---------------------------------------------------------------------------
# deterministic randomness
# ---------------------------------------------------------------------------

def rng_from(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed))


def spawn_seeds(seed: int, n: int) -> list[int]:
    """Derive n independent child seeds; stable for a given (seed, n prefix)."""
    ss = np.random.SeedSequence(seed)
    return [int(child.generate_state(1)[0]) for child in ss.spawn(n)]
