"""Mask algebra and the hand-centered crop protocol.

Everything here operates on binarized masks: products of soft masks would
leak partial intensity into erased regions and break the validity
semantics of the downstream partial-convolution inpainter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridError, HandAbsentError
from .grids import CropTransform, HandSide, MaskQuad, binarize, resample


def _check_same_shape(*masks: np.ndarray) -> None:
    shapes = {np.asarray(m).shape for m in masks}
    if len(shapes) != 1:
        raise GridError(f"mask shape mismatch: {shapes}")


def occluded_region(amodal: np.ndarray, visible: np.ndarray) -> np.ndarray:
    """Region where the target hand is hidden: amodal * (1 - visible)."""
    _check_same_shape(amodal, visible)
    return (amodal * (1.0 - visible)).astype(np.float32)


def distractor_region(target_amodal: np.ndarray, other_visible: np.ndarray) -> np.ndarray:
    """Region the distracting hand occupies outside the target's amodal
    extent: (1 - target_amodal) * other_visible."""
    _check_same_shape(target_amodal, other_visible)
    return ((1.0 - target_amodal) * other_visible).astype(np.float32)


def erase(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero the image inside the mask: image * (1 - mask), broadcast over channels."""
    image = np.asarray(image)
    mask = np.asarray(mask)
    if image.shape[:2] != mask.shape:
        raise GridError(f"erase: image {image.shape} vs mask {mask.shape}")
    keep = 1.0 - mask
    if image.ndim == 3:
        keep = keep[..., None]
    return (image * keep).astype(np.float32)


def background_visible(right_amodal: np.ndarray, left_amodal: np.ndarray) -> np.ndarray:
    """Background pixels not claimed by either hand: (1 - ra) * (1 - la)."""
    _check_same_shape(right_amodal, left_amodal)
    return ((1.0 - right_amodal) * (1.0 - left_amodal)).astype(np.float32)


def amodal_bbox(mask: np.ndarray, threshold: float = 0.5):
    """Bounding box (x_lo, y_lo, x_hi, y_hi) of a binarized mask, in
    continuous edge coordinates. Raises HandAbsentError on an empty mask."""
    b = binarize(mask, threshold)
    ys, xs = np.nonzero(b)
    if len(xs) == 0:
        raise HandAbsentError("empty amodal mask")
    return float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1)


def crop_for_hand(
    image: np.ndarray,
    quad: MaskQuad,
    side: HandSide,
    expansion: float = 1.3,
    out_size: int = 256,
) -> tuple[np.ndarray, MaskQuad, CropTransform]:
    """Crop a square window centered on one hand's amodal bbox.

    The window side is ``expansion * max(bbox_w, bbox_h)``.  Left-hand crops
    are mirrored and the quad's left/right roles swapped, so callers always
    see a right-role target.  Masks are resampled nearest, the image
    bilinear.
    """
    x_lo, y_lo, x_hi, y_hi = amodal_bbox(quad.amodal(side))
    cx, cy = (x_lo + x_hi) / 2.0, (y_lo + y_hi) / 2.0
    side_len = expansion * max(x_hi - x_lo, y_hi - y_lo)
    t = CropTransform(center=(cx, cy), side_len=side_len, out_size=out_size,
                      flipped=(side is HandSide.LEFT))

    img_crop = resample(image, t, mode="bilinear")
    ra, rv, la, lv = (resample(m, t, mode="nearest") for m in quad.all())
    if t.flipped:
        # resample already mirrored each mask; swap roles so the target hand
        # is the right-role one.
        ra, rv, la, lv = la, lv, ra, rv
    return img_crop, MaskQuad(ra, rv, la, lv), t


@dataclass(frozen=True)
class RecoveryInput:
    """Input bundle for the de-occlusion/removal inpainter.

    All grids share H x W.  ``image_deoccl`` is the crop erased on the
    target's occluded region, ``image_removal`` the crop erased on the
    distractor region; ``target_visible``/``bg_visible`` say where the
    network may read reference pixels for each task.
    """

    image_deoccl: np.ndarray      # (H, W, 3), zero inside occluded_mask
    target_visible: np.ndarray    # (H, W)
    image_removal: np.ndarray     # (H, W, 3), zero inside distractor_mask
    bg_visible: np.ndarray        # (H, W)
    occluded_mask: np.ndarray     # (H, W)
    distractor_mask: np.ndarray   # (H, W)

    def __post_init__(self):
        shapes = {self.image_deoccl.shape[:2], self.target_visible.shape,
                  self.image_removal.shape[:2], self.bg_visible.shape,
                  self.occluded_mask.shape, self.distractor_mask.shape}
        if len(shapes) != 1:
            raise GridError(f"recovery input shape mismatch: {shapes}")

    def validate(self) -> None:
        md = binarize(self.occluded_mask)
        if np.any(md * binarize(self.target_visible) > 0):
            raise GridError("occluded region overlaps the visible target mask")
        if np.any(self.image_deoccl[md > 0] != 0):
            raise GridError("image_deoccl not erased inside occluded region")
        mr = binarize(self.distractor_mask)
        if np.any(self.image_removal[mr > 0] != 0):
            raise GridError("image_removal not erased inside distractor region")

    def hole_mask(self) -> np.ndarray:
        """Union of the two erased regions (the pixels to recover)."""
        return np.maximum(self.occluded_mask, self.distractor_mask)


def build_recovery_input(image: np.ndarray, quad: MaskQuad) -> RecoveryInput:
    """Assemble the inpainter input from a right-role crop and its masks."""
    q = quad.binarized()
    m_d = occluded_region(q.right_amodal, q.right_visible)
    m_r = distractor_region(q.right_amodal, q.left_visible)
    bundle = RecoveryInput(
        image_deoccl=erase(image, m_d),
        target_visible=q.right_visible,
        image_removal=erase(image, m_r),
        bg_visible=background_visible(q.right_amodal, q.left_amodal),
        occluded_mask=m_d,
        distractor_mask=m_r,
    )
    bundle.validate()
    return bundle
