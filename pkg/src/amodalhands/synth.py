"""Synthetic interacting-hand data generation.

Two generator variants: "syn" composes two independently rendered
single-hand records by 2D copy-paste with scale/rotation/color-jitter
augmentation; "render" places two posed hands in one camera frustum and
resolves visibility by per-pixel depth order.  Every sample carries
amodal/visible masks for both hands, per-hand clean-plate target images
and 3D joint ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grids import HandSide, JointSet, MaskQuad
from .raster import Camera, make_background, render_hand
from .skeleton import (
    ProceduralHand,
    hands_interpenetrate,
    place_hand,
    rotation_from_euler,
    sample_hand,
)
from .storage import (
    joints_to_dict,
    joints_from_dict,
    load_image,
    load_mask_quad,
    read_json,
    save_image,
    save_mask_quad,
    write_json,
)


class GenerationSkipped(RuntimeError):
    """Raised when a sample couldn't satisfy its constraints within the
    retry budget."""


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 256
    focal_factor: float = 1.2             # focal = factor * image_size
    depth_range: tuple[float, float] = (450.0, 750.0)
    depth_jitter: float = 90.0            # distractor depth offset bound (mm)
    overlap_band: tuple[float, float] = (0.05, 0.9)
    max_retries: int = 60
    paste_scale: tuple[float, float] = (0.8, 1.2)
    paste_rotation_deg: float = 45.0
    color_jitter: float = 0.1
    pair_color_distance: float = 0.15
    max_tilt_deg: float = 55.0
    coord_scale: float = 100.0            # mm per normalized 3D unit downstream

    @property
    def camera(self) -> Camera:
        return Camera(focal=self.focal_factor * self.image_size,
                      width=self.image_size, height=self.image_size)

    def to_dict(self) -> dict:
        return {"image_size": self.image_size, "focal_factor": self.focal_factor,
                "depth_range": list(self.depth_range), "depth_jitter": self.depth_jitter,
                "overlap_band": list(self.overlap_band), "max_retries": self.max_retries,
                "paste_scale": list(self.paste_scale),
                "paste_rotation_deg": self.paste_rotation_deg,
                "color_jitter": self.color_jitter,
                "pair_color_distance": self.pair_color_distance,
                "max_tilt_deg": self.max_tilt_deg, "coord_scale": self.coord_scale}

    @staticmethod
    def from_dict(d: dict) -> "SynthConfig":
        d = dict(d)
        for key in ("depth_range", "overlap_band", "paste_scale"):
            d[key] = tuple(d[key])
        return SynthConfig(**d)


@dataclass
class SynthSample:
    """One generated record: composite frame, masks, per-hand clean plates
    and ground-truth joints."""

    image: np.ndarray
    masks: MaskQuad
    target_right: np.ndarray
    target_left: np.ndarray | None
    joints_right: JointSet
    joints_left: JointSet
    meta: dict = field(default_factory=dict)

    def target(self, side: HandSide):
        return self.target_right if side is HandSide.RIGHT else self.target_left

    def joints(self, side: HandSide) -> JointSet:
        return self.joints_right if side is HandSide.RIGHT else self.joints_left


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _random_rotation(rng: np.random.Generator, max_tilt_deg: float) -> np.ndarray:
    tilt = np.deg2rad(max_tilt_deg)
    return rotation_from_euler(rng.uniform(-tilt, tilt), rng.uniform(-tilt, tilt),
                               rng.uniform(-np.pi, np.pi))


def _translation_for_pixel(camera: Camera, u: float, v: float, z: float) -> np.ndarray:
    """Camera-space position whose projection is pixel (u, v) at depth z."""
    x = (u - camera.width / 2.0 + 0.5 - camera.principal_offset[0]) * z / camera.focal
    y = (v - camera.height / 2.0 + 0.5 - camera.principal_offset[1]) * z / camera.focal
    return np.array([x, y, z])


def _joints_record(hand: ProceduralHand, camera: Camera) -> JointSet:
    """Project a placed hand: 2D pixels, root-relative camera-space 3D mm."""
    uv, z = camera.project(hand.joints)
    valid = ((uv[:, 0] >= 0) & (uv[:, 0] < camera.width)
             & (uv[:, 1] >= 0) & (uv[:, 1] < camera.height) & (z > 0))
    rel = hand.joints - hand.joints[0]
    return JointSet(joints_2d=uv, joints_3d=rel, valid=valid, root_index=0)


def _place_sampled_hand(rng: np.random.Generator, cfg: SynthConfig,
                        hand: ProceduralHand, u: float, v: float,
                        z: float) -> ProceduralHand:
    rotation = _random_rotation(rng, cfg.max_tilt_deg)
    return place_hand(hand, rotation, _translation_for_pixel(cfg.camera, u, v, z))


def _overlap_fraction(m_ra: np.ndarray, m_la: np.ndarray) -> float:
    area = float(m_ra.sum())
    if area == 0:
        return 0.0
    return float((m_ra * m_la).sum()) / area


# ---------------------------------------------------------------------------
# depth-ordered render variant
# ---------------------------------------------------------------------------

def render_sample(rng: np.random.Generator, cfg: SynthConfig,
                  keep_debug: bool = False) -> SynthSample:
    """Two posed hands in one frustum; visibility resolved by depth order.

    Placement retries until the hands overlap within the configured band
    without capsule interpenetration.  ``keep_debug`` attaches the per-hand
    depth buffers to the sample metadata.
    """
    camera = cfg.camera
    size = cfg.image_size
    for _ in range(cfg.max_retries):
        background = make_background(rng, size, size)
        right_local = sample_hand(rng, "right")
        left_local = sample_hand(rng, "left")

        u_r, v_r = rng.uniform(0.30, 0.70, size=2) * size
        z_r = rng.uniform(*cfg.depth_range)
        right = _place_sampled_hand(rng, cfg, right_local, u_r, v_r, z_r)

        u_l = u_r + rng.uniform(-0.30, 0.30) * size
        v_l = v_r + rng.uniform(-0.30, 0.30) * size
        z_l = z_r + rng.uniform(-cfg.depth_jitter, cfg.depth_jitter)
        left = _place_sampled_hand(rng, cfg, left_local, u_l, v_l, z_l)

        if hands_interpenetrate(right, left):
            continue

        solo_r = render_hand(right, camera, background)
        solo_l = render_hand(left, camera, background)
        m_ra, m_la = solo_r.mask, solo_l.mask
        if m_ra.sum() == 0 or m_la.sum() == 0:
            continue
        lo, hi = cfg.overlap_band
        if not (lo <= _overlap_fraction(m_ra, m_la) <= hi):
            continue

        # nearest surface wins; depth ties (never on continuous geometry)
        # fall to the right hand
        right_nearer = solo_r.depth <= solo_l.depth
        m_rv = (m_ra * right_nearer).astype(np.float32)
        m_lv = (m_la * (1.0 - right_nearer)).astype(np.float32)
        image = np.where(m_lv[..., None] > 0, solo_l.image, solo_r.image)

        debug = ({"depth_right": solo_r.depth, "depth_left": solo_l.depth}
                 if keep_debug else None)
        return SynthSample(
            image=image.astype(np.float32),
            masks=MaskQuad(m_ra, m_rv, m_la, m_lv),
            target_right=solo_r.image,
            target_left=solo_l.image,
            joints_right=_joints_record(right, camera),
            joints_left=_joints_record(left, camera),
            meta={
                "variant": "render",
                "root_camera_right": right.joints[0].tolist(),
                "root_camera_left": left.joints[0].tolist(),
                "debug": debug,
            },
        )
    raise GenerationSkipped("render: no valid placement within retry budget")


# ---------------------------------------------------------------------------
# copy-paste variant
# ---------------------------------------------------------------------------

def _paste_cutout(src_img: np.ndarray, src_mask: np.ndarray, src_center: np.ndarray,
                  dst_center: np.ndarray, angle: float, scale: float,
                  out_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbor affine paste of a masked cutout onto a blank frame."""
    cos, sin = np.cos(angle), np.sin(angle)
    yy, xx = np.meshgrid(np.arange(out_size, dtype=np.float64),
                         np.arange(out_size, dtype=np.float64), indexing="ij")
    dx = xx - dst_center[0]
    dy = yy - dst_center[1]
    # inverse rotation/scale back into the source frame
    sx = (cos * dx + sin * dy) / scale + src_center[0]
    sy = (-sin * dx + cos * dy) / scale + src_center[1]
    xi = np.rint(sx).astype(np.int64)
    yi = np.rint(sy).astype(np.int64)
    h, w = src_mask.shape
    inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    xi_c = np.clip(xi, 0, w - 1)
    yi_c = np.clip(yi, 0, h - 1)
    mask = np.where(inside, src_mask[yi_c, xi_c], 0.0).astype(np.float32)
    img = np.where(inside[..., None], src_img[yi_c, xi_c], 0.0).astype(np.float32)
    return img, mask


def _affine_points(pts: np.ndarray, src_center: np.ndarray, dst_center: np.ndarray,
                   angle: float, scale: float) -> np.ndarray:
    cos, sin = np.cos(angle), np.sin(angle)
    rot = np.array([[cos, -sin], [sin, cos]])
    return (pts - src_center) @ (rot.T * scale) + dst_center


def _mean_hand_color(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    sel = mask > 0
    if not np.any(sel):
        return np.zeros(3)
    return img[sel].mean(axis=0)


def copy_paste_sample(rng: np.random.Generator, cfg: SynthConfig) -> SynthSample:
    """Paste an augmented left-hand cutout over a right-hand scene.

    The two source hands are paired by skin tone (mean-color distance
    bounded), and the clean background plate of the right scene gives the
    left hand its removal target.
    """
    camera = cfg.camera
    size = cfg.image_size

    plate = make_background(rng, size, size)
    right_local = sample_hand(rng, "right")
    u_r, v_r = rng.uniform(0.32, 0.68, size=2) * size
    z_r = rng.uniform(*cfg.depth_range)
    right = _place_sampled_hand(rng, cfg, right_local, u_r, v_r, z_r)
    solo_r = render_hand(right, camera, plate)
    if solo_r.mask.sum() == 0:
        raise GenerationSkipped("syn: right hand missed the frame")
    joints_r = _joints_record(right, camera)

    left_color = np.clip(right_local.base_color + rng.uniform(-0.06, 0.06, size=3),
                         0.05, 1.0)
    left_local = sample_hand(rng, "left", base_color=left_color)
    left = _place_sampled_hand(rng, cfg, left_local, size / 2.0, size / 2.0,
                               rng.uniform(*cfg.depth_range))
    solo_l = render_hand(left, camera, np.zeros((size, size, 3), dtype=np.float32))
    if solo_l.mask.sum() == 0:
        raise GenerationSkipped("syn: left hand missed the frame")
    joints_l_src = _joints_record(left, camera)

    ys, xs = np.nonzero(solo_l.mask)
    src_center = np.array([(xs.min() + xs.max()) / 2.0, (ys.min() + ys.max()) / 2.0])
    ys_r, xs_r = np.nonzero(solo_r.mask)
    right_center = np.array([(xs_r.min() + xs_r.max()) / 2.0,
                             (ys_r.min() + ys_r.max()) / 2.0])

    lo, hi = cfg.overlap_band
    for _ in range(cfg.max_retries):
        angle = np.deg2rad(rng.uniform(-cfg.paste_rotation_deg, cfg.paste_rotation_deg))
        scale = rng.uniform(*cfg.paste_scale)
        jitter = rng.uniform(1.0 - cfg.color_jitter, 1.0 + cfg.color_jitter, size=3)
        dst_center = right_center + rng.uniform(-0.35, 0.35, size=2) * size

        cut_img, cut_mask = _paste_cutout(solo_l.image, solo_l.mask, src_center,
                                          dst_center, angle, scale, size)
        if not (lo <= _overlap_fraction(solo_r.mask, cut_mask) <= hi):
            continue
        cut_img = np.clip(cut_img * jitter[None, None, :], 0.0, 1.0).astype(np.float32)
        pair_dist = float(np.abs(_mean_hand_color(solo_r.image, solo_r.mask)
                                 - _mean_hand_color(cut_img, cut_mask)).mean())
        if pair_dist > cfg.pair_color_distance:
            continue

        m = cut_mask[..., None]
        image = (solo_r.image * (1.0 - m) + cut_img * m).astype(np.float32)
        target_left = (plate * (1.0 - m) + cut_img * m).astype(np.float32)

        m_ra = solo_r.mask
        m_la = cut_mask
        m_rv = (m_ra * (1.0 - m_la)).astype(np.float32)

        j2 = _affine_points(joints_l_src.joints_2d, src_center, dst_center, angle, scale)
        rot3 = np.eye(3)
        rot3[:2, :2] = np.array([[np.cos(angle), -np.sin(angle)],
                                 [np.sin(angle), np.cos(angle)]])
        j3 = (joints_l_src.joints_3d @ rot3.T) * scale
        valid_l = (joints_l_src.valid
                   & (j2[:, 0] >= 0) & (j2[:, 0] < size)
                   & (j2[:, 1] >= 0) & (j2[:, 1] < size))
        joints_l = JointSet(joints_2d=j2, joints_3d=j3, valid=valid_l, root_index=0)

        return SynthSample(
            image=image,
            masks=MaskQuad(m_ra, m_rv, m_la, m_la.copy()),
            target_right=solo_r.image,
            target_left=target_left,
            joints_right=joints_r,
            joints_left=joints_l,
            meta={
                "variant": "syn",
                "augment": {"rotation_deg": float(np.rad2deg(angle)),
                            "scale": float(scale),
                            "color_jitter": jitter.tolist(),
                            "paste_center": dst_center.tolist()},
                "pair_color_distance": pair_dist,
                "root_camera_right": right.joints[0].tolist(),
            },
        )
    raise GenerationSkipped("syn: no valid paste placement within retry budget")


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

def variant_plan(n: int, mix: float) -> list[str]:
    """Deterministic stratified assignment of variants; the copy-paste
    count is within 1 of n * mix."""
    return ["syn" if int((i + 1) * mix) - int(i * mix) == 1 else "render"
            for i in range(n)]


def generate_samples(n: int, mix: float, seed: int,
                     cfg: SynthConfig | None = None) -> list[SynthSample]:
    """Generate n samples in memory; deterministic per (n, mix, seed, cfg)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= mix <= 1.0:
        raise ValueError("mix must be in [0, 1]")
    cfg = cfg or SynthConfig()
    plan = variant_plan(n, mix)
    children = np.random.SeedSequence(seed).spawn(n)
    samples = []
    for i, (variant, child) in enumerate(zip(plan, children)):
        rng = np.random.default_rng(child)
        make = copy_paste_sample if variant == "syn" else render_sample
        sample = None
        for _ in range(8):
            try:
                sample = make(rng, cfg)
                break
            except GenerationSkipped:
                continue
        if sample is None:
            raise RuntimeError(f"sample {i}: generation failed after retries")
        sample.meta["id"] = f"{i:06d}"
        sample.meta["seed"] = int(child.generate_state(1)[0])
        samples.append(sample)
    return samples


def _hand_meta(joints: JointSet, side: str, extra: dict | None = None) -> dict:
    d = {"side": side, "crop": None, **joints_to_dict(joints)}
    if extra:
        d.update(extra)
    return d


def save_sample(out_dir: Path, sample: SynthSample) -> dict:
    sid = sample.meta["id"]
    save_image(out_dir / "images" / f"{sid}.png", sample.image)
    save_mask_quad(out_dir / "masks" / f"{sid}.png", sample.masks)
    save_image(out_dir / "targets" / f"{sid}_right.png", sample.target_right)
    if sample.target_left is not None:
        save_image(out_dir / "targets" / f"{sid}_left.png", sample.target_left)
    meta = {
        "id": sid,
        "seed": sample.meta["seed"],
        "variant": sample.meta["variant"],
        "augment": sample.meta.get("augment"),
        "hands": {
            "right": _hand_meta(sample.joints_right, "right",
                                {"root_camera": sample.meta.get("root_camera_right")}),
            "left": _hand_meta(sample.joints_left, "left",
                               {"root_camera": sample.meta.get("root_camera_left")}),
        },
    }
    write_json(out_dir / "meta" / f"{sid}.json", meta)
    return {"id": sid, "seed": sample.meta["seed"], "variant": sample.meta["variant"]}


def generate_dataset(n: int, mix: float, seed: int, out_dir,
                     cfg: SynthConfig | None = None) -> dict:
    """Generate a dataset on disk and return its manifest."""
    cfg = cfg or SynthConfig()
    out = Path(out_dir)
    for sub in ("images", "masks", "targets", "meta"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for sample in generate_samples(n, mix, seed, cfg):
        entries.append(save_sample(out, sample))
    entries.sort(key=lambda e: e["id"])
    counts = {"syn": sum(1 for e in entries if e["variant"] == "syn"),
              "render": sum(1 for e in entries if e["variant"] == "render")}
    manifest = {"n": n, "mix": mix, "seed": seed, "config": cfg.to_dict(),
                "counts": counts, "samples": entries}
    write_json(out / "manifest.json", manifest)
    return manifest


def load_sample(dataset_dir, sample_id: str) -> SynthSample:
    root = Path(dataset_dir)
    meta = read_json(root / "meta" / f"{sample_id}.json")
    target_left_path = root / "targets" / f"{sample_id}_left.png"
    return SynthSample(
        image=load_image(root / "images" / f"{sample_id}.png"),
        masks=load_mask_quad(root / "masks" / f"{sample_id}.png"),
        target_right=load_image(root / "targets" / f"{sample_id}_right.png"),
        target_left=load_image(target_left_path) if target_left_path.exists() else None,
        joints_right=joints_from_dict(meta["hands"]["right"]),
        joints_left=joints_from_dict(meta["hands"]["left"]),
        meta={"id": meta["id"], "seed": meta["seed"], "variant": meta["variant"]},
    )


def load_dataset(dataset_dir) -> tuple[dict, list[SynthSample]]:
    root = Path(dataset_dir)
    manifest = read_json(root / "manifest.json")
    samples = [load_sample(root, entry["id"]) for entry in manifest["samples"]]
    return manifest, samples
