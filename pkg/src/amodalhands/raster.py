"""Software rasterizer: pinhole camera, ray-capsule intersection, z-buffer.

Shading is local (Lambert + ambient) with deterministic object-space value
noise, so a hand rendered alone produces bit-identical pixels to the same
hand in a joint scene wherever it is the nearest surface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridError
from .skeleton import ProceduralHand

AMBIENT = 0.45
DIFFUSE = 0.55
LIGHT_DIR = np.array([0.30, 0.22, 0.93])
LIGHT_DIR = LIGHT_DIR / np.linalg.norm(LIGHT_DIR)
NOISE_CELL_MM = 6.0
NOISE_AMPLITUDE = 0.05


@dataclass(frozen=True)
class Camera:
    """Pinhole camera looking along +z; pixel (ix, iy) centers its ray at
    ((ix + 0.5 - W/2 - dx)/f, (iy + 0.5 - H/2 - dy)/f, 1)."""

    focal: float
    width: int
    height: int
    principal_offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.focal <= 0:
            raise GridError(f"camera focal must be > 0, got {self.focal}")

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(N, 3) camera-space mm -> ((N, 2) index pixel coords, (N,) depth)."""
        points = np.asarray(points, dtype=np.float64)
        z = points[:, 2]
        u = self.focal * points[:, 0] / z + self.width / 2.0 - 0.5 + self.principal_offset[0]
        v = self.focal * points[:, 1] / z + self.height / 2.0 - 0.5 + self.principal_offset[1]
        return np.stack([u, v], axis=1), z

    def ray_dirs(self, xi: np.ndarray, yi: np.ndarray) -> np.ndarray:
        """Unnormalized ray directions with dz=1 (so ray parameter = depth)."""
        dx = (xi + 0.5 - self.width / 2.0 - self.principal_offset[0]) / self.focal
        dy = (yi + 0.5 - self.height / 2.0 - self.principal_offset[1]) / self.focal
        return np.stack([dx, dy, np.ones_like(dx)], axis=-1)


def _value_noise(points: np.ndarray) -> np.ndarray:
    """Deterministic hash noise in [-0.5, 0.5) from 3D positions."""
    q = np.floor(points / NOISE_CELL_MM).astype(np.int64).astype(np.uint64)
    h = (q[..., 0] * np.uint64(0x8DA6B343)
         ^ q[..., 1] * np.uint64(0xD8163841)
         ^ q[..., 2] * np.uint64(0xCB1AB31F))
    h = h * np.uint64(0x9E3779B97F4A7C15)
    h ^= h >> np.uint64(29)
    return (h & np.uint64(0xFFFFFF)).astype(np.float64) / float(0x1000000) - 0.5


def _ray_capsule_depth(dirs: np.ndarray, a: np.ndarray, b: np.ndarray,
                       radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Nearest intersection depth of origin rays with one capsule.

    Returns (depth, normal); depth is +inf for misses.  ``dirs`` has dz=1,
    so the ray parameter equals camera depth.
    """
    n = dirs.shape[0]
    depth = np.full(n, np.inf)
    normal = np.zeros((n, 3))

    ab = b - a
    dd = np.einsum("ij,ij->i", dirs, dirs)
    ab2 = float(ab @ ab)
    r2 = radius * radius

    # infinite cylinder around the segment axis
    if ab2 > 1e-12:
        nd = dirs @ ab
        md = float(-a @ ab)
        m = -a
        a_coef = dd - nd * nd / ab2
        b_coef = 2.0 * (dirs @ m - md * nd / ab2)
        c_coef = float(m @ m) - md * md / ab2 - r2
        disc = b_coef * b_coef - 4.0 * a_coef * c_coef
        ok = (disc >= 0) & (a_coef > 1e-12)
        t = np.where(ok, (-b_coef - np.sqrt(np.maximum(disc, 0.0))) / (2.0 * a_coef), np.inf)
        s = np.where(ok, (md + t * nd) / ab2, -1.0)
        hit = ok & (t > 1e-6) & (s >= 0.0) & (s <= 1.0)
        depth = np.where(hit, t, depth)
        if np.any(hit):
            p = dirs[hit] * t[hit, None]
            axis_pt = a + s[hit, None] * ab
            normal[hit] = (p - axis_pt) / radius

    # cap spheres at both endpoints
    for center in (a, b):
        dc = dirs @ center
        disc = dc * dc - dd * (float(center @ center) - r2)
        ok = disc >= 0
        t = np.where(ok, (dc - np.sqrt(np.maximum(disc, 0.0))) / dd, np.inf)
        hit = ok & (t > 1e-6) & (t < depth)
        depth = np.where(hit, t, depth)
        if np.any(hit):
            p = dirs[hit] * t[hit, None]
            normal[hit] = (p - center) / radius

    return depth, normal


def _shade(hand: ProceduralHand, bone: int, points: np.ndarray,
           normals: np.ndarray) -> np.ndarray:
    lambert = np.maximum(0.0, -(normals @ LIGHT_DIR))
    intensity = AMBIENT + DIFFUSE * lambert
    color = hand.base_color[None, :] * (hand.bone_tint[bone] * intensity)[:, None]
    color = color + _value_noise(points)[:, None] * NOISE_AMPLITUDE
    return np.clip(color, 0.0, 1.0)


@dataclass
class RenderResult:
    image: np.ndarray              # (H, W, 3) float32
    depth: np.ndarray              # (H, W) float64, +inf where no surface
    mask: np.ndarray               # (H, W) float32 {0, 1}


def render_hand(hand: ProceduralHand, camera: Camera,
                background: np.ndarray) -> RenderResult:
    """Rasterize one hand over a background with a private z-buffer."""
    h, w = camera.height, camera.width
    image = np.array(background, dtype=np.float32, copy=True)
    zbuf = np.full((h, w), np.inf)

    for bone, (a, b, radius) in enumerate(hand.capsules()):
        if a[2] <= radius or b[2] <= radius:
            continue  # behind or straddling the camera plane
        (uv, z) = camera.project(np.stack([a, b]))
        r_px = camera.focal * radius / min(a[2], b[2]) + 2.0
        x_lo = max(0, int(np.floor(uv[:, 0].min() - r_px)))
        x_hi = min(w - 1, int(np.ceil(uv[:, 0].max() + r_px)))
        y_lo = max(0, int(np.floor(uv[:, 1].min() - r_px)))
        y_hi = min(h - 1, int(np.ceil(uv[:, 1].max() + r_px)))
        if x_lo > x_hi or y_lo > y_hi:
            continue
        ys, xs = np.mgrid[y_lo:y_hi + 1, x_lo:x_hi + 1]
        ys, xs = ys.ravel(), xs.ravel()
        dirs = camera.ray_dirs(xs.astype(np.float64), ys.astype(np.float64))
        depth, normal = _ray_capsule_depth(dirs, np.asarray(a, dtype=np.float64),
                                           np.asarray(b, dtype=np.float64), radius)
        closer = depth < zbuf[ys, xs]
        if not np.any(closer):
            continue
        sel = np.nonzero(closer)[0]
        pts = dirs[sel] * depth[sel, None]
        color = _shade(hand, bone, pts, normal[sel])
        zbuf[ys[sel], xs[sel]] = depth[sel]
        image[ys[sel], xs[sel]] = color.astype(np.float32)

    mask = np.isfinite(zbuf).astype(np.float32)
    return RenderResult(image=image, depth=zbuf, mask=mask)


def make_background(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Procedural background: directional two-color gradient plus grain."""
    c0 = rng.uniform(0.08, 0.9, size=3)
    c1 = rng.uniform(0.08, 0.9, size=3)
    angle = rng.uniform(0, 2 * np.pi)
    yy, xx = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width),
                         indexing="ij")
    ramp = (np.cos(angle) * xx + np.sin(angle) * yy + 1.0) / 2.0
    img = c0[None, None] + (c1 - c0)[None, None] * ramp[..., None]
    img = img + rng.normal(0.0, 0.015, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)
