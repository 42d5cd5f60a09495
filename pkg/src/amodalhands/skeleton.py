"""Hand skeleton layout and a procedural capsule-skinned hand.

21 joints: wrist + 4 per finger (thumb, index, middle, ring, pinky),
20 bones forming a tree rooted at the wrist.  The procedural hand poses
the skeleton with anatomically-limited curl/splay angles and wraps each
bone in a capsule; it stands in for a scanned parametric mesh.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grids import NUM_JOINTS

FINGERS = ("thumb", "index", "middle", "ring", "pinky")

JOINT_NAMES = ["wrist"] + [f"{f}{i}" for f in FINGERS for i in range(1, 5)]

# parent -> child pairs; finger f occupies joints 1+4f .. 4+4f
BONES: tuple[tuple[int, int], ...] = tuple(
    (0 if i == 0 else 4 * f + i, 4 * f + i + 1)
    for f in range(5) for i in range(4)
)

ROOT_INDEX = 0


@dataclass(frozen=True)
class SkeletonDef:
    joint_names: tuple[str, ...] = tuple(JOINT_NAMES)
    bones: tuple[tuple[int, int], ...] = BONES
    root_index: int = ROOT_INDEX

    def __post_init__(self):
        if len(self.joint_names) != NUM_JOINTS:
            raise ValueError("skeleton must have 21 joints")
        children = [c for _, c in self.bones]
        if sorted(children) != list(range(1, NUM_JOINTS)):
            raise ValueError("bones must form a tree covering joints 1..20")


DEFAULT_SKELETON = SkeletonDef()

# palm landmarks in the hand frame (mm): x thumb-side, y finger direction,
# z out of the back of the hand
_MCP_POSITIONS = {
    "thumb": (-32.0, 12.0, 0.0),
    "index": (-20.0, 46.0, 0.0),
    "middle": (0.0, 50.0, 0.0),
    "ring": (18.0, 46.0, 0.0),
    "pinky": (34.0, 38.0, 0.0),
}

_SEGMENT_LENGTHS = {
    "thumb": (34.0, 30.0, 24.0),
    "index": (40.0, 24.0, 20.0),
    "middle": (45.0, 27.0, 22.0),
    "ring": (40.0, 25.0, 20.0),
    "pinky": (31.0, 20.0, 18.0),
}

# capsule radii (mm): palm bones are fat, finger segments taper
_PALM_RADIUS = 14.0
_FINGER_RADII = (8.0, 7.0, 6.0)
_THUMB_RADII = (11.0, 9.0, 8.0)

# per-joint flexion limits (rad): mcp, pip, dip
_CURL_LIMITS = (np.deg2rad(80.0), np.deg2rad(95.0), np.deg2rad(75.0))
_SPLAY_LIMIT = np.deg2rad(12.0)


def rotation_about(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a unit axis."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def rotation_from_euler(rx: float, ry: float, rz: float) -> np.ndarray:
    return (rotation_about([0, 0, 1], rz)
            @ rotation_about([0, 1, 0], ry)
            @ rotation_about([1, 0, 0], rx))


@dataclass
class HandPose:
    """Anatomical pose parameters: one splay + three curls per finger."""

    splay: np.ndarray   # (5,) rad
    curls: np.ndarray   # (5, 3) rad

    def clipped(self) -> "HandPose":
        curls = np.clip(self.curls, 0.0, np.array(_CURL_LIMITS))
        splay = np.clip(self.splay, -_SPLAY_LIMIT, _SPLAY_LIMIT)
        return HandPose(splay, curls)


def sample_pose(rng: np.random.Generator) -> HandPose:
    """Random pose within the limit table; fingers loosely correlated so
    hands look natural rather than uniformly random."""
    base_curl = rng.uniform(0.05, 0.8)
    curls = np.empty((5, 3))
    for f in range(5):
        finger_curl = np.clip(base_curl + rng.normal(0, 0.25), 0.0, 1.0)
        for s in range(3):
            frac = np.clip(finger_curl + rng.normal(0, 0.15), 0.0, 1.0)
            curls[f, s] = frac * _CURL_LIMITS[s]
    splay = rng.uniform(-_SPLAY_LIMIT, _SPLAY_LIMIT, size=5)
    return HandPose(splay=splay, curls=curls).clipped()


def pose_joints(pose: HandPose, side: str = "right",
                scale: float = 1.0) -> np.ndarray:
    """Forward kinematics: (21, 3) joint positions in the hand frame (mm).

    The left hand is the right hand mirrored in x.
    """
    joints = np.zeros((NUM_JOINTS, 3))
    for f, name in enumerate(FINGERS):
        mcp = np.array(_MCP_POSITIONS[name]) * scale
        joints[4 * f + 1] = mcp
        if name == "thumb":
            # thumb points diagonally and flexes about a tilted axis
            direction = np.array([-0.75, 0.66, 0.0])
            direction /= np.linalg.norm(direction)
            lateral = np.array([0.55, 0.62, 0.55])
        else:
            direction = np.array([0.0, 1.0, 0.0])
            lateral = np.array([1.0, 0.0, 0.0])
        lateral = lateral / np.linalg.norm(lateral)
        direction = rotation_about([0, 0, 1], pose.splay[f]) @ direction
        pos = mcp
        for s in range(3):
            direction = rotation_about(lateral, pose.curls[f, s]) @ direction
            pos = pos + direction * _SEGMENT_LENGTHS[name][s] * scale
            joints[4 * f + 1 + s + 1] = pos
    if side == "left":
        joints = joints * np.array([-1.0, 1.0, 1.0])
    return joints


def bone_radii(scale: float = 1.0) -> np.ndarray:
    """(20,) capsule radius per bone, following the bone ordering."""
    radii = np.empty(len(BONES))
    for b, (parent, child) in enumerate(BONES):
        finger = (child - 1) // 4
        seg = (child - 1) % 4
        if seg == 0:
            radii[b] = _PALM_RADIUS
        elif finger == 0:
            radii[b] = _THUMB_RADII[seg - 1]
        else:
            radii[b] = _FINGER_RADII[seg - 1]
    return radii * scale


@dataclass
class ProceduralHand:
    """A posed hand placed in camera space: joints, capsules, skin tone."""

    side: str
    joints: np.ndarray                 # (21, 3) camera-space mm
    radii: np.ndarray                  # (20,)
    base_color: np.ndarray             # (3,) in [0, 1]
    bone_tint: np.ndarray              # (20,) per-bone brightness factor
    skeleton: SkeletonDef = field(default_factory=lambda: DEFAULT_SKELETON)

    def capsules(self) -> list[tuple[np.ndarray, np.ndarray, float]]:
        return [(self.joints[p], self.joints[c], float(self.radii[b]))
                for b, (p, c) in enumerate(self.skeleton.bones)]


SKIN_PALETTE = np.array([
    [0.96, 0.80, 0.69],
    [0.88, 0.67, 0.56],
    [0.78, 0.57, 0.44],
    [0.64, 0.46, 0.35],
    [0.48, 0.34, 0.26],
    [0.35, 0.24, 0.18],
])


def sample_hand(rng: np.random.Generator, side: str,
                base_color: np.ndarray | None = None) -> ProceduralHand:
    """Sample a posed hand in its local frame (wrist at origin)."""
    pose = sample_pose(rng)
    scale = rng.uniform(0.9, 1.1)
    joints = pose_joints(pose, side=side, scale=scale)
    if base_color is None:
        base_color = SKIN_PALETTE[rng.integers(0, len(SKIN_PALETTE))]
        base_color = np.clip(base_color + rng.normal(0, 0.02, size=3), 0.05, 1.0)
    tint = rng.uniform(0.92, 1.05, size=len(BONES))
    return ProceduralHand(side=side, joints=joints, radii=bone_radii(scale),
                          base_color=np.asarray(base_color, dtype=np.float64),
                          bone_tint=tint)


def place_hand(hand: ProceduralHand, rotation: np.ndarray,
               translation: np.ndarray) -> ProceduralHand:
    """Rigidly place a local-frame hand into camera space."""
    joints = hand.joints @ rotation.T + np.asarray(translation, dtype=np.float64)
    return ProceduralHand(side=hand.side, joints=joints, radii=hand.radii,
                          base_color=hand.base_color, bone_tint=hand.bone_tint,
                          skeleton=hand.skeleton)


def _segment_distance(p0, p1, q0, q1) -> float:
    """Minimum distance between segments p0p1 and q0q1."""
    u = p1 - p0
    v = q1 - q0
    w = p0 - q0
    a, b, c = u @ u, u @ v, v @ v
    d, e = u @ w, v @ w
    denom = a * c - b * b
    if denom > 1e-12:
        s = np.clip((b * e - c * d) / denom, 0.0, 1.0)
    else:
        s = 0.0
    t = (b * s + e) / c if c > 1e-12 else 0.0
    t = np.clip(t, 0.0, 1.0)
    # refine s for the clamped t
    if a > 1e-12:
        s = np.clip((b * t - d) / a, 0.0, 1.0)
    return float(np.linalg.norm(p0 + s * u - (q0 + t * v)))


def hands_interpenetrate(a: ProceduralHand, b: ProceduralHand,
                         clearance: float = 0.0) -> bool:
    """True when any capsule pair of the two hands overlaps."""
    for p0, p1, r1 in a.capsules():
        for q0, q1, r2 in b.capsules():
            if _segment_distance(p0, p1, q0, q1) < r1 + r2 + clearance:
                return True
    return False
