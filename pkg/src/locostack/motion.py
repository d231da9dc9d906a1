"""Whole-body motion frames and clips.

Frame feature layout (length F = 7 + J + 3B), used everywhere a frame is
flattened — clip files, generator windows, reference buffers:

    [0:3]        root position, world, m
    [3:7]        root quaternion [w, x, y, z]
    [7:7+J]      joint angles, rad
    [7+J:F]      body-point positions, world, row-major (B, 3), m
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import quat
from .errors import ValidationError
from .skeleton import Skeleton, fk

FPS_DEFAULT = 50.0
CLIP_FORMAT_VERSION = 1
HEADING_EPS = 1e-4


@dataclass(frozen=True)
class MotionFrame:
    root_pos: np.ndarray   # (3,)
    root_quat: np.ndarray  # (4,) unit, w >= 0
    joint_pos: np.ndarray  # (J,)
    body_pos: np.ndarray   # (B, 3)

    @staticmethod
    def from_pose(skel: Skeleton, root_pos, root_quat, joint_pos) -> "MotionFrame":
        """Build a frame with body points recomputed through fk (fk-consistent)."""
        root_pos = np.asarray(root_pos, dtype=np.float64)
        root_quat = quat.normalize(root_quat)
        joint_pos = np.asarray(joint_pos, dtype=np.float64)
        return MotionFrame(root_pos, root_quat, joint_pos,
                           fk(skel, root_pos, root_quat, joint_pos))

    def fk_error(self, skel: Skeleton) -> float:
        """Max body-point distance from the fk of the stored pose, m."""
        return float(np.max(np.linalg.norm(
            self.body_pos - fk(skel, self.root_pos, self.root_quat, self.joint_pos), axis=-1)))


@dataclass
class MotionClip:
    fps: float
    frames: list[MotionFrame]
    label: str = ""

    def __post_init__(self):
        if len(self.frames) < 3:
            raise ValidationError("a clip needs at least 3 frames")
        if self.fps <= 0:
            raise ValidationError("fps must be positive")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def duration(self) -> float:
        return (len(self.frames) - 1) / self.fps

    def features(self) -> np.ndarray:
        """All frames encoded, shape (T, F)."""
        return np.stack([encode_frame(f) for f in self.frames])


def feature_dim(joint_count: int, body_count: int) -> int:
    return 7 + joint_count + 3 * body_count


def encode_frame(frame: MotionFrame) -> np.ndarray:
    return np.concatenate([
        frame.root_pos,
        frame.root_quat,
        frame.joint_pos,
        frame.body_pos.reshape(-1),
    ])


def decode_frame(vec: np.ndarray, joint_count: int, body_count: int) -> MotionFrame:
    vec = np.asarray(vec, dtype=np.float64)
    f = feature_dim(joint_count, body_count)
    if vec.shape != (f,):
        raise ValidationError(f"feature vector has shape {vec.shape}, expected ({f},)")
    j = joint_count
    return MotionFrame(
        root_pos=vec[0:3].copy(),
        root_quat=vec[3:7].copy(),
        joint_pos=vec[7:7 + j].copy(),
        body_pos=vec[7 + j:].reshape(body_count, 3).copy(),
    )


def heading_between(pose_a: MotionFrame, pose_b: MotionFrame,
                    eps: float = HEADING_EPS) -> np.ndarray:
    """Unit heading in the world horizontal plane from pose_a toward pose_b.

    Falls back to pose_a's facing direction when the horizontal
    displacement is below eps.
    """
    d = pose_b.root_pos[:2] - pose_a.root_pos[:2]
    n = float(np.linalg.norm(d))
    if n < eps:
        yaw = quat.yaw_of(pose_a.root_quat)
        return np.array([np.cos(yaw), np.sin(yaw)])
    return d / n


def finite_diff_velocity(clip: MotionClip, index: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(linear m/s, angular rad/s, joint rad/s) at a frame.

    Central differences in the interior, one-sided at the clip ends;
    angular velocity comes from the relative-rotation vector scaled by
    the sampling rate.
    """
    n = len(clip.frames)
    if not 0 <= index < n:
        raise ValidationError(f"frame index {index} out of range [0, {n})")
    lo = max(index - 1, 0)
    hi = min(index + 1, n - 1)
    scale = clip.fps / (hi - lo)
    a, b = clip.frames[hi], clip.frames[lo]
    lin = (a.root_pos - b.root_pos) * scale
    ang = quat.relative_rotvec(a.root_quat, b.root_quat) * scale
    jnt = (a.joint_pos - b.joint_pos) * scale
    return lin, ang, jnt


def clip_velocities(clip: MotionClip) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stacked finite_diff_velocity over all frames: (T,3), (T,3), (T,J)."""
    lin, ang, jnt = zip(*(finite_diff_velocity(clip, i) for i in range(len(clip.frames))))
    return np.stack(lin), np.stack(ang), np.stack(jnt)


# ---- clip files -----------------------------------------------------------------
#
# A clip file is a single self-describing document: a JSON header line
# followed by the frames in feature layout, either little-endian float64
# (binary) or one decimal-text line per frame.


def save_clip(path, clip: MotionClip, skel: Skeleton, text: bool = False) -> None:
    feats = clip.features()
    header = {
        "format_version": CLIP_FORMAT_VERSION,
        "fps": clip.fps,
        "joint_count": skel.joint_count,
        "body_count": skel.body_count,
        "label": clip.label,
        "skeleton_hash": skel.hash(),
        "frame_count": len(clip.frames),
        "encoding": "text" if text else "binary",
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        if text:
            for row in feats:
                f.write(" ".join(repr(float(v)) for v in row).encode() + b"\n")
        else:
            f.write(feats.astype("<f8").tobytes())


def load_clip(path, expect_skeleton: Skeleton | None = None) -> MotionClip:
    with open(path, "rb") as f:
        header = json.loads(f.readline())
        if header.get("format_version") != CLIP_FORMAT_VERSION:
            raise ValidationError(f"{path}: unsupported clip format_version {header.get('format_version')}")
        j, b, t = header["joint_count"], header["body_count"], header["frame_count"]
        fdim = feature_dim(j, b)
        if header["encoding"] == "text":
            rows = [np.array([float(v) for v in f.readline().split()]) for _ in range(t)]
            feats = np.stack(rows)
        else:
            feats = np.frombuffer(f.read(t * fdim * 8), dtype="<f8").reshape(t, fdim)
    if expect_skeleton is not None and header["skeleton_hash"] != expect_skeleton.hash():
        raise ValidationError(f"{path}: clip was recorded on a different skeleton")
    frames = [decode_frame(feats[i], j, b) for i in range(t)]
    return MotionClip(fps=header["fps"], frames=frames, label=header["label"])
