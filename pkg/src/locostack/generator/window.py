"""Motion windows and their conditioning.

A window is H consecutive frame feature vectors expressed in the
canonical frame of the first conditioning frame: that frame's xy and yaw
are removed, and heights are taken relative to the terrain under it.
The canonical transform makes the generator translation- and
yaw-equivariant by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import quat
from ..errors import ValidationError
from ..motion import MotionClip, heading_between
from ..skeleton import Skeleton
from ..terrain import HeightField, ScanPattern, height_at, sample_scan

HORIZON_DEFAULT = 25


@dataclass(frozen=True)
class Anchor:
    """Pose the canonical frame is attached to: world xy, yaw, terrain height."""
    x: float
    y: float
    yaw: float
    ground: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw, self.ground])


@dataclass
class Condition:
    heading: np.ndarray  # (2,) unit, canonical frame
    scan: np.ndarray     # (S,) heights relative to base height
    past: np.ndarray     # (2, F) canonical frame features

    def __post_init__(self):
        n = float(np.linalg.norm(self.heading))
        if abs(n - 1.0) > 1e-6:
            raise ValidationError(f"heading must be unit length (got {n:.6f})")


@dataclass
class WindowSample:
    window: np.ndarray   # (H, F) canonical
    cond: Condition
    anchor: Anchor
    field: HeightField


def _rotate_xy(xy: np.ndarray, ang: float) -> np.ndarray:
    c, s = np.cos(ang), np.sin(ang)
    out = xy.copy()
    out[..., 0] = c * xy[..., 0] - s * xy[..., 1]
    out[..., 1] = s * xy[..., 0] + c * xy[..., 1]
    return out


def canonicalize(feats: np.ndarray, anchor: Anchor, joint_count: int,
                 body_count: int) -> np.ndarray:
    """World-frame features (..., F) -> canonical frame of the anchor."""
    feats = np.asarray(feats, dtype=np.float64)
    out = feats.copy()
    j = joint_count
    shift = np.array([anchor.x, anchor.y, anchor.ground])
    out[..., 0:3] -= shift
    out[..., 0:2] = _rotate_xy(out[..., 0:2], -anchor.yaw)
    out[..., 3:7] = quat.multiply(quat.from_yaw(-anchor.yaw), out[..., 3:7])
    body = out[..., 7 + j:].reshape(*out.shape[:-1], body_count, 3)
    body -= shift
    body[..., 0:2] = _rotate_xy(body[..., 0:2], -anchor.yaw)
    out[..., 7 + j:] = body.reshape(*out.shape[:-1], 3 * body_count)
    return out


def decanonicalize(feats: np.ndarray, anchor: Anchor, joint_count: int,
                   body_count: int) -> np.ndarray:
    """Inverse of canonicalize."""
    feats = np.asarray(feats, dtype=np.float64)
    out = feats.copy()
    j = joint_count
    shift = np.array([anchor.x, anchor.y, anchor.ground])
    out[..., 0:2] = _rotate_xy(out[..., 0:2], anchor.yaw)
    out[..., 0:3] += shift
    out[..., 3:7] = quat.multiply(quat.from_yaw(anchor.yaw), out[..., 3:7])
    body = out[..., 7 + j:].reshape(*out.shape[:-1], body_count, 3)
    body[..., 0:2] = _rotate_xy(body[..., 0:2], anchor.yaw)
    body += shift
    out[..., 7 + j:] = body.reshape(*out.shape[:-1], 3 * body_count)
    return out


def anchor_from_frame(frame, field: HeightField) -> Anchor:
    yaw = float(quat.yaw_of(frame.root_quat))
    return Anchor(x=float(frame.root_pos[0]), y=float(frame.root_pos[1]), yaw=yaw,
                  ground=float(height_at(field, frame.root_pos[:2])))


def extract_windows(clip: MotionClip, field: HeightField, skel: Skeleton,
                    pattern: ScanPattern, horizon: int = HORIZON_DEFAULT,
                    stride: int = 2) -> list[WindowSample]:
    """Slide over a clip: two conditioning frames then `horizon` target
    frames, canonicalized to the first conditioning frame."""
    feats = clip.features()
    n, f = feats.shape
    samples = []
    for start in range(0, n - horizon - 2 + 1, stride):
        a_frame = clip.frames[start]
        anchor = anchor_from_frame(a_frame, field)
        window = canonicalize(feats[start + 2:start + 2 + horizon], anchor,
                              skel.joint_count, skel.body_count)
        past = canonicalize(feats[start:start + 2], anchor,
                            skel.joint_count, skel.body_count)
        head_world = heading_between(a_frame, clip.frames[start + 2 + horizon - 1])
        heading = _rotate_xy(head_world.copy(), -anchor.yaw)
        heading /= np.linalg.norm(heading)
        scan = sample_scan(field, a_frame.root_pos, anchor.yaw, pattern)
        samples.append(WindowSample(window=window,
                                    cond=Condition(heading=heading, scan=scan, past=past),
                                    anchor=anchor, field=field))
    return samples
