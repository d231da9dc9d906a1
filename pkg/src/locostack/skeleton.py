"""Kinematic tree and forward kinematics.

The skeleton is a topologically ordered tree of links, each driven by a
single-axis revolute joint (the root link has none). Link frames sit at
their joint origins; body positions returned by fk() are those origins
in world coordinates.
"""

from __future__ import annotations

import hashlib
import importlib.resources
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import quat
from .errors import ValidationError


@dataclass(frozen=True)
class Link:
    name: str
    parent: int
    offset: np.ndarray  # (3,) joint origin in the parent frame, m
    axis: np.ndarray    # (3,) unit rotation axis in the link frame


@dataclass(frozen=True)
class Skeleton:
    links: tuple[Link, ...]
    key_body_indices: tuple[int, ...]
    foot_indices: tuple[int, ...] = field(default=())

    def __post_init__(self):
        for i, link in enumerate(self.links):
            if i == 0:
                if link.parent != -1:
                    raise ValidationError("link 0 must be the root (parent -1)")
            elif not 0 <= link.parent < i:
                raise ValidationError(
                    f"link {i} ({link.name}) has parent {link.parent}; tree must be topologically ordered"
                )
        # full-size rigs track exactly 9 key bodies; toy rigs with fewer
        # links than that carry what they can
        expected = 9 if len(self.links) >= 9 else len(self.links) - 1
        if len(set(self.key_body_indices)) != len(self.key_body_indices) or \
                len(self.key_body_indices) != expected:
            raise ValidationError(
                f"key_body_indices must name {expected} distinct links for this rig")
        for k in self.key_body_indices:
            if not 0 <= k < len(self.links):
                raise ValidationError(f"key body index {k} out of range")

    @property
    def body_count(self) -> int:
        return len(self.links)

    @property
    def joint_count(self) -> int:
        return len(self.links) - 1

    @property
    def feature_dim(self) -> int:
        """Per-frame feature length: root pos (3) + quat (4) + joints (J) + body points (3B)."""
        return 7 + self.joint_count + 3 * self.body_count

    def index_of(self, name: str) -> int:
        for i, link in enumerate(self.links):
            if link.name == name:
                return i
        raise ValidationError(f"no link named {name!r}")

    def hash(self) -> str:
        h = hashlib.sha256()
        for link in self.links:
            h.update(link.name.encode())
            h.update(np.int64(link.parent).tobytes())
            h.update(np.asarray(link.offset, dtype=np.float64).tobytes())
            h.update(np.asarray(link.axis, dtype=np.float64).tobytes())
        h.update(np.asarray(self.key_body_indices, dtype=np.int64).tobytes())
        return h.hexdigest()[:16]

    def chain_to(self, index: int) -> list[int]:
        """Link indices from the root down to `index`, inclusive."""
        chain = [index]
        while self.links[chain[-1]].parent >= 0:
            chain.append(self.links[chain[-1]].parent)
        return chain[::-1]


def load_skeleton(path) -> Skeleton:
    with open(path) as f:
        return _skeleton_from_dict(yaml.safe_load(f))


def _skeleton_from_dict(doc: dict) -> Skeleton:
    links = tuple(
        Link(
            name=entry["name"],
            parent=int(entry["parent"]),
            offset=np.asarray(entry["offset"], dtype=np.float64),
            axis=np.asarray(entry["axis"], dtype=np.float64),
        )
        for entry in doc["links"]
    )
    return Skeleton(
        links=links,
        key_body_indices=tuple(doc["key_body_indices"]),
        foot_indices=tuple(doc.get("foot_indices", ())),
    )


_DEFAULT: Skeleton | None = None


def default_humanoid() -> Skeleton:
    """The packaged 24-link, 23-joint humanoid."""
    global _DEFAULT
    if _DEFAULT is None:
        text = importlib.resources.files("locostack.data").joinpath("humanoid_24.yaml").read_text()
        _DEFAULT = _skeleton_from_dict(yaml.safe_load(text))
    return _DEFAULT


def fk(skel: Skeleton, root_pos: np.ndarray, root_quat: np.ndarray,
       joint_pos: np.ndarray) -> np.ndarray:
    """World positions of every link origin, shape (..., B, 3).

    Batches over leading dimensions of the inputs.
    """
    root_pos = np.asarray(root_pos, dtype=np.float64)
    root_quat = np.asarray(root_quat, dtype=np.float64)
    joint_pos = np.asarray(joint_pos, dtype=np.float64)
    if joint_pos.shape[-1] != skel.joint_count:
        raise ValidationError(
            f"joint_pos has {joint_pos.shape[-1]} entries, skeleton has {skel.joint_count} joints"
        )
    batch = np.broadcast_shapes(root_pos.shape[:-1], root_quat.shape[:-1], joint_pos.shape[:-1])
    pos = [np.broadcast_to(root_pos, batch + (3,))]
    rot = [np.broadcast_to(root_quat, batch + (4,))]
    for i in range(1, skel.body_count):
        link = skel.links[i]
        p_rot = rot[link.parent]
        p = pos[link.parent] + quat.rotate(p_rot, link.offset)
        q = quat.multiply(p_rot, quat.from_axis_angle(link.axis, joint_pos[..., i - 1]))
        pos.append(p)
        rot.append(q)
    return np.stack(pos, axis=-2)


def fk_oriented(skel: Skeleton, root_pos, root_quat, joint_pos) -> tuple[np.ndarray, np.ndarray]:
    """Like fk() but also returns link orientations, shape (..., B, 4)."""
    root_pos = np.asarray(root_pos, dtype=np.float64)
    root_quat = np.asarray(root_quat, dtype=np.float64)
    joint_pos = np.asarray(joint_pos, dtype=np.float64)
    batch = np.broadcast_shapes(root_pos.shape[:-1], root_quat.shape[:-1], joint_pos.shape[:-1])
    pos = [np.broadcast_to(root_pos, batch + (3,))]
    rot = [np.broadcast_to(root_quat, batch + (4,))]
    for i in range(1, skel.body_count):
        link = skel.links[i]
        p_rot = rot[link.parent]
        pos.append(pos[link.parent] + quat.rotate(p_rot, link.offset))
        rot.append(quat.multiply(p_rot, quat.from_axis_angle(link.axis, joint_pos[..., i - 1])))
    return np.stack(pos, axis=-2), np.stack(rot, axis=-2)
