"""Trajectory representation, canonical frames, and dataset files.

A trajectory is F frames of J joints, each joint carrying a 6D
rotation and a 3D translation.  Joint order is fixed by the layout:
16 right-hand joints, then 16 left-hand joints when present, then one
or two object parts.  The flat vector the diffusion model sees is
frame-major, joint-minor, rotation channels before translation, length
F * J * 9.

Two canonical transforms:
  * normalize: subtract the frame-0 right-wrist translation from every
    joint translation in every frame (idempotent).
  * object-relative encoding: rewrite each object part pose relative to
    the same-frame right wrist, which removes global drift from the
    object channels the model must predict.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, InvalidLayout, MissingRightHand, SizeMismatch
from .rotgeom import matrix_to_rot6d, rot6d_to_matrix

TRAJECTORY_SCHEMA = "sight-traj/1"
HAND_JOINTS = 16
CHANNELS_PER_JOINT = 9  # 6 rotation + 3 translation


@dataclass(frozen=True)
class LayoutSpec:
    """Joint layout of a trajectory family."""

    hands: tuple = ("right",)
    object_parts: int = 1

    def __post_init__(self):
        if tuple(self.hands) not in (("right",), ("right", "left")):
            raise InvalidLayout(f"unsupported hand set {self.hands!r}")
        if self.object_parts not in (1, 2):
            raise InvalidLayout(f"object_parts must be 1 or 2, got {self.object_parts}")
        object.__setattr__(self, "hands", tuple(self.hands))

    @property
    def J(self):
        return HAND_JOINTS * len(self.hands) + self.object_parts

    def hand_slice(self, side):
        if side not in self.hands:
            raise InvalidLayout(f"layout has no {side} hand")
        start = 0 if side == "right" else HAND_JOINTS
        return slice(start, start + HAND_JOINTS)

    def object_joint(self, part):
        if not 0 <= part < self.object_parts:
            raise InvalidLayout(f"object part {part} out of range")
        return HAND_JOINTS * len(self.hands) + part

    def flat_length(self, F):
        return F * self.J * CHANNELS_PER_JOINT

    def to_dict(self):
        return {"hands": list(self.hands), "object_parts": self.object_parts}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["hands"]), int(d["object_parts"]))


@dataclass
class Trajectory:
    """Posed scene over time.

    rot6d: (F, J, 6), transl: (F, J, 3).  object_relative marks whether
    the object channels are wrist-relative (model space) or absolute;
    files always store absolute poses.
    """

    layout: LayoutSpec
    fps: float
    action: str
    rot6d: np.ndarray
    transl: np.ndarray
    object_relative: bool = False

    def __post_init__(self):
        self.rot6d = np.asarray(self.rot6d, dtype=np.float64)
        self.transl = np.asarray(self.transl, dtype=np.float64)
        J = self.layout.J
        if self.rot6d.ndim != 3 or self.rot6d.shape[1:] != (J, 6):
            raise SizeMismatch(f"rot6d shape {self.rot6d.shape} != (F, {J}, 6)")
        if self.transl.shape != self.rot6d.shape[:2] + (3,):
            raise SizeMismatch(f"transl shape {self.transl.shape} inconsistent")

    @property
    def F(self):
        return self.rot6d.shape[0]

    def copy(self):
        return Trajectory(self.layout, self.fps, self.action,
                          self.rot6d.copy(), self.transl.copy(),
                          self.object_relative)

    # ------------------------------------------------------- decode helpers

    def hand_rotations(self, side="right"):
        """Local joint rotation matrices for one hand, (F, 16, 3, 3)."""
        sl = self.layout.hand_slice(side)
        return rot6d_to_matrix(self.rot6d[:, sl, :])

    def wrist_translation(self, side="right"):
        return self.transl[:, self.layout.hand_slice(side).start, :]

    def object_pose(self, part=0):
        """(R (F, 3, 3), t (F, 3)) of one object part, as stored."""
        j = self.layout.object_joint(part)
        return rot6d_to_matrix(self.rot6d[:, j, :]), self.transl[:, j, :]


# ------------------------------------------------------------- transforms

def normalize(traj: Trajectory) -> Trajectory:
    """Anchor the scene: frame-0 right wrist translation becomes zero."""
    if "right" not in traj.layout.hands:
        raise MissingRightHand("normalization anchors on the right wrist")
    out = traj.copy()
    anchor = traj.transl[0, traj.layout.hand_slice("right").start, :].copy()
    out.transl = out.transl - anchor
    return out


def encode_object_relative(traj: Trajectory) -> Trajectory:
    """Rewrite object parts relative to the same-frame right wrist."""
    if traj.object_relative:
        return traj.copy()
    if "right" not in traj.layout.hands:
        raise MissingRightHand("object encoding is relative to the right wrist")
    out = traj.copy()
    wrist_j = traj.layout.hand_slice("right").start
    Rw = rot6d_to_matrix(traj.rot6d[:, wrist_j, :])     # (F, 3, 3)
    tw = traj.transl[:, wrist_j, :]
    RwT = np.swapaxes(Rw, -1, -2)
    for part in range(traj.layout.object_parts):
        j = traj.layout.object_joint(part)
        Ro = rot6d_to_matrix(traj.rot6d[:, j, :])
        out.rot6d[:, j, :] = matrix_to_rot6d(RwT @ Ro)
        out.transl[:, j, :] = np.einsum("fij,fj->fi", RwT,
                                        traj.transl[:, j, :] - tw)
    out.object_relative = True
    return out


def decode_object_relative(traj: Trajectory) -> Trajectory:
    """Inverse of encode_object_relative."""
    if not traj.object_relative:
        return traj.copy()
    out = traj.copy()
    wrist_j = traj.layout.hand_slice("right").start
    Rw = rot6d_to_matrix(traj.rot6d[:, wrist_j, :])
    tw = traj.transl[:, wrist_j, :]
    for part in range(traj.layout.object_parts):
        j = traj.layout.object_joint(part)
        Rrel = rot6d_to_matrix(traj.rot6d[:, j, :])
        out.rot6d[:, j, :] = matrix_to_rot6d(Rw @ Rrel)
        out.transl[:, j, :] = np.einsum("fij,fj->fi", Rw,
                                        traj.transl[:, j, :]) + tw
    out.object_relative = False
    return out


def flatten(traj: Trajectory) -> np.ndarray:
    """Flat state vector: frames outer, joints inner, rot6d then transl."""
    per_joint = np.concatenate([traj.rot6d, traj.transl], axis=-1)  # (F, J, 9)
    return per_joint.reshape(-1).copy()


def unflatten(vec, layout: LayoutSpec, F, fps, action="",
              object_relative=False) -> Trajectory:
    vec = np.asarray(vec, dtype=np.float64)
    want = layout.flat_length(F)
    if vec.shape != (want,):
        raise SizeMismatch(f"flat length {vec.shape} != ({want},)")
    per_joint = vec.reshape(F, layout.J, CHANNELS_PER_JOINT)
    return Trajectory(layout, fps, action, per_joint[..., :6].copy(),
                      per_joint[..., 6:].copy(), object_relative)


# ----------------------------------------------------------------- files

def trajectory_to_dict(traj: Trajectory, provenance=None):
    if traj.object_relative:
        raise DataError("files store absolute poses; decode before saving")
    d = {
        "schema": TRAJECTORY_SCHEMA,
        "layout": traj.layout.to_dict(),
        "F": traj.F,
        "fps": traj.fps,
        "action": traj.action,
        "rot6d": traj.rot6d.tolist(),
        "transl": traj.transl.tolist(),
    }
    if provenance is not None:
        d["provenance"] = provenance
    return d


def trajectory_from_dict(d):
    if d.get("schema") != TRAJECTORY_SCHEMA:
        raise DataError(f"unknown trajectory schema {d.get('schema')!r}")
    traj = Trajectory(LayoutSpec.from_dict(d["layout"]), float(d["fps"]),
                      d.get("action", ""), np.asarray(d["rot6d"]),
                      np.asarray(d["transl"]))
    if traj.F != int(d["F"]):
        raise DataError("frame count field disagrees with array shape")
    return traj, d.get("provenance")


def save_trajectory(path, traj: Trajectory, provenance=None):
    with open(path, "w") as fh:
        json.dump(trajectory_to_dict(traj, provenance), fh)


def load_trajectory(path, with_provenance=False):
    with open(path) as fh:
        traj, prov = trajectory_from_dict(json.load(fh))
    return (traj, prov) if with_provenance else traj


# ----------------------------------------------------------------- dataset

@dataclass
class SampleRecord:
    """One dataset row: trajectory file plus condition features."""

    id: str
    trajectory: str            # path relative to the dataset root
    action: str                # full phrase, e.g. "pour cup"
    label: str                 # class verb, e.g. "pour"
    raw_text: str
    text_feature: np.ndarray
    visual_feature: np.ndarray
    mesh_id: str
    category: str
    instance_id: str
    split: str                 # "train" | "test"

    def to_dict(self):
        return {
            "id": self.id, "trajectory": self.trajectory, "action": self.action,
            "label": self.label, "raw_text": self.raw_text,
            "text_feature": np.asarray(self.text_feature).tolist(),
            "visual_feature": np.asarray(self.visual_feature).tolist(),
            "mesh_id": self.mesh_id, "category": self.category,
            "instance_id": self.instance_id, "split": self.split,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["text_feature"] = np.asarray(d["text_feature"], dtype=np.float64)
        d["visual_feature"] = np.asarray(d["visual_feature"], dtype=np.float64)
        return cls(**d)


@dataclass
class DatasetIndex:
    """Parsed samples.json plus the directory it lives in."""

    root: str
    layout: LayoutSpec
    fps: float
    F: int
    provider: dict
    records: list = field(default_factory=list)

    def save(self):
        doc = {
            "schema": "sight-dataset/1",
            "layout": self.layout.to_dict(),
            "fps": self.fps,
            "F": self.F,
            "provider": self.provider,
            "samples": [r.to_dict() for r in self.records],
        }
        with open(os.path.join(self.root, "samples.json"), "w") as fh:
            json.dump(doc, fh)

    @classmethod
    def load(cls, root):
        path = os.path.join(root, "samples.json")
        if not os.path.isfile(path):
            raise DataError(f"no samples.json under {root}")
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("schema") != "sight-dataset/1":
            raise DataError(f"unknown dataset schema {doc.get('schema')!r}")
        return cls(root, LayoutSpec.from_dict(doc["layout"]), float(doc["fps"]),
                   int(doc["F"]), doc.get("provider", {}),
                   [SampleRecord.from_dict(d) for d in doc["samples"]])

    def split(self, which):
        return [r for r in self.records if r.split == which]

    def load_trajectory(self, record: SampleRecord) -> Trajectory:
        return load_trajectory(os.path.join(self.root, record.trajectory))

    def mesh_paths(self, mesh_id):
        """Part mesh files for one object, in part order."""
        out = []
        for part in range(self.layout.object_parts):
            p = os.path.join(self.root, "meshes", f"{mesh_id}_part{part}.obj")
            if not os.path.isfile(p):
                raise DataError(f"missing mesh file {p}")
            out.append(p)
        return out
