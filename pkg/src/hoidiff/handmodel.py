"""Skeletal hand model with a capsule skin.

Sixteen joints form a forest rooted at the wrist (joint 0): five
chains of three joints, one per finger.  Each of the fifteen edges
carries a capsule of fixed radius; the two distal-most capsules of a
finger taper, and the last one extends past its end joint to cover the
fingertip, which has no joint of its own.  "Skin vertices" are a fixed
deterministic sample pattern on the capsule surfaces plus a pad of
samples on a palm sphere; all contact and penetration terms in the
package run on these samples.

Every sample is stored in the frame of its bone's parent joint, so a
posed skin vertex is just x_parent + G_parent @ u.  That form keeps
the steering gradient simple and makes the left-hand mirror identity
exact: mirroring offsets and samples across x = 0 and conjugating
rotations with diag(-1, 1, 1) commutes with posing.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import InvalidLayout

N_JOINTS = 16
N_BONES = 15
PARENTS = np.array([-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 0, 10, 11, 0, 13, 14])
# bone b connects PARENTS[BONE_CHILD[b]] -> BONE_CHILD[b]
BONE_CHILD = np.arange(1, 16)

_MIRROR = np.diag([-1.0, 1.0, 1.0])


class HandTemplate:
    """Rest-pose skeleton dimensions plus the frozen skin sample pattern."""

    def __init__(self, offsets, bone_radius, bone_extension, samples_per_bone,
                 pad_center, pad_radius, side="right", _samples=None):
        self.offsets = np.asarray(offsets, dtype=np.float64).reshape(N_JOINTS, 3)
        self.bone_radius = np.asarray(bone_radius, dtype=np.float64).reshape(N_BONES)
        self.bone_extension = np.asarray(bone_extension, dtype=np.float64).reshape(N_BONES)
        self.samples_per_bone = int(samples_per_bone)
        self.pad_center = np.asarray(pad_center, dtype=np.float64).reshape(3)
        self.pad_radius = float(pad_radius)
        if side not in ("right", "left"):
            raise InvalidLayout(f"side must be 'right' or 'left', got {side!r}")
        self.side = side
        if _samples is not None:
            self.vert_parent, self.vert_local = _samples
        else:
            self.vert_parent, self.vert_local = self._build_samples()
        self.n_skin_vertices = len(self.vert_parent)

    # ------------------------------------------------------------- pattern

    def _build_samples(self):
        """Capsule-surface sample pattern, one flat list over all bones.

        Per bone: samples_per_bone points in rings around the segment at
        golden-angle azimuths; on extended (fingertip) bones the last
        sample sits on the cap apex instead.  Then 16 pad samples on the
        palm sphere.  Everything is expressed in the parent joint frame.
        """
        spb = self.samples_per_bone
        golden = np.pi * (3.0 - np.sqrt(5.0))
        parent_ids = []
        locals_ = []
        for b in range(N_BONES):
            child = BONE_CHILD[b]
            pj = PARENTS[child]
            off = self.offsets[child]
            length = np.linalg.norm(off)
            axis = off / length
            n1 = _stable_perp(axis)
            n2 = np.cross(axis, n1)
            r = self.bone_radius[b]
            ext = self.bone_extension[b]
            total = length + ext
            for k in range(spb):
                if ext > 0.0 and k == spb - 1:
                    u = axis * (total + r)  # fingertip cap apex
                else:
                    s = (k + 0.5) / spb * total
                    ang = k * golden
                    u = axis * s + r * (np.cos(ang) * n1 + np.sin(ang) * n2)
                parent_ids.append(pj)
                locals_.append(u)
        # palm pad: Fibonacci sphere around pad_center, wrist frame
        n_pad = 16
        for k in range(n_pad):
            z = 1.0 - (2.0 * k + 1.0) / n_pad
            rho = np.sqrt(max(0.0, 1.0 - z * z))
            ang = k * golden
            d = np.array([rho * np.cos(ang), rho * np.sin(ang), z])
            parent_ids.append(0)
            locals_.append(self.pad_center + self.pad_radius * d)
        return (np.asarray(parent_ids, dtype=np.int64),
                np.asarray(locals_, dtype=np.float64))

    # ------------------------------------------------------------ variants

    def mirrored(self):
        """The opposite-handed template (reflection across x = 0)."""
        samples = (self.vert_parent.copy(), self.vert_local @ _MIRROR.T)
        return HandTemplate(
            self.offsets @ _MIRROR.T, self.bone_radius, self.bone_extension,
            self.samples_per_bone, _MIRROR @ self.pad_center, self.pad_radius,
            side=("left" if self.side == "right" else "right"),
            _samples=samples)

    # -------------------------------------------------------------- serde

    def to_dict(self):
        return {
            "schema": "hand-template/1",
            "side": self.side,
            "offsets": self.offsets.tolist(),
            "bone_radius": self.bone_radius.tolist(),
            "bone_extension": self.bone_extension.tolist(),
            "samples_per_bone": self.samples_per_bone,
            "pad_center": self.pad_center.tolist(),
            "pad_radius": self.pad_radius,
            "vert_parent": self.vert_parent.tolist(),
            "vert_local": self.vert_local.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        samples = (np.asarray(d["vert_parent"], dtype=np.int64),
                   np.asarray(d["vert_local"], dtype=np.float64))
        return cls(d["offsets"], d["bone_radius"], d["bone_extension"],
                   d["samples_per_bone"], d["pad_center"], d["pad_radius"],
                   side=d["side"], _samples=samples)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _stable_perp(axis):
    """A unit vector perpendicular to axis, chosen deterministically."""
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
    p = np.cross(axis, ref)
    return p / np.linalg.norm(p)


def default_template(side="right", samples_per_bone=8):
    """Adult-scale right hand; the left is its exact mirror.

    Palm chains reach about 9 cm from the wrist, phalanx segments are
    4.5 / 3.0 cm with a 2.5 cm fingertip extension (scaled per finger),
    capsule radii taper 8 mm -> 5 mm.
    """
    knuckles = {
        "thumb": np.array([0.038, 0.036, -0.012]),
        "index": np.array([0.085, 0.026, 0.0]),
        "middle": np.array([0.090, 0.000, 0.0]),
        "ring": np.array([0.084, -0.024, 0.0]),
        "pinky": np.array([0.073, -0.045, 0.0]),
    }
    scale = {"thumb": 0.82, "index": 1.0, "middle": 1.05, "ring": 0.95, "pinky": 0.75}
    offsets = np.zeros((N_JOINTS, 3))
    radius = np.zeros(N_BONES)
    extension = np.zeros(N_BONES)
    for f, name in enumerate(knuckles):
        base = 1 + 3 * f
        koff = knuckles[name]
        d = koff / np.linalg.norm(koff)
        s = scale[name]
        offsets[base] = koff
        offsets[base + 1] = d * 0.045 * s
        offsets[base + 2] = d * 0.030 * s
        thick = 1.2 if name == "thumb" else 1.0
        radius[3 * f + 0] = 0.008 * thick
        radius[3 * f + 1] = 0.0065 * thick
        radius[3 * f + 2] = 0.005 * thick
        extension[3 * f + 2] = 0.025 * s
    tmpl = HandTemplate(offsets, radius, extension, samples_per_bone,
                        pad_center=np.array([0.038, 0.0, -0.012]),
                        pad_radius=0.022, side="right")
    return tmpl.mirrored() if side == "left" else tmpl


# ------------------------------------------------------------------ posing

def forward_kinematics(template, rotations, wrist_translation):
    """Pose the skeleton.

    Args:
        template: HandTemplate.
        rotations: (..., 16, 3, 3) local joint rotations.
        wrist_translation: (..., 3) position of joint 0.

    Returns:
        (positions (..., 16, 3), orientations (..., 16, 3, 3)), both in
        the world frame.
    """
    rotations = np.asarray(rotations, dtype=np.float64)
    wrist_translation = np.asarray(wrist_translation, dtype=np.float64)
    lead = rotations.shape[:-3]
    pos = np.zeros(lead + (N_JOINTS, 3))
    orient = np.zeros(lead + (N_JOINTS, 3, 3))
    pos[..., 0, :] = wrist_translation
    orient[..., 0, :, :] = rotations[..., 0, :, :]
    for i in range(1, N_JOINTS):
        p = PARENTS[i]
        gp = orient[..., p, :, :]
        pos[..., i, :] = pos[..., p, :] + np.einsum("...ij,j->...i", gp, template.offsets[i])
        orient[..., i, :, :] = gp @ rotations[..., i, :, :]
    return pos, orient


def skin_vertices(template, positions, orientations):
    """Posed skin sample positions, (..., n_skin, 3)."""
    vp = template.vert_parent
    return (positions[..., vp, :]
            + np.einsum("...vij,vj->...vi", orientations[..., vp, :, :],
                        template.vert_local))


def hand_interior(template, positions, orientations, points):
    """True for points inside the capsule union of a single posed hand.

    Args:
        positions, orientations: unbatched FK output (16, 3) / (16, 3, 3).
        points: (n, 3).
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    child = BONE_CHILD
    pj = PARENTS[child]
    a = positions[pj]                       # (15, 3)
    bdir = positions[child] - a
    seg_len = np.linalg.norm(bdir, axis=1)
    # a collapsed bone degrades to a sphere at the parent joint
    safe = np.where(seg_len > 0.0, seg_len, 1.0)
    axis = bdir / safe[:, None]
    total = seg_len + template.bone_extension
    rel = points[:, None, :] - a[None, :, :]        # (n, 15, 3)
    t = np.einsum("nbj,bj->nb", rel, axis)
    t = np.clip(t, 0.0, total[None, :])
    closest = a[None, :, :] + t[..., None] * axis[None, :, :]
    d = np.linalg.norm(points[:, None, :] - closest, axis=2)
    inside = np.any(d <= template.bone_radius[None, :], axis=1)
    pad_c = positions[0] + orientations[0] @ template.pad_center
    inside |= np.linalg.norm(points - pad_c, axis=1) <= template.pad_radius
    return inside


def hand_aabb(template, positions):
    """Loose bounding box of the posed capsules."""
    r = template.bone_radius.max() + template.bone_extension.max() + template.pad_radius
    return positions.min(axis=-2) - r, positions.max(axis=-2) + r
