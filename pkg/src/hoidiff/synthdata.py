"""Synthetic tabletop manipulation dataset with meshes and features.

Scenes are one right hand grasping a two-part object (body + lid) that
rests on the z=0 plane.  Five scripted actions drive the wrist; while a
part is held its pose is the wrist pose composed with a fixed grasp
transform, so hand-object contact stays rigid through the motion and
only smooth low-frequency noise perturbs it.

Canonical scene frame (before per-sample placement): the object axis is
vertical through the origin, the hand approaches from -y with the palm
facing +y, fingers stacked vertically and curling horizontally around
the part.  Per sample the whole scene is rotated about z and offset on
the table, which keeps the solved grasp valid for every placement.

Grasps are solved once per object instance by bisecting each finger's
curl angle until its skin verts just sink into an analytic signed
distance proxy of the part (boxes and surfaces of revolution admit
cheap section SDFs; the faceted meshes inscribe them to well under a
millimeter).  Target penetration is 0.8 mm, which keeps worst-case
interpenetration depth a few millimeters under noise while guaranteeing
vertex-rule contact on the ~6 mm tessellated part meshes.
"""

from __future__ import annotations

import os
import shutil
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .features import DescriptorEmbedder, embed_text
from .handmodel import (N_JOINTS, default_template, forward_kinematics,
                        skin_vertices)
from .meshgeom import box_mesh, revolve_profile, save_obj
from .motiondata import (DatasetIndex, LayoutSpec, SampleRecord, Trajectory,
                         save_trajectory)
from .retrieval import RetrievalDB, RetrievalEntry
from .rotgeom import RigidTransform, matrix_to_rot6d

ACTIONS = ("lift", "open", "pour", "push", "shake")
CATEGORIES = ("box", "bottle", "cup")
DESCRIPTOR_DIM = 14

_PHRASES = {
    "lift": ("lift the {} straight up", "raise the {} off the table"),
    "open": ("open the {} lid", "take the lid off the {}"),
    "pour": ("pour from the {}", "tip the {} over to pour"),
    "push": ("push the {} across the table", "slide the {} forward"),
    "shake": ("shake the {} from side to side", "shake the {} briskly"),
}

MESH_EDGE = 0.006          # tessellation target; the contact rule needs
                           # surface verts every few millimeters
LID_OVERHANG = 0.008       # lid rim past the body footprint, so fingers
                           # wrapping the lid edge clear the body below
LID_MIN_HALF = 0.040       # rim at least this far out along the wrap
                           # direction, else fingers overshoot the lid
LID_EDGE = 0.004           # lids tessellate finer: the pinch contact
                           # patch is small, so vertex spacing matters
PAD_GAP = 0.0015
CURL_TARGET = -0.0010      # solved fingertip clearance (slight sink-in)
_CURL_FAC = np.array([1.0, 0.75, 0.55])


# ----------------------------------------------------------- primitives

def _rotz(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _axis_rotations(axis, angles):
    """Rodrigues about one fixed unit axis, (F,) angles -> (F, 3, 3)."""
    axis = np.asarray(axis, dtype=np.float64)
    angles = np.atleast_1d(np.asarray(angles, dtype=np.float64))
    k = axis / np.linalg.norm(axis)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    c = np.cos(angles)[:, None, None]
    s = np.sin(angles)[:, None, None]
    return c * np.eye(3) + s * K + (1.0 - c) * np.outer(k, k)


def _rotvec_matrices(w):
    """(F, 3) rotation vectors -> (F, 3, 3), exact for any magnitude."""
    w = np.asarray(w, dtype=np.float64)
    ang = np.linalg.norm(w, axis=1)
    safe = np.where(ang > 0.0, ang, 1.0)
    k = w / safe[:, None]
    K = np.zeros((len(w), 3, 3))
    K[:, 0, 1], K[:, 0, 2] = -k[:, 2], k[:, 1]
    K[:, 1, 0], K[:, 1, 2] = k[:, 2], -k[:, 0]
    K[:, 2, 0], K[:, 2, 1] = -k[:, 1], k[:, 0]
    c = np.cos(ang)[:, None, None]
    s = np.sin(ang)[:, None, None]
    kk = np.einsum("fi,fj->fij", k, k)
    R = c * np.eye(3) + s * K + (1.0 - c) * kk
    R[ang == 0.0] = np.eye(3)
    return R


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def _ramp(frames, f0, f1):
    return _smoothstep((np.arange(frames) - f0) / max(f1 - f0, 1e-9))


def smooth_noise(rng, frames, channels, fps, amp):
    """Sum of three low-frequency sinusoids per channel, peak <= amp."""
    t = np.arange(frames) / fps
    out = np.zeros((frames, channels))
    for _ in range(3):
        f = rng.uniform(0.3, 1.5, channels)
        ph = rng.uniform(0.0, 2.0 * np.pi, channels)
        a = rng.uniform(0.4, 1.0, channels) * (amp / 3.0)
        out += a * np.sin(2.0 * np.pi * f * t[:, None] + ph)
    return out


# ------------------------------------------------------- object shapes

def _dense_profile(points, step):
    """Subdivide an (r, z) polyline so no segment exceeds step."""
    out = [points[0]]
    for (r0, z0), (r1, z1) in zip(points, points[1:]):
        n = max(1, int(np.ceil(np.hypot(r1 - r0, z1 - z0) / step)))
        for i in range(1, n + 1):
            u = i / n
            out.append((r0 + u * (r1 - r0), z0 + u * (z1 - z0)))
    return out


def _revolve(points, r_max, step=MESH_EDGE):
    n_seg = max(24, int(np.ceil(2.0 * np.pi * r_max / step)))
    return revolve_profile(_dense_profile(points, step), n_seg=n_seg)


@dataclass
class InstanceSpec:
    """One object: meshes, canonical poses, solved grasps, SDF params."""

    mesh_id: str
    category: str
    body: object
    lid: object
    body_h: float
    lid_h: float
    extents: np.ndarray            # body AABB extents, descriptor input
    body_pose: RigidTransform      # canonical rest poses, world frame
    lid_pose: RigidTransform
    body_sdf: tuple                # (kind, dims) pieces, canonical coords
    lid_sdf: tuple
    grasp_body: tuple              # (R_w, t_w, curls)
    grasp_lid: tuple
    hinge_point: np.ndarray
    hinge_axis: np.ndarray


def _part_sdf(kind, dims, pts):
    """Signed distance to an upright part, canonical world coordinates."""
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    if kind == "box":
        hx, hy, z0, z1 = dims
        qx = np.abs(x) - hx
        qy = np.abs(y) - hy
        d2 = np.where((qx > 0) | (qy > 0),
                      np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0)),
                      np.maximum(qx, qy))
    elif kind == "cyl":
        r, z0, z1 = dims
        d2 = np.hypot(x, y) - r
    elif kind == "cone":
        rb, rt, z0, z1 = dims
        u = np.clip((z - z0) / (z1 - z0), 0.0, 1.0)
        d2 = np.hypot(x, y) - (rb + (rt - rb) * u)
    else:
        raise DataError(f"unknown sdf kind {kind!r}")
    dz = np.maximum(z0 - z, z - z1)
    inside = (d2 < 0.0) & (dz < 0.0)
    return np.where(inside, np.maximum(d2, dz),
                    np.hypot(np.maximum(d2, 0.0), np.maximum(dz, 0.0)))


def _sdf_min(pieces, pts):
    """Union distance over several (kind, dims) pieces."""
    d = _part_sdf(pieces[0][0], pieces[0][1], pts)
    for kind, dims in pieces[1:]:
        d = np.minimum(d, _part_sdf(kind, dims, pts))
    return d


def _build_parts(family, rng):
    """Meshes + analytic dims for one instance; lid rims overhang 8 mm."""
    if family == 0:
        w = rng.uniform(0.055, 0.080)
        d = rng.uniform(0.050, 0.075)
        h = rng.uniform(0.085, 0.120)
        body = box_mesh((w, d, h), max_edge=MESH_EDGE)
        lh = 0.012
        ld_y = max(d / 2 + LID_OVERHANG, LID_MIN_HALF)
        lid = box_mesh((w + 2 * LID_OVERHANG, 2 * ld_y, lh),
                       max_edge=LID_EDGE)
        body_sdf = (("box", (w / 2, d / 2, 0.0, h)),)
        lid_sdf = (("box", (w / 2 + LID_OVERHANG, ld_y, h, h + lh)),)
    elif family == 1:
        r = rng.uniform(0.024, 0.036)
        h = rng.uniform(0.100, 0.140)
        hh = h / 2
        prof = [(0.0, -hh), (r, -hh), (r, 0.15 * h), (0.55 * r, 0.28 * h),
                (0.55 * r, hh), (0.0, hh)]
        body = _revolve(prof, r)
        lh = 0.014
        rl = max(r + LID_OVERHANG, LID_MIN_HALF)
        lid = _revolve([(0.0, -lh / 2), (rl, -lh / 2), (rl, lh / 2),
                        (0.0, lh / 2)], rl, step=LID_EDGE)
        # piecewise body: barrel, shoulder cone, neck; fingers pinching
        # the cap rim curl down into the neck zone and must see the true
        # thin radius there, not a full-height cylinder
        body_sdf = (("cyl", (r, 0.0, 0.65 * h)),
                    ("cone", (r, 0.55 * r, 0.65 * h, 0.78 * h)),
                    ("cyl", (0.55 * r, 0.78 * h, h)))
        lid_sdf = (("cyl", (rl, h, h + lh)),)
    else:
        rt = rng.uniform(0.030, 0.042)
        rb = 0.72 * rt
        h = rng.uniform(0.085, 0.110)
        hh = h / 2
        body = _revolve([(0.0, -hh), (rb, -hh), (rt, hh), (0.0, hh)], rt)
        lh = 0.010
        rl = max(rt + LID_OVERHANG, LID_MIN_HALF)
        lid = _revolve([(0.0, -lh / 2), (rl, -lh / 2), (rl, lh / 2),
                        (0.0, lh / 2)], rl, step=LID_EDGE)
        body_sdf = (("cone", (rb, rt, 0.0, h)),)
        lid_sdf = (("cyl", (rl, h, h + lh)),)
    return body, lid, h, lh, body_sdf, lid_sdf


# ------------------------------------------------------------- grasping

def finger_rotations(curls):
    """(..., 5) curl angles -> (..., 16, 3, 3) local joint rotations.

    Curl is rotation about the joint's local +y, which folds the finger
    toward the palm; distal joints get 0.75x / 0.55x of the base angle.
    The wrist slot is left at identity.
    """
    curls = np.asarray(curls, dtype=np.float64)
    lead = curls.shape[:-1]
    rot = np.zeros(lead + (N_JOINTS, 3, 3))
    rot[...] = np.eye(3)
    for f in range(5):
        for j in range(3):
            th = curls[..., f] * _CURL_FAC[j]
            c, s = np.cos(th), np.sin(th)
            m = np.zeros(lead + (3, 3))
            m[..., 0, 0] = c
            m[..., 0, 2] = s
            m[..., 1, 1] = 1.0
            m[..., 2, 0] = -s
            m[..., 2, 2] = c
            rot[..., 1 + 3 * f + j, :, :] = m
    return rot


_SIDE_FRAME = np.array([[-1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, -1.0, 0.0]])
# palm down, fingers extending -y: they wrap the lid rim opposite the
# +y hinge, so nothing sweeps into the static body while the lid opens
_TOP_FRAME = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def _finger_clearance(template, wrist_R, wrist_t, curls, finger, pieces):
    rot = finger_rotations(curls)
    rot[0] = wrist_R
    pos, orient = forward_kinematics(template, rot, wrist_t)
    sv = skin_vertices(template, pos, orient)
    base = 1 + 3 * finger
    sel = np.isin(template.vert_parent, (base, base + 1))
    return float(_sdf_min(pieces, sv[sel]).min())


def _solve_curls(template, wrist_R, wrist_t, pieces, hi=1.9, iters=9):
    """Curl each finger to CURL_TARGET clearance; full curl if no reach.

    Clearance is not monotone in the curl angle (a fingertip can swing
    past a thin part), so first scan a coarse grid for the entry into
    contact, then bisect inside that bracket.
    """
    curls = np.zeros(5)
    grid = np.linspace(0.15, hi, 13)
    for f in range(5):
        trial = curls.copy()
        lo, up = 0.0, None
        for th in grid:
            trial[f] = th
            if _finger_clearance(template, wrist_R, wrist_t, trial, f,
                                 pieces) <= CURL_TARGET:
                up = th
                break
            lo = th
        if up is None:
            curls[f] = hi
            continue
        for _ in range(iters):
            mid = 0.5 * (lo + up)
            trial[f] = mid
            if _finger_clearance(template, wrist_R, wrist_t, trial, f,
                                 pieces) > CURL_TARGET:
                lo = mid
            else:
                up = mid
        curls[f] = up
    return curls


def _section_halfwidth(piece, z_g):
    """Part half-width along y at height z_g, for pad placement."""
    kind, dims = piece
    if kind == "box":
        return dims[1]
    if kind == "cyl":
        return dims[0]
    rb, rt, z0, z1 = dims
    return rb + (rt - rb) * float(np.clip((z_g - z0) / (z1 - z0), 0.0, 1.0))


def _solve_side_grasp(template, pieces, body_h):
    """Wrap grasp on the body flank, palm facing +y.

    Curls are solved against the whole object so fingers overreaching
    the flank stop on whatever surface they meet first.
    """
    z_g = max(0.028, body_h - 0.060)
    s = _section_halfwidth(pieces[0], z_g)
    pad = template.pad_center
    t_w = (np.array([0.0, -(s + PAD_GAP + template.pad_radius), z_g])
           - _SIDE_FRAME @ pad)
    curls = _solve_curls(template, _SIDE_FRAME, t_w, pieces)
    return _SIDE_FRAME, t_w, curls


def _solve_top_grasp(template, pieces, lid_half_y, z_top):
    """Pinch on the lid from above, fingers wrapping the -y rim."""
    y_t = float(np.clip(0.066 - lid_half_y, 0.0, lid_half_y - 0.010))
    pad = template.pad_center
    t_w = (np.array([0.0, y_t, z_top + PAD_GAP + template.pad_radius])
           - _TOP_FRAME @ pad)
    curls = _solve_curls(template, _TOP_FRAME, t_w, pieces)
    return _TOP_FRAME, t_w, curls


def build_instance(index, rng, template):
    family = index % 3
    body, lid, h, lh, body_sdf, lid_sdf = _build_parts(family, rng)
    ext = body.aabb_hi - body.aabb_lo
    body_pose = RigidTransform(np.eye(3), [0.0, 0.0, h / 2])
    lid_pose = RigidTransform(np.eye(3), [0.0, 0.0, h + lh / 2])
    both = body_sdf + lid_sdf
    grasp_body = _solve_side_grasp(template, both, h)
    lk, ld = lid_sdf[0]
    lid_half = (ld[0], ld[1]) if lk == "box" else (ld[0], ld[0])
    grasp_lid = _solve_top_grasp(template, both, lid_half[1], h + lh)
    return InstanceSpec(
        mesh_id=f"inst_{index:03d}", category=CATEGORIES[family],
        body=body, lid=lid, body_h=h, lid_h=lh, extents=ext,
        body_pose=body_pose, lid_pose=lid_pose,
        body_sdf=body_sdf, lid_sdf=lid_sdf,
        grasp_body=grasp_body, grasp_lid=grasp_lid,
        hinge_point=np.array([0.0, lid_half[1], h]),
        hinge_axis=np.array([-1.0, 0.0, 0.0]))


# ------------------------------------------------------------- motions

def _wrist_deltas(action, frames, fps, P, wrist0, hinge_point, hinge_axis):
    """Per-frame rigid deltas M(t); the wrist path is M(t) o wrist0."""
    f = frames
    R = np.tile(np.eye(3), (f, 1, 1))
    p = np.zeros((f, 3))
    a_w = P.R @ np.array([0.0, 1.0, 0.0])
    lat = P.R @ np.array([1.0, 0.0, 0.0])
    if action == "lift":
        p[:, 2] = 0.15 * _ramp(f, 0.12 * f, 0.70 * f)
    elif action == "push":
        p += (0.18 * _ramp(f, 0.15 * f, 0.85 * f))[:, None] * a_w
    elif action == "shake":
        t = np.arange(f) / fps
        env = _ramp(f, 0.10 * f, 0.25 * f) * (1.0 - _ramp(f, 0.85 * f,
                                                          0.98 * f))
        osc = 0.018 * np.sin(2.0 * np.pi * 3.0 * t) * env
        p[:, 2] = 0.08 * _ramp(f, 0.0, 0.20 * f)
        p += osc[:, None] * lat
    elif action == "pour":
        phi = np.deg2rad(100.0) * _ramp(f, 0.30 * f, 0.80 * f)
        R = _axis_rotations(lat, phi)
        pivot = wrist0.t
        p = pivot - np.einsum("fij,j->fi", R, pivot)
        p[:, 2] += 0.10 * _ramp(f, 0.0, 0.25 * f)
    elif action == "open":
        phi = np.deg2rad(70.0) * _ramp(f, 0.15 * f, 0.85 * f)
        axis = P.R @ hinge_axis
        point = P.apply(hinge_point)
        R = _axis_rotations(axis, phi)
        p = point - np.einsum("fij,j->fi", R, point)
    else:
        raise DataError(f"unknown action {action!r}")
    return R, p


def synth_sample(inst, action, layout, frames, fps, rng, template):
    """One trajectory plus the grasp descriptor entries and its phrase."""
    if action not in _PHRASES:
        raise DataError(f"unknown action {action!r}")
    psi = rng.uniform(0.0, 2.0 * np.pi)
    off = rng.uniform(-0.05, 0.05, 2)
    phrase = _PHRASES[action][rng.integers(len(_PHRASES[action]))]
    P = RigidTransform(_rotz(psi), np.array([off[0], off[1], 0.0]))

    body_w = P.compose(inst.body_pose)
    lid_w = P.compose(inst.lid_pose)
    if action == "open":
        g_R, g_t, curls = inst.grasp_lid
        held_w = lid_w
    else:
        g_R, g_t, curls = inst.grasp_body
        held_w = body_w
    wrist0 = P.compose(RigidTransform(g_R, g_t))
    G = wrist0.inverse().compose(held_w)
    L = inst.body_pose.inverse().compose(inst.lid_pose)

    M_R, M_p = _wrist_deltas(action, frames, fps, P, wrist0,
                             inst.hinge_point, inst.hinge_axis)
    W_R = np.einsum("fij,jk->fik", M_R, wrist0.R)
    W_t = np.einsum("fij,j->fi", M_R, wrist0.t) + M_p

    # smooth wrist-local noise; the held part rides it, so contact holds
    n_rot = _rotvec_matrices(smooth_noise(rng, frames, 3, fps, 0.020))
    n_tra = smooth_noise(rng, frames, 3, fps, 0.0035)
    Wn_R = np.einsum("fij,fjk->fik", W_R, n_rot)
    Wn_t = W_t + np.einsum("fij,fj->fi", W_R, n_tra)

    held_R = np.einsum("fij,jk->fik", Wn_R, G.R)
    held_t = np.einsum("fij,j->fi", Wn_R, G.t) + Wn_t
    if action == "open":
        lid_R, lid_t = held_R, held_t
        body_R = np.tile(body_w.R, (frames, 1, 1))
        body_t = np.tile(body_w.t, (frames, 1))
    else:
        body_R, body_t = held_R, held_t
        lid_R = np.einsum("fij,jk->fik", body_R, L.R)
        lid_t = np.einsum("fij,j->fi", body_R, L.t) + body_t

    curl_t = np.clip(curls + smooth_noise(rng, frames, 5, fps, 0.008),
                     0.0, 2.1)
    local = finger_rotations(curl_t)
    local[:, 0] = Wn_R
    pos, _ = forward_kinematics(template, local, Wn_t)

    rot6d = np.zeros((frames, layout.J, 6))
    transl = np.zeros((frames, layout.J, 3))
    rot6d[:, :N_JOINTS] = matrix_to_rot6d(local)
    transl[:, :N_JOINTS] = pos
    j0 = layout.object_joint(0)
    j1 = layout.object_joint(1)
    rot6d[:, j0] = matrix_to_rot6d(body_R)
    transl[:, j0] = body_t
    rot6d[:, j1] = matrix_to_rot6d(lid_R)
    transl[:, j1] = lid_t

    traj = Trajectory(layout=layout, fps=fps, action=f"{action} {inst.category}",
                      rot6d=rot6d, transl=transl, object_relative=False)
    grasp_vec = np.array([np.cos(psi), np.sin(psi), 0.5 * float(curls.mean())])
    return traj, grasp_vec, phrase.format(inst.category)


# ----------------------------------------------------------- descriptors

# midpoints of the per-family sampling ranges in _build_parts; the
# visual descriptor encodes extents as deviations from these
_REF_EXTENTS = {"box": (0.0675, 0.0625, 0.1025),
                "bottle": (0.060, 0.060, 0.120),
                "cup": (0.072, 0.072, 0.0975)}


def object_descriptor(category, extents):
    """Shape-only descriptor; action/grasp slots stay zero."""
    d = np.zeros(DESCRIPTOR_DIM)
    d[CATEGORIES.index(category)] = 1.0
    # cosine similarity of [1, small] vectors orders by euclidean
    # distance of the small part, so deviations from the category-
    # typical size make the visual ranking track geometric closeness;
    # raw extents would cancel out of the cosine almost entirely
    ref = _REF_EXTENTS[category]
    d[3:6] = 20.0 * (np.asarray(extents, dtype=np.float64) - ref)
    return d


def scene_descriptor(category, extents, action, grasp_vec):
    d = object_descriptor(category, extents)
    d[6 + ACTIONS.index(action)] = 1.0
    # grasp context stays below the extents signal; it is a noisy proxy
    # for geometry and would otherwise dominate the match
    d[11:14] = 0.25 * np.asarray(grasp_vec, dtype=np.float64)
    return d


def default_visual_embedder():
    # noise scale is per feature dimension; the total perturbation of a
    # unit embedding is sigma * sqrt(dim), so keep sigma well under the
    # within-category extents separation (~0.1)
    return DescriptorEmbedder(DESCRIPTOR_DIM, noise_sigma=0.008, seed=20124)


# ------------------------------------------------------------ generation

def generate_dataset(root, n_instances=50, reps=4, frames=48, fps=12.0,
                     train_instances=40, seed=0):
    """Write a full dataset + retrieval db under root; returns both.

    Layout: samples.json, traj/sNNNN.json, meshes/inst_NNN_partQ.obj,
    hand_template.json, and db/ holding manifest.json plus mesh copies
    for the train instances.  Samples enumerate instances x actions x
    reps; the train/test split cuts by instance so test objects are
    never seen during training.
    """
    if train_instances >= n_instances:
        raise DataError("need at least one held-out instance")
    root = str(root)
    layout = LayoutSpec(hands=("right",), object_parts=2)
    template = default_template("right")
    os.makedirs(os.path.join(root, "traj"), exist_ok=True)
    os.makedirs(os.path.join(root, "meshes"), exist_ok=True)
    db_root = os.path.join(root, "db")
    os.makedirs(os.path.join(db_root, "meshes"), exist_ok=True)
    template.save(os.path.join(root, "hand_template.json"))

    ss = np.random.SeedSequence([seed, 0x501D])
    inst_ss, samp_ss = ss.spawn(2)
    inst_streams = inst_ss.spawn(n_instances)
    sample_streams = samp_ss.spawn(n_instances * len(ACTIONS) * reps)

    instances = []
    for i in range(n_instances):
        inst = build_instance(i, np.random.default_rng(inst_streams[i]),
                              template)
        instances.append(inst)
        save_obj(os.path.join(root, "meshes", f"{inst.mesh_id}_part0.obj"),
                 inst.body)
        save_obj(os.path.join(root, "meshes", f"{inst.mesh_id}_part1.obj"),
                 inst.lid)

    embedder = default_visual_embedder()
    records, entries = [], []
    idx = 0
    for ii, inst in enumerate(instances):
        split = "train" if ii < train_instances else "test"
        if split == "train":
            for q in range(2):
                name = f"{inst.mesh_id}_part{q}.obj"
                shutil.copyfile(os.path.join(root, "meshes", name),
                                os.path.join(db_root, "meshes", name))
        for action in ACTIONS:
            for _ in range(reps):
                rng = np.random.default_rng(sample_streams[idx])
                sid = f"s{idx:04d}"
                traj, grasp_vec, raw = synth_sample(
                    inst, action, layout, frames, fps, rng, template)
                save_trajectory(os.path.join(root, "traj", sid + ".json"),
                                traj)
                desc = scene_descriptor(inst.category, inst.extents, action,
                                        grasp_vec)
                vis = embedder.embed(desc, rng)
                txt = embed_text(raw)
                records.append(SampleRecord(
                    id=sid, trajectory=f"traj/{sid}.json",
                    action=f"{action} {inst.category}", label=action,
                    raw_text=raw, text_feature=txt, visual_feature=vis,
                    mesh_id=inst.mesh_id, category=inst.category,
                    instance_id=inst.mesh_id, split=split))
                if split == "train":
                    entries.append(RetrievalEntry(
                        id=sid, raw_text=raw, text_feature=txt,
                        visual_feature=vis,
                        mesh_files=[f"meshes/{inst.mesh_id}_part{q}.obj"
                                    for q in range(2)],
                        category=inst.category))
                idx += 1

    provider = {"visual": embedder.provider_info(),
                "text": {"name": "hashed-bow", "dim": 64}}
    index = DatasetIndex(root=root, layout=layout, fps=fps, F=frames,
                         provider=provider, records=records)
    index.save()
    db = RetrievalDB(root=db_root, provider=provider, entries=entries)
    db.save()
    return index, db
