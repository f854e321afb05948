"""Evaluation metrics over generated hand-object trajectories.

Six quantities describe a generated set:

* ACC: does a separately trained action classifier read the intended
  action back out of the motion.
* FID: Frechet distance between classifier penultimate features of the
  generated set and the reference set.
* DIV: Frechet distance between two random halves of the same set.
* ID: worst interpenetration depth of hand skin vertices inside the
  object, in cm, averaged over sequences.
* IV: hand/object intersection volume in cm^3, measured by voxel
  counting at the frame where the depth peaks.
* CR: fraction of hand skin vertices within a contact threshold of the
  object's mesh vertices, averaged over frames then sequences.

Per-sequence geometry is computed once and cached in SeqEval rows; the
evaluation protocol then aggregates subsets with confidence intervals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .denoiser import Adam
from .errors import InsufficientData, ShapeMismatch
from .guidance import pose_scene
from .handmodel import forward_kinematics, hand_aabb, hand_interior
from .motiondata import decode_object_relative, normalize

CONTACT_TAU = 0.005     # meters


# ---------------------------------------------------------- descriptors

def motion_descriptor(traj, templates):
    """Pooled joint position/velocity summary of one trajectory.

    Positions come from forward kinematics (not the stored translation
    channels), so the descriptor reflects the realized geometry.  The
    12 * J values are the per-frame mean and std of joint positions and
    frame-to-frame velocities.
    """
    traj = normalize(traj)
    if traj.object_relative:
        traj = decode_object_relative(traj)
    cols = []
    for side in traj.layout.hands:
        pos, _ = forward_kinematics(templates[side],
                                    traj.hand_rotations(side),
                                    traj.wrist_translation(side))
        cols.append(pos)
    for part in range(traj.layout.object_parts):
        j = traj.layout.object_joint(part)
        cols.append(traj.transl[:, j:j + 1, :])
    pos = np.concatenate(cols, axis=1)              # (F, J, 3)
    F = pos.shape[0]
    flat = pos.reshape(F, -1)
    vel = np.diff(flat, axis=0) * traj.fps
    return np.concatenate([
        flat.mean(axis=0), vel.mean(axis=0),
        flat.std(axis=0), vel.std(axis=0),
    ])


# ----------------------------------------------------------- classifier

class ActionClassifier:
    """One-hidden-layer softmax classifier over motion descriptors.

    The tanh hidden layer doubles as the feature space for FID/DIV.
    Inputs are standardized with statistics frozen at fit time.
    """

    def __init__(self, in_dim, n_actions, hidden=64, seed=0):
        rng = np.random.default_rng(seed)
        s1 = np.sqrt(1.0 / in_dim)
        self.params = {
            "w1": rng.standard_normal((in_dim, hidden)) * s1,
            "b1": np.zeros(hidden),
            "w2": rng.standard_normal((hidden, n_actions)) * np.sqrt(1.0 / hidden),
            "b2": np.zeros(n_actions),
        }
        self.n_actions = n_actions
        self.mu = np.zeros(in_dim)
        self.sigma = np.ones(in_dim)

    def _hidden(self, x):
        return np.tanh(x @ self.params["w1"] + self.params["b1"])

    def _standardize(self, feats):
        return (np.asarray(feats, dtype=np.float64) - self.mu) / self.sigma

    def fit(self, feats, labels, epochs=300, lr=1e-2, seed=0):
        """Full-batch Adam on cross-entropy; deterministic for a seed."""
        feats = np.asarray(feats, dtype=np.float64)
        labels = np.asarray(labels)
        if len(feats) != len(labels):
            raise ShapeMismatch("feature/label count mismatch")
        self.mu = feats.mean(axis=0)
        self.sigma = feats.std(axis=0)
        self.sigma[self.sigma < 1e-8] = 1.0
        x = self._standardize(feats)
        n = len(x)
        onehot = np.zeros((n, self.n_actions))
        onehot[np.arange(n), labels] = 1.0
        opt = Adam(self.params, lr=lr)
        p = self.params
        for _ in range(epochs):
            emb = np.tanh(x @ p["w1"] + p["b1"])
            logits = emb @ p["w2"] + p["b2"]
            z = logits - logits.max(axis=1, keepdims=True)
            ez = np.exp(z)
            prob = ez / ez.sum(axis=1, keepdims=True)
            g = (prob - onehot) / n
            gemb = g @ p["w2"].T
            gz = gemb * (1.0 - emb * emb)
            opt.step(self.params, {
                "w2": emb.T @ g, "b2": g.sum(axis=0),
                "w1": x.T @ gz, "b1": gz.sum(axis=0),
            })
        return self

    def embed(self, feats):
        """Penultimate-layer features, (n, hidden)."""
        return self._hidden(self._standardize(feats))

    def predict(self, feats):
        emb = self.embed(feats)
        return np.argmax(emb @ self.params["w2"] + self.params["b2"], axis=1)

    def accuracy(self, feats, labels):
        return float(np.mean(self.predict(feats) == np.asarray(labels)))


# ------------------------------------------------------------- Frechet

def frechet_distance(feats_a, feats_b):
    """Frechet distance between Gaussian fits of two feature sets.

    d^2 = |mu_a - mu_b|^2 + Tr(Ca + Cb - 2 (Ca Cb)^{1/2}), computed by
    eigendecomposition of the symmetrized product; tiny negative
    eigenvalues from roundoff are clipped and the result clamped at 0.
    """
    a = np.atleast_2d(np.asarray(feats_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(feats_b, dtype=np.float64))
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise InsufficientData("need at least two samples per set")
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatch("feature dimensions differ")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    ca = np.cov(a, rowvar=False)
    cb = np.cov(b, rowvar=False)
    ca = np.atleast_2d(ca)
    cb = np.atleast_2d(cb)
    # sqrt of Ca via eigh, then sqrt of the symmetric product
    wa, va = np.linalg.eigh(ca)
    ra = (va * np.sqrt(np.clip(wa, 0.0, None))) @ va.T
    ws = np.linalg.eigvalsh(ra @ cb @ ra)
    tr_sqrt = np.sum(np.sqrt(np.clip(ws, 0.0, None)))
    d2 = float(np.sum((mu_a - mu_b) ** 2) + np.trace(ca) + np.trace(cb)
               - 2.0 * tr_sqrt)
    return max(d2, 0.0)


def diversity(feats, rng, n_splits=1):
    """Mean Frechet distance between random halves of one set."""
    feats = np.asarray(feats, dtype=np.float64)
    n = len(feats)
    if n < 4:
        raise InsufficientData("need at least four samples for diversity")
    vals = []
    for _ in range(n_splits):
        perm = rng.permutation(n)
        half = n // 2
        vals.append(frechet_distance(feats[perm[:half]],
                                     feats[perm[half:2 * half]]))
    return float(np.mean(vals))


# -------------------------------------------------- per-sequence geometry

_TREE_CACHE = {}


def _vertex_tree(key, mesh):
    if key is None:
        return cKDTree(mesh.vertices)
    if key not in _TREE_CACHE:
        if len(_TREE_CACHE) >= 256:
            _TREE_CACHE.clear()
        _TREE_CACHE[key] = cKDTree(mesh.vertices)
    return _TREE_CACHE[key]


def geometry_metrics(traj, templates, part_meshes, mesh_key=None,
                     iv_pitch=0.002, contact_tau=CONTACT_TAU,
                     contact_to="vertices"):
    """Depth, intersection volume, and contact ratio of one sequence.

    Args:
        part_meshes: object part meshes in their local frame.
        mesh_key: stable id enabling the contact KD-tree cache.
        contact_to: "vertices" measures contact against mesh vertices
            (the default), "surface" against the triangulated surface.

    Returns:
        dict with depth_cm, iv_cm3, cr, peak_frame.
    """
    traj = decode_object_relative(traj) if traj.object_relative else traj
    verts, _, poses = pose_scene(traj, templates)
    F, nv = verts.shape[:2]
    depth = np.zeros(F)
    contact = np.zeros((F, nv), dtype=bool)
    inside_frames = []
    for q, mesh in enumerate(part_meshes):
        R, t = poses[q]
        qloc = np.einsum("fji,fvj->fvi", R, verts - t[:, None, :])
        flat = qloc.reshape(-1, 3)
        inside = mesh.contains(flat)
        if inside.any():
            _, d = mesh.nearest_surface_point(flat[inside])
            dep = np.zeros(F * nv)
            dep[inside] = d
            depth = np.maximum(depth, dep.reshape(F, nv).max(axis=1))
        inside_frames.append(inside.reshape(F, nv))
        if contact_to == "surface":
            _, dist = mesh.nearest_surface_point(flat)
        else:
            dist, _ = _vertex_tree(
                None if mesh_key is None else (mesh_key, q), mesh).query(flat)
        contact |= (dist <= contact_tau).reshape(F, nv)

    peak = int(np.argmax(depth))
    iv = 0.0
    if depth[peak] > 0.0:
        iv = _intersection_volume(traj, templates, part_meshes, poses, peak,
                                  iv_pitch)
    return {"depth_cm": float(depth[peak] * 100.0),
            "iv_cm3": iv * 1e6,
            "cr": float(contact.mean(axis=1).mean()),
            "peak_frame": peak}


def _intersection_volume(traj, templates, part_meshes, poses, frame, pitch):
    """Voxel-counted volume of (hand capsule union)∩(object interior)."""
    los, his = [], []
    hands = []
    for side in traj.layout.hands:
        tmpl = templates[side]
        pos, orient = forward_kinematics(
            tmpl, traj.hand_rotations(side)[frame],
            traj.wrist_translation(side)[frame])
        hands.append((tmpl, pos, orient))
        lo, hi = hand_aabb(tmpl, pos)
        los.append(lo)
        his.append(hi)
    hand_lo = np.min(los, axis=0)
    hand_hi = np.max(his, axis=0)

    # one shared lattice over all parts so overlapping parts count once
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1)
                        for z in (0, 1)], dtype=np.float64)
    obj_lo = np.full(3, np.inf)
    obj_hi = np.full(3, -np.inf)
    for q, mesh in enumerate(part_meshes):
        R, t = poses[q]
        world = (mesh.aabb_lo + corners * (mesh.aabb_hi - mesh.aabb_lo)) \
            @ R[frame].T + t[frame]
        obj_lo = np.minimum(obj_lo, world.min(axis=0))
        obj_hi = np.maximum(obj_hi, world.max(axis=0))
    lo = np.maximum(obj_lo, hand_lo)
    hi = np.minimum(obj_hi, hand_hi)
    if np.any(hi <= lo):
        return 0.0
    counts = np.floor((hi - lo) / pitch + 1e-12).astype(np.int64)
    if np.any(counts == 0):
        return 0.0
    axes = [lo[d] + (np.arange(counts[d]) + 0.5) * pitch for d in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    in_hand = np.zeros(len(pts), dtype=bool)
    for tmpl, pos, orient in hands:
        in_hand |= hand_interior(tmpl, pos, orient, pts)
    if not in_hand.any():
        return 0.0
    hand_pts = pts[in_hand]
    in_obj = np.zeros(len(hand_pts), dtype=bool)
    for q, mesh in enumerate(part_meshes):
        R, t = poses[q]
        qloc = (hand_pts[~in_obj] - t[frame]) @ R[frame]
        in_obj[~in_obj] = mesh.contains(qloc)
    return float(in_obj.sum()) * pitch ** 3


# ------------------------------------------------------------- protocol

@dataclass
class SeqEval:
    """Cached per-sequence evaluation state."""
    label: int
    pred: int
    embed: np.ndarray
    depth_cm: float
    iv_cm3: float
    cr: float


def build_seq_evals(trajs, labels, templates, meshes_per_seq, classifier,
                    mesh_keys=None, iv_pitch=0.002, contact_tau=CONTACT_TAU,
                    contact_to="vertices"):
    """Run the expensive per-sequence work once for a whole set."""
    out = []
    for i, traj in enumerate(trajs):
        feat = motion_descriptor(traj, templates)
        emb = classifier.embed(feat[None, :])[0]
        pred = int(classifier.predict(feat[None, :])[0])
        geo = geometry_metrics(
            traj, templates, meshes_per_seq[i],
            mesh_key=None if mesh_keys is None else mesh_keys[i],
            iv_pitch=iv_pitch, contact_tau=contact_tau, contact_to=contact_to)
        out.append(SeqEval(int(labels[i]), pred, emb, geo["depth_cm"],
                           geo["iv_cm3"], geo["cr"]))
    return out


def evaluate_set(seq_evals, ref_embeds, seed=0, reps=20, frac=0.5,
                 include_fid=True):
    """Aggregate one set into metric rows with confidence intervals.

    Each repetition draws a random frac-subset, recomputes every metric
    on it, and the spread across repetitions gives a 95% interval
    (1.96 * SEM).  With reps == 1 the interval is None.

    Returns:
        dict metric -> (mean, ci_or_None); FID is absent when
        include_fid is False (the reference scored against itself).
    """
    n = len(seq_evals)
    if n < 8:
        raise InsufficientData(f"need at least 8 sequences, got {n}")
    rng = np.random.default_rng(seed)
    embeds = np.stack([s.embed for s in seq_evals])
    preds = np.array([s.pred for s in seq_evals])
    labels = np.array([s.label for s in seq_evals])
    depth = np.array([s.depth_cm for s in seq_evals])
    iv = np.array([s.iv_cm3 for s in seq_evals])
    cr = np.array([s.cr for s in seq_evals])
    ref_embeds = np.asarray(ref_embeds)

    names = ["ACC", "FID", "DIV", "ID", "IV", "CR"]
    if not include_fid:
        names.remove("FID")
    hist = {m: [] for m in names}
    k = max(4, int(round(n * frac)))
    for _ in range(reps):
        idx = rng.choice(n, size=k, replace=False)
        hist["ACC"].append(float(np.mean(preds[idx] == labels[idx])))
        if include_fid:
            hist["FID"].append(frechet_distance(embeds[idx], ref_embeds))
        hist["DIV"].append(diversity(embeds[idx], rng))
        hist["ID"].append(float(depth[idx].mean()))
        hist["IV"].append(float(iv[idx].mean()))
        hist["CR"].append(float(cr[idx].mean()))

    out = {}
    for m in names:
        vals = np.array(hist[m])
        if reps == 1:
            out[m] = (float(vals[0]), None)
        else:
            ci = 1.96 * vals.std(ddof=1) / np.sqrt(reps)
            out[m] = (float(vals.mean()), float(ci))
    return out
