"""End-to-end pipelines: dataset assembly, training, sampling, evaluation.

Everything here is deterministic in (config, seed).  Sampling arms that
should be compared pairwise (guided vs unguided, different mesh
sources) must be built from the same seed so they consume identical
noise; see diffusion.make_rng_streams.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .config import config_hash
from .denoiser import Adam, DenoiserNet, load_checkpoint, save_checkpoint
from .diffusion import (NoiseSchedule, make_rng_streams, q_sample,
                        sample_batch, training_loss)
from .errors import (ConfigHashMismatch, DataError, DatasetMissing, EmptySet,
                     GuidanceWithoutMesh, UsageError)
from .features import embed_text
from .guidance import cached_part_grids, make_steering
from .handmodel import HandTemplate
from .meshgeom import load_obj
from .metrics import (ActionClassifier, build_seq_evals, evaluate_set,
                      frechet_distance, motion_descriptor)
from .motiondata import (DatasetIndex, decode_object_relative,
                         encode_object_relative, flatten, normalize,
                         unflatten)
from .retrieval import random_same_category, retrieve
from .rotgeom import rot6d_valid_mask
from .synthdata import ACTIONS

IDENTITY_ROT6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def open_dataset(root):
    if not os.path.isfile(os.path.join(root, "samples.json")):
        raise DatasetMissing(f"no samples.json under {root!r}")
    return DatasetIndex.load(root)


def load_templates(root):
    path = os.path.join(root, "hand_template.json")
    if not os.path.isfile(path):
        raise DatasetMissing(f"no hand_template.json under {root!r}")
    return {"right": HandTemplate.load(path)}


def label_index(label):
    if label not in ACTIONS:
        raise DataError(f"unknown action label {label!r}")
    return ACTIONS.index(label)


# ------------------------------------------------------------- assembly

def assemble_states(index, split):
    """Flat training states and condition features for one split.

    Trajectories are wrist-anchored and object-relative before
    flattening; conditions are text features followed by visual.

    Returns:
        (X (n, d), C (n, c), labels (n,) int, records)
    """
    recs = index.split(split)
    if not recs:
        raise EmptySet(f"split {split!r} holds no samples")
    states, conds, labels = [], [], []
    for rec in recs:
        traj = index.load_trajectory(rec)
        traj = encode_object_relative(normalize(traj))
        states.append(flatten(traj))
        conds.append(np.concatenate([rec.text_feature, rec.visual_feature]))
        labels.append(label_index(rec.label))
    return (np.stack(states), np.stack(conds),
            np.array(labels, dtype=np.int64), recs)


def states_to_trajectories(states, layout, F, fps, actions=None):
    """Decode sampled flat states back into absolute trajectories.

    Sampled rotations can land on the 6D degeneracy set; those rows are
    replaced with the identity encoding instead of failing the whole
    batch.  Returns the trajectories and the repaired-row count.
    """
    out, repaired = [], 0
    for i, vec in enumerate(np.asarray(states)):
        traj = unflatten(vec, layout, F, fps,
                         action="" if actions is None else actions[i],
                         object_relative=True)
        bad = ~rot6d_valid_mask(traj.rot6d)
        if bad.any():
            repaired += int(bad.sum())
            traj.rot6d[bad] = IDENTITY_ROT6D
        out.append(decode_object_relative(traj))
    return out, repaired


# ------------------------------------------------------------ classifier

def descriptor_matrix(index, split, templates):
    recs = index.split(split)
    if not recs:
        raise EmptySet(f"split {split!r} holds no samples")
    feats = [motion_descriptor(index.load_trajectory(r), templates)
             for r in recs]
    labels = np.array([label_index(r.label) for r in recs], dtype=np.int64)
    return np.stack(feats), labels


def fit_action_classifier(index, templates, seed=0):
    """Classifier on the train split; returns (clf, held-out accuracy)."""
    ftr, ltr = descriptor_matrix(index, "train", templates)
    fte, lte = descriptor_matrix(index, "test", templates)
    clf = ActionClassifier(ftr.shape[1], len(ACTIONS), seed=seed)
    clf.fit(ftr, ltr, seed=seed)
    return clf, clf.accuracy(fte, lte)


# -------------------------------------------------------------- training

def _eval_fid(net, schedule, cond_pool, ref_embeds, clf, templates,
              layout, F, fps, seed, n_samples, epoch):
    n = min(n_samples, cond_pool.shape[0])
    rngs = make_rng_streams([seed, 0xF1D, epoch], n)
    states = sample_batch(net, schedule, cond_pool[:n], rngs)
    trajs, _ = states_to_trajectories(states, layout, F, fps)
    feats = np.stack([motion_descriptor(t, templates) for t in trajs])
    return frechet_distance(clf.embed(feats), ref_embeds)


def resume_hash(cfg):
    """Config hash with the run-length knob removed.

    Resuming exists to continue or extend a run, so the epoch target is
    the one key allowed to differ between the checkpoint's config and
    the current one; everything else must match exactly.
    """
    reduced = {k: dict(v) if isinstance(v, dict) else v
               for k, v in cfg.items()}
    reduced["training"].pop("epochs")
    return config_hash(reduced)


def train(index, cfg, out_dir, resume=None, log=None):
    """Train the denoiser; track the best checkpoint by test-set FID.

    Writes last.npz (every eval), best.npz (lowest FID so far), and
    train_log.json.  Returns a dict with the net, history, and paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    chash = config_hash(cfg)
    rhash = resume_hash(cfg)
    tc, dc = cfg["training"], cfg["diffusion"]
    layout, F, fps = index.layout, index.F, index.fps
    templates = load_templates(index.root)

    X, C, _, _ = assemble_states(index, "train")
    _, Cte, _, _ = assemble_states(index, "test")
    n, state_dim = X.shape
    schedule = NoiseSchedule(dc["t_max"], dc["beta_start"], dc["beta_end"])

    if resume is not None:
        net, opt, meta = load_checkpoint(resume)
        stored = meta["extra"].get("resume_hash")
        if stored != rhash:
            raise ConfigHashMismatch(
                "checkpoint was trained under a different config "
                "(only training.epochs may change on resume)")
        start = int(meta["extra"]["epoch"])
        history = meta["extra"]["history"]
        best = meta["extra"].get("best")
    else:
        net = DenoiserNet(state_dim, C.shape[1], width=tc["width"],
                          blocks=tc["blocks"], temb_dim=tc["temb_dim"],
                          t_max=dc["t_max"], seed=cfg["seed"])
        opt = Adam(net.params, lr=tc["lr"], beta1=tc["beta1"],
                   beta2=tc["beta2"], eps=tc["eps"])
        start = 0
        history = {"loss": [], "fid": []}
        best = None

    clf, clf_acc = fit_action_classifier(index, templates, seed=cfg["seed"])
    fte, _ = descriptor_matrix(index, "test", templates)
    ref_embeds = clf.embed(fte)

    paths = {"last": os.path.join(out_dir, "last.npz"),
             "best": os.path.join(out_dir, "best.npz"),
             "log": os.path.join(out_dir, "train_log.json")}

    def checkpoint(path, epoch):
        save_checkpoint(path, net, opt, config_hash=chash,
                        extra={"epoch": epoch, "history": history,
                               "best": best, "resume_hash": rhash,
                               "classifier_acc": clf_acc})

    for epoch in range(start + 1, int(tc["epochs"]) + 1):
        rng = np.random.default_rng(
            np.random.SeedSequence([cfg["seed"], 0xE60C, epoch]))
        perm = rng.permutation(n)
        losses = []
        for at in range(0, n, int(tc["batch"])):
            idx = perm[at:at + int(tc["batch"])]
            t = rng.integers(1, dc["t_max"] + 1, size=idx.size)
            noise = rng.standard_normal((idx.size, state_dim))
            x_t = q_sample(schedule, X[idx], t, noise)
            x0_hat = net.forward(x_t, t, C[idx], record=True)
            loss, grad, _ = training_loss(x0_hat, X[idx], F,
                                          lambda_vel=dc["lambda_vel"])
            opt.step(net.params, net.backward(grad))
            losses.append(loss)
        history["loss"].append([epoch, float(np.mean(losses))])
        if log:
            log(f"epoch {epoch:3d}  loss {history['loss'][-1][1]:.6f}")

        if epoch % int(tc["eval_every"]) == 0 or epoch == int(tc["epochs"]):
            fid = _eval_fid(net, schedule, Cte, ref_embeds, clf, templates,
                            layout, F, fps, cfg["seed"],
                            int(tc["eval_samples"]), epoch)
            history["fid"].append([epoch, float(fid)])
            if best is None or fid < best[1]:
                best = [epoch, float(fid)]
                checkpoint(paths["best"], epoch)
            checkpoint(paths["last"], epoch)
            if log:
                log(f"epoch {epoch:3d}  test FID {fid:.4f}"
                    + ("  (best)" if best[0] == epoch else ""))

    checkpoint(paths["last"], int(tc["epochs"]))
    with open(paths["log"], "w") as fh:
        json.dump({"config_hash": chash, "seed": cfg["seed"],
                   "classifier_acc": clf_acc, "history": history,
                   "best": best}, fh)
    return {"net": net, "opt": opt, "schedule": schedule, "history": history,
            "best": best, "classifier_acc": clf_acc, "paths": paths}


# ------------------------------------------------------------ conditions

def conditions_from_records(recs):
    out = []
    for r in recs:
        out.append({"id": r.id, "raw_text": r.raw_text,
                    "text_feature": np.asarray(r.text_feature),
                    "visual_feature": np.asarray(r.visual_feature),
                    "mesh_id": r.mesh_id, "category": r.category,
                    "label": r.label})
    return out


def write_conditions(path, recs):
    rows = []
    for c in conditions_from_records(recs):
        rows.append({"id": c["id"], "raw_text": c["raw_text"],
                     "text_feature": c["text_feature"].tolist(),
                     "visual_feature": c["visual_feature"].tolist(),
                     "mesh_id": c["mesh_id"], "category": c["category"],
                     "label": c["label"]})
    with open(path, "w") as fh:
        json.dump(rows, fh)


def read_conditions(path):
    """Parse a conditions file; text may be raw (embedded on the fly)."""
    try:
        with open(path) as fh:
            rows = json.load(fh)
    except OSError as e:
        raise DataError(f"cannot read conditions {path!r}: {e}") from e
    if not isinstance(rows, list) or not rows:
        raise DataError("conditions file must hold a non-empty JSON array")
    out = []
    for i, row in enumerate(rows):
        if "visual_feature" not in row:
            raise DataError(f"condition {i} lacks visual_feature")
        if "text_feature" in row:
            txt = np.asarray(row["text_feature"], dtype=np.float64)
        elif "raw_text" in row:
            txt = embed_text(row["raw_text"])
        else:
            raise DataError(f"condition {i} lacks text_feature or raw_text")
        out.append({"id": row.get("id", f"c{i:04d}"),
                    "raw_text": row.get("raw_text", ""),
                    "text_feature": txt,
                    "visual_feature": np.asarray(row["visual_feature"],
                                                 dtype=np.float64),
                    "mesh_id": row.get("mesh_id"),
                    "category": row.get("category"),
                    "label": row.get("label")})
    return out


# -------------------------------------------------------------- sampling

@dataclass
class SampleSet:
    """One sampling arm: decoded trajectories plus provenance."""

    trajectories: list
    states: np.ndarray
    conditions: list
    mesh_ids: list                 # guidance mesh per sample (or None)
    guidance_on: bool
    mesh_source: str
    seed: int
    repaired_rows: int = 0
    steer_stats: dict = field(default_factory=dict)


def _guidance_meshes(conditions, mesh_source, index, db, cfg):
    """Per-sample (mesh_id, meshes) used for steering."""
    rc = cfg["retrieval"]
    rng_pick = np.random.default_rng(
        np.random.SeedSequence([cfg["seed"], 0xCA7]))
    chosen = []
    for c in conditions:
        if mesh_source == "true":
            if not c.get("mesh_id"):
                raise UsageError("mesh-source 'true' needs mesh ids in the "
                                 "conditions file")
            if index is None:
                raise UsageError("mesh-source 'true' needs the dataset root")
            files = index.mesh_paths(c["mesh_id"])
            chosen.append((c["mesh_id"], [load_obj(p) for p in files]))
        elif mesh_source == "retrieved":
            if db is None:
                raise UsageError("mesh-source 'retrieved' needs a database")
            res = retrieve(db, c["text_feature"], c["visual_feature"],
                           k_candidates=rc["k_candidates"],
                           text_threshold=rc["text_threshold"])
            chosen.append((res.entry.id, db.load_meshes(res.entry)))
        elif mesh_source == "random-category":
            if db is None:
                raise UsageError("mesh-source 'random-category' needs a "
                                 "database")
            if not c.get("category"):
                raise UsageError("mesh-source 'random-category' needs "
                                 "categories in the conditions file")
            e = random_same_category(db, c["category"], rng_pick)
            chosen.append((e.id, db.load_meshes(e)))
        else:
            raise UsageError(f"unknown mesh source {mesh_source!r}")
    return chosen


def sample_set(net, schedule, cfg, conditions, layout, F, fps,
               guidance_on, mesh_source, index=None, db=None, seed=None,
               templates=None):
    """Sample one arm of trajectories for a list of conditions.

    Arms sampled with the same seed consume identical noise regardless
    of guidance settings, which is what makes ablation comparisons
    paired.
    """
    if guidance_on and mesh_source == "none":
        raise GuidanceWithoutMesh("guidance needs a mesh source")
    if templates is None and index is not None:
        templates = load_templates(index.root)
    seed = cfg["seed"] if seed is None else seed
    C = np.stack([np.concatenate([c["text_feature"], c["visual_feature"]])
                  for c in conditions])
    rngs = make_rng_streams(seed, len(conditions))

    steer = None
    mesh_ids = [None] * len(conditions)
    stats = {}
    if guidance_on:
        if templates is None:
            raise UsageError("guidance needs hand templates (dataset root)")
        gc = cfg["guidance"]
        chosen = _guidance_meshes(conditions, mesh_source, index, db, cfg)
        mesh_ids = [mid for mid, _ in chosen]
        parts = [cached_part_grids((mesh_source, mid), meshes,
                                   pitch=gc["grid_pitch"])
                 for mid, meshes in chosen]
        steer = make_steering(layout, F, templates, parts,
                              scale=gc["scale"], warmup=gc["warmup"],
                              t_max=schedule.t_max,
                              normalize=gc["normalize"])
        stats = steer.stats

    states = sample_batch(net, schedule, C, rngs, steer)
    trajs, repaired = states_to_trajectories(
        states, layout, F, fps,
        actions=[c.get("label") or "" for c in conditions])
    return SampleSet(trajs, states, conditions, mesh_ids, guidance_on,
                     mesh_source, seed, repaired, dict(stats))


# ------------------------------------------------------------ evaluation

def true_mesh_lists(conditions, index, cache=None):
    """Ground-truth instance meshes per condition (for geometry metrics)."""
    cache = {} if cache is None else cache
    out, keys = [], []
    for c in conditions:
        mid = c.get("mesh_id")
        if not mid:
            raise DataError("conditions lack mesh ids; cannot measure "
                            "geometry against the true object")
        if mid not in cache:
            cache[mid] = [load_obj(p) for p in index.mesh_paths(mid)]
        out.append(cache[mid])
        keys.append(mid)
    return out, keys


def evaluate_trajectories(trajs, conditions, index, clf, ref_embeds, cfg,
                          include_fid=True, templates=None):
    """Six-metric report rows for one set of trajectories."""
    if len(trajs) != len(conditions):
        raise DataError("one condition per trajectory required")
    if templates is None:
        templates = load_templates(index.root)
    mc = cfg["metrics"]
    mesh_lists, keys = true_mesh_lists(conditions, index)
    labels = np.array([label_index(c["label"]) for c in conditions])
    evals = build_seq_evals(trajs, labels, templates, mesh_lists, clf,
                            mesh_keys=keys, iv_pitch=mc["iv_pitch"],
                            contact_tau=mc["contact_tau"])
    report = evaluate_set(evals, ref_embeds, seed=cfg["seed"],
                          reps=int(mc["reps"]), frac=mc["frac"],
                          include_fid=include_fid)
    return report, evals
