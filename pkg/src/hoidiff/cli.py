"""Command line entry point wiring all modules into reproducible runs.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every artifact a command writes carries the producing config hash and
seed, so any run can be reproduced from its outputs alone.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from .config import config_hash, load_config
from .denoiser import load_checkpoint
from .diffusion import NoiseSchedule
from .errors import DataError, NumericError, UsageError
from .features import embed_text
from .handmodel import HandTemplate, forward_kinematics, skin_vertices
from .meshgeom import load_obj, save_obj
from .motiondata import load_trajectory, save_trajectory
from .pipeline import (conditions_from_records, descriptor_matrix,
                       evaluate_trajectories, fit_action_classifier,
                       load_templates, open_dataset, read_conditions,
                       sample_set, train, true_mesh_lists, write_conditions)
from .retrieval import RetrievalDB, retrieve
from .rotgeom import rot6d_to_matrix
from .synthdata import generate_dataset


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems through our exit-code map."""

    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="hoidiff",
                description="hand-object trajectory diffusion toolkit")
    p.add_argument("--config", help="JSON config overlaying the defaults")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--out", help="output directory")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("synth-gen", help="generate the synthetic dataset + db")

    sp = sub.add_parser("train", help="train the denoiser")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--resume", help="checkpoint to continue from")

    sp = sub.add_parser("sample", help="sample trajectories for conditions")
    sp.add_argument("--dataset", required=True,
                    help="dataset root (hand template, true meshes)")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--conditions", required=True,
                    help="JSON conditions file")
    sp.add_argument("--db", help="retrieval database root")
    sp.add_argument("--guidance", choices=["on", "off"], default="off")
    sp.add_argument("--mesh-source", default="none",
                    choices=["retrieved", "true", "random-category", "none"])

    sp = sub.add_parser("evaluate", help="six-metric report for a set")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--generated",
                    help="directory of sampled trajectories; omit to "
                         "evaluate the ground-truth test split against "
                         "itself")
    sp.add_argument("--reps", type=int,
                    help="override metrics.reps (1 disables intervals)")

    sp = sub.add_parser("retrieve", help="debug query against a database")
    sp.add_argument("--db", required=True)
    sp.add_argument("--dataset", help="dataset supplying the query sample")
    sp.add_argument("--id", help="sample id inside --dataset")
    sp.add_argument("--query-json",
                    help="file with text/visual query features")

    sp = sub.add_parser("export", help="per-frame OBJ dump of one result")
    sp.add_argument("--trajectory", required=True)
    sp.add_argument("--dataset",
                    help="dataset root resolving template and meshes")
    sp.add_argument("--template", help="hand template JSON (overrides)")
    sp.add_argument("--mesh-files", nargs="*",
                    help="object part OBJ files (overrides provenance)")

    sp = sub.add_parser("export-conditions",
                        help="write a conditions file from a dataset split")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--split", default="test", choices=["train", "test"])
    sp.add_argument("--limit", type=int, help="keep only the first N")
    return p


def _need_out(args, default):
    out = args.out or default
    parent = os.path.dirname(os.path.abspath(out))
    if not os.path.isdir(parent):
        raise DataError(f"parent directory {parent!r} does not exist")
    return out


def _stamp(cfg):
    return {"config_hash": config_hash(cfg), "seed": cfg["seed"]}


# ------------------------------------------------------------- commands

def cmd_synth_gen(cfg, args):
    root = _need_out(args, cfg["paths"]["dataset"])
    sc = cfg["synthdata"]
    t0 = time.time()
    index, db = generate_dataset(
        root, n_instances=int(sc["n_instances"]), reps=int(sc["reps"]),
        frames=int(sc["frames"]), fps=sc["fps"],
        train_instances=int(sc["train_instances"]), seed=cfg["seed"])
    doc = dict(_stamp(cfg))
    doc.update({"samples": len(index.records), "db_entries": len(db.entries),
                "elapsed_s": round(time.time() - t0, 2)})
    with open(os.path.join(root, "generation.json"), "w") as fh:
        json.dump(doc, fh, indent=2)
    print(f"dataset: {len(index.records)} samples, {len(db.entries)} db "
          f"entries -> {root} ({doc['elapsed_s']}s)")


def cmd_train(cfg, args):
    from .report import render_training_curves
    index = open_dataset(args.dataset)
    out = _need_out(args, os.path.join(cfg["paths"]["out"], "train"))
    os.makedirs(out, exist_ok=True)
    result = train(index, cfg, out, resume=args.resume, log=print)
    render_training_curves(os.path.join(out, "training_curves.png"),
                           result["history"])
    best = result["best"]
    print(f"best checkpoint: epoch {best[0]} (FID {best[1]:.4f}) -> "
          f"{result['paths']['best']}")


def cmd_sample(cfg, args):
    index = open_dataset(args.dataset)
    out = _need_out(args, os.path.join(cfg["paths"]["out"], "samples"))
    os.makedirs(out, exist_ok=True)
    conditions = read_conditions(args.conditions)
    guidance_on = args.guidance == "on"
    db = RetrievalDB.load(args.db) if args.db else None

    net, _, meta = load_checkpoint(args.checkpoint)
    dc = cfg["diffusion"]
    schedule = NoiseSchedule(dc["t_max"], dc["beta_start"], dc["beta_end"])
    t0 = time.time()
    arm = sample_set(net, schedule, cfg, conditions, index.layout, index.F,
                     index.fps, guidance_on, args.mesh_source,
                     index=index, db=db)
    files = []
    for traj, cond, mid in zip(arm.trajectories, arm.conditions,
                               arm.mesh_ids):
        prov = dict(_stamp(cfg))
        prov.update({"condition_id": cond["id"], "label": cond["label"],
                     "mesh_id": cond.get("mesh_id"),
                     "category": cond.get("category"),
                     "guidance": {"on": guidance_on,
                                  "mesh_source": args.mesh_source,
                                  "mesh_id": mid,
                                  "scale": cfg["guidance"]["scale"],
                                  "warmup": cfg["guidance"]["warmup"]},
                     "checkpoint": os.path.abspath(args.checkpoint),
                     "checkpoint_config_hash": meta["config_hash"]})
        path = os.path.join(out, f"{cond['id']}_gen.json")
        save_trajectory(path, traj, provenance=prov)
        files.append(os.path.basename(path))
    manifest = dict(_stamp(cfg))
    manifest.update({"files": files, "guidance": guidance_on,
                     "mesh_source": args.mesh_source,
                     "repaired_rows": arm.repaired_rows,
                     "steer_stats": arm.steer_stats,
                     "elapsed_s": round(time.time() - t0, 2)})
    with open(os.path.join(out, "sample_meta.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    print(f"sampled {len(files)} trajectories -> {out} "
          f"({manifest['elapsed_s']}s)")


def cmd_evaluate(cfg, args):
    from .report import (render_metrics_figure, render_penetration_profile,
                         write_report)
    if args.reps is not None:
        cfg = dict(cfg)
        cfg["metrics"] = dict(cfg["metrics"], reps=args.reps)
    index = open_dataset(args.dataset)
    templates = load_templates(index.root)
    out = _need_out(args, os.path.join(cfg["paths"]["out"], "eval"))
    os.makedirs(out, exist_ok=True)

    clf, clf_acc = fit_action_classifier(index, templates, seed=cfg["seed"])
    fte, _ = descriptor_matrix(index, "test", templates)
    ref_embeds = clf.embed(fte)

    if args.generated:
        trajs, conds = [], []
        names = sorted(f for f in os.listdir(args.generated)
                       if f.endswith("_gen.json"))
        if not names:
            raise DataError(f"no *_gen.json files under {args.generated!r}")
        for name in names:
            traj, prov = load_trajectory(
                os.path.join(args.generated, name), with_provenance=True)
            if not prov:
                raise DataError(f"{name} lacks provenance")
            trajs.append(traj)
            conds.append({"id": prov["condition_id"], "label": prov["label"],
                          "mesh_id": prov.get("mesh_id"),
                          "category": prov.get("category")})
        include_fid = True
        source = os.path.abspath(args.generated)
    else:
        # ground-truth self-evaluation: the test split against itself
        recs = index.split("test")
        trajs = [index.load_trajectory(r) for r in recs]
        conds = conditions_from_records(recs)
        include_fid = False
        source = "ground-truth test split"

    metrics, evals = evaluate_trajectories(
        trajs, conds, index, clf, ref_embeds, cfg,
        include_fid=include_fid, templates=templates)
    meta = dict(_stamp(cfg))
    meta.update({"source": source, "sequences": len(trajs),
                 "classifier_holdout_acc": clf_acc,
                 "repetitions": int(cfg["metrics"]["reps"])})
    jpath, cpath = write_report(out, metrics, meta)
    render_metrics_figure(os.path.join(out, "metrics_summary.png"),
                          {"set": metrics})
    mesh_lists, _ = true_mesh_lists(conds[:8], index)
    render_penetration_profile(os.path.join(out, "penetration_profile.png"),
                               trajs[:8], templates, mesh_lists)
    for name in sorted(metrics):
        mean, ci = metrics[name]
        span = "" if ci is None else f" +/- {ci:.4g}"
        print(f"{name:4s} {mean:.4f}{span}")
    print(f"report -> {jpath}")


def cmd_retrieve(cfg, args):
    db = RetrievalDB.load(args.db)
    if args.query_json:
        with open(args.query_json) as fh:
            q = json.load(fh)
        if "visual_feature" not in q:
            raise DataError("query file lacks visual_feature")
        vis = np.asarray(q["visual_feature"], dtype=np.float64)
        if "text_feature" in q:
            txt = np.asarray(q["text_feature"], dtype=np.float64)
        elif "raw_text" in q:
            txt = embed_text(q["raw_text"])
        else:
            raise DataError("query file lacks text_feature or raw_text")
    elif args.dataset and args.id:
        index = open_dataset(args.dataset)
        rec = next((r for r in index.records if r.id == args.id), None)
        if rec is None:
            raise DataError(f"no sample {args.id!r} in {args.dataset!r}")
        txt, vis = rec.text_feature, rec.visual_feature
    else:
        raise UsageError("retrieve needs --query-json or --dataset + --id")
    rc = cfg["retrieval"]
    res = retrieve(db, txt, vis, k_candidates=int(rc["k_candidates"]),
                   text_threshold=rc["text_threshold"])
    print(json.dumps({"entry": res.entry.id,
                      "category": res.entry.category,
                      "mesh_files": res.entry.mesh_files,
                      "visual_score": res.visual_score,
                      "text_score": res.text_score,
                      "used_fallback": res.used_fallback}, indent=2))


def cmd_export(cfg, args):
    traj, prov = load_trajectory(args.trajectory, with_provenance=True)
    if traj.F == 0:
        raise DataError("trajectory holds no frames")
    out = _need_out(args, "export")
    os.makedirs(out, exist_ok=True)

    if args.template:
        template = HandTemplate.load(args.template)
    elif args.dataset:
        template = load_templates(args.dataset)["right"]
    else:
        raise UsageError("export needs --template or --dataset")

    if args.mesh_files:
        part_meshes = [load_obj(p) for p in args.mesh_files]
    elif args.dataset and prov and prov.get("mesh_id"):
        index = open_dataset(args.dataset)
        part_meshes = [load_obj(p)
                       for p in index.mesh_paths(prov["mesh_id"])]
    else:
        raise UsageError("export needs --mesh-files, or --dataset plus a "
                         "trajectory with mesh provenance")

    part_poses = [traj.object_pose(q) for q in range(len(part_meshes))]
    hand_files, object_files, poses = [], [], []
    for f in range(traj.F):
        local = rot6d_to_matrix(traj.rot6d[f, :16])
        pos, orient = forward_kinematics(template, local, traj.transl[f, 0])
        sv = skin_vertices(template, pos, orient)
        hpath = os.path.join(out, f"hand_{f:04d}.obj")
        save_obj(hpath, sv)
        hand_files.append(os.path.basename(hpath))

        verts, tris, at = [], [], 0
        frame_poses = []
        for q, mesh in enumerate(part_meshes):
            R, t = part_poses[q]
            Rf, tf = R[f], t[f]
            verts.append(mesh.vertices @ Rf.T + tf)
            tris.append(mesh.triangles + at)
            at += len(mesh.vertices)
            frame_poses.append({"part": q, "R": Rf.tolist(),
                                "t": tf.tolist()})
        opath = os.path.join(out, f"object_{f:04d}.obj")
        save_obj(opath, np.concatenate(verts), np.concatenate(tris))
        object_files.append(os.path.basename(opath))
        poses.append(frame_poses)

    doc = dict(_stamp(cfg))
    doc.update({"F": traj.F, "fps": traj.fps, "action": traj.action,
                "hand_files": hand_files, "object_files": object_files,
                "poses": poses, "provenance": prov})
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(doc, fh)
    print(f"exported {traj.F} frames -> {out}")


def cmd_export_conditions(cfg, args):
    index = open_dataset(args.dataset)
    recs = index.split(args.split)
    if args.limit:
        recs = recs[:args.limit]
    if not recs:
        raise DataError(f"split {args.split!r} holds no samples")
    out = args.out or f"conditions_{args.split}.json"
    write_conditions(out, recs)
    print(f"wrote {len(recs)} conditions -> {out}")


_COMMANDS = {
    "synth-gen": cmd_synth_gen,
    "train": cmd_train,
    "sample": cmd_sample,
    "evaluate": cmd_evaluate,
    "retrieve": cmd_retrieve,
    "export": cmd_export,
    "export-conditions": cmd_export_conditions,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        overrides = {"seed": args.seed} if args.seed is not None else None
        cfg = load_config(args.config, overrides)
        _COMMANDS[args.command](cfg, args)
        return 0
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
