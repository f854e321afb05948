"""Evaluation reports: JSON + CSV tables and rendered figures.

The CSV mirrors the JSON metric table one row per metric; a metric the
protocol omits (FID on a ground-truth self-evaluation) renders as
"---".  Figures are written next to the tables with matplotlib's Agg
backend so the pipeline stays headless.
"""

import csv
import json
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .guidance import penetration_report

METRIC_ORDER = ["ACC", "FID", "DIV", "ID", "IV", "CR"]
METRIC_UNITS = {"ACC": "", "FID": "", "DIV": "", "ID": "cm", "IV": "cm3",
                "CR": ""}


def write_report(out_dir, metrics, meta=None):
    """Write report.json and report.csv; returns their paths.

    Args:
        metrics: dict name -> (mean, ci_or_None), as evaluate_set emits.
        meta: extra provenance merged into the JSON document.
    """
    os.makedirs(out_dir, exist_ok=True)
    doc = dict(meta or {})
    doc["metrics"] = {
        name: {"mean": mean, "ci": ci, "unit": METRIC_UNITS.get(name, "")}
        for name, (mean, ci) in metrics.items()}
    jpath = os.path.join(out_dir, "report.json")
    with open(jpath, "w") as fh:
        json.dump(doc, fh, indent=2)

    cpath = os.path.join(out_dir, "report.csv")
    with open(cpath, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "mean", "ci95", "unit"])
        for name in METRIC_ORDER:
            if name in metrics:
                mean, ci = metrics[name]
                w.writerow([name, f"{mean:.6g}",
                            "" if ci is None else f"{ci:.6g}",
                            METRIC_UNITS.get(name, "")])
            else:
                w.writerow([name, "---", "", METRIC_UNITS.get(name, "")])
    return jpath, cpath


def render_metrics_figure(out_png, metrics_by_arm):
    """Small-multiples bar chart, one panel per metric, one bar per arm.

    Args:
        metrics_by_arm: dict arm_name -> metrics dict (evaluate_set form).
    """
    arms = list(metrics_by_arm)
    fig, axes = plt.subplots(2, 3, figsize=(11, 6))
    for ax, name in zip(axes.ravel(), METRIC_ORDER):
        means, errs, labels = [], [], []
        for arm in arms:
            if name not in metrics_by_arm[arm]:
                continue
            mean, ci = metrics_by_arm[arm][name]
            means.append(mean)
            errs.append(0.0 if ci is None else ci)
            labels.append(arm)
        if not means:
            ax.set_axis_off()
            continue
        xs = np.arange(len(means))
        ax.bar(xs, means, yerr=errs, capsize=3, color="#4878a8")
        ax.set_xticks(xs)
        ax.set_xticklabels(labels, rotation=25, ha="right", fontsize=8)
        unit = METRIC_UNITS.get(name, "")
        ax.set_title(name + (f" [{unit}]" if unit else ""), fontsize=10)
        ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png


def render_penetration_profile(out_png, trajs, templates, mesh_lists,
                               max_seqs=8):
    """Per-frame penetration energy, one line per sequence."""
    fig, ax = plt.subplots(figsize=(8, 4))
    for i, (traj, meshes) in enumerate(zip(trajs, mesh_lists)):
        if i >= max_seqs:
            break
        rep = penetration_report(traj, templates, meshes)
        ax.plot(rep["per_frame"] * 1e6, alpha=0.7, lw=1.2,
                label=f"seq {i}")
    ax.set_xlabel("frame")
    ax.set_ylabel("penetration energy [cm$^3$-scale]")
    ax.legend(fontsize=7, ncol=2)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png


def render_training_curves(out_png, history):
    """Loss per epoch plus FID at every evaluation point."""
    fig, ax = plt.subplots(figsize=(8, 4))
    loss = np.array(history["loss"], dtype=np.float64)
    ax.plot(loss[:, 0], loss[:, 1], color="#4878a8", label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    if history.get("fid"):
        fid = np.array(history["fid"], dtype=np.float64)
        ax2 = ax.twinx()
        ax2.plot(fid[:, 0], fid[:, 1], "o-", color="#c05840",
                 label="test FID")
        ax2.set_ylabel("FID")
        lines = ax.get_lines() + ax2.get_lines()
        ax.legend(lines, [ln.get_label() for ln in lines], fontsize=8)
    else:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png
