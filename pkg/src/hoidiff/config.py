"""Run configuration: defaults, file overlay, canonical hashing.

A config is a plain nested dict of scalars.  Files overlay the defaults
key by key; unknown keys are rejected so typos fail loudly instead of
silently running on defaults.  The sha256 of the canonical JSON form is
stamped into every artifact a pipeline writes, which is what makes runs
comparable and resumable.
"""

import copy
import hashlib
import json

from .errors import InvalidConfig

DEFAULTS = {
    "seed": 0,
    "paths": {
        "dataset": "data",
        "out": "runs",
    },
    "synthdata": {
        "n_instances": 50,
        "reps": 4,
        "frames": 48,
        "fps": 12.0,
        "train_instances": 40,
    },
    "diffusion": {
        "t_max": 1000,
        "beta_start": 1e-4,
        "beta_end": 0.02,
        "lambda_vel": 1.0,
    },
    "training": {
        "epochs": 40,
        "batch": 32,
        "lr": 2e-4,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "eval_every": 10,
        "eval_samples": 32,
        "width": 512,
        "blocks": 3,
        "temb_dim": 64,
    },
    "guidance": {
        "scale": 7.0,
        "warmup": 100,
        "normalize": "mean",
        "grid_pitch": 0.004,
    },
    "retrieval": {
        "k_candidates": 16,
        "text_threshold": 0.5,
    },
    "metrics": {
        "reps": 20,
        "frac": 0.5,
        "contact_tau": 0.005,
        "iv_pitch": 0.002,
    },
}

# keys that must stay positive for any run to make sense
_POSITIVE = [
    ("synthdata", "n_instances"), ("synthdata", "reps"),
    ("synthdata", "frames"), ("synthdata", "fps"),
    ("diffusion", "t_max"), ("training", "epochs"), ("training", "batch"),
    ("training", "lr"), ("training", "eval_every"),
    ("training", "eval_samples"), ("training", "width"),
    ("training", "blocks"), ("metrics", "reps"),
]


def default_config():
    return copy.deepcopy(DEFAULTS)


def _merge(base, overlay, path=""):
    for key, val in overlay.items():
        if key not in base:
            raise InvalidConfig(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise InvalidConfig(
                    f"config key {path + key!r} must be a section")
            _merge(base[key], val, path + key + ".")
        else:
            if isinstance(val, dict):
                raise InvalidConfig(
                    f"config key {path + key!r} is a scalar, got a section")
            if not isinstance(val, (int, float, str, bool)):
                raise InvalidConfig(
                    f"config key {path + key!r} has unsupported type "
                    f"{type(val).__name__}")
            base[key] = val


def validate(cfg):
    for section, key in _POSITIVE:
        v = cfg[section][key]
        if not isinstance(v, (int, float)) or isinstance(v, bool) or v <= 0:
            raise InvalidConfig(f"{section}.{key} must be positive, got {v!r}")
    if cfg["synthdata"]["train_instances"] >= cfg["synthdata"]["n_instances"]:
        raise InvalidConfig("synthdata.train_instances must leave a test split")
    if cfg["guidance"]["scale"] < 0:
        raise InvalidConfig("guidance.scale must be >= 0")
    if cfg["guidance"]["warmup"] < 0:
        raise InvalidConfig("guidance.warmup must be >= 0")
    if cfg["guidance"]["normalize"] not in ("mean", "raw"):
        raise InvalidConfig("guidance.normalize must be 'mean' or 'raw'")
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        raise InvalidConfig("seed must be an integer")
    return cfg


def load_config(path=None, overrides=None):
    """Defaults overlaid with an optional JSON file, then a dict.

    Args:
        path: JSON file with a (possibly partial) nested config.
        overrides: final in-process overlay, same structure.
    """
    cfg = default_config()
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as e:
            raise InvalidConfig(f"cannot read config {path!r}: {e}") from e
        except json.JSONDecodeError as e:
            raise InvalidConfig(f"config {path!r} is not valid JSON: {e}") from e
        if not isinstance(doc, dict):
            raise InvalidConfig("config file must hold a JSON object")
        _merge(cfg, doc)
    if overrides:
        _merge(cfg, overrides)
    return validate(cfg)


def config_hash(cfg):
    """sha256 hex digest of the canonical JSON form (order-free)."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
