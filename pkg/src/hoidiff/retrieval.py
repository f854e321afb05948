"""Mesh database and condition-driven retrieval.

Retrieval is a two-stage rule: rank every entry by visual cosine
similarity, keep the top k as a shortlist, drop shortlist entries
whose text similarity falls below a threshold, and return the best
visual survivor.  If the text filter eliminates the whole shortlist,
fall back to the global visual argmax.  All ties break on entry id so
results are reproducible.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DataError, EmptyDatabase
from .meshgeom import TriMesh, load_obj


@dataclass
class RetrievalEntry:
    id: str
    raw_text: str
    text_feature: np.ndarray
    visual_feature: np.ndarray
    mesh_files: list          # relative paths, one per object part
    category: str

    def to_dict(self):
        return {"id": self.id, "raw_text": self.raw_text,
                "text_feature": np.asarray(self.text_feature).tolist(),
                "visual_feature": np.asarray(self.visual_feature).tolist(),
                "mesh": list(self.mesh_files), "category": self.category}

    @classmethod
    def from_dict(cls, d):
        return cls(d["id"], d["raw_text"],
                   np.asarray(d["text_feature"], dtype=np.float64),
                   np.asarray(d["visual_feature"], dtype=np.float64),
                   list(d["mesh"]), d["category"])


@dataclass
class RetrievalDB:
    root: str
    provider: dict
    entries: list = field(default_factory=list)
    _mesh_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.entries:
            raise EmptyDatabase(f"no entries in database at {self.root!r}")
        order = np.argsort([e.id for e in self.entries])
        self.entries = [self.entries[i] for i in order]
        self._vis = np.stack([_unit(e.visual_feature) for e in self.entries])
        self._txt = np.stack([_unit(e.text_feature) for e in self.entries])

    def save(self):
        doc = {"schema": "sight-db/1", "provider": self.provider,
               "entries": [e.to_dict() for e in self.entries]}
        with open(os.path.join(self.root, "manifest.json"), "w") as fh:
            json.dump(doc, fh)

    @classmethod
    def load(cls, root):
        path = os.path.join(root, "manifest.json")
        if not os.path.isfile(path):
            raise DataError(f"no manifest.json under {root}")
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("schema") != "sight-db/1":
            raise DataError(f"unknown database schema {doc.get('schema')!r}")
        return cls(root, doc.get("provider", {}),
                   [RetrievalEntry.from_dict(d) for d in doc["entries"]])

    def load_meshes(self, entry: RetrievalEntry):
        """Part meshes of one entry, cached per entry id."""
        if entry.id not in self._mesh_cache:
            self._mesh_cache[entry.id] = [
                load_obj(os.path.join(self.root, rel)) for rel in entry.mesh_files]
        return self._mesh_cache[entry.id]

    def by_id(self, entry_id):
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise DataError(f"no entry {entry_id!r}")


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


@dataclass
class RetrievalResult:
    entry: RetrievalEntry
    visual_score: float
    text_score: float
    used_fallback: bool
    # per-entry diagnostics aligned with db.entries order
    all_visual: np.ndarray
    all_text: np.ndarray


def retrieve(db: RetrievalDB, text_feature, visual_feature,
             k_candidates=16, text_threshold=0.5) -> RetrievalResult:
    """Two-stage visual-then-text retrieval (see module docstring).

    Scores against every entry are returned for debugging; the chosen
    entry is deterministic in the inputs.
    """
    vq = _unit(visual_feature)
    tq = _unit(text_feature)
    vis = db._vis @ vq
    txt = db._txt @ tq
    # shortlist: top-k by visual score, id-ordered within equal scores
    # (entries are already sorted by id, and argsort is stable)
    order = np.argsort(-vis, kind="stable")
    shortlist = order[:max(1, int(k_candidates))]
    survivors = [int(i) for i in shortlist if txt[i] >= text_threshold]
    if survivors:
        best_score = max(vis[i] for i in survivors)
        best = min(i for i in survivors if vis[i] == best_score)
        fallback = False
    else:
        best = int(order[0])
        fallback = True
    e = db.entries[best]
    return RetrievalResult(e, float(vis[best]), float(txt[best]), fallback,
                           vis, txt)


def random_same_category(db: RetrievalDB, category, rng) -> RetrievalEntry:
    """Seeded uniform pick among entries of one category."""
    pool = [e for e in db.entries if e.category == category]
    if not pool:
        raise DataError(f"no entries with category {category!r}")
    return pool[int(rng.integers(len(pool)))]


def chamfer_distance(a, b):
    """Symmetric mean nearest-vertex distance between two vertex sets.

    Accepts TriMesh, raw (n, 3) arrays, or lists of either (parts are
    pooled into one cloud).
    """
    va = _vertex_cloud(a)
    vb = _vertex_cloud(b)
    d_ab = cKDTree(vb).query(va)[0].mean()
    d_ba = cKDTree(va).query(vb)[0].mean()
    return 0.5 * (d_ab + d_ba)


def _vertex_cloud(x):
    if isinstance(x, TriMesh):
        return x.vertices
    if isinstance(x, (list, tuple)):
        return np.concatenate([_vertex_cloud(p) for p in x], axis=0)
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DataError(f"vertex cloud must be (n, 3), got {arr.shape}")
    return arr
