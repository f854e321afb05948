"""Triangle mesh geometry: containment, proximity queries, voxel volumes.

Everything is vectorized numpy over point batches; meshes at the scale
this package targets (a few thousand triangles) are fastest with
chunked brute-force kernels, so the acceleration layer is a cheap
bounding-box cull plus per-mesh precomputation rather than a deep tree.

Containment uses ray-crossing parity.  A single ray can miscount when
it grazes an edge, so each query casts five fixed pseudo-random rays
and takes the majority vote.
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyMesh, InvalidPitch, InvalidTopology, NotWatertight
from .rotgeom import RigidTransform

# Five frozen ray directions for parity voting.  Drawn once from a
# seeded generator; the exact values only need to be irrational-ish and
# stable across runs.
_RAY_DIRECTIONS = np.random.default_rng(9157).standard_normal((5, 3))
_RAY_DIRECTIONS /= np.linalg.norm(_RAY_DIRECTIONS, axis=1, keepdims=True)

_PARALLEL_EPS = 1e-14
_RAY_T_EPS = 1e-12


class TriMesh:
    """Indexed triangle mesh with cached per-triangle data.

    Build through build_mesh() (validates) or load_obj().  Vertices are
    float64 meters, triangles int32 indices with outward winding.
    """

    def __init__(self, vertices, triangles, watertight):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int32)
        self.watertight = bool(watertight)
        tv = self.vertices[self.triangles]
        self._v0 = np.ascontiguousarray(tv[:, 0])
        self._e1 = np.ascontiguousarray(tv[:, 1] - tv[:, 0])
        self._e2 = np.ascontiguousarray(tv[:, 2] - tv[:, 0])
        self.aabb_lo = self.vertices.min(axis=0)
        self.aabb_hi = self.vertices.max(axis=0)
        # Per-ray precomputation for the parity test.
        self._pvec = np.cross(_RAY_DIRECTIONS[:, None, :], self._e2[None, :, :])
        det = np.einsum("kmj,mj->km", self._pvec, self._e1)
        ok = np.abs(det) > _PARALLEL_EPS
        self._inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        self._det_ok = ok

    # ------------------------------------------------------------ queries

    def contains(self, points):
        """Strict interior test by majority vote over five ray parities.

        Args:
            points: (n, 3) query points.

        Returns:
            (n,) bool array.
        """
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n = points.shape[0]
        out = np.zeros(n, dtype=bool)
        # Points outside the bounding box are outside; no rays needed.
        near = np.all((points >= self.aabb_lo) & (points <= self.aabb_hi), axis=1)
        idx = np.nonzero(near)[0]
        if idx.size == 0:
            return out
        pts = points[idx]
        votes = np.zeros(len(pts), dtype=np.int32)
        chunk = max(1, int(2.0e6 / max(len(self.triangles), 1)))
        for s in range(0, len(pts), chunk):
            p = pts[s:s + chunk]
            votes[s:s + chunk] = self._parity_votes(p)
        out[idx] = votes >= 3
        return out

    def _parity_votes(self, p):
        """Number of rays (of 5) that see an odd crossing count."""
        tvec = p[:, None, :] - self._v0[None, :, :]  # (n, m, 3)
        qvec = np.cross(tvec, self._e1[None, :, :])  # (n, m, 3)
        votes = np.zeros(len(p), dtype=np.int32)
        for k in range(len(_RAY_DIRECTIONS)):
            inv = self._inv_det[k]
            u = np.einsum("nmj,mj->nm", tvec, self._pvec[k]) * inv
            v = np.einsum("nmj,j->nm", qvec, _RAY_DIRECTIONS[k]) * inv
            t = np.einsum("nmj,mj->nm", qvec, self._e2) * inv
            hit = (self._det_ok[k]
                   & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0)
                   & (t > _RAY_T_EPS))
            votes += (hit.sum(axis=1) & 1).astype(np.int32)
        return votes

    def winding_parity_single_ray(self, points, ray_index=0):
        """Parity of one fixed ray; exposed for grid builders and tests."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        tvec = points[:, None, :] - self._v0[None, :, :]
        qvec = np.cross(tvec, self._e1[None, :, :])
        k = ray_index
        inv = self._inv_det[k]
        u = np.einsum("nmj,mj->nm", tvec, self._pvec[k]) * inv
        v = np.einsum("nmj,j->nm", qvec, _RAY_DIRECTIONS[k]) * inv
        t = np.einsum("nmj,mj->nm", qvec, self._e2) * inv
        hit = (self._det_ok[k] & (u >= 0.0) & (v >= 0.0)
               & (u + v <= 1.0) & (t > _RAY_T_EPS))
        return (hit.sum(axis=1) & 1).astype(bool)

    def nearest_vertex(self, points):
        """Index and distance of the closest mesh vertex per query point.

        Ties resolve to the lowest index (argmin semantics), which keeps
        the result deterministic.
        """
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n = points.shape[0]
        idx = np.empty(n, dtype=np.int64)
        dist = np.empty(n)
        chunk = max(1, int(4.0e6 / len(self.vertices)))
        for s in range(0, n, chunk):
            p = points[s:s + chunk]
            d2 = np.sum((p[:, None, :] - self.vertices[None, :, :]) ** 2, axis=2)
            ii = np.argmin(d2, axis=1)
            idx[s:s + chunk] = ii
            dist[s:s + chunk] = np.sqrt(d2[np.arange(len(p)), ii])
        return idx, dist

    def nearest_surface_point(self, points):
        """Closest point on the triangulated surface per query point.

        Returns:
            (points (n, 3), distances (n,)).
        """
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n = points.shape[0]
        out_p = np.empty((n, 3))
        out_d = np.empty(n)
        chunk = max(1, int(1.0e6 / max(len(self.triangles), 1)))
        for s in range(0, n, chunk):
            p = points[s:s + chunk]
            cp = _closest_point_on_triangles(p, self._v0, self._e1, self._e2)
            d2 = np.sum((cp - p[:, None, :]) ** 2, axis=2)
            ii = np.argmin(d2, axis=1)
            rows = np.arange(len(p))
            out_p[s:s + chunk] = cp[rows, ii]
            out_d[s:s + chunk] = np.sqrt(d2[rows, ii])
        return out_p, out_d

    def transformed(self, rigid: RigidTransform) -> "TriMesh":
        """Mesh moved by a rigid transform (triangles shared)."""
        return TriMesh(rigid.apply(self.vertices), self.triangles, self.watertight)

    def volume(self):
        """Signed volume from the divergence theorem (outward winding)."""
        return float(np.einsum("ij,ij->i", self._v0,
                               np.cross(self._e1, self._e2)).sum() / 6.0)


def _closest_point_on_triangles(p, v0, e1, e2):
    """Ericson-style closest point from each of n points to m triangles.

    Args:
        p: (n, 3) points.
        v0, e1, e2: (m, 3) triangle origin and edge vectors.

    Returns:
        (n, m, 3) closest points.
    """
    a = v0[None, :, :]
    ab = e1[None, :, :]
    ac = e2[None, :, :]
    ap = p[:, None, :] - a
    d1 = np.sum(ab * ap, axis=-1)
    d2 = np.sum(ac * ap, axis=-1)
    bp = ap - ab
    d3 = np.sum(ab * bp, axis=-1)
    d4 = np.sum(ac * bp, axis=-1)
    cp = ap - ac
    d5 = np.sum(ab * cp, axis=-1)
    d6 = np.sum(ac * cp, axis=-1)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    def safe_div(num, den):
        ok = np.abs(den) > 1e-300
        return np.where(ok, num / np.where(ok, den, 1.0), 0.0)

    # Edge and interior parameters, clamped where the region tests say so.
    t_ab = np.clip(safe_div(d1, d1 - d3), 0.0, 1.0)[..., None]
    t_ac = np.clip(safe_div(d2, d2 - d6), 0.0, 1.0)[..., None]
    t_bc = np.clip(safe_div(d4 - d3, (d4 - d3) + (d5 - d6)), 0.0, 1.0)[..., None]
    denom = va + vb + vc
    v = safe_div(vb, denom)[..., None]
    w = safe_div(vc, denom)[..., None]

    b_pt = a + ab
    c_pt = a + ac
    # Ericson's region tests run in sequence with early returns; the
    # masks are applied here in reverse so the first test wins.
    res = a + ab * v + ac * w
    res = np.where(((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0))[..., None],
                   b_pt + t_bc * (c_pt - b_pt), res)
    res = np.where(((vb <= 0) & (d2 >= 0) & (d6 <= 0))[..., None],
                   a + t_ac * ac, res)
    res = np.where(((d6 >= 0) & (d5 <= d6))[..., None],
                   np.broadcast_to(c_pt, res.shape), res)
    res = np.where(((vc <= 0) & (d1 >= 0) & (d3 <= 0))[..., None],
                   a + t_ab * ab, res)
    res = np.where(((d3 >= 0) & (d4 <= d3))[..., None],
                   np.broadcast_to(b_pt, res.shape), res)
    res = np.where(((d1 <= 0) & (d2 <= 0))[..., None],
                   np.broadcast_to(a, res.shape), res)
    return res


# ------------------------------------------------------------ construction

def build_mesh(vertices, triangles, require_watertight=True):
    """Validate arrays and construct a TriMesh.

    Raises:
        EmptyMesh: no vertices or no triangles.
        InvalidTopology: out-of-range or repeated indices in a triangle.
        NotWatertight: some edge not shared by exactly two triangles
            (only when require_watertight).
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64)
    if vertices.size == 0 or triangles.size == 0:
        raise EmptyMesh("mesh needs at least one vertex and one triangle")
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise InvalidTopology(f"vertices must be (n, 3), got {vertices.shape}")
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise InvalidTopology(f"triangles must be (m, 3), got {triangles.shape}")
    if triangles.min() < 0 or triangles.max() >= len(vertices):
        raise InvalidTopology("triangle index out of range")
    if np.any((triangles[:, 0] == triangles[:, 1])
              | (triangles[:, 1] == triangles[:, 2])
              | (triangles[:, 0] == triangles[:, 2])):
        raise InvalidTopology("triangle with a repeated vertex index")
    wt = _is_watertight(triangles)
    if require_watertight and not wt:
        raise NotWatertight("mesh has boundary or non-manifold edges")
    return TriMesh(vertices, triangles, wt)


def _is_watertight(triangles):
    edges = np.concatenate([triangles[:, [0, 1]],
                            triangles[:, [1, 2]],
                            triangles[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return bool(np.all(counts == 2))


# ---------------------------------------------------------------- volumes

def voxel_intersection_volume(inside_a, inside_b, lo, hi, pitch):
    """Volume of the intersection of two point predicates.

    Lays a voxel grid of the given pitch over [lo, hi], evaluates both
    predicates at voxel centers, and returns count * pitch**3.

    Args:
        inside_a, inside_b: callables mapping (n, 3) points to (n,) bools.
        lo, hi: axis-aligned bounds (3,).
        pitch: voxel edge length in meters.
    """
    if pitch <= 0.0:
        raise InvalidPitch(f"pitch must be positive, got {pitch}")
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    counts = np.maximum(0, np.floor((hi - lo) / pitch + 1e-12).astype(np.int64))
    if np.any(counts == 0):
        return 0.0
    axes = [lo[k] + (np.arange(counts[k]) + 0.5) * pitch for k in range(3)]
    total = 0
    # Evaluate slab by slab to bound memory.
    block = max(1, int(2.5e5 / max(1, counts[1] * counts[2])))
    yz = np.stack(np.meshgrid(axes[1], axes[2], indexing="ij"), axis=-1).reshape(-1, 2)
    for s in range(0, counts[0], block):
        xs = axes[0][s:s + block]
        pts = np.empty((len(xs) * len(yz), 3))
        pts[:, 0] = np.repeat(xs, len(yz))
        pts[:, 1:] = np.tile(yz, (len(xs), 1))
        m = inside_a(pts)
        if m.any():
            m2 = np.zeros_like(m)
            m2[m] = inside_b(pts[m])
            total += int(m2.sum())
    return float(total) * pitch ** 3


# ------------------------------------------------------------------- OBJ IO

def save_obj(path, mesh_or_vertices, triangles=None):
    """Write an OBJ file (v and f records only, 1-based indices).

    Accepts a TriMesh or raw arrays.  Vertices with no faces are legal
    and used for point-cloud exports.
    """
    if triangles is None and isinstance(mesh_or_vertices, TriMesh):
        vertices = mesh_or_vertices.vertices
        triangles = mesh_or_vertices.triangles
    else:
        vertices = np.asarray(mesh_or_vertices, dtype=np.float64)
        triangles = np.zeros((0, 3), dtype=np.int64) if triangles is None else triangles
    lines = []
    for x, y, z in vertices:
        lines.append(f"v {float(x)!r} {float(y)!r} {float(z)!r}")
    for i, j, k in np.asarray(triangles, dtype=np.int64):
        lines.append(f"f {i + 1} {j + 1} {k + 1}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_obj(path, require_watertight=True):
    """Read the v/f subset of an OBJ file into a TriMesh."""
    vertices = []
    triangles = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:4]]
                triangles.append(idx)
    return build_mesh(np.array(vertices, dtype=np.float64),
                      np.array(triangles, dtype=np.int64),
                      require_watertight=require_watertight)


def load_obj_vertices(path):
    """Read only the vertex records (for point-cloud round trips)."""
    vertices = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if parts and parts[0] == "v":
                vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
    return np.array(vertices, dtype=np.float64)


# --------------------------------------------------------------- primitives

def box_mesh(size, center=(0.0, 0.0, 0.0), max_edge=0.008):
    """Axis-aligned box with each face gridded to roughly max_edge spacing.

    The face grids share their boundary vertices, so the result is
    watertight.  Vertex density matters downstream: contact tests use
    nearest-vertex distances.
    """
    size = np.asarray(size, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    seg = np.maximum(1, np.ceil(size / max_edge).astype(int))
    lo = center - size / 2.0
    pool = {}
    verts = []

    def vid(i, j, k):
        key = (int(i), int(j), int(k))
        if key not in pool:
            pool[key] = len(verts)
            verts.append(lo + np.array([i, j, k]) / seg * size)
        return pool[key]

    tris = []

    def face(fixed_axis, fixed_val, axis_u, axis_v, flip):
        nu, nv = seg[axis_u], seg[axis_v]
        for iu in range(nu):
            for iv in range(nv):
                cell = []
                for du, dv in ((0, 0), (1, 0), (1, 1), (0, 1)):
                    coord = [0, 0, 0]
                    coord[fixed_axis] = fixed_val
                    coord[axis_u] = iu + du
                    coord[axis_v] = iv + dv
                    cell.append(vid(*coord))
                q = [cell[0], cell[1], cell[2], cell[3]]
                if flip:
                    q = [cell[0], cell[3], cell[2], cell[1]]
                tris.append([q[0], q[1], q[2]])
                tris.append([q[0], q[2], q[3]])

    face(2, seg[2], 0, 1, flip=False)   # +z
    face(2, 0, 0, 1, flip=True)         # -z
    face(1, seg[1], 2, 0, flip=False)   # +y
    face(1, 0, 2, 0, flip=True)         # -y
    face(0, seg[0], 1, 2, flip=False)   # +x
    face(0, 0, 1, 2, flip=True)         # -x
    return build_mesh(np.array(verts), np.array(tris, dtype=np.int64))


def icosphere(subdivisions=2, radius=1.0, center=(0.0, 0.0, 0.0)):
    """Subdivided icosahedron projected to a sphere.

    Vertex count is 10 * 4**subdivisions + 2.
    """
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [v for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                m /= np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(m)
            return cache[key]

        nxt = []
        for i, j, k in faces:
            a = midpoint(i, j)
            b = midpoint(j, k)
            c = midpoint(k, i)
            nxt += [(i, a, c), (j, b, a), (k, c, b), (a, b, c)]
        faces = nxt
    v = np.array(verts) * radius + np.asarray(center, dtype=np.float64)
    return build_mesh(v, np.array(faces, dtype=np.int64))


def revolve_profile(profile, n_seg=24, center=(0.0, 0.0, 0.0)):
    """Solid of revolution about the z axis from an (r, z) polyline.

    The profile must start and end exactly on the axis (r == 0); those
    two points become pole vertices and every intermediate point becomes
    a ring of n_seg vertices, which keeps the result watertight.
    """
    profile = [(float(r), float(z)) for r, z in profile]
    if profile[0][0] != 0.0 or profile[-1][0] != 0.0:
        raise InvalidTopology("profile must start and end on the axis")
    if any(r <= 0.0 for r, _ in profile[1:-1]):
        raise InvalidTopology("interior profile points need positive radius")
    center = np.asarray(center, dtype=np.float64)
    ang = np.arange(n_seg) * (2.0 * np.pi / n_seg)
    ca, sa = np.cos(ang), np.sin(ang)
    verts = [np.array([0.0, 0.0, profile[0][1]])]
    ring_start = {}
    for li, (r, z) in enumerate(profile[1:-1], start=1):
        ring_start[li] = len(verts)
        for k in range(n_seg):
            verts.append(np.array([r * ca[k], r * sa[k], z]))
    top = len(verts)
    verts.append(np.array([0.0, 0.0, profile[-1][1]]))

    tris = []
    nlev = len(profile)
    for k in range(n_seg):
        kn = (k + 1) % n_seg
        tris.append([0, ring_start[1] + kn, ring_start[1] + k])
    for li in range(1, nlev - 2):
        a0, b0 = ring_start[li], ring_start[li + 1]
        for k in range(n_seg):
            kn = (k + 1) % n_seg
            tris.append([a0 + k, a0 + kn, b0 + kn])
            tris.append([a0 + k, b0 + kn, b0 + k])
    last = ring_start[nlev - 2]
    for k in range(n_seg):
        kn = (k + 1) % n_seg
        tris.append([last + k, last + kn, top])
    v = np.array(verts) + center
    return build_mesh(v, np.array(tris, dtype=np.int64))
