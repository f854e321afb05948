"""Independent geometry oracles used only by the tests.

These deliberately reimplement queries with different algorithms than
the package (winding numbers instead of ray parity, scalar loops
instead of vectorized region masks) so agreement is meaningful.
"""

import numpy as np


def winding_number_inside(mesh, points):
    """Generalized winding number containment test.

    Sums the signed solid angle of every triangle as seen from each
    query point (Van Oosterom-Strackee formula); a closed surface wraps
    interior points once, so w > 0.5 means inside.
    """
    points = np.atleast_2d(points)
    tv = mesh.vertices[mesh.triangles]
    out = np.empty(len(points), dtype=bool)
    for n, p in enumerate(points):
        a = tv[:, 0] - p
        b = tv[:, 1] - p
        c = tv[:, 2] - p
        la = np.linalg.norm(a, axis=1)
        lb = np.linalg.norm(b, axis=1)
        lc = np.linalg.norm(c, axis=1)
        num = np.einsum("ij,ij->i", a, np.cross(b, c))
        den = (la * lb * lc
               + np.einsum("ij,ij->i", a, b) * lc
               + np.einsum("ij,ij->i", b, c) * la
               + np.einsum("ij,ij->i", c, a) * lb)
        w = np.arctan2(num, den).sum() / (2.0 * np.pi)
        out[n] = w > 0.5
    return out


def closest_point_on_triangle_scalar(p, a, b, c):
    """Scalar closest point on one triangle (textbook region walk)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab @ ap
    d2 = ac @ ap
    if d1 <= 0 and d2 <= 0:
        return a
    bp = p - b
    d3 = ab @ bp
    d4 = ac @ bp
    if d3 >= 0 and d4 <= d3:
        return b
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        return a + ab * (d1 / (d1 - d3))
    cp = p - c
    d5 = ab @ cp
    d6 = ac @ cp
    if d6 >= 0 and d5 <= d6:
        return c
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        return a + ac * (d2 / (d2 - d6))
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b + t * (c - b)
    denom = 1.0 / (va + vb + vc)
    return a + ab * (vb * denom) + ac * (vc * denom)


def brute_force_surface_distance(mesh, points):
    """Min distance to the surface via the scalar per-triangle walk."""
    tv = mesh.vertices[mesh.triangles]
    out = np.empty(len(points))
    for n, p in enumerate(points):
        best = np.inf
        for a, b, c in tv:
            q = closest_point_on_triangle_scalar(p, a, b, c)
            best = min(best, float(np.linalg.norm(p - q)))
        out[n] = best
    return out


def brute_force_nearest_vertex(mesh, points):
    """Nearest vertex by explicit loop, lowest index on ties."""
    idx = np.empty(len(points), dtype=np.int64)
    dist = np.empty(len(points))
    for n, p in enumerate(points):
        best = np.inf
        bi = -1
        # strict < keeps the lowest index on exact ties
        for i, v in enumerate(mesh.vertices):
            d = float(np.linalg.norm(p - v))
            if d < best:
                best = d
                bi = i
        idx[n] = bi
        dist[n] = best
    return idx, dist
