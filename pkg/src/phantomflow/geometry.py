"""Planar geometry primitives shared by the mesh and activity machinery.

Everything operates on plain numpy arrays; triangles are (3, 2) vertex
arrays or batched (n, 3, 2) stacks.  Conventions: counterclockwise
triangles have positive signed area, and "strictly inside" always means
an open-set test so that tangent contact never counts as intersection.
"""

import numpy as np


def signed_area(tri):
    """Signed area of one triangle (3, 2) or a stack (n, 3, 2)."""
    tri = np.asarray(tri, dtype=float)
    a = tri[..., 0, :]
    b = tri[..., 1, :]
    c = tri[..., 2, :]
    return 0.5 * ((b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1])
                  - (c[..., 0] - a[..., 0]) * (b[..., 1] - a[..., 1]))


def longest_edge(tri):
    """Length of the longest edge, per triangle."""
    tri = np.asarray(tri, dtype=float)
    d0 = np.linalg.norm(tri[..., 1, :] - tri[..., 0, :], axis=-1)
    d1 = np.linalg.norm(tri[..., 2, :] - tri[..., 1, :], axis=-1)
    d2 = np.linalg.norm(tri[..., 0, :] - tri[..., 2, :], axis=-1)
    return np.maximum(d0, np.maximum(d1, d2))


def triangle_quality(tri):
    """Radius-ratio quality 2*r_in/r_circ in (0, 1]; 1 for equilateral.

    Degenerate (zero-area) triangles report quality 0 instead of raising.
    """
    tri = np.asarray(tri, dtype=float)
    a = np.linalg.norm(tri[..., 1, :] - tri[..., 0, :], axis=-1)
    b = np.linalg.norm(tri[..., 2, :] - tri[..., 1, :], axis=-1)
    c = np.linalg.norm(tri[..., 0, :] - tri[..., 2, :], axis=-1)
    area = np.abs(signed_area(tri))
    s = 0.5 * (a + b + c)
    abc = a * b * c
    with np.errstate(divide="ignore", invalid="ignore"):
        # r_in = area/s, r_circ = abc/(4 area); ratio = 4 area^2 / (s abc)
        q = np.where((area > 0.0) & (abc > 0.0), 8.0 * area * area / (s * abc), 0.0)
    return q


def barycentric(tri, points):
    """Barycentric coordinates of points (m, 2) w.r.t. one triangle (3, 2).

    Degenerate triangles return NaN weights.
    """
    tri = np.asarray(tri, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    a, b, c = tri[0], tri[1], tri[2]
    det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
    if det == 0.0:
        return np.full((points.shape[0], 3), np.nan)
    px = points[:, 0] - a[0]
    py = points[:, 1] - a[1]
    l1 = ((c[1] - a[1]) * px - (c[0] - a[0]) * py) / det
    l2 = (-(b[1] - a[1]) * px + (b[0] - a[0]) * py) / det
    return np.column_stack([1.0 - l1 - l2, l1, l2])


def points_in_triangles(tris, points, tol=0.0):
    """Boolean matrix (n_tri, n_pts): point strictly inside triangle.

    ``tol`` > 0 shrinks the triangles (tolerance is relative to twice the
    triangle area), ``tol`` < 0 fattens them.
    """
    tris = np.asarray(tris, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    a = tris[:, 0, :][:, None, :]
    b = tris[:, 1, :][:, None, :]
    c = tris[:, 2, :][:, None, :]
    p = points[None, :, :]

    def cross(u, v):
        return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]

    d0 = cross(b - a, p - a)
    d1 = cross(c - b, p - b)
    d2 = cross(a - c, p - c)
    two_area = cross(tris[:, 1, :] - tris[:, 0, :], tris[:, 2, :] - tris[:, 0, :])
    lim = tol * np.abs(two_area)[:, None]
    return (d0 > lim) & (d1 > lim) & (d2 > lim)


def segments_properly_cross(p0, p1, q0, q1):
    """Proper (transversal, interior-to-interior) crossing test.

    Accepts broadcastable stacks of endpoints; collinear overlap and
    endpoint touching do not count.
    """
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)

    def orient(a, b, c):
        return ((b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1])
                - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0]))

    o1 = orient(p0, p1, q0)
    o2 = orient(p0, p1, q1)
    o3 = orient(q0, q1, p0)
    o4 = orient(q0, q1, p1)
    return (o1 * o2 < 0.0) & (o3 * o4 < 0.0)


def project_point_to_segment(p, a, b):
    """Closest point on segment [a, b] to p: (point, parameter, distance)."""
    p = np.asarray(p, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return a.copy(), 0.0, float(np.linalg.norm(p - a))
    t = float((p - a) @ ab) / denom
    t = min(max(t, 0.0), 1.0)
    foot = a + t * ab
    return foot, t, float(np.linalg.norm(p - foot))


def project_points_to_segments(points, seg_a, seg_b):
    """Vectorized closest-point projection of points onto a segment set.

    Returns (foot (m, 2), segment index (m,), parameter (m,), distance (m,)).
    Ties in distance resolve to the lowest segment index.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    seg_a = np.atleast_2d(np.asarray(seg_a, dtype=float))
    seg_b = np.atleast_2d(np.asarray(seg_b, dtype=float))
    ab = seg_b - seg_a                               # (s, 2)
    denom = np.einsum("ij,ij->i", ab, ab)            # (s,)
    safe = np.where(denom > 0.0, denom, 1.0)
    ap = points[:, None, :] - seg_a[None, :, :]      # (m, s, 2)
    t = np.einsum("msj,sj->ms", ap, ab) / safe[None, :]
    t = np.where(denom[None, :] > 0.0, np.clip(t, 0.0, 1.0), 0.0)
    foot = seg_a[None, :, :] + t[..., None] * ab[None, :, :]
    d2 = np.sum((points[:, None, :] - foot) ** 2, axis=-1)
    idx = np.argmin(d2, axis=1)                      # argmin takes first = lowest id
    m = np.arange(points.shape[0])
    return foot[m, idx], idx, t[m, idx], np.sqrt(d2[m, idx])


def point_segment_distance(points, seg_a, seg_b):
    """Min distance of each point to the union of segments."""
    return project_points_to_segments(points, seg_a, seg_b)[3]


def segment_segment_distance(p0, p1, q0, q1):
    """Distance between two segments (0 if they intersect)."""
    if bool(segments_properly_cross(p0, p1, q0, q1)):
        return 0.0
    d = min(
        project_point_to_segment(p0, q0, q1)[2],
        project_point_to_segment(p1, q0, q1)[2],
        project_point_to_segment(q0, p0, p1)[2],
        project_point_to_segment(q1, p0, p1)[2],
    )
    return d
