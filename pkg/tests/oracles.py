"""Independent reference implementations used as test oracles.

These deliberately use different algorithms than the package: the
triangle intersection oracle runs exact rational plane-side predicates
with the Segura-Feito segment-triangle method, and the linear-solve
oracle is a textbook conjugate gradient.  Keep them independent of
warpfield internals.
"""

from fractions import Fraction

import numpy as np


def _fr(p):
    return tuple(Fraction(float(x)) for x in p)


def _sub(a, b):
    return tuple(x - y for x, y in zip(a, b))


def _cross(a, b):
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


def _dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def orient3d(a, b, c, d):
    """Sign of the tetra volume (exact)."""
    return _dot(_cross(_sub(b, a), _sub(c, a)), _sub(d, a))


def _orient2d(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _project_2d(points, normal):
    drop = max(range(3), key=lambda k: abs(normal[k]))
    keep = [k for k in range(3) if k != drop]
    return [(p[keep[0]], p[keep[1]]) for p in points]


def _point_in_triangle_2d(p, tri):
    signs = [_orient2d(tri[k], tri[(k + 1) % 3], p) for k in range(3)]
    return all(s >= 0 for s in signs) or all(s <= 0 for s in signs)


def _segments_cross_2d(p, q, a, b):
    d1 = _orient2d(a, b, p)
    d2 = _orient2d(a, b, q)
    d3 = _orient2d(p, q, a)
    d4 = _orient2d(p, q, b)
    if ((d1 > 0) != (d2 > 0)) and d1 != 0 and d2 != 0 and (
        (d3 > 0) != (d4 > 0)
    ) and d3 != 0 and d4 != 0:
        return True

    def between(u, v, w):
        return (
            min(u[0], v[0]) <= w[0] <= max(u[0], v[0])
            and min(u[1], v[1]) <= w[1] <= max(u[1], v[1])
        )

    if d1 == 0 and between(a, b, p):
        return True
    if d2 == 0 and between(a, b, q):
        return True
    if d3 == 0 and between(p, q, a):
        return True
    if d4 == 0 and between(p, q, b):
        return True
    return False


def _segment_triangle_coplanar(p, q, tri, normal):
    p2, q2 = _project_2d([p, q], normal)
    t2 = _project_2d(tri, normal)
    if _point_in_triangle_2d(p2, t2) or _point_in_triangle_2d(q2, t2):
        return True
    return any(
        _segments_cross_2d(p2, q2, t2[k], t2[(k + 1) % 3]) for k in range(3)
    )


def _segment_triangle(p, q, tri):
    """Closed segment vs closed triangle in 3D, exact."""
    a, b, c = tri
    sp = orient3d(a, b, c, p)
    sq = orient3d(a, b, c, q)
    if sp > 0 and sq > 0:
        return False
    if sp < 0 and sq < 0:
        return False
    if sp == 0 and sq == 0:
        normal = _cross(_sub(b, a), _sub(c, a))
        return _segment_triangle_coplanar(p, q, tri, normal)
    u = orient3d(p, q, a, b)
    v = orient3d(p, q, b, c)
    w = orient3d(p, q, c, a)
    return (u >= 0 and v >= 0 and w >= 0) or (u <= 0 and v <= 0 and w <= 0)


def tri_tri_intersect_oracle(t1, t2):
    """Exact closed triangle-triangle intersection (rational arithmetic)."""
    t1 = [_fr(p) for p in np.asarray(t1, dtype=np.float64)]
    t2 = [_fr(p) for p in np.asarray(t2, dtype=np.float64)]
    if all(orient3d(t2[0], t2[1], t2[2], p) == 0 for p in t1):
        # fully coplanar: containment either way or any edge pair crossing
        normal = _cross(_sub(t2[1], t2[0]), _sub(t2[2], t2[0]))
        a2 = _project_2d(t1, normal)
        b2 = _project_2d(t2, normal)
        if any(_point_in_triangle_2d(p, b2) for p in a2):
            return True
        if any(_point_in_triangle_2d(p, a2) for p in b2):
            return True
        return any(
            _segments_cross_2d(a2[i], a2[(i + 1) % 3], b2[j], b2[(j + 1) % 3])
            for i in range(3)
            for j in range(3)
        )
    for k in range(3):
        if _segment_triangle(t1[k], t1[(k + 1) % 3], t2):
            return True
        if _segment_triangle(t2[k], t2[(k + 1) % 3], t1):
            return True
    return False


def cg_solve_oracle(a_dense, b, tol=1e-12, max_iter=None):
    """Plain textbook conjugate gradient on a dense SPD matrix."""
    a = np.asarray(a_dense, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    x = np.zeros_like(b)
    r = b - a @ x
    p = r.copy()
    rs = r @ r
    for _ in range(max_iter or 10 * n):
        ap = a @ p
        alpha = rs / (p @ ap)
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = r @ r
        if np.sqrt(rs_new) <= tol * np.linalg.norm(b):
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x
