"""Mesh quality measurement: self-intersection ratio and triangle statistics.

The intersection predicate is an interval test in floating point with an
exact rational-arithmetic fallback whenever a plane-side predicate lands
inside a relative 1e-10 slab, so the boolean answer is robust for
touching and near-coplanar configurations.  Candidate pairs come from an
axis-aligned bounding-box hierarchy or, in brute mode, from the full
pairwise box-overlap matrix; both modes run the same predicate and must
agree exactly.
"""

import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DegenerateFaceError
from .mesh import DEGENERATE_AREA_REL

_SLAB_REL = 1e-10


# ---------------------------------------------------------------------------
# exact rational helpers (Fraction(float) is exact)

def _f_sub(a, b):
    return tuple(Fraction(x) - Fraction(y) for x, y in zip(a, b))


def _f_cross(a, b):
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


def _f_dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _plane_heights(tri_pts, other_pts):
    """Exact signed heights of other_pts over the plane of tri_pts."""
    n = _f_cross(_f_sub(tri_pts[1], tri_pts[0]), _f_sub(tri_pts[2], tri_pts[0]))
    return n, [_f_dot(n, _f_sub(p, tri_pts[0])) for p in other_pts]


def _orient2d(a, b, c):
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _point_in_tri_2d(p, tri):
    s = [_orient2d(tri[k], tri[(k + 1) % 3], p) for k in range(3)]
    return all(v >= 0 for v in s) or all(v <= 0 for v in s)


def _segments_intersect_2d(p0, p1, q0, q1):
    """Closed 2D segment intersection with exact arithmetic."""
    d1 = _orient2d(q0, q1, p0)
    d2 = _orient2d(q0, q1, p1)
    d3 = _orient2d(p0, p1, q0)
    d4 = _orient2d(p0, p1, q1)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True

    def on_segment(a, b, c):
        # c collinear with (a, b); is it within the closed box?
        return (
            min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])
        )

    if d1 == 0 and on_segment(q0, q1, p0):
        return True
    if d2 == 0 and on_segment(q0, q1, p1):
        return True
    if d3 == 0 and on_segment(p0, p1, q0):
        return True
    if d4 == 0 and on_segment(p0, p1, q1):
        return True
    return False


def _coplanar_overlap_exact(t1, t2, normal):
    """Exact closed overlap of coplanar triangles, projected to 2D."""
    drop = max(range(3), key=lambda k: abs(normal[k]))
    keep = [k for k in range(3) if k != drop]
    a = [(p[keep[0]], p[keep[1]]) for p in t1]
    b = [(p[keep[0]], p[keep[1]]) for p in t2]
    if any(_point_in_tri_2d(p, b) for p in a):
        return True
    if any(_point_in_tri_2d(p, a) for p in b):
        return True
    for i in range(3):
        for j in range(3):
            if _segments_intersect_2d(
                a[i], a[(i + 1) % 3], b[j], b[(j + 1) % 3]
            ):
                return True
    return False


def _line_interval_exact(tri_pts, heights, direction):
    """Projection interval of a triangle's plane crossing onto a line."""
    points = []
    for k in range(3):
        if heights[k] == 0:
            points.append(_f_dot(direction, tuple(Fraction(x) for x in tri_pts[k])))
    for k in range(3):
        a, b = k, (k + 1) % 3
        if (heights[a] > 0 > heights[b]) or (heights[a] < 0 < heights[b]):
            t = heights[a] / (heights[a] - heights[b])
            pa = tuple(Fraction(x) for x in tri_pts[a])
            pb = tuple(Fraction(x) for x in tri_pts[b])
            pt = tuple(pa[i] + t * (pb[i] - pa[i]) for i in range(3))
            points.append(_f_dot(direction, pt))
    if not points:
        return None
    return min(points), max(points)


def _intersect_exact(t1, t2):
    """Exact closed triangle-triangle intersection via rational arithmetic."""
    t1 = [tuple(p) for p in t1]
    t2 = [tuple(p) for p in t2]
    n2, h1 = _plane_heights(t2, t1)
    if all(h > 0 for h in h1) or all(h < 0 for h in h1):
        return False
    n1, h2 = _plane_heights(t1, t2)
    if all(h > 0 for h in h2) or all(h < 0 for h in h2):
        return False
    if all(h == 0 for h in h1):
        return _coplanar_overlap_exact(t1, t2, n2)
    direction = _f_cross(n1, n2)
    if direction == (0, 0, 0):
        # parallel planes at distance zero on one side only: heights mixed
        # zero/nonzero; contact is where heights vanish -> coplanar test
        return _coplanar_overlap_exact(t1, t2, n2)
    i1 = _line_interval_exact(t1, h1, direction)
    i2 = _line_interval_exact(t2, h2, direction)
    if i1 is None or i2 is None:
        return False
    return max(i1[0], i2[0]) <= min(i1[1], i2[1])


# ---------------------------------------------------------------------------
# float fast path

def _interval_float(tri, heights, direction):
    proj = tri @ direction
    neg = heights < 0
    lone = 0
    for k in range(3):
        if neg[k] != neg[(k + 1) % 3] and neg[k] != neg[(k + 2) % 3]:
            lone = k
            break
    o1, o2 = (lone + 1) % 3, (lone + 2) % 3
    ta = proj[o1] + (proj[lone] - proj[o1]) * heights[o1] / (heights[o1] - heights[lone])
    tb = proj[o2] + (proj[lone] - proj[o2]) * heights[o2] / (heights[o2] - heights[lone])
    return (ta, tb) if ta <= tb else (tb, ta)


def triangle_triangle_intersect(t1, t2):
    """True iff the closed triangles share at least one point.

    Raises
    ------
    DegenerateFaceError
        If either input triangle has (near-)zero area.
    """
    t1 = np.asarray(t1, dtype=np.float64)
    t2 = np.asarray(t2, dtype=np.float64)
    if t1.shape != (3, 3) or t2.shape != (3, 3):
        raise ValueError("triangles must be 3x3 coordinate arrays")

    n1 = np.cross(t1[1] - t1[0], t1[2] - t1[0])
    n2 = np.cross(t2[1] - t2[0], t2[2] - t2[0])
    scale = max(
        float(np.ptp(t1, axis=0).max()), float(np.ptp(t2, axis=0).max()), 1e-300
    )
    if np.linalg.norm(n1) <= 2.0 * DEGENERATE_AREA_REL * scale ** 2 or (
        np.linalg.norm(n2) <= 2.0 * DEGENERATE_AREA_REL * scale ** 2
    ):
        raise DegenerateFaceError("degenerate triangle in intersection test")

    slab = _SLAB_REL * scale
    h1 = (t1 - t2[0]) @ n2 / np.linalg.norm(n2)
    if np.all(h1 > slab) or np.all(h1 < -slab):
        return False
    h2 = (t2 - t1[0]) @ n1 / np.linalg.norm(n1)
    if np.all(h2 > slab) or np.all(h2 < -slab):
        return False
    if np.any(np.abs(h1) <= slab) or np.any(np.abs(h2) <= slab):
        # touching / near-coplanar: decide exactly
        return _intersect_exact(t1, t2)
    direction = np.cross(n1, n2)
    direction /= np.linalg.norm(direction)
    lo1, hi1 = _interval_float(t1, h1, direction)
    lo2, hi2 = _interval_float(t2, h2, direction)
    return max(lo1, lo2) <= min(hi1, hi2)


# ---------------------------------------------------------------------------
# bounding volume hierarchy over faces

_LEAF_SIZE = 8


class Bvh:
    """AABB tree over face primitives; each face lives in exactly one leaf."""

    def __init__(self, triangles):
        triangles = np.asarray(triangles, dtype=np.float64)
        self.lo = triangles.min(axis=1)
        self.hi = triangles.max(axis=1)
        centroids = triangles.mean(axis=1)
        self.nodes = []  # (lo, hi, left, right, faces-or-None)
        order = np.arange(triangles.shape[0])
        if order.size:
            self.root = self._build(order, centroids)
        else:
            self.root = None

    def _build(self, idx, centroids):
        node_lo = self.lo[idx].min(axis=0)
        node_hi = self.hi[idx].max(axis=0)
        if idx.size <= _LEAF_SIZE:
            self.nodes.append((node_lo, node_hi, -1, -1, idx))
            return len(self.nodes) - 1
        axis = int(np.argmax(node_hi - node_lo))
        order = idx[np.argsort(centroids[idx, axis], kind="stable")]
        half = order.size // 2
        left = self._build(order[:half], centroids)
        right = self._build(order[half:], centroids)
        self.nodes.append((node_lo, node_hi, left, right, None))
        return len(self.nodes) - 1

    @staticmethod
    def _overlap(a, b):
        return bool(np.all(a[0] <= b[1]) and np.all(b[0] <= a[1]))

    def candidate_pairs(self):
        """Unordered face pairs whose leaf boxes overlap (closed test)."""
        if self.root is None:
            return []
        pairs = []
        stack = [(self.root, self.root)]
        while stack:
            ia, ib = stack.pop()
            a = self.nodes[ia]
            b = self.nodes[ib]
            if ia == ib:
                if a[4] is not None:
                    faces = a[4]
                    for u in range(faces.size):
                        for v in range(u + 1, faces.size):
                            pairs.append((faces[u], faces[v]))
                else:
                    stack.append((a[2], a[2]))
                    stack.append((a[3], a[3]))
                    stack.append((a[2], a[3]))
                continue
            if not self._overlap(a, b):
                continue
            if a[4] is not None and b[4] is not None:
                for u in a[4]:
                    lo_u, hi_u = self.lo[u], self.hi[u]
                    for v in b[4]:
                        if np.all(lo_u <= self.hi[v]) and np.all(self.lo[v] <= hi_u):
                            pairs.append((u, v) if u < v else (v, u))
            elif a[4] is not None:
                stack.append((ia, b[2]))
                stack.append((ia, b[3]))
            else:
                stack.append((a[2], ib))
                stack.append((a[3], ib))
        return pairs


def _brute_candidate_pairs(triangles):
    """All unordered pairs with overlapping axis-aligned boxes."""
    lo = triangles.min(axis=1)
    hi = triangles.max(axis=1)
    m = triangles.shape[0]
    pairs = []
    for i in range(m):
        overlap = np.all(lo[i] <= hi[i + 1:], axis=1) & np.all(
            lo[i + 1:] <= hi[i], axis=1
        )
        for j in np.flatnonzero(overlap):
            pairs.append((i, i + 1 + j))
    return pairs


def self_intersection_ratio(mesh, mode="bvh"):
    """Self-intersection measurement of a mesh.

    Counts unordered face pairs that geometrically intersect, excluding
    pairs sharing a vertex or an edge (touching along shared simplices is
    not a self-intersection).  Returns ``(ratio, pairs)`` where ratio is
    the number of distinct faces involved in at least one intersecting
    pair divided by the face count, and ``pairs`` is the sorted pair list
    (so the pair-count numerator convention can be reported too).
    """
    triangles = mesh.corner_positions()
    if mode == "bvh":
        candidates = Bvh(triangles).candidate_pairs()
    elif mode == "brute":
        candidates = _brute_candidate_pairs(triangles)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    faces = mesh.faces
    hits = []
    for i, j in candidates:
        if set(faces[i]) & set(faces[j]):
            continue  # adjacent faces share a vertex or edge
        if triangle_triangle_intersect(triangles[i], triangles[j]):
            hits.append((int(i), int(j)) if i < j else (int(j), int(i)))
    hits = sorted(set(hits))
    involved = {f for pair in hits for f in pair}
    ratio = len(involved) / mesh.n_faces
    return ratio, hits


@dataclass(frozen=True)
class QualityReport:
    self_intersection_ratio: float
    intersecting_pair_count: int
    intersecting_face_count: int
    min_angle_deg: float
    max_aspect_ratio: float
    degenerate_face_count: int

    def to_dict(self, mesh_name="", mode="bvh"):
        return {
            "mesh": mesh_name,
            "mode": mode,
            "self_intersection_ratio": self.self_intersection_ratio,
            "intersecting_pair_count": self.intersecting_pair_count,
            "intersecting_face_count": self.intersecting_face_count,
            "min_angle_deg": self.min_angle_deg,
            "max_aspect_ratio": self.max_aspect_ratio,
            "degenerate_face_count": self.degenerate_face_count,
        }


def quality_report(mesh, mode="bvh"):
    """Aggregate QualityReport: intersections, angles, aspect, degeneracy."""
    ratio, pairs = self_intersection_ratio(mesh, mode=mode)
    tri = mesh.corner_positions()
    edge_len = np.stack(
        [
            np.linalg.norm(tri[:, 1] - tri[:, 0], axis=1),
            np.linalg.norm(tri[:, 2] - tri[:, 1], axis=1),
            np.linalg.norm(tri[:, 0] - tri[:, 2], axis=1),
        ],
        axis=1,
    )
    areas = mesh.face_areas()
    # angle at corner k spans edges k (to k+1) and k+2 (from k+2)
    angles = np.empty_like(edge_len)
    for k in range(3):
        a = edge_len[:, k]
        b = edge_len[:, (k + 2) % 3]
        c = edge_len[:, (k + 1) % 3]
        cos_k = (a ** 2 + b ** 2 - c ** 2) / np.maximum(2.0 * a * b, 1e-300)
        angles[:, k] = np.degrees(np.arccos(np.clip(cos_k, -1.0, 1.0)))
    longest = edge_len.max(axis=1)
    # aspect = longest edge / shortest altitude, altitude = 2A / longest
    aspect = longest ** 2 / np.maximum(2.0 * areas, 1e-300)
    threshold = DEGENERATE_AREA_REL * mesh.bbox_diagonal ** 2
    involved = {f for pair in pairs for f in pair}
    return QualityReport(
        self_intersection_ratio=float(ratio),
        intersecting_pair_count=len(pairs),
        intersecting_face_count=len(involved),
        min_angle_deg=float(angles.min()),
        max_aspect_ratio=float(aspect.max()),
        degenerate_face_count=int((areas <= threshold).sum()),
    )


def report_to_json(report, mesh_name="", mode="bvh"):
    return json.dumps(report.to_dict(mesh_name=mesh_name, mode=mode), indent=2)
