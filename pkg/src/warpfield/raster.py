"""Differentiable silhouette rasterization and diagnostic hard rendering.

The differentiable path renders a soft coverage ("opacity") image: per
pixel p the contribution of a front-facing triangle f is
sigmoid(d_f(p) / sigma) with d_f the signed screen-space distance to the
triangle boundary (positive inside, in pixels), and

    O(p) = 1 - prod_f (1 - sigmoid(d_f(p) / sigma)).

Since 1 - sigmoid(x) = exp(-softplus(x)) the product is accumulated as a
sum of softplus terms, which is unconditionally stable and makes the
exact vertex gradient a single extra pass.  Hard z-buffered renders
(normals / flat shading / per-face scalar colormap) are diagnostic only
and carry no gradients.
"""

import base64
import json
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

# Candidate pixels for a triangle are its screen bounding box dilated by
# this many sigmas; softplus(-20) ~ 2e-9 keeps the truncated tail well
# below single-pixel noise while bounding the per-face work.
DILATION_SIGMAS = 20.0


@dataclass(frozen=True)
class Camera:
    """Pinhole camera; position/look_at/up are tuples so cameras hash."""

    position: tuple
    look_at: tuple
    up: tuple
    fov: float          # vertical field of view, radians
    width: int
    height: int
    near: float = 0.05
    far: float = 100.0

    def __post_init__(self):
        if not 0.0 < self.fov < math.pi:
            raise ValueError(f"fov must be in (0, pi), got {self.fov}")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if not self.near < self.far:
            raise ValueError("near must be < far")
        if np.allclose(self.position, self.look_at):
            raise ValueError("view direction is zero")

    @classmethod
    def orbit(cls, target, azimuth_deg, elevation_deg, distance,
              fov_deg=40.0, width=256, height=256, near=0.05, far=100.0):
        """Camera on an orbit around ``target``: y-up, azimuth about +y from +z."""
        az = math.radians(azimuth_deg)
        el = math.radians(elevation_deg)
        direction = np.array(
            [math.sin(az) * math.cos(el), math.sin(el), math.cos(az) * math.cos(el)]
        )
        target = np.asarray(target, dtype=np.float64)
        position = target + distance * direction
        return cls(
            position=tuple(float(x) for x in position),
            look_at=tuple(float(x) for x in target),
            up=(0.0, 1.0, 0.0),
            fov=math.radians(fov_deg),
            width=int(width),
            height=int(height),
            near=near,
            far=far,
        )

    def basis(self):
        """Orthonormal (right, up, forward) with forward toward look_at."""
        eye = np.asarray(self.position)
        fwd = np.asarray(self.look_at) - eye
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up, dtype=np.float64))
        nr = np.linalg.norm(right)
        if nr < 1e-12:
            raise ValueError("up vector is parallel to the view direction")
        right /= nr
        up = np.cross(right, fwd)
        return right, up, fwd

    def project(self, points):
        """Screen coordinates (n, 2) in pixels and camera depth (n,).

        Pixel x grows right, y grows down; pixel centers sit at half-integer
        coordinates.  Depth is distance along the view direction.
        """
        right, up, fwd = self.basis()
        rel = np.asarray(points, dtype=np.float64) - np.asarray(self.position)
        xc = rel @ right
        yc = rel @ up
        zc = rel @ fwd
        half_h = math.tan(self.fov / 2.0)
        half_w = half_h * self.width / self.height
        with np.errstate(divide="ignore", invalid="ignore"):
            sx = (xc / (zc * half_w) + 1.0) * 0.5 * self.width
            sy = (1.0 - yc / (zc * half_h)) * 0.5 * self.height
        return np.stack([sx, sy], axis=-1), zc

    def project_with_jacobian(self, points):
        """Projection plus d(screen)/d(world point), shape (n, 2, 3)."""
        right, up, fwd = self.basis()
        rel = np.asarray(points, dtype=np.float64) - np.asarray(self.position)
        xc = rel @ right
        yc = rel @ up
        zc = rel @ fwd
        half_h = math.tan(self.fov / 2.0)
        half_w = half_h * self.width / self.height
        sx = (xc / (zc * half_w) + 1.0) * 0.5 * self.width
        sy = (1.0 - yc / (zc * half_h)) * 0.5 * self.height
        zc2 = zc * zc
        cx = 0.5 * self.width / half_w
        cy = 0.5 * self.height / half_h
        jac = np.empty((rel.shape[0], 2, 3))
        jac[:, 0, :] = cx * (right[None, :] * zc[:, None] - fwd[None, :] * xc[:, None]) / zc2[:, None]
        jac[:, 1, :] = -cy * (up[None, :] * zc[:, None] - fwd[None, :] * yc[:, None]) / zc2[:, None]
        return np.stack([sx, sy], axis=-1), zc, jac


@dataclass
class OpacityMap:
    """H x W coverage image with every value in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("opacity map must be 2-D")
        if self.values.size and (
            not np.all(np.isfinite(self.values))
            or self.values.min() < 0.0
            or self.values.max() > 1.0
        ):
            raise ValueError("opacity values must be finite and in [0, 1]")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    def mean(self):
        return float(self.values.mean())


def _softplus(x):
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _visible_faces(vertices, faces, camera, zc):
    """Front-facing faces with all corners beyond the near plane."""
    tri = vertices[faces]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    to_face = tri.mean(axis=1) - np.asarray(camera.position)
    front = np.einsum("ij,ij->i", normals, to_face) < 0.0
    in_front = (zc[faces] > camera.near).all(axis=1)
    return np.flatnonzero(front & in_front)


def _face_bbox(tri2d, radius, width, height):
    """Integer pixel bounds of a dilated screen-space triangle, or None."""
    x0 = int(math.floor(tri2d[:, 0].min() - radius))
    x1 = int(math.ceil(tri2d[:, 0].max() + radius))
    y0 = int(math.floor(tri2d[:, 1].min() - radius))
    y1 = int(math.ceil(tri2d[:, 1].max() + radius))
    x0, x1 = max(x0, 0), min(x1, width)
    y0, y1 = max(y0, 0), min(y1, height)
    if x0 >= x1 or y0 >= y1:
        return None
    return x0, x1, y0, y1


def _edge_quantities(tri2d, px, py):
    """Per-edge clamped-foot distances and cross products on a pixel grid.

    Returns (dist2, t_raw, cross) each of shape (3, h, w), plus the signed
    doubled area of the triangle.
    """
    h, w = py.size, px.size
    dist2 = np.empty((3, h, w))
    t_raw = np.empty((3, h, w))
    cross = np.empty((3, h, w))
    gx = px[None, :]
    gy = py[:, None]
    for k in range(3):
        ux, uy = tri2d[k]
        vx, vy = tri2d[(k + 1) % 3]
        ex, ey = vx - ux, vy - uy
        ll = ex * ex + ey * ey
        wx = gx - ux
        wy = gy - uy
        tr = (wx * ex + wy * ey) / max(ll, 1e-300)
        t_raw[k] = tr
        t = np.minimum(tr, 1.0)
        np.maximum(t, 0.0, out=t)
        dx = wx - t * ex
        dy = wy - t * ey
        dx *= dx
        dy *= dy
        dx += dy
        dist2[k] = dx
        cross[k] = ex * wy - ey * wx
    area2 = (tri2d[1, 0] - tri2d[0, 0]) * (tri2d[2, 1] - tri2d[0, 1]) - (
        tri2d[1, 1] - tri2d[0, 1]
    ) * (tri2d[2, 0] - tri2d[0, 0])
    return dist2, t_raw, cross, area2


def _patch_signed_distance(tri2d, px, py):
    """Signed distance on a pixel grid with minimal temporaries (hot path)."""
    gx = px[None, :]
    gy = py[:, None]
    dist2_min = None
    inside_pos = None
    inside_neg = None
    for k in range(3):
        ux, uy = tri2d[k]
        vx, vy = tri2d[(k + 1) % 3]
        ex, ey = vx - ux, vy - uy
        ll = ex * ex + ey * ey
        wx = gx - ux
        wy = gy - uy
        tr = (wx * ex + wy * ey) / max(ll, 1e-300)
        np.minimum(tr, 1.0, out=tr)
        np.maximum(tr, 0.0, out=tr)
        dx = wx - tr * ex
        dy = wy - tr * ey
        dx *= dx
        dy *= dy
        dx += dy
        cross = ex * wy - ey * wx
        if k == 0:
            dist2_min = dx
            inside_pos = cross >= 0
            inside_neg = cross <= 0
        else:
            np.minimum(dist2_min, dx, out=dist2_min)
            inside_pos &= cross >= 0
            inside_neg &= cross <= 0
    area2 = (tri2d[1, 0] - tri2d[0, 0]) * (tri2d[2, 1] - tri2d[0, 1]) - (
        tri2d[1, 1] - tri2d[0, 1]
    ) * (tri2d[2, 0] - tri2d[0, 0])
    inside = inside_pos if area2 >= 0 else inside_neg
    d = np.sqrt(dist2_min)
    np.negative(d, out=d, where=~inside)
    return d


def _signed_distance(tri2d, px, py):
    """Signed distance to the triangle boundary, positive inside."""
    dist2, _, cross, area2 = _edge_quantities(tri2d, px, py)
    if area2 >= 0:
        inside = (cross >= 0).all(axis=0)
    else:
        inside = (cross <= 0).all(axis=0)
    dist = np.sqrt(dist2.min(axis=0))
    return np.where(inside, dist, -dist)


def _accumulate_coverage(vertices, faces, camera, sigma, out_sum):
    """Add softplus(d/sigma) of every visible face into out_sum (H, W)."""
    screen, zc = camera.project(vertices)
    visible = _visible_faces(vertices, faces, camera, zc)
    radius = DILATION_SIGMAS * sigma
    degenerate_area = 1e-12
    for fi in visible:
        tri2d = screen[faces[fi]]
        if not np.all(np.isfinite(tri2d)):
            continue
        bbox = _face_bbox(tri2d, radius, camera.width, camera.height)
        if bbox is None:
            continue
        x0, x1, y0, y1 = bbox
        area2 = (tri2d[1, 0] - tri2d[0, 0]) * (tri2d[2, 1] - tri2d[0, 1]) - (
            tri2d[1, 1] - tri2d[0, 1]
        ) * (tri2d[2, 0] - tri2d[0, 0])
        if abs(area2) < degenerate_area:
            continue
        px = np.arange(x0, x1) + 0.5
        py = np.arange(y0, y1) + 0.5
        d = _patch_signed_distance(tri2d, px, py)
        d /= sigma
        out_sum[y0:y1, x0:x1] += _softplus(d)
    return screen, zc, visible


def render_opacity(vertices, faces, camera, sigma=2.0):
    """Soft silhouette coverage of a mesh under a camera.

    Parameters
    ----------
    vertices : (n, 3) array
    faces : (m, 3) int array
    camera : Camera
    sigma : float
        Boundary softness in pixels; must be > 0.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    coverage_sum = np.zeros((camera.height, camera.width))
    if faces.size:
        _accumulate_coverage(vertices, faces, camera, sigma, coverage_sum)
    return OpacityMap(-np.expm1(-coverage_sum))


def backward_opacity(vertices, faces, camera, sigma, dloss_do, opacity=None):
    """Exact gradient of sum(dloss_do * O) with respect to the vertices.

    Chains dO/d(signed distance) through the piecewise closed forms of the
    point-to-triangle distance and the perspective projection; the same
    candidate-pixel truncation as the forward pass keeps the pair
    finite-difference consistent.  Passing the already-rendered ``opacity``
    skips the internal re-render (the coverage sum is recovered as
    -log1p(-O)).
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    dloss_do = np.asarray(dloss_do, dtype=np.float64)
    if dloss_do.shape != (camera.height, camera.width):
        raise ValueError(
            f"dloss_do shape {dloss_do.shape} does not match camera "
            f"{(camera.height, camera.width)}"
        )
    grad = np.zeros_like(vertices)
    if faces.size == 0:
        return grad

    if opacity is not None:
        if (opacity.height, opacity.width) != (camera.height, camera.width):
            raise ValueError("opacity resolution does not match camera")
        coverage_sum = -np.log1p(-np.minimum(opacity.values, 1.0 - 1e-300))
    else:
        coverage_sum = np.zeros((camera.height, camera.width))
        _accumulate_coverage(vertices, faces, camera, sigma, coverage_sum)
    # dLoss/dS(p): O = 1 - exp(-S) so dO/dS = exp(-S)
    dloss_ds = dloss_do * np.exp(-coverage_sum)

    screen, zc, jac = camera.project_with_jacobian(vertices)
    visible = _visible_faces(vertices, faces, camera, zc)
    radius = DILATION_SIGMAS * sigma
    for fi in visible:
        corner_idx = faces[fi]
        tri2d = screen[corner_idx]
        if not np.all(np.isfinite(tri2d)):
            continue
        bbox = _face_bbox(tri2d, radius, camera.width, camera.height)
        if bbox is None:
            continue
        x0, x1, y0, y1 = bbox
        px = np.arange(x0, x1) + 0.5
        py = np.arange(y0, y1) + 0.5
        dist2, t_raw, cross, area2 = _edge_quantities(tri2d, px, py)
        if abs(area2) < 1e-12:
            continue
        orient = 1.0 if area2 >= 0 else -1.0
        inside = (cross >= 0).all(axis=0) if orient > 0 else (cross <= 0).all(axis=0)
        kmin = dist2.argmin(axis=0)
        dist = np.sqrt(np.take_along_axis(dist2, kmin[None], axis=0)[0])
        d = np.where(inside, dist, -dist)

        # dLoss/dd for every pixel of the patch
        local = dloss_ds[y0:y1, x0:x1] * _sigmoid(d / sigma) / sigma
        if not np.any(local):
            continue

        shape = d.shape
        gx = np.broadcast_to(px[None, :], shape)
        gy = np.broadcast_to(py[:, None], shape)
        sign = np.where(inside, 1.0, -1.0)
        safe_dist = np.maximum(dist, 1e-12)
        gscreen = np.zeros((3, 2))
        for k in range(3):
            on_k = kmin == k
            if not on_k.any():
                continue
            ka, kb = k, (k + 1) % 3
            ux, uy = tri2d[ka]
            vx, vy = tri2d[kb]
            ex, ey = vx - ux, vy - uy
            ll = math.hypot(ex, ey)
            tr = t_raw[k]

            interior = on_k & (tr > 0.0) & (tr < 1.0)
            if interior.any() and ll > 0:
                # d = orient * C / L on the minimizing edge's interior:
                # dC/du = (vy - py, px - vx), dC/dv = (py - uy, ux - px),
                # dL/du = -e / L, dL/dv = e / L
                inv_l = 1.0 / ll
                w_ = local[interior]
                gx_m = gx[interior]
                gy_m = gy[interior]
                col2 = cross[k][interior] * inv_l * inv_l
                gscreen[ka, 0] += orient * inv_l * (
                    w_ @ (vy - gy_m + col2 * ex)
                )
                gscreen[ka, 1] += orient * inv_l * (
                    w_ @ (gx_m - vx + col2 * ey)
                )
                gscreen[kb, 0] += orient * inv_l * (
                    w_ @ (gy_m - uy - col2 * ex)
                )
                gscreen[kb, 1] += orient * inv_l * (
                    w_ @ (ux - gx_m - col2 * ey)
                )

            at_u = on_k & (tr <= 0.0)
            if at_u.any():
                w_ = local[at_u] * sign[at_u] / safe_dist[at_u]
                gscreen[ka, 0] += w_ @ (ux - gx[at_u])
                gscreen[ka, 1] += w_ @ (uy - gy[at_u])

            at_v = on_k & (tr >= 1.0)
            if at_v.any():
                w_ = local[at_v] * sign[at_v] / safe_dist[at_v]
                gscreen[kb, 0] += w_ @ (vx - gx[at_v])
                gscreen[kb, 1] += w_ @ (vy - gy[at_v])

        # chain screen -> world per corner
        for corner in range(3):
            grad[corner_idx[corner]] += gscreen[corner] @ jac[corner_idx[corner]]
    return grad


def _weight_colormap(scalars):
    """Symmetric diverging blue-white-red map centered at 1.0."""
    scalars = np.asarray(scalars, dtype=np.float64)
    delta = max(float(np.abs(scalars - 1.0).max()), 1e-12)
    t = np.clip((scalars - 1.0) / delta, -1.0, 1.0)
    rgb = np.ones((scalars.shape[0], 3))
    neg = t < 0
    rgb[neg, 0] = 1.0 + t[neg]
    rgb[neg, 1] = 1.0 + t[neg]
    pos = t > 0
    rgb[pos, 1] = 1.0 - t[pos]
    rgb[pos, 2] = 1.0 - t[pos]
    return rgb


def render_diagnostic(vertices, faces, camera, mode="normals",
                      per_face_scalar=None):
    """Hard z-buffered render for inspection; not differentiable.

    Modes: ``normals`` (world normal to RGB), ``flat`` (headlight
    lambertian gray), ``weight`` (per-face scalar through a diverging
    red-blue map centered at 1.0; red = enlarging, blue = shrinking).
    Returns an (H, W, 3) uint8 image on a black background.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    if mode == "weight":
        if per_face_scalar is None:
            raise ValueError("weight mode requires per_face_scalar")
        scalars = np.asarray(per_face_scalar, dtype=np.float64)
        if scalars.shape != (faces.shape[0],):
            raise ValueError("per_face_scalar must have one entry per face")
        face_rgb = _weight_colormap(scalars)
    elif mode in ("normals", "flat"):
        tri = vertices[faces]
        normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        norms = np.linalg.norm(normals, axis=1)
        normals = normals / np.maximum(norms, 1e-300)[:, None]
        if mode == "normals":
            face_rgb = (normals + 1.0) / 2.0
        else:
            to_face = tri.mean(axis=1) - np.asarray(camera.position)
            to_face /= np.maximum(np.linalg.norm(to_face, axis=1), 1e-300)[:, None]
            shade = np.clip(-np.einsum("ij,ij->i", normals, to_face), 0.0, 1.0)
            face_rgb = np.repeat((0.1 + 0.9 * shade)[:, None], 3, axis=1)
    else:
        raise ValueError(f"unknown render mode {mode!r}")

    screen, zc = camera.project(vertices)
    image = np.zeros((camera.height, camera.width, 3))
    zbuf = np.full((camera.height, camera.width), np.inf)
    ok = (zc[faces] > camera.near).all(axis=1)
    for fi in np.flatnonzero(ok):
        tri2d = screen[faces[fi]]
        if not np.all(np.isfinite(tri2d)):
            continue
        bbox = _face_bbox(tri2d, 0.0, camera.width, camera.height)
        if bbox is None:
            continue
        x0, x1, y0, y1 = bbox
        px = np.arange(x0, x1) + 0.5
        py = np.arange(y0, y1) + 0.5
        gx = px[None, :]
        gy = py[:, None]
        ax, ay = tri2d[0]
        bx, by = tri2d[1]
        cx2, cy2 = tri2d[2]
        area2 = (bx - ax) * (cy2 - ay) - (by - ay) * (cx2 - ax)
        if abs(area2) < 1e-12:
            continue
        l0 = ((cx2 - bx) * (gy - by) - (cy2 - by) * (gx - bx)) / area2
        l1 = ((ax - cx2) * (gy - cy2) - (ay - cy2) * (gx - cx2)) / area2
        l2 = 1.0 - l0 - l1
        inside = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
        if not inside.any():
            continue
        z_inv = (
            l0 / zc[faces[fi, 0]] + l1 / zc[faces[fi, 1]] + l2 / zc[faces[fi, 2]]
        )
        depth = np.where(z_inv > 0, 1.0 / np.maximum(z_inv, 1e-300), np.inf)
        patch = zbuf[y0:y1, x0:x1]
        closer = inside & (depth < patch)
        patch[closer] = depth[closer]
        image[y0:y1, x0:x1][closer] = face_rgb[fi]
    return np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)


def write_png(image, path):
    """Save an (H, W, 3) uint8 image as PNG."""
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(path)


def save_opacity(opacity, path):
    """Dump an opacity map: lossless float64 JSON, or 16-bit PGM for viewing."""
    path = str(path)
    if path.endswith(".pgm"):
        data = np.clip(np.rint(opacity.values * 65535.0), 0, 65535).astype(">u2")
        with open(path, "wb") as fh:
            fh.write(f"P5\n{opacity.width} {opacity.height}\n65535\n".encode())
            fh.write(data.tobytes())
        return
    payload = {
        "width": opacity.width,
        "height": opacity.height,
        "dtype": "float64",
        "data_b64": base64.b64encode(
            opacity.values.astype("<f8").tobytes()
        ).decode("ascii"),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_opacity(path):
    """Load an opacity dump written by :func:`save_opacity` (JSON form)."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("dtype") != "float64":
        raise ValueError(f"{path}: unsupported opacity dtype")
    raw = base64.b64decode(payload["data_b64"])
    values = np.frombuffer(raw, dtype="<f8").reshape(
        payload["height"], payload["width"]
    )
    return OpacityMap(values.copy())
