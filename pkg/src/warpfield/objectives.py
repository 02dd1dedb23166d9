"""Regularization losses, symmetry projection, and the guidance interface.

Guidance is the pluggable slot where an image-space text-guidance backend
(served over HTTP, see guidance_client) or one of the built-in analytic
objectives attaches.  A guidance returns a gradient signal, not
necessarily the gradient of a true scalar loss; the built-ins do return
true loss gradients so tests can also check descent.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import MissingLandmarksError
from .raster import OpacityMap


@dataclass(frozen=True)
class LossWeights:
    """Combination weights: total = guidance*g + landmark*lmk + opacity*op."""

    guidance: float = 1.0
    landmark: float = 200.0
    opacity: float = 250.0

    def __post_init__(self):
        for name in ("guidance", "landmark", "opacity"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {name} must be finite and >= 0")


@dataclass
class GuidanceContext:
    """Everything a guidance may look at for one optimization step."""

    deformed_vertices: np.ndarray
    source: object                    # TriMesh
    camera: object                    # Camera used this step
    opacity: OpacityMap               # rendered opacity of the deformed mesh
    iteration: int
    prompt: str = ""


@dataclass
class GuidanceResult:
    """Loss estimate plus at least one gradient channel.

    ``vertex_grad`` is a direct geometric gradient; ``opacity_grad`` is an
    image-space gradient that the optimizer pulls back through the
    rasterizer.
    """

    loss: float
    vertex_grad: Optional[np.ndarray] = None
    opacity_grad: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.vertex_grad is None and self.opacity_grad is None:
            raise ValueError("guidance result must carry at least one gradient")
        if not np.isfinite(self.loss):
            raise ValueError("guidance loss is not finite")
        for g in (self.vertex_grad, self.opacity_grad):
            if g is not None and not np.all(np.isfinite(g)):
                raise ValueError("guidance gradient contains non-finite values")


def landmark_loss(source, deformed_vertices):
    """Mean squared 3D distance between source landmarks and their images.

    Returns (loss, gradient) with the gradient scattered to the landmark
    vertices: 2 (k'_i - k_i) / N.
    """
    if source.landmarks is None or len(source.landmarks) == 0:
        raise MissingLandmarksError(f"mesh {source.name!r} has no landmarks")
    deformed_vertices = np.asarray(deformed_vertices, dtype=np.float64)
    idx = source.landmarks
    delta = deformed_vertices[idx] - source.vertices[idx]
    n = idx.shape[0]
    loss = float((delta ** 2).sum() / n)
    grad = np.zeros_like(deformed_vertices)
    np.add.at(grad, idx, 2.0 * delta / n)
    return loss, grad


def opacity_loss(o_source, o_deformed):
    """Mean squared pixel difference (1/HW) sum (O - O')^2.

    Returns (loss, dLoss/dO') with gradient 2 (O' - O) / (HW).
    """
    if (o_source.height, o_source.width) != (o_deformed.height, o_deformed.width):
        raise ValueError(
            f"opacity dimensions differ: {o_source.values.shape} vs "
            f"{o_deformed.values.shape}"
        )
    diff = o_deformed.values - o_source.values
    hw = diff.size
    loss = float((diff ** 2).sum() / hw)
    return loss, 2.0 * diff / hw


def symmetry_project(vertices, sym_map):
    """Make a vertex array exactly mirror-symmetric under a symmetry map.

    Each pair is replaced by the mirror average (p_a <- (p_a +
    reflect(p_b)) / 2, p_b <- reflect(p_a)); on-plane vertices are snapped
    onto the plane.  Already-symmetric pairs are left untouched bitwise,
    which makes the projection idempotent.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    out = vertices.copy()
    plane = sym_map.plane
    if sym_map.pairs.size:
        a = sym_map.pairs[:, 0]
        b = sym_map.pairs[:, 1]
        reflected_a = plane.reflect(vertices[a])
        already = np.all(vertices[b] == reflected_a, axis=1)
        move = ~already
        if move.any():
            am, bm = a[move], b[move]
            mid = 0.5 * (vertices[am] + plane.reflect(vertices[bm]))
            out[am] = mid
            out[bm] = plane.reflect(mid)
    if sym_map.fixed.size:
        fixed_pts = vertices[sym_map.fixed]
        snapped = plane.snap(fixed_pts)
        changed = np.any(snapped != fixed_pts, axis=1)
        if changed.any():
            out[sym_map.fixed[changed]] = snapped[changed]
    return out


def total_loss(weights, guidance_result, lmk, op):
    """Weighted combination of the three loss channels."""
    g = guidance_result.loss if guidance_result is not None else 0.0
    return weights.guidance * g + weights.landmark * lmk + weights.opacity * op


class Guidance:
    """Base class for guidance objectives.

    Subclasses implement ``__call__(ctx) -> GuidanceResult``.  A guidance
    may pin the cameras the optimizer should render from by setting
    ``cameras`` to a list; the optimizer then cycles through them instead
    of sampling.  ``needs_opacity`` tells the optimizer whether to render
    the soft silhouette even when the opacity regularizer is off.
    """

    cameras = None
    needs_opacity = True

    def __call__(self, ctx):
        raise NotImplementedError


class TargetLandmarksGuidance(Guidance):
    """Drive listed vertices toward fixed 3D targets (mean squared error)."""

    needs_opacity = False

    def __init__(self, targets):
        self.indices = np.asarray([t[0] for t in targets], dtype=np.int64)
        self.points = np.asarray([t[1] for t in targets], dtype=np.float64)
        if self.indices.size == 0:
            raise ValueError("no targets given")
        if self.points.shape != (self.indices.shape[0], 3):
            raise ValueError("targets must be (vertex index, 3-vector) pairs")

    def __call__(self, ctx):
        v = ctx.deformed_vertices
        if self.indices.max() >= v.shape[0]:
            raise ValueError("target vertex index out of range")
        delta = v[self.indices] - self.points
        n = self.indices.shape[0]
        loss = float((delta ** 2).sum() / n)
        grad = np.zeros_like(v)
        np.add.at(grad, self.indices, 2.0 * delta / n)
        return GuidanceResult(loss=loss, vertex_grad=grad)


class TargetSilhouetteGuidance(Guidance):
    """Match rendered opacity to per-view target maps under fixed cameras."""

    def __init__(self, views):
        # views: list of (Camera, OpacityMap)
        if not views:
            raise ValueError("no views given")
        self.cameras = [cam for cam, _ in views]
        self._targets = {cam: target for cam, target in views}
        res = {(t.height, t.width) for _, t in views}
        cam_res = {(c.height, c.width) for c in self.cameras}
        if res != cam_res:
            raise ValueError("target resolution does not match its camera")

    def __call__(self, ctx):
        target = self._targets.get(ctx.camera)
        if target is None:
            raise ValueError("step camera is not one of the guidance cameras")
        if (target.height, target.width) != (ctx.opacity.height, ctx.opacity.width):
            raise ValueError("rendered opacity does not match target resolution")
        loss, dop = opacity_loss(target, ctx.opacity)
        return GuidanceResult(loss=loss, opacity_grad=dop)


class RegionScaleGuidance(Guidance):
    """Drive a labeled region's radius ratio toward a target scale.

    The region radius is the RMS distance of the region's vertices to
    their mean; the loss is (radius / source_radius - target)^2 with an
    exact closed-form vertex gradient (the mean-dependence cancels).
    """

    needs_opacity = False

    def __init__(self, region_label, scale_target):
        self.region_label = int(region_label)
        self.scale_target = float(scale_target)
        self._indices = None
        self._source_radius = None

    @staticmethod
    def _radius(points):
        center = points.mean(axis=0)
        return float(np.sqrt(((points - center) ** 2).sum(axis=1).mean())), center

    def _prepare(self, source):
        if source.region_labels is None:
            raise ValueError(f"mesh {source.name!r} has no region labels")
        idx = np.flatnonzero(source.region_labels == self.region_label)
        if idx.size == 0:
            raise ValueError(f"region id {self.region_label} labels no vertices")
        self._indices = idx
        self._source_radius, _ = self._radius(source.vertices[idx])

    def __call__(self, ctx):
        if self._indices is None:
            self._prepare(ctx.source)
        v = ctx.deformed_vertices
        pts = v[self._indices]
        radius, center = self._radius(pts)
        ratio = radius / self._source_radius
        err = ratio - self.scale_target
        loss = float(err ** 2)
        grad = np.zeros_like(v)
        if radius > 0:
            k = self._indices.shape[0]
            # d(radius)/dv_i = (v_i - center) / (k * radius)
            coeff = 2.0 * err / (self._source_radius * k * radius)
            grad[self._indices] = coeff * (pts - center)
        return GuidanceResult(loss=loss, vertex_grad=grad)


class ZeroGuidance(Guidance):
    """No signal; useful for regularizer-only runs and tests."""

    needs_opacity = False

    def __call__(self, ctx):
        return GuidanceResult(
            loss=0.0, vertex_grad=np.zeros_like(ctx.deformed_vertices)
        )
