"""warpfield: gradient-domain mesh deformation with per-face weighted Jacobians.

Deforms a template triangle mesh by optimizing a 3x3 matrix and a scalar
weight per face; vertex positions are recovered with an area-weighted
Poisson solve, so topology, UVs, and vertex-indexed semantics survive
unchanged.  Differentiable silhouette rendering, landmark and opacity
regularizers, and a pluggable guidance interface drive the optimization.
"""

from .errors import (
    DegenerateFaceError,
    DisconnectedMeshError,
    EmptyMeshError,
    FatalGuidanceError,
    GuidanceTransportError,
    MalformedResponseError,
    MeshError,
    MissingLandmarksError,
    NonManifoldError,
    NotSpdError,
    NumericalAbortError,
    ObjParseError,
    SymmetryMismatchError,
    WarpfieldError,
)
from .estimator import WeightedJacobianDeformer
from .field import (
    FieldGradient,
    JacobianField,
    apply_mask,
    identity_field,
    interpolate,
    load_field,
    save_field,
)
from .guidance_client import HttpGuidance, call_guidance
from .mesh import TriMesh, load_obj, save_obj
from .metrics import (
    QualityReport,
    quality_report,
    self_intersection_ratio,
    triangle_triangle_intersect,
)
from .objectives import (
    Guidance,
    GuidanceContext,
    GuidanceResult,
    LossWeights,
    RegionScaleGuidance,
    TargetLandmarksGuidance,
    TargetSilhouetteGuidance,
    ZeroGuidance,
    landmark_loss,
    opacity_loss,
    symmetry_project,
    total_loss,
)
from .operators import (
    FaceGradientOperator,
    ReflectionPlane,
    SymmetryMap,
    build_gradient_operator,
    build_symmetry_map,
)
from .optimizer import OptimConfig, RunState, adam_update, run, sample_camera, step
from .poisson import PoissonSystem, assemble
from .raster import Camera, OpacityMap, backward_opacity, render_diagnostic, render_opacity

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "DegenerateFaceError",
    "DisconnectedMeshError",
    "EmptyMeshError",
    "FaceGradientOperator",
    "FatalGuidanceError",
    "FieldGradient",
    "Guidance",
    "GuidanceContext",
    "GuidanceResult",
    "GuidanceTransportError",
    "HttpGuidance",
    "JacobianField",
    "LossWeights",
    "MalformedResponseError",
    "MeshError",
    "MissingLandmarksError",
    "NonManifoldError",
    "NotSpdError",
    "NumericalAbortError",
    "ObjParseError",
    "OpacityMap",
    "OptimConfig",
    "PoissonSystem",
    "QualityReport",
    "ReflectionPlane",
    "RegionScaleGuidance",
    "RunState",
    "SymmetryMap",
    "SymmetryMismatchError",
    "TargetLandmarksGuidance",
    "TargetSilhouetteGuidance",
    "TriMesh",
    "WarpfieldError",
    "WeightedJacobianDeformer",
    "ZeroGuidance",
    "adam_update",
    "apply_mask",
    "assemble",
    "backward_opacity",
    "build_gradient_operator",
    "build_symmetry_map",
    "call_guidance",
    "identity_field",
    "interpolate",
    "landmark_loss",
    "load_field",
    "load_obj",
    "opacity_loss",
    "quality_report",
    "render_diagnostic",
    "render_opacity",
    "run",
    "sample_camera",
    "save_field",
    "save_obj",
    "self_intersection_ratio",
    "step",
    "symmetry_project",
    "total_loss",
    "triangle_triangle_intersect",
]
