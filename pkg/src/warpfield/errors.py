"""Exception types raised across the package."""


class WarpfieldError(Exception):
    """Base class for all package-specific errors."""


class MeshError(WarpfieldError):
    """Base class for mesh construction and I/O problems."""


class ObjParseError(MeshError):
    """OBJ file could not be parsed.  Carries the 1-based line number."""

    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class EmptyMeshError(MeshError):
    """Mesh has no vertices or no faces."""


class DegenerateFaceError(MeshError):
    """A face repeats a vertex or its area is below the relative threshold."""

    def __init__(self, message, face_indices=()):
        self.face_indices = list(face_indices)
        super().__init__(message)


class NonManifoldError(MeshError):
    """An undirected edge is shared by more than two faces."""

    def __init__(self, message, edges=()):
        self.edges = list(edges)
        super().__init__(message)


class SymmetryMismatchError(MeshError):
    """Too many vertices have no counterpart under the requested reflection."""

    def __init__(self, message, unmatched=()):
        self.unmatched = list(unmatched)
        super().__init__(message)


class MissingLandmarksError(MeshError):
    """Operation requires landmarks but the mesh carries none."""


class NotSpdError(WarpfieldError):
    """Matrix is not symmetric positive definite (e.g. an unpinned Laplacian)."""


class DisconnectedMeshError(NotSpdError):
    """Mesh has several connected components; a single pin cannot fix the gauge."""

    def __init__(self, message, n_components):
        self.n_components = n_components
        super().__init__(message)


class NumericalAbortError(WarpfieldError):
    """Optimization produced a non-finite loss.  Carries the iteration index."""

    def __init__(self, message, iteration=None):
        self.iteration = iteration
        super().__init__(message)


class GuidanceTransportError(WarpfieldError):
    """Guidance endpoint unreachable, timed out, or repeatedly asked for retry."""


class MalformedResponseError(GuidanceTransportError):
    """Guidance server answered with an invalid or inconsistent payload."""


class FatalGuidanceError(GuidanceTransportError):
    """Guidance server signalled a fatal condition; the run must abort."""
