"""Exception hierarchy. Every failure the library raises derives from ``MeshComposeError``."""


class MeshComposeError(Exception):
    pass


class MeshFileNotFoundError(MeshComposeError, FileNotFoundError):
    pass


class UnsupportedFormatError(MeshComposeError, ValueError):
    pass


class DegenerateMeshError(MeshComposeError, ValueError):
    pass


class DegenerateTriangleError(MeshComposeError, ValueError):
    pass


class DegenerateSourceError(MeshComposeError, ValueError):
    """Source OBB has no usable extent for a scale estimate."""


class InsufficientPointsError(MeshComposeError, ValueError):
    pass


class DegenerateConfigurationError(MeshComposeError, ValueError):
    pass


class NoCorrespondencesError(MeshComposeError):
    pass


class RegistrationFailedError(MeshComposeError):
    pass


class OutOfRangeError(MeshComposeError, ValueError):
    pass


class LengthMismatchError(MeshComposeError, ValueError):
    pass


class DivergedError(MeshComposeError, FloatingPointError):
    pass


class NoInteriorSamplesError(MeshComposeError):
    """Neither mesh contains any of the Monte Carlo samples."""


class EditorFailureError(MeshComposeError):
    pass


class StageError(MeshComposeError):
    """Wraps a failure with the pipeline stage (and object id) it came from."""

    def __init__(self, stage, cause, object_id=None):
        self.stage = stage
        self.object_id = object_id
        self.cause = cause
        where = stage if object_id is None else f"{object_id}: {stage}"
        super().__init__(f"[{where}] {type(cause).__name__}: {cause}")
