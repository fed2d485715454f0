"""
Exception hierarchy for the shape matching services.
Routers map InputError to exit code 2 and DivergenceError to exit code 3.
"""
from typing import Optional, Sequence


class PatchMatchError(Exception):
    """Base class for every error raised by the services"""
    exit_code = 1


class InputError(PatchMatchError):
    """Bad files, bad sizes, bad configuration"""
    exit_code = 2


class DivergenceError(PatchMatchError):
    """Optimization produced a nonfinite value"""
    exit_code = 3


class MeshFormatError(InputError):
    def __init__(self, path, message: str, line: Optional[int] = None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class DisconnectedMeshError(InputError):
    pass


class FaceIndexError(MeshFormatError):
    pass


class SizeMismatchError(InputError):
    pass


class UnreachableVertexError(InputError):
    pass


class CacheNotFoundError(InputError):
    pass


class CacheMismatchError(InputError):
    pass


class HierarchyError(InputError):
    pass


class ZeroFeatureError(InputError):
    pass


class ConfigMismatchError(InputError):
    pass


class EmptyEvaluationError(InputError):
    pass


class DegenerateRotationError(PatchMatchError):
    """Raised when 6D rotation parameters cannot be orthonormalized"""

    def __init__(self, patches: Sequence[int]):
        self.patches = [int(p) for p in patches]
        super().__init__(f"degenerate rotation parameters for patches {self.patches[:10]}")


class NonFiniteError(DivergenceError):
    pass
