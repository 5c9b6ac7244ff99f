"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so the CLI can emit it
as JSON without string matching.
"""

from __future__ import annotations


class SwimFSIError(Exception):
    code = "error"

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self) -> dict:
        out = {"error": self.code, "message": str(self)}
        out.update({k: _jsonable(v) for k, v in self.details.items()})
        return out


def _jsonable(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return str(v)


class ResolutionTooCoarse(SwimFSIError):
    code = "resolution_too_coarse"


class DegenerateElement(SwimFSIError):
    code = "degenerate_element"


class MeshFormatError(SwimFSIError):
    code = "mesh_format"


class H1Violation(SwimFSIError):
    code = "h1_violation"


class SingularInertia(SwimFSIError):
    code = "singular_inertia"


class ExtensionDiverged(SwimFSIError):
    code = "extension_diverged"


class CompatibilityViolation(SwimFSIError):
    code = "compatibility_violation"


class SingularSystem(SwimFSIError):
    code = "singular_system"


class LinearSolveFailed(SwimFSIError):
    code = "linear_solve_failed"


class PicardDiverged(SwimFSIError):
    code = "picard_diverged"


class ConfigInvalid(SwimFSIError):
    code = "config_invalid"


class IncompatibleInitialData(SwimFSIError):
    code = "incompatible_initial_data"
