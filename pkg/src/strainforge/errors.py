"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class StrainforgeError(Exception):
    exit_code = 1
    kind = "error"

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context

    def to_dict(self):
        out = {"type": self.kind, "message": str(self)}
        out.update({k: v for k, v in self.context.items() if v is not None})
        return out


class ValidationError(StrainforgeError):
    """Malformed input: schema violations, bad parameters, broken invariants."""

    exit_code = 2
    kind = "validation"


class GeometryError(ValidationError):
    kind = "geometry"


class DomainError(ValidationError):
    """Query outside the region where an operation is defined."""

    kind = "domain"


class NumericError(StrainforgeError):
    exit_code = 3
    kind = "numeric"


class DegenerateElementError(NumericError):
    kind = "degenerate_element"


class MeshingError(NumericError):
    kind = "meshing"


class RegistrationError(NumericError):
    kind = "registration"


class BundleIOError(StrainforgeError):
    exit_code = 4
    kind = "io"
