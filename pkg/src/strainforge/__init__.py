"""Left-ventricle strain from multi-view 2-D contour tracking."""

from .errors import (BundleIOError, DegenerateElementError, DomainError, GeometryError,
                     MeshingError, NumericError, RegistrationError, StrainforgeError,
                     ValidationError)
from .study import Study, TrackedView, ViewGeometry, load_study, save_study

__version__ = "0.1.0"

__all__ = [
    "BundleIOError", "DegenerateElementError", "DomainError", "GeometryError", "MeshingError",
    "NumericError", "RegistrationError", "StrainforgeError", "ValidationError",
    "Study", "TrackedView", "ViewGeometry", "load_study", "save_study", "__version__",
]
