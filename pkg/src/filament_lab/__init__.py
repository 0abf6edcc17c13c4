"""Numerical laboratory for corner formation in the binormal flow."""

from . import errors, geometry, harness, nlsolver, reconstruction, scattering, selfsimilar

__version__ = "0.1.0"

__all__ = ["errors", "geometry", "harness", "nlsolver", "reconstruction", "scattering", "selfsimilar"]
