"""Coarse-to-fine parcel-level urban land-use mapping."""

from __future__ import annotations

from .errors import EmptyParcelSet, InputError, StageError
from .scheme import DEFAULT_SCHEME, CategoryScheme, LandUseClass, Level, build_default_scheme

__version__ = "0.1.0"

__all__ = [
    "CategoryScheme",
    "DEFAULT_SCHEME",
    "EmptyParcelSet",
    "InputError",
    "LandUseClass",
    "Level",
    "StageError",
    "build_default_scheme",
    "__version__",
]
