"""Positioning-splint construction from maxilla, mandible, occlusal surface and T_th."""

from .build import (HeightSurface, SplintBuilder, assemble_splint, build_inner_surface, build_outer_shell,
                    build_splint, crown_region, emboss, generate_occlusal_surface, impress_mandible,
                    resolve_conflicts)
from .feasibility import check_feasibility
from .heightfield import HeightGrid, rasterize
from .model import (ConstraintVerdict, DesignCase, FeasibilityReport, InfeasibleTransformError, SplintError,
                    SplintModel, SplintParams)
from .stamp import OcclusalStamp, clean_stamp, make_stamp

__all__ = [
    "ConstraintVerdict", "DesignCase", "FeasibilityReport", "HeightGrid", "HeightSurface",
    "InfeasibleTransformError", "OcclusalStamp", "SplintBuilder", "SplintError", "SplintModel",
    "SplintParams", "assemble_splint", "build_inner_surface", "build_outer_shell", "build_splint",
    "check_feasibility", "clean_stamp", "crown_region", "emboss", "generate_occlusal_surface",
    "impress_mandible", "make_stamp", "rasterize", "resolve_conflicts",
]
