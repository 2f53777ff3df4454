"""Triangle meshes, rigid transforms, file I/O and spatial queries."""

from .core import MeshError, Plane, TriangleMesh, concatenate, merge_vertices
from .index import SpatialIndex, count_crossings
from .io import MalformedFileError, load_mesh, save_mesh
from .ops import (
    IntersectionResult,
    Polyline,
    apply_transform,
    boundary_loops,
    component_labels,
    connected_components,
    meshes_intersect,
    min_distance,
    plane_section,
    signed_distance,
)
from .transform import NotRigidError, RigidTransform

__all__ = [
    "IntersectionResult", "MalformedFileError", "MeshError", "NotRigidError", "Plane", "Polyline",
    "RigidTransform", "SpatialIndex", "TriangleMesh", "apply_transform", "boundary_loops",
    "component_labels", "concatenate", "connected_components", "count_crossings", "load_mesh",
    "meshes_intersect", "merge_vertices", "min_distance", "plane_section", "save_mesh",
    "signed_distance",
]
