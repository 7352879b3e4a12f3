from .core import (
    TriMesh,
    bone_length,
    cast_line,
    principal_axis,
    project_and_snap,
    vertex_normals,
)
from .halfedge import HalfedgeTopology, build_halfedge
from .io import load_mesh, read_obj, read_ply, save_mesh, write_obj, write_ply
from .landmarks import LandmarkSet, bone_labels, site_label
from .spatial import NearestIndex, brute_force_nearest, point_distances, set_brute_force, set_workers

__all__ = [
    "TriMesh",
    "HalfedgeTopology",
    "LandmarkSet",
    "NearestIndex",
    "bone_labels",
    "bone_length",
    "brute_force_nearest",
    "build_halfedge",
    "cast_line",
    "load_mesh",
    "point_distances",
    "principal_axis",
    "project_and_snap",
    "read_obj",
    "read_ply",
    "save_mesh",
    "set_brute_force",
    "set_workers",
    "site_label",
    "vertex_normals",
    "write_obj",
    "write_ply",
]
