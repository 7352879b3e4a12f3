"""Indexed triangle meshes and the geometric queries built on them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import (
    AmbiguousAxis,
    DegenerateNormal,
    EmptyMesh,
    InvalidMesh,
    NonFiniteVertex,
)
from .spatial import NearestIndex

MIN_TRIANGLE_AREA = 1e-9
AXIS_RATIO_MIN = 1.05


@dataclass(eq=False)
class TriMesh:
    """Triangle surface in millimetres with counterclockwise triangles."""

    vertices: np.ndarray
    triangles: np.ndarray
    _index: NearestIndex | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.vertices = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def validate(self, min_area: float = MIN_TRIANGLE_AREA) -> "TriMesh":
        """Raise if the mesh breaks an indexed-triangle invariant; return self."""
        if self.n_vertices == 0:
            raise EmptyMesh("mesh has no vertices")
        if not np.all(np.isfinite(self.vertices)):
            raise NonFiniteVertex("mesh contains non-finite vertex coordinates")
        if self.n_triangles:
            t = self.triangles
            if t.min() < 0 or t.max() >= self.n_vertices:
                raise InvalidMesh("triangle index out of range")
            if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
                raise InvalidMesh("triangle with repeated vertex index")
            small = np.flatnonzero(self.face_areas() < min_area)
            if len(small):
                raise InvalidMesh(f"triangle {int(small[0])} has area below {min_area} mm^2")
        return self

    def face_cross(self) -> np.ndarray:
        """Unnormalized face normals (length = twice the triangle area)."""
        v = self.vertices[self.triangles]
        return np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def face_normals(self) -> np.ndarray:
        c = self.face_cross()
        return c / np.linalg.norm(c, axis=1, keepdims=True)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def enclosed_volume(self) -> float:
        """Signed volume via the divergence theorem; positive when outward-oriented."""
        v = self.vertices[self.triangles]
        return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        e = self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        return np.unique(np.sort(e, axis=1), axis=0)

    def mean_edge_length(self) -> float:
        e = self.edges()
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean())

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges()) + self.n_triangles

    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def nearest_index(self) -> NearestIndex:
        """Spatial index over the vertices, built on first use."""
        if self._index is None:
            self._index = NearestIndex(self.vertices)
        return self._index

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        return TriMesh(vertices, self.triangles)

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "TriMesh":
        return self.with_vertices(self.vertices @ np.asarray(rotation).T + np.asarray(translation))


def vertex_normals(mesh: TriMesh) -> np.ndarray:
    """Area-weighted vertex normals, normalized to unit length."""
    acc = np.zeros((mesh.n_vertices, 3))
    cross = mesh.face_cross()
    for k in range(3):
        np.add.at(acc, mesh.triangles[:, k], cross)
    norms = np.linalg.norm(acc, axis=1)
    bad = np.flatnonzero(norms < 1e-12)
    if len(bad):
        raise DegenerateNormal(f"vertex {int(bad[0])} has no well-defined normal")
    return acc / norms[:, None]


def principal_axis(mesh: TriMesh, distal_hint) -> np.ndarray:
    """Dominant eigenvector of the vertex covariance, pointing toward ``distal_hint``."""
    if mesh.n_vertices == 0:
        raise EmptyMesh("principal axis of an empty mesh")
    pts = mesh.vertices
    centroid = pts.mean(axis=0)
    cov = np.cov((pts - centroid).T)
    w, v = np.linalg.eigh(cov)
    if w[2] <= 0 or w[2] < AXIS_RATIO_MIN * w[1]:
        raise AmbiguousAxis(f"top covariance eigenvalues {w[2]:.6g} and {w[1]:.6g} are within 5%")
    axis = v[:, 2]
    side = float(np.dot(axis, np.asarray(distal_hint, dtype=np.float64) - centroid))
    if side == 0.0:
        raise AmbiguousAxis("distal hint lies in the plane through the centroid")
    return axis if side > 0 else -axis


def bone_length(mesh: TriMesh, axis: np.ndarray | None = None) -> float:
    """Extent of the vertices along ``axis`` (the principal axis by default)."""
    if axis is None:
        pts = mesh.vertices - mesh.centroid()
        axis = np.linalg.eigh(np.cov(pts.T))[1][:, 2]
    s = mesh.vertices @ axis
    return float(s.max() - s.min())


def cast_line(mesh: TriMesh, point, direction) -> np.ndarray | None:
    """Intersect the line ``point + s * direction`` (any sign of s) with the mesh.

    Returns the intersection closest to ``point`` or None when nothing is hit.
    """
    p = np.asarray(point, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    if mesh.n_triangles == 0:
        return None
    v = mesh.vertices[mesh.triangles]
    e1 = v[:, 1] - v[:, 0]
    e2 = v[:, 2] - v[:, 0]
    h = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, h)
    ok = np.abs(det) > 1e-12 * np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
    if not ok.any():
        return None
    inv = np.zeros_like(det)
    inv[ok] = 1.0 / det[ok]
    s = p - v[:, 0]
    u = inv * np.einsum("ij,ij->i", s, h)
    q = np.cross(s, e1)
    w = inv * (q @ d)
    t = inv * np.einsum("ij,ij->i", e2, q)
    tol = 1e-12
    hit = ok & (u >= -tol) & (w >= -tol) & (u + w <= 1 + tol)
    if not hit.any():
        return None
    ts = t[hit]
    best = ts[np.argmin(np.abs(ts))]
    return p + best * d


def project_and_snap(mesh: TriMesh, point, direction) -> int:
    """Project ``point`` onto the mesh along ``direction`` and snap to a vertex.

    Falls back to the nearest vertex of ``point`` when the line misses.
    """
    if mesh.n_vertices == 0:
        raise EmptyMesh("cannot project onto an empty mesh")
    hit = cast_line(mesh, point, direction)
    target = np.asarray(point, dtype=np.float64) if hit is None else hit
    return mesh.nearest_index().nearest(target)
