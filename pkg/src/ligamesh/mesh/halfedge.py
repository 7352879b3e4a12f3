"""Array-based halfedge incidence structure for triangle meshes.

Halfedge ``3*f + k`` runs from corner ``k`` to corner ``k+1`` of face ``f``,
so ``next`` and ``face`` are implicit in the numbering and only ``twin``
needs to be resolved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InconsistentOrientation, NonManifoldEdge
from .core import TriMesh


@dataclass
class HalfedgeTopology:
    n_vertices: int
    origin: np.ndarray
    next: np.ndarray
    twin: np.ndarray
    face: np.ndarray
    face_halfedge: np.ndarray
    vertex_halfedge: np.ndarray
    is_boundary: np.ndarray

    @property
    def n_halfedges(self) -> int:
        return len(self.origin)

    @property
    def n_faces(self) -> int:
        return len(self.face_halfedge)

    @property
    def n_edges(self) -> int:
        paired = int(np.count_nonzero(~self.is_boundary))
        return paired // 2 + int(np.count_nonzero(self.is_boundary))

    def target(self, h):
        return self.origin[self.next[h]]

    def euler_characteristic(self) -> int:
        used = int(np.count_nonzero(self.vertex_halfedge >= 0))
        return used - self.n_edges + self.n_faces

    def is_closed(self) -> bool:
        return not bool(self.is_boundary.any())

    def faces(self) -> np.ndarray:
        """Flatten back to an (m, 3) triangle array."""
        h0 = self.face_halfedge
        h1 = self.next[h0]
        h2 = self.next[h1]
        return np.stack([self.origin[h0], self.origin[h1], self.origin[h2]], axis=1)

    def boundary_loops(self) -> list[list[int]]:
        """Vertex cycles along boundary halfedges, each in halfedge order."""
        bnd = np.flatnonzero(self.is_boundary)
        by_origin = {int(self.origin[h]): int(h) for h in bnd}
        seen: set[int] = set()
        loops = []
        for h in bnd:
            h = int(h)
            if h in seen:
                continue
            loop = []
            cur = h
            while cur not in seen:
                seen.add(cur)
                loop.append(int(self.origin[cur]))
                nxt = by_origin.get(int(self.target(cur)))
                if nxt is None:
                    break
                cur = nxt
            loops.append(loop)
        return loops


def build_halfedge(mesh: TriMesh) -> HalfedgeTopology:
    """Construct halfedge incidence; raises on non-manifold or misoriented edges."""
    tri = mesh.triangles
    m = len(tri)
    n = mesh.n_vertices
    origin = tri.reshape(-1).copy()
    dest = tri[:, [1, 2, 0]].reshape(-1)
    face = np.repeat(np.arange(m, dtype=np.int64), 3)
    local = np.tile(np.arange(3, dtype=np.int64), m)
    nxt = 3 * face + (local + 1) % 3

    lo = np.minimum(origin, dest)
    hi = np.maximum(origin, dest)
    ukey = lo * n + hi
    _, inv, counts = np.unique(ukey, return_inverse=True, return_counts=True)
    if np.any(counts > 2):
        h = int(np.flatnonzero(counts[inv] > 2)[0])
        raise NonManifoldEdge(f"edge ({int(lo[h])}, {int(hi[h])}) has more than two faces")

    dkey = origin * n + dest
    order = np.argsort(dkey, kind="stable")
    sorted_keys = dkey[order]
    dup = np.flatnonzero(sorted_keys[1:] == sorted_keys[:-1])
    if len(dup):
        h = int(order[dup[0]])
        raise InconsistentOrientation(
            f"two faces traverse edge ({int(origin[h])}, {int(dest[h])}) in the same direction"
        )

    rkey = dest * n + origin
    pos = np.searchsorted(sorted_keys, rkey)
    pos = np.clip(pos, 0, len(sorted_keys) - 1)
    found = sorted_keys[pos] == rkey
    twin = np.where(found, order[pos], -1).astype(np.int64)
    is_boundary = twin < 0

    vertex_he = np.full(n, -1, dtype=np.int64)
    vertex_he[origin[::-1]] = np.arange(3 * m - 1, -1, -1)
    # boundary vertices point at their outgoing boundary halfedge
    bnd = np.flatnonzero(is_boundary)
    vertex_he[origin[bnd]] = bnd

    return HalfedgeTopology(
        n_vertices=n,
        origin=origin,
        next=nxt,
        twin=twin,
        face=face,
        face_halfedge=3 * np.arange(m, dtype=np.int64),
        vertex_halfedge=vertex_he,
        is_boundary=is_boundary,
    )
