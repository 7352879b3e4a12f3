"""Ligament sheets between two bones, their extrusion and prism tetrahedralization.

A sheet is a structured ``intra x inter`` grid: row ``i`` runs across from a
snapped radius vertex (column 0) to a snapped ulna vertex (last column),
and every grid cell is split along its lower-left to upper-right diagonal.
The extruded solid and the tetrahedra share one rule for splitting the
quads between the two layers: the diagonal goes from the lower-indexed
bottom vertex to the other vertex's copy on the top layer.  With that rule
adjacent prisms agree on their shared faces and the tetrahedra tile exactly
the solid bounded by the extruded surface.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid, DegenerateQuad, InvertedElement, MissingLandmark, SelfIntersection
from .mesh.core import TriMesh, principal_axis, project_and_snap, vertex_normals
from .mesh.landmarks import LandmarkSet, site_label

LIGAMENTS = ("CB", "AB", "DOAC", "DOB", "POC")
DEFAULT_WIDTHS = {"CB": 9.7, "DOAC": 3.2, "DOB": 4.4, "AB": 7.0}
# narrow bands get fewer along-bone samples so snapped attachments stay distinct
DEFAULT_INTRA = {"CB": 10, "AB": 3, "DOAC": 2, "DOB": 2}
DEFAULT_THICKNESS = 2.0
MIN_CELL_AREA = 1e-9
MIN_TET_VOLUME = 1e-9


@dataclass
class LigamentSpec:
    name: str
    corner_mode: str = "midpoint"
    width_R: float = 0.0
    width_U: float = 0.0
    thickness: float = DEFAULT_THICKNESS
    intra_samples: int = 10
    inter_samples: int = 12
    # centered (+-t/2) keeps enclosed volume within O((t/2R)^2) of area x t on curved sheets;
    # one-sided (0..t) is off by about t/2R
    centered: bool = True

    def __post_init__(self):
        if self.name not in LIGAMENTS:
            raise ConfigInvalid(f"unknown ligament {self.name!r}")
        if self.corner_mode not in ("four-landmark", "midpoint"):
            raise ConfigInvalid(f"unknown corner mode {self.corner_mode!r}")
        if self.thickness <= 0:
            raise ConfigInvalid("thickness must be > 0")
        if self.corner_mode == "midpoint" and (self.width_R <= 0 or self.width_U <= 0):
            raise ConfigInvalid(f"{self.name}: midpoint mode needs positive widths")
        if self.intra_samples < 2 or self.inter_samples < 2:
            raise ConfigInvalid("intra_samples and inter_samples must be >= 2")

    @classmethod
    def default(cls, name: str, **overrides) -> "LigamentSpec":
        """Built-in parameters; POC has none and must be fully specified."""
        if name not in DEFAULT_WIDTHS:
            if name == "POC" and {"width_R", "width_U"} <= set(overrides):
                return cls(name, **overrides)
            raise ConfigInvalid(f"no default parameters for {name}; supply widths explicitly")
        w = DEFAULT_WIDTHS[name]
        base = {
            "corner_mode": "four-landmark" if name == "CB" else "midpoint",
            "width_R": w,
            "width_U": w,
            "intra_samples": DEFAULT_INTRA[name],
        }
        base.update(overrides)
        return cls(name, **base)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BonePair:
    """Radius and ulna surfaces in one frame with their landmarks and distal hints."""

    radius: TriMesh
    ulna: TriMesh
    radius_landmarks: LandmarkSet
    ulna_landmarks: LandmarkSet
    radius_hint: np.ndarray
    ulna_hint: np.ndarray

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit proximal-to-distal directions of both bones."""
        return principal_axis(self.radius, self.radius_hint), principal_axis(self.ulna, self.ulna_hint)

    def transformed(self, rotation, translation) -> "BonePair":
        R = np.asarray(rotation, dtype=np.float64)
        t = np.asarray(translation, dtype=np.float64)
        return BonePair(self.radius.transformed(R, t), self.ulna.transformed(R, t),
                        self.radius_landmarks, self.ulna_landmarks,
                        R @ self.radius_hint + t, R @ self.ulna_hint + t)


@dataclass
class LigamentCorners:
    radius_proximal: np.ndarray
    radius_distal: np.ndarray
    ulna_proximal: np.ndarray
    ulna_distal: np.ndarray
    provenance: str = "landmark"  # "landmark" or "axis"

    def as_array(self) -> np.ndarray:
        return np.array([self.radius_proximal, self.radius_distal, self.ulna_proximal, self.ulna_distal])

    def validate(self, tol: float = 1e-6) -> "LigamentCorners":
        c = self.as_array()
        for i in range(4):
            for j in range(i + 1, 4):
                if np.linalg.norm(c[i] - c[j]) <= tol:
                    raise DegenerateQuad(f"ligament corners {i} and {j} coincide")
        return self


def _landmark_point(mesh: TriMesh, lms: LandmarkSet, label: str) -> np.ndarray:
    if label not in lms.entries:
        raise MissingLandmark(label)
    return mesh.vertices[lms.entries[label]].copy()


def ligament_corners(bones: BonePair, spec: LigamentSpec, d_R=None, d_U=None) -> LigamentCorners:
    """Four corner points: landmark positions, or midpoint landmark +- half width along the bone axis."""
    if spec.corner_mode == "four-landmark":
        p = spec.name
        return LigamentCorners(
            _landmark_point(bones.radius, bones.radius_landmarks, f"{p}P_R"),
            _landmark_point(bones.radius, bones.radius_landmarks, f"{p}D_R"),
            _landmark_point(bones.ulna, bones.ulna_landmarks, f"{p}P_U"),
            _landmark_point(bones.ulna, bones.ulna_landmarks, f"{p}D_U"),
            "landmark",
        )
    mid_r = _landmark_point(bones.radius, bones.radius_landmarks, site_label(spec.name, "radius"))
    mid_u = _landmark_point(bones.ulna, bones.ulna_landmarks, site_label(spec.name, "ulna"))
    if d_R is None or d_U is None:
        a_r, a_u = bones.axes()
        d_R = a_r if d_R is None else d_R
        d_U = a_u if d_U is None else d_U
    d_R = np.asarray(d_R, dtype=np.float64)
    d_U = np.asarray(d_U, dtype=np.float64)
    hr = 0.5 * spec.width_R * d_R
    hu = 0.5 * spec.width_U * d_U
    return LigamentCorners(mid_r - hr, mid_r + hr, mid_u - hu, mid_u + hu, "axis")


@dataclass
class LigamentMesh:
    name: str
    sheet: TriMesh
    grid_dims: tuple[int, int]
    radius_attachments: list[int]
    ulna_attachments: list[int]
    snap_distances: dict[str, list[float]]
    corners: LigamentCorners
    spec: LigamentSpec
    extruded: TriMesh | None = None

    @classmethod
    def from_grid(cls, grid, spec: LigamentSpec | None = None) -> "LigamentMesh":
        """Sheet from an explicit ``(intra, inter, 3)`` point grid, without bones."""
        grid = np.asarray(grid, dtype=np.float64)
        ni, nj, _ = grid.shape
        spec = spec or LigamentSpec("CB", "four-landmark", intra_samples=max(ni, 2), inter_samples=max(nj, 2))
        corners = LigamentCorners(grid[0, 0], grid[-1, 0], grid[0, -1], grid[-1, -1])
        sheet = TriMesh(grid.reshape(-1, 3), grid_triangles(ni, nj))
        return cls(spec.name, sheet, (ni, nj), [], [], {"radius": [], "ulna": []}, corners, spec)

    def grid(self) -> np.ndarray:
        """Sheet vertices as an ``(intra, inter, 3)`` array."""
        return self.sheet.vertices.reshape(self.grid_dims[0], self.grid_dims[1], 3)

    def report(self) -> dict:
        out = {
            "ligament": self.name,
            "grid_dims": list(self.grid_dims),
            "radius_attachments": list(self.radius_attachments),
            "ulna_attachments": list(self.ulna_attachments),
            "snap_distances": self.snap_distances,
            "corners": {k: getattr(self.corners, k).tolist()
                        for k in ("radius_proximal", "radius_distal", "ulna_proximal", "ulna_distal")},
            "corner_provenance": self.corners.provenance,
            "sheet_area": self.sheet.area(),
            "spec": self.spec.to_dict(),
        }
        if self.extruded is not None:
            out["extruded_volume"] = self.extruded.enclosed_volume()
        return out


def grid_triangles(ni: int, nj: int) -> np.ndarray:
    """Two triangles per cell, split lower-left to upper-right; row-major vertex ids ``i * nj + j``."""
    i, j = np.meshgrid(np.arange(ni - 1), np.arange(nj - 1), indexing="ij")
    ll = (i * nj + j).ravel()
    lr = ((i + 1) * nj + j).ravel()
    ur = ((i + 1) * nj + j + 1).ravel()
    ul = (i * nj + j + 1).ravel()
    tris = np.empty((2 * len(ll), 3), dtype=np.int64)
    tris[0::2] = np.stack([ll, lr, ur], axis=1)
    tris[1::2] = np.stack([ll, ur, ul], axis=1)
    return tris


def _segment_distance(p0, p1, q0, q1) -> float:
    """Minimum distance between two 3D segments."""
    d1, d2, r = p1 - p0, q1 - q0, p0 - q0
    a, e, f = d1 @ d1, d2 @ d2, d2 @ r
    if a <= 1e-300 and e <= 1e-300:
        return float(np.linalg.norm(r))
    if a <= 1e-300:
        s, t = 0.0, np.clip(f / e, 0.0, 1.0)
    else:
        c = d1 @ r
        if e <= 1e-300:
            s, t = np.clip(-c / a, 0.0, 1.0), 0.0
        else:
            b = d1 @ d2
            den = a * e - b * b
            s = np.clip((b * f - c * e) / den, 0.0, 1.0) if den > 1e-300 else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                s, t = np.clip(-c / a, 0.0, 1.0), 0.0
            elif t > 1.0:
                s, t = np.clip((b - c) / a, 0.0, 1.0), 1.0
    return float(np.linalg.norm(p0 + s * d1 - (q0 + t * d2)))


def _attach(bone: TriMesh, normals: np.ndarray, start, end, n: int) -> tuple[list[int], list[float]]:
    idx, snaps = [], []
    index = bone.nearest_index()
    for s in np.linspace(0.0, 1.0, n):
        p = (1.0 - s) * start + s * end
        vi = project_and_snap(bone, p, normals[index.nearest(p)])
        idx.append(vi)
        snaps.append(float(np.linalg.norm(bone.vertices[vi] - p)))
    return idx, snaps


def build_sheet(bones: BonePair, corners: LigamentCorners, spec: LigamentSpec) -> LigamentMesh:
    """Snap the two along-bone sides onto the bones and fill the quad bilinearly."""
    corners.validate()
    c = corners
    if _segment_distance(c.radius_proximal, c.radius_distal, c.ulna_proximal, c.ulna_distal) <= 1e-9:
        raise DegenerateQuad("radius and ulna sides of the quadrilateral intersect")
    if _segment_distance(c.radius_proximal, c.ulna_proximal, c.radius_distal, c.ulna_distal) <= 1e-9:
        raise DegenerateQuad("proximal and distal sides of the quadrilateral intersect")
    ni, nj = spec.intra_samples, spec.inter_samples
    r_idx, r_snap = _attach(bones.radius, vertex_normals(bones.radius), c.radius_proximal, c.radius_distal, ni)
    u_idx, u_snap = _attach(bones.ulna, vertex_normals(bones.ulna), c.ulna_proximal, c.ulna_distal, ni)
    rp = bones.radius.vertices[r_idx]
    up = bones.ulna.vertices[u_idx]
    v = np.linspace(0.0, 1.0, nj)[None, :, None]
    grid = (1.0 - v) * rp[:, None, :] + v * up[:, None, :]
    grid[:, 0] = rp
    grid[:, -1] = up
    sheet = TriMesh(grid.reshape(-1, 3), grid_triangles(ni, nj))
    areas = sheet.face_areas()
    if np.any(areas < MIN_CELL_AREA):
        k = int(np.argmin(areas))
        raise DegenerateQuad(f"{spec.name}: sheet cell {k // 2} collapses (area {areas[k]:.3g} mm^2)")
    return LigamentMesh(spec.name, sheet, (ni, nj), r_idx, u_idx, {"radius": r_snap, "ulna": u_snap}, corners, spec)


def refine_grid(grid: np.ndarray, levels: int) -> np.ndarray:
    """Split every cell 2 x 2 per level; cell centres sit on the split diagonal.

    The refined triangles are exactly the midpoint subdivision of the
    original ones, so a flat sheet keeps its area and shape.
    """
    for _ in range(levels):
        ni, nj, _ = grid.shape
        out = np.empty((2 * ni - 1, 2 * nj - 1, 3))
        out[0::2, 0::2] = grid
        out[1::2, 0::2] = 0.5 * (grid[:-1] + grid[1:])
        out[0::2, 1::2] = 0.5 * (grid[:, :-1] + grid[:, 1:])
        out[1::2, 1::2] = 0.5 * (grid[:-1, :-1] + grid[1:, 1:])
        grid = out
    return grid


def _boundary_loop(ni: int, nj: int) -> list[tuple[int, int]]:
    """Directed boundary edges of the grid, consistent with the triangle orientation."""
    ids = np.arange(ni * nj).reshape(ni, nj)
    loop = list(ids[:, 0]) + list(ids[-1, 1:]) + list(ids[-2::-1, -1]) + list(ids[0, -2:0:-1])
    return [(int(loop[k]), int(loop[(k + 1) % len(loop)])) for k in range(len(loop))]


@dataclass
class _Layers:
    bottom: np.ndarray
    top: np.ndarray
    triangles: np.ndarray
    dims: tuple[int, int]


def _layers(lig: LigamentMesh, thickness: float, refine: int = 0, centered: bool | None = None) -> _Layers:
    if thickness <= 0:
        raise ConfigInvalid("thickness must be > 0")
    if refine < 0:
        raise ConfigInvalid("refine must be >= 0")
    centered = lig.spec.centered if centered is None else centered
    base = lig.grid()
    normals = vertex_normals(lig.sheet).reshape(base.shape)
    lo, hi = (-0.5 * thickness, 0.5 * thickness) if centered else (0.0, thickness)
    bottom = refine_grid(base + lo * normals, refine)
    top = refine_grid(base + hi * normals, refine)
    ni, nj, _ = bottom.shape
    return _Layers(bottom.reshape(-1, 3), top.reshape(-1, 3), grid_triangles(ni, nj), (ni, nj))


def _seg_tri_hits(p0: np.ndarray, p1: np.ndarray, tri: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Row-wise: does segment ``p0 -> p1`` cross triangle ``tri`` (strictly inside)?"""
    d = p1 - p0
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    h = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, h)
    ok = np.abs(det) > eps
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = p0 - tri[:, 0]
    u = inv * np.einsum("ij,ij->i", s, h)
    q = np.cross(s, e1)
    v = inv * np.einsum("ij,ij->i", d, q)
    t = inv * np.einsum("ij,ij->i", e2, q)
    return ok & (u > eps) & (v > eps) & (u + v < 1 - eps) & (t > eps) & (t < 1 - eps)


def check_layer(points: np.ndarray, triangles: np.ndarray, reference: np.ndarray) -> None:
    """Raise SelfIntersection if the offset layer folds over or crosses itself.

    ``reference`` holds the unit normals of the undisplaced sheet triangles;
    an offset triangle whose normal turns against its source is folded.
    """
    v = points[triangles]
    cross = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    if np.any(np.einsum("ij,ij->i", cross, reference) <= 0):
        raise SelfIntersection("offset layer folds over: thickness too large for the local curvature")
    from scipy.spatial import cKDTree

    cen = v.mean(axis=1)
    rad = np.linalg.norm(v - cen[:, None, :], axis=2).max(axis=1)
    pairs = cKDTree(cen).query_pairs(2.0 * float(rad.max()), output_type="ndarray")
    if len(pairs) == 0:
        return
    a, b = pairs[:, 0], pairs[:, 1]
    share = (triangles[a][:, :, None] == triangles[b][:, None, :]).any(axis=(1, 2))
    a, b = a[~share], b[~share]
    if len(a) == 0:
        return
    for x, y in ((a, b), (b, a)):
        tx, ty = v[x], v[y]
        for k in range(3):
            if np.any(_seg_tri_hits(tx[:, k], tx[:, (k + 1) % 3], ty)):
                raise SelfIntersection("offset layer intersects itself")


def extrude(lig: LigamentMesh, thickness: float | None = None, refine: int = 0,
            centered: bool | None = None) -> LigamentMesh:
    """Closed, outward-oriented solid between the sheet and its normal offset."""
    thickness = lig.spec.thickness if thickness is None else thickness
    lay = _layers(lig, thickness, refine, centered)
    n = len(lay.bottom)
    ref_normals = TriMesh(lay.bottom, lay.triangles).face_normals() if refine else lig.sheet.face_normals()
    check_layer(lay.top, lay.triangles, ref_normals)
    check_layer(lay.bottom, lay.triangles, ref_normals)
    walls = []
    for u, w in _boundary_loop(*lay.dims):
        if u < w:
            walls += [(u, w, w + n), (u, w + n, u + n)]
        else:
            walls += [(u, w, u + n), (w, w + n, u + n)]
    tris = np.concatenate([lay.triangles[:, ::-1], lay.triangles + n, np.array(walls, dtype=np.int64)])
    solid = TriMesh(np.concatenate([lay.bottom, lay.top]), tris)
    out = LigamentMesh(**{**lig.__dict__, "extruded": solid})
    return out


@dataclass
class TetMesh:
    vertices: np.ndarray
    tetrahedra: np.ndarray

    def volumes(self) -> np.ndarray:
        p = self.vertices[self.tetrahedra]
        a, b, c = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]
        return np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0

    def total_volume(self) -> float:
        return float(self.volumes().sum())

    def write_tetgen(self, prefix) -> tuple[Path, Path]:
        """``prefix.node`` / ``prefix.ele`` with TetGen-style count headers, 0-based ids."""
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        node = prefix.with_suffix(".node")
        ele = prefix.with_suffix(".ele")
        lines = [f"{len(self.vertices)} 3 0 0"]
        lines += [f"{i} {x!r} {y!r} {z!r}" for i, (x, y, z) in enumerate(self.vertices.tolist())]
        node.write_text("\n".join(lines) + "\n", encoding="utf-8")
        lines = [f"{len(self.tetrahedra)} 4 0"]
        lines += [f"{i} {a} {b} {c} {d}" for i, (a, b, c, d) in enumerate(self.tetrahedra.tolist())]
        ele.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return node, ele

    @classmethod
    def read_tetgen(cls, prefix) -> "TetMesh":
        prefix = Path(prefix)
        rows = prefix.with_suffix(".node").read_text(encoding="utf-8").split("\n")[1:]
        verts = [list(map(float, r.split()[1:4])) for r in rows if r.strip()]
        rows = prefix.with_suffix(".ele").read_text(encoding="utf-8").split("\n")[1:]
        tets = [list(map(int, r.split()[1:5])) for r in rows if r.strip()]
        return cls(np.array(verts, dtype=np.float64), np.array(tets, dtype=np.int64))

    def to_json(self) -> str:
        return json.dumps({"vertices": self.vertices.tolist(), "tetrahedra": self.tetrahedra.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "TetMesh":
        d = json.loads(text)
        return cls(np.array(d["vertices"], dtype=np.float64), np.array(d["tetrahedra"], dtype=np.int64))


def _parity(p: np.ndarray) -> np.ndarray:
    """+1 for even, -1 for odd permutations of three items (row-wise argsort output)."""
    inv = (p[:, 0] > p[:, 1]).astype(int) + (p[:, 0] > p[:, 2]) + (p[:, 1] > p[:, 2])
    return np.where(inv % 2 == 0, 1, -1)


def tetrahedralize(lig: LigamentMesh, thickness: float | None = None, refine: int = 0,
                   centered: bool | None = None) -> TetMesh:
    """Three tetrahedra per (refined) sheet triangle prism.

    With the prism's bottom ids sorted ``a < b < c`` and tops ``a', b', c'``
    the split is ``[a b c c'] [b a b' c'] [b' a a' c']``, which puts every quad
    diagonal on the lower-id bottom vertex.
    """
    thickness = lig.spec.thickness if thickness is None else thickness
    lay = _layers(lig, thickness, refine, centered)
    n = len(lay.bottom)
    tri = lay.triangles
    order = np.argsort(tri, axis=1, kind="stable")
    s = np.take_along_axis(tri, order, axis=1)
    a, b, c = s[:, 0], s[:, 1], s[:, 2]
    tets = np.stack([
        np.stack([a, b, c, c + n], axis=1),
        np.stack([b, a, b + n, c + n], axis=1),
        np.stack([b + n, a, a + n, c + n], axis=1),
    ], axis=1)
    # positive as written when (a, b, c) keeps the triangle's orientation;
    # an odd sorting permutation mirrors all three
    t = tets.copy()
    flip = _parity(order) < 0
    t[flip, :, 0], t[flip, :, 1] = tets[flip, :, 1], tets[flip, :, 0]
    mesh = TetMesh(np.concatenate([lay.bottom, lay.top]), t.reshape(-1, 4))
    vol = mesh.volumes()
    if np.any(vol < MIN_TET_VOLUME):
        k = int(np.argmin(vol))
        raise InvertedElement(f"tetrahedron {k} has volume {vol[k]:.3g} mm^3")
    return mesh


def build_ligament(bones: BonePair, spec: LigamentSpec, refine: int = 0) -> LigamentMesh:
    """Corners, snapped sheet and extruded solid for one ligament."""
    corners = ligament_corners(bones, spec)
    return extrude(build_sheet(bones, corners, spec), spec.thickness, refine)
