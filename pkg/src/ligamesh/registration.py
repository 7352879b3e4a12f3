"""Rigid bone alignment: principal-axis coarse alignment and point-to-point ICP."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMesh, LigameshError, NonFiniteVertex
from .mesh.core import TriMesh, principal_axis

ORTHONORMAL_TOL = 1e-9


def _project_to_rotation(m: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    """Rotation by ``angle`` radians about ``axis`` (Rodrigues)."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)


def rotation_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimal rotation taking unit vector ``a`` onto unit vector ``b``."""
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    c = float(np.dot(a, b))
    v = np.cross(a, b)
    s = float(np.linalg.norm(v))
    if s < 1e-15:
        if c > 0:
            return np.eye(3)
        # antiparallel: half turn about any axis perpendicular to a
        perp = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(a, [0.0, 1.0, 0.0])
        return axis_angle_matrix(perp, np.pi)
    return axis_angle_matrix(v / s, np.arctan2(s, c))


@dataclass(frozen=True)
class RigidTransform:
    """``x -> rotation @ x + translation`` with a proper rotation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def is_valid(self, tol: float = ORTHONORMAL_TOL) -> bool:
        r = self.rotation
        return (
            bool(np.all(np.isfinite(r)))
            and np.abs(r.T @ r - np.eye(3)).max() <= tol
            and abs(np.linalg.det(r) - 1.0) <= tol
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def apply_mesh(self, mesh: TriMesh) -> TriMesh:
        return mesh.with_vertices(self.apply(mesh.vertices))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        r = _project_to_rotation(self.rotation @ other.rotation)
        return RigidTransform(r, self.rotation @ other.translation + self.translation)

    __matmul__ = compose

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.reshape(-1).tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "RigidTransform":
        return cls(np.array(data["rotation"], dtype=np.float64).reshape(3, 3), data["translation"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "RigidTransform":
        return cls.from_dict(json.loads(text))


@dataclass
class IcpParams:
    max_iterations: int = 100
    mse_change_tolerance: float = 1e-6
    trim_fraction: float = 0.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.mse_change_tolerance <= 0:
            raise ValueError("mse_change_tolerance must be > 0")
        if not 0.0 <= self.trim_fraction < 1.0:
            raise ValueError("trim_fraction must lie in [0, 1)")


@dataclass
class IcpResult:
    transform: RigidTransform
    mse: float
    history: list[float]
    iterations: int
    converged: bool


def best_rigid_transform(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Closed-form least-squares rigid map from paired ``src`` onto ``dst`` (Kabsch)."""
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(r, cd - r @ cs)


def _check_mesh(mesh: TriMesh, name: str) -> None:
    if mesh.n_vertices == 0:
        raise EmptyMesh(f"{name} mesh is empty")
    if not np.all(np.isfinite(mesh.vertices)):
        raise NonFiniteVertex(f"{name} mesh has non-finite vertices")


def mean_squared_nearest(points: np.ndarray, fixed: TriMesh) -> float:
    d, _ = fixed.nearest_index().query(points)
    return float(np.mean(d * d))


def coarse_align(
    moving: TriMesh,
    moving_hint,
    fixed: TriMesh,
    fixed_hint,
    n_roll: int = 36,
    refine_steps: int = 6,
) -> RigidTransform:
    """Map centroid onto centroid and oriented principal axis onto axis.

    The free roll about the shared axis is picked from ``n_roll`` equispaced
    candidates by mean squared nearest-vertex distance (first one on ties),
    then polished by ``refine_steps`` rounds of a local search that halves
    its step each round.
    """
    _check_mesh(moving, "moving")
    _check_mesh(fixed, "fixed")
    a = principal_axis(moving, moving_hint)
    b = principal_axis(fixed, fixed_hint)
    cm = moving.centroid()
    cf = fixed.centroid()
    base = rotation_between(a, b)

    def candidate(angle):
        r = axis_angle_matrix(b, angle) @ base if angle else base
        cand = RigidTransform(r, cf - r @ cm)
        return mean_squared_nearest(cand.apply(moving.vertices), fixed), cand

    step = 2.0 * np.pi / n_roll
    scores = [candidate(step * k)[0] for k in range(n_roll)]
    k_best = int(np.argmin(scores))
    angle, err = step * k_best, scores[k_best]
    for _ in range(refine_steps):
        step *= 0.5
        for trial in (angle - step, angle + step):
            e = candidate(trial)[0]
            if e < err:
                angle, err = trial, e
    return candidate(angle)[1]


def icp(
    moving: TriMesh,
    fixed: TriMesh,
    init: RigidTransform | None = None,
    params: IcpParams | None = None,
) -> IcpResult:
    """Point-to-point ICP from ``moving`` vertices onto ``fixed`` vertices."""
    _check_mesh(moving, "moving")
    _check_mesh(fixed, "fixed")
    params = params or IcpParams()
    transform = init or RigidTransform.identity()
    if not transform.is_valid():
        raise LigameshError("initial transform is not a proper rigid transform")
    pts = moving.vertices
    target = fixed.vertices
    index = fixed.nearest_index()
    n_keep = max(3, int(np.ceil((1.0 - params.trim_fraction) * len(pts))))

    def pair(cur):
        d, idx = index.query(cur)
        d2 = d * d
        if n_keep < len(pts):
            keep = np.sort(np.argsort(d2, kind="stable")[:n_keep])
        else:
            keep = slice(None)
        return idx, keep, float(np.mean(d2[keep]))

    cur = transform.apply(pts)
    idx, keep, mse = pair(cur)
    history = [mse]
    converged = False
    it = 0
    for it in range(1, params.max_iterations + 1):
        step = best_rigid_transform(cur[keep], target[idx[keep]])
        cand = step @ transform
        cand_pts = cand.apply(pts)
        cand_pair = pair(cand_pts)
        if params.trim_fraction == 0.0 and cand_pair[2] > mse:
            # only round-off can raise the untrimmed MSE: we are at a fixed point
            converged = True
            break
        transform, cur = cand, cand_pts
        idx, keep, new_mse = cand_pair
        history.append(new_mse)
        done = abs(mse - new_mse) < params.mse_change_tolerance
        mse = new_mse
        if done:
            converged = True
            break
    return IcpResult(transform, mse, history, it, converged)


def align(
    moving: TriMesh,
    moving_hint,
    fixed: TriMesh,
    fixed_hint,
    params: IcpParams | None = None,
) -> IcpResult:
    """Coarse alignment followed by ICP refinement."""
    init = coarse_align(moving, moving_hint, fixed, fixed_hint)
    return icp(moving, fixed, init, params)
