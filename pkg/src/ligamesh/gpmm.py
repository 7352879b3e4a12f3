"""Gaussian process morphable model over a reference bone.

The deformation prior is a zero-mean vector-valued GP whose covariance is a
sum of isotropic Gaussian components ``variance * exp(-|x - y|^2 / s^2) * I``.
A component may be localized by a smooth bump around landmark centres,
``b(x) b(y) k(x, y)`` with ``b(x) = 1 - prod_l (1 - exp(-|x - c_l|^2 / rho^2))``,
which keeps the kernel positive semi-definite.

The low-rank model is a truncated eigen-expansion of the kernel matrix over
the reference vertices, obtained from a farthest-point subsample (Nystrom)
and re-orthonormalized over all vertices.  Basis fields are unit vectors in
R^{3n}; eigenvalues are those of the (approximated) 3n x 3n kernel matrix.
"""

from __future__ import annotations

import json
import struct
import warnings
from pathlib import Path
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import DimensionMismatch, EmptyMesh, LigameshError, NonConvergence, RankTooLarge, SingularKernel
from .mesh.core import TriMesh, vertex_normals
from .mesh.spatial import NearestIndex
from .mesh.landmarks import LandmarkSet

_GP_MAGIC = b"LGPM0001"


@dataclass
class KernelComponent:
    variance: float
    length_scale: float
    centers: np.ndarray | None = None
    bump_radius: float | None = None

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("kernel variance must be >= 0")
        if self.length_scale <= 0:
            raise ValueError("kernel length scale must be > 0")
        if self.centers is not None:
            self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
            if self.bump_radius is None or self.bump_radius <= 0:
                raise ValueError("localized component needs a positive bump_radius")

    def bump(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.centers is None:
            return np.ones(len(x))
        d = x[:, None, :] - self.centers[None, :, :]
        sq = (d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1]) + d[..., 2] * d[..., 2]
        return 1.0 - np.prod(1.0 - np.exp(-sq / self.bump_radius ** 2), axis=1)

    def to_dict(self) -> dict:
        out = {"variance": self.variance, "length_scale": self.length_scale}
        if self.centers is not None:
            out["centers"] = self.centers.tolist()
            out["bump_radius"] = self.bump_radius
        return out


@dataclass
class GpKernelSpec:
    components: list[KernelComponent]

    def __post_init__(self):
        if not self.components:
            raise ValueError("kernel needs at least one component")
        self.components = [c if isinstance(c, KernelComponent) else KernelComponent(*c) for c in self.components]

    @classmethod
    def for_bone(
        cls,
        length: float,
        landmark_points: np.ndarray | None = None,
        large_sd: float = 0.05,
        large_scale: float = 0.40,
        small_sd: float = 0.01,
        small_scale: float = 0.05,
        bump: float = 0.10,
    ) -> "GpKernelSpec":
        """Large-scale bone component plus a landmark-localized small-scale one.

        All arguments except ``length`` are fractions of the bone length.
        """
        comps = [KernelComponent((large_sd * length) ** 2, large_scale * length)]
        if landmark_points is not None and len(landmark_points):
            comps.append(
                KernelComponent((small_sd * length) ** 2, small_scale * length, landmark_points, bump * length)
            )
        return cls(comps)

    def to_dict(self) -> dict:
        return {"components": [c.to_dict() for c in self.components]}

    @classmethod
    def from_dict(cls, data: dict) -> "GpKernelSpec":
        return cls([KernelComponent(**c) for c in data["components"]])


def scalar_kernel(spec: GpKernelSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Scalar factor of the kernel between point sets, shape (len(x), len(y))."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    d = x[:, None, :] - y[None, :, :]
    sq = (d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1]) + d[..., 2] * d[..., 2]
    out = np.zeros(sq.shape)
    for c in spec.components:
        k = c.variance * np.exp(-sq / c.length_scale ** 2)
        if c.centers is not None:
            # weight product first: b_i * b_j is commutative, so K stays exactly symmetric
            k = k * (c.bump(x)[:, None] * c.bump(y)[None, :])
        out += k
    return out


def eval_kernel(spec: GpKernelSpec, x, y) -> np.ndarray:
    """3x3 covariance between the displacements at ``x`` and ``y``."""
    return float(scalar_kernel(spec, x, y)[0, 0]) * np.eye(3)


def kernel_matrix(spec: GpKernelSpec, points: np.ndarray) -> np.ndarray:
    """Full 3n x 3n kernel matrix, point-major ordering (x0, y0, z0, x1, ...)."""
    return np.kron(scalar_kernel(spec, points, points), np.eye(3))


def farthest_point_sample(points: np.ndarray, m: int) -> np.ndarray:
    """Deterministic spatially uniform subsample, seeded at index 0."""
    n = len(points)
    if m >= n:
        return np.arange(n)
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = 0
    d = np.linalg.norm(points - points[0], axis=1)
    for i in range(1, m):
        j = int(np.argmax(d))
        chosen[i] = j
        d = np.minimum(d, np.linalg.norm(points - points[j], axis=1))
    return np.sort(chosen)


@dataclass(eq=False)
class LowRankGp:
    reference: TriMesh
    basis: np.ndarray
    eigenvalues: np.ndarray
    landmarks: LandmarkSet | None = None
    spec: GpKernelSpec | None = None
    _scaled: np.ndarray | None = field(default=None, init=False, repr=False)

    @property
    def rank(self) -> int:
        return len(self.eigenvalues)

    def scaled_basis(self) -> np.ndarray:
        """(3n, r) matrix whose column j is ``sqrt(lambda_j) * phi_j``."""
        if self._scaled is None:
            flat = self.basis.reshape(self.rank, -1).T
            self._scaled = flat * np.sqrt(self.eigenvalues)[None, :]
        return self._scaled

    def displacement(self, alpha) -> np.ndarray:
        alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
        if len(alpha) != self.rank:
            raise DimensionMismatch(f"expected {self.rank} coefficients, got {len(alpha)}")
        return (self.scaled_basis() @ alpha).reshape(-1, 3)

    def with_reference(self, reference: TriMesh, landmarks: LandmarkSet | None = None) -> "LowRankGp":
        """Same basis over a different mesh with identical vertex indexing."""
        if reference.n_vertices != self.reference.n_vertices:
            raise DimensionMismatch("reference vertex count differs from the basis")
        return LowRankGp(reference, self.basis, self.eigenvalues, landmarks or self.landmarks, self.spec)

    def save(self, path) -> None:
        n, r = self.reference.n_vertices, self.rank
        meta = {
            "landmarks": self.landmarks.to_dict() if self.landmarks else None,
            "kernel": self.spec.to_dict() if self.spec else None,
        }
        blob = json.dumps(meta, sort_keys=True).encode("utf-8")
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(_GP_MAGIC)
            fh.write(struct.pack("<QQ", n, r))
            fh.write(self.eigenvalues.astype("<f8").tobytes())
            fh.write(self.basis.astype("<f8").tobytes())
            fh.write(struct.pack("<Q", self.reference.n_triangles))
            fh.write(self.reference.vertices.astype("<f8").tobytes())
            fh.write(self.reference.triangles.astype("<i8").tobytes())
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)

    @classmethod
    def load(cls, path) -> "LowRankGp":
        with open(path, "rb") as fh:
            if fh.read(8) != _GP_MAGIC:
                raise ValueError(f"{path}: not a low-rank GP file")
            n, r = struct.unpack("<QQ", fh.read(16))
            eig = np.frombuffer(fh.read(8 * r), dtype="<f8").astype(np.float64)
            basis = np.frombuffer(fh.read(8 * r * n * 3), dtype="<f8").astype(np.float64).reshape(r, n, 3)
            (m,) = struct.unpack("<Q", fh.read(8))
            verts = np.frombuffer(fh.read(8 * n * 3), dtype="<f8").reshape(n, 3)
            tris = np.frombuffer(fh.read(8 * m * 3), dtype="<i8").reshape(m, 3)
            (size,) = struct.unpack("<Q", fh.read(8))
            meta = json.loads(fh.read(size).decode("utf-8"))
        lms = LandmarkSet.from_dict(meta["landmarks"]) if meta.get("landmarks") else None
        spec = GpKernelSpec.from_dict(meta["kernel"]) if meta.get("kernel") else None
        return cls(TriMesh(verts, tris), basis, eig, lms, spec)


def _complete_orthonormal(q: np.ndarray, extra: int) -> np.ndarray:
    """Append ``extra`` orthonormal columns orthogonal to the columns of ``q``."""
    n, k = q.shape
    rng = np.random.Generator(np.random.PCG64(0))
    fill = rng.random((n, extra)) - 0.5
    fill -= q @ (q.T @ fill)
    fill -= q @ (q.T @ fill)
    f, _ = np.linalg.qr(fill)
    return np.hstack([q, f[:, :extra]])


def build_low_rank(
    reference: TriMesh,
    spec: GpKernelSpec,
    rank: int = 50,
    max_samples: int = 500,
    landmarks: LandmarkSet | None = None,
) -> LowRankGp:
    """Top-``rank`` eigen-expansion of the kernel over the reference vertices."""
    if reference.n_vertices == 0:
        raise EmptyMesh("reference mesh is empty")
    if rank < 1:
        raise ValueError("rank must be >= 1")
    pts = reference.vertices
    sample = farthest_point_sample(pts, max_samples)
    m = len(sample)
    if rank > 3 * m:
        raise RankTooLarge(f"rank {rank} exceeds 3 x {m} sample points")
    n_scalar = -(-rank // 3)

    kss = scalar_kernel(spec, pts[sample], pts[sample])
    kss = 0.5 * (kss + kss.T)
    w, u = np.linalg.eigh(kss)
    w, u = w[::-1], u[:, ::-1]
    trace = float(np.trace(kss))
    if trace > 0 and w[-1] < -1e-9 * trace:
        raise SingularKernel(f"kernel matrix eigenvalue {w[-1]:.3g} below clamping tolerance")
    keep = int(np.count_nonzero(w > 1e-12 * max(w[0], 0.0))) if w[0] > 0 else 0
    keep = min(keep, n_scalar)

    if keep:
        feat = scalar_kernel(spec, pts, pts[sample]) @ (u[:, :keep] / np.sqrt(w[:keep]))
        q, s, _ = np.linalg.svd(feat, full_matrices=False)
        lam = s * s
    else:
        q, lam = np.zeros((len(pts), 0)), np.zeros(0)
    if q.shape[1] < n_scalar:
        pad = n_scalar - q.shape[1]
        q = _complete_orthonormal(q, pad)
        lam = np.concatenate([lam, np.zeros(pad)])
    # canonical sign: largest-magnitude entry positive
    flip = np.sign(q[np.argmax(np.abs(q), axis=0), np.arange(q.shape[1])])
    q = q * np.where(flip == 0, 1.0, flip)

    basis = np.zeros((3 * n_scalar, len(pts), 3))
    eig = np.repeat(lam, 3)
    for i in range(n_scalar):
        for a in range(3):
            basis[3 * i + a, :, a] = q[:, i]
    return LowRankGp(reference, basis[:rank], np.maximum(eig[:rank], 0.0), landmarks, spec)


def deform(model: LowRankGp, alpha) -> TriMesh:
    """Reference mesh moved by ``sum_j alpha_j sqrt(lambda_j) phi_j``."""
    return model.reference.with_vertices(model.reference.vertices + model.displacement(alpha))


@dataclass
class FitOptions:
    """Optimizer settings for :func:`fit_nonrigid`.

    ``warmup_schedule`` lists the numbers of leading modes released in each
    warm-up stage (the full rank is always appended).  An empty schedule
    disables the warm-up.
    """

    max_outer: int = 200
    inner_maxiter: int = 200
    tolerance: float = 1e-9
    bound: float = 3.0
    warmup_schedule: tuple[int, ...] = (3, 6, 12, 24)
    warmup_iterations: int = 60
    warmup_step_tolerance: float = 1e-5
    warmup_point_weight: float = 0.02

    def __post_init__(self):
        if self.max_outer < 1 or self.inner_maxiter < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.tolerance <= 0 or self.bound <= 0:
            raise ValueError("tolerance and bound must be > 0")
        self.warmup_schedule = tuple(int(k) for k in self.warmup_schedule)


@dataclass
class FitResult:
    alpha: np.ndarray
    residual: float
    objective: float
    history: list[float]
    iterations: int
    converged: bool

    @property
    def warning(self) -> bool:
        return not self.converged


def fit_objective(model: LowRankGp, target: TriMesh, alpha, reg: float) -> tuple[float, float]:
    """``(J, data term)`` with nearest-target-vertex distances."""
    pts = model.reference.vertices + model.displacement(alpha)
    d, _ = target.nearest_index().query(pts)
    data = float(np.mean(d * d))
    return data + reg * float(np.dot(alpha, alpha)), data


def _bounded_quadratic(G, h, x0, bounds, maxiter):
    """Minimize ``x G x + 2 h x`` inside box bounds with L-BFGS-B."""

    def f(x):
        Gx = G @ x
        return x @ Gx + 2.0 * (x @ h), 2.0 * (Gx + h)

    res = minimize(f, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": maxiter, "ftol": 1e-15, "gtol": 1e-12})
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    return np.clip(res.x, lo, hi)


def _warmup(model: LowRankGp, target: TriMesh, reg: float, opts: FitOptions, alpha: np.ndarray) -> np.ndarray:
    """Symmetric point-to-plane pre-alignment with coarse-to-fine modes.

    Nearest-vertex matching alone lets a smooth, tube-like surface slide
    tangentially and stall far from the true coefficients.  Here, each
    iteration linearizes signed distances along target normals, both from
    model vertices to their nearest target vertex and from target vertices
    to their nearest model vertex, plus a weak point-to-point term.  Modes
    are released in stages so the large-scale ones settle first.
    """
    try:
        normals = vertex_normals(target)
    except LigameshError:
        return alpha
    r = model.rank
    n = model.reference.n_vertices
    B = model.scaled_basis()
    Bv = B.reshape(n, 3, r)
    ref = model.reference.vertices
    tpts = target.vertices
    index = target.nearest_index()
    w = opts.warmup_point_weight
    m = n + len(tpts)
    stages = [k for k in opts.warmup_schedule if 0 < k < r] + [r]
    for active in stages:
        bounds = [(-opts.bound, opts.bound) if j < active else (0.0, 0.0) for j in range(r)]
        for _ in range(opts.warmup_iterations):
            pts = ref + (B @ alpha).reshape(n, 3)
            _, i_t = index.query(pts)
            _, i_m = NearestIndex(pts).query(tpts)
            nt = normals[i_t]
            rows = [
                np.einsum("ij,ijk->ik", nt, Bv),
                np.einsum("ij,ijk->ik", normals, Bv[i_m]),
                w * B,
            ]
            rhs = [
                np.einsum("ij,ij->i", nt, ref - tpts[i_t]),
                np.einsum("ij,ij->i", normals, ref[i_m] - tpts),
                w * (ref - tpts[i_t]).reshape(-1),
            ]
            A = np.vstack(rows)
            b = np.concatenate(rhs)
            G = A.T @ A / m + reg * np.eye(r)
            h = A.T @ b / m
            cand = _bounded_quadratic(G, h, alpha, bounds, opts.inner_maxiter)
            step = float(np.abs(cand - alpha).max())
            alpha = cand
            if step < opts.warmup_step_tolerance:
                break
    return alpha


def fit_nonrigid(
    model: LowRankGp,
    target: TriMesh,
    reg: float = 0.1,
    options: FitOptions | None = None,
    init=None,
) -> FitResult:
    """Move the reference toward ``target`` within the GP span.

    After an optional warm-up (see ``_warmup``), alternates nearest-vertex
    correspondence updates with a box-bounded L-BFGS-B solve of the
    resulting quadratic.  Outer iterates are only accepted when the full
    objective does not increase; the warm-up result is kept only if it
    lowers the objective relative to the initial coefficients.
    """
    if target.n_vertices == 0:
        raise EmptyMesh("target mesh is empty")
    if reg < 0:
        raise ValueError("regularization must be >= 0")
    opts = options or FitOptions()
    n = model.reference.n_vertices
    B = model.scaled_basis()
    G = B.T @ B / n + reg * np.eye(model.rank)
    ref = model.reference.vertices.reshape(-1)
    tpts = target.vertices
    index = target.nearest_index()
    bounds = [(-opts.bound, opts.bound)] * model.rank

    alpha = np.zeros(model.rank) if init is None else np.asarray(init, dtype=np.float64)
    if alpha.shape != (model.rank,):
        raise DimensionMismatch(f"expected {model.rank} initial coefficients")
    alpha = np.clip(alpha, -opts.bound, opts.bound)

    def correspond(a):
        pts = (ref + B @ a).reshape(-1, 3)
        d, idx = index.query(pts)
        data = float(np.mean(d * d))
        return idx, data, data + reg * float(a @ a)

    idx, data, J = correspond(alpha)
    if opts.warmup_schedule and target.n_triangles:
        warm = _warmup(model, target, reg, opts, alpha.copy())
        widx, wdata, wJ = correspond(warm)
        if wJ <= J:
            alpha, idx, data, J = warm, widx, wdata, wJ
    history = [J]
    converged = False
    it = 0
    for it in range(1, opts.max_outer + 1):
        h = B.T @ (ref - tpts[idx].reshape(-1)) / n
        cand = _bounded_quadratic(G, h, alpha, bounds, opts.inner_maxiter)
        cidx, cdata, cJ = correspond(cand)
        if cJ > J:
            converged = True
            break
        change = J - cJ
        alpha, idx, data, J = cand, cidx, cdata, cJ
        history.append(J)
        if change <= opts.tolerance * max(J, 1e-12) or change <= 1e-14:
            converged = True
            break
    if not converged:
        warnings.warn(f"non-rigid fit stopped after {opts.max_outer} iterations", NonConvergence, stacklevel=2)
    return FitResult(alpha, data, J, history, it, converged)
