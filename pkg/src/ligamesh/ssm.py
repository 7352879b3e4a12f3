"""PCA shape model over corresponded bone meshes, plus leave-one-out validation."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InconsistentTopology, LigameshError
from .fitting import FitConfig, align_and_fit, distal_hint_for, reference_gp
from .mesh.core import TriMesh, bone_length
from .mesh.landmarks import LandmarkSet

_SSM_MAGIC = b"LSSM0001"


@dataclass
class CorrespondedDataset:
    """Meshes sharing one connectivity in a common frame; one landmark set for all."""

    meshes: list[TriMesh]
    landmarks: LandmarkSet
    distal_hint: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def validate(self) -> "CorrespondedDataset":
        if len(self.meshes) < 2:
            raise InconsistentTopology("need at least two corresponded meshes")
        first = self.meshes[0]
        for i, m in enumerate(self.meshes[1:], 1):
            if m.n_vertices != first.n_vertices or not np.array_equal(m.triangles, first.triangles):
                raise InconsistentTopology(f"mesh {i} does not share the connectivity of mesh 0")
        self.landmarks.validate(first)
        return self


@dataclass(eq=False)
class SsmModel:
    mean: np.ndarray  # (3n,)
    modes: np.ndarray  # (3n, m), orthonormal columns
    variances: np.ndarray  # (m,), descending
    landmarks: LandmarkSet
    triangles: np.ndarray
    distal_hint: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def n_vertices(self) -> int:
        return len(self.mean) // 3

    @property
    def n_modes(self) -> int:
        return len(self.variances)

    def mean_mesh(self) -> TriMesh:
        return TriMesh(self.mean.reshape(-1, 3), self.triangles)

    def truncated(self, m: int) -> "SsmModel":
        m = max(0, min(int(m), self.n_modes))
        return SsmModel(self.mean, self.modes[:, :m], self.variances[:m], self.landmarks, self.triangles,
                        self.distal_hint)

    def total_variance(self) -> float:
        return float(self.variances.sum())

    def save(self, path) -> None:
        n, m = self.n_vertices, self.n_modes
        meta = {"landmarks": self.landmarks.to_dict(), "distal_hint": self.distal_hint.tolist()}
        blob = json.dumps(meta, sort_keys=True).encode("utf-8")
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(_SSM_MAGIC)
            fh.write(struct.pack("<QQ", n, m))
            fh.write(self.mean.astype("<f8").tobytes())
            fh.write(self.variances.astype("<f8").tobytes())
            fh.write(np.ascontiguousarray(self.modes.T).astype("<f8").tobytes())
            fh.write(struct.pack("<Q", len(self.triangles)))
            fh.write(self.triangles.astype("<i8").tobytes())
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)

    @classmethod
    def load(cls, path) -> "SsmModel":
        with open(path, "rb") as fh:
            if fh.read(8) != _SSM_MAGIC:
                raise ValueError(f"{path}: not a shape model file")
            n, m = struct.unpack("<QQ", fh.read(16))
            mean = np.frombuffer(fh.read(24 * n), dtype="<f8").astype(np.float64)
            var = np.frombuffer(fh.read(8 * m), dtype="<f8").astype(np.float64)
            modes = np.frombuffer(fh.read(24 * n * m), dtype="<f8").reshape(m, 3 * n).T.astype(np.float64)
            (k,) = struct.unpack("<Q", fh.read(8))
            tris = np.frombuffer(fh.read(24 * k), dtype="<i8").reshape(k, 3).astype(np.int64)
            (size,) = struct.unpack("<Q", fh.read(8))
            meta = json.loads(fh.read(size).decode("utf-8"))
        return cls(mean, modes, var, LandmarkSet.from_dict(meta["landmarks"]), tris,
                   np.asarray(meta["distal_hint"], dtype=np.float64))


def build_ssm(data: CorrespondedDataset, n_modes: int | None = None) -> SsmModel:
    """Mean and principal modes of the sample covariance (1/(N-1)) via the N x N Gram matrix."""
    data.validate()
    X = np.stack([m.vertices.reshape(-1) for m in data.meshes])
    N = len(X)
    mean = X.mean(axis=0)
    D = X - mean
    gram = D @ D.T / (N - 1)
    gram = 0.5 * (gram + gram.T)
    w, u = np.linalg.eigh(gram)
    w, u = w[::-1], u[:, ::-1]
    m = N - 1 if n_modes is None else max(0, min(int(n_modes), N - 1))
    w = w[:m]
    tol = 1e-12 * max(float(w[0]) if m else 0.0, 0.0) + 1e-300
    pos = int(np.count_nonzero(w > tol))
    modes = np.zeros((X.shape[1], m))
    if pos:
        modes[:, :pos] = D.T @ u[:, :pos] / np.sqrt((N - 1) * w[:pos])
        # one Gram-Schmidt pass against round-off
        modes[:, :pos], _ = _orthonormalize(modes[:, :pos])
    if pos < m:
        modes[:, pos:] = _complement(modes[:, :pos], X.shape[1], m - pos)
    var = np.where(np.arange(m) < pos, np.maximum(w, 0.0), 0.0)
    flip = np.sign(modes[np.argmax(np.abs(modes), axis=0), np.arange(m)]) if m else np.ones(0)
    modes = modes * np.where(flip == 0, 1.0, flip)
    return SsmModel(mean, modes, var, data.landmarks, data.meshes[0].triangles.copy(),
                    np.asarray(data.distal_hint, dtype=np.float64).reshape(3))


def _orthonormalize(q: np.ndarray):
    qq, r = np.linalg.qr(q)
    s = np.sign(np.diag(r))
    return qq * np.where(s == 0, 1.0, s), r


def _complement(q: np.ndarray, dim: int, extra: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(0))
    fill = rng.random((dim, extra)) - 0.5
    for _ in range(2):
        fill -= q @ (q.T @ fill)
    f, _ = np.linalg.qr(fill)
    return f


def sample_shape(model: SsmModel, coeffs) -> tuple[TriMesh, LandmarkSet]:
    """``mean + sum_j b_j sqrt(var_j) mode_j``; missing trailing coefficients are zero."""
    b = np.asarray(coeffs, dtype=np.float64).reshape(-1)
    if len(b) > model.n_modes:
        raise DimensionMismatch(f"{len(b)} coefficients for a model with {model.n_modes} modes")
    k = len(b)
    x = model.mean + model.modes[:, :k] @ (b * np.sqrt(model.variances[:k]))
    return TriMesh(x.reshape(-1, 3), model.triangles), model.landmarks.with_entries(model.landmarks.entries)


def project_shape(model: SsmModel, mesh: TriMesh) -> np.ndarray:
    """Mode weights of a corresponded mesh in standard-deviation units."""
    if mesh.n_vertices != model.n_vertices:
        raise InconsistentTopology(f"mesh has {mesh.n_vertices} vertices, model {model.n_vertices}")
    if mesh.n_triangles and not np.array_equal(mesh.triangles, model.triangles):
        raise InconsistentTopology("mesh connectivity differs from the model")
    proj = model.modes.T @ (mesh.vertices.reshape(-1) - model.mean)
    sd = np.sqrt(model.variances)
    out = np.zeros(model.n_modes)
    nz = sd > 0
    out[nz] = proj[nz] / sd[nz]
    return out


# --- correspondence preprocessing ----------------------------------------------------


def median_length_index(meshes: list[TriMesh]) -> int:
    """Index of the mesh whose length is closest to the family median (lowest index on ties)."""
    lengths = np.array([bone_length(m) for m in meshes])
    med = float(np.median(lengths))
    return int(np.argmin(np.abs(lengths - med)))


@dataclass
class CorrespondenceResult:
    dataset: CorrespondedDataset
    reference_index: int
    residuals: list[float]
    converged: list[bool]


class _FitCache:
    """Memo of (reference index, sample index) -> fitted reference vertices."""

    def __init__(self):
        self.models: dict[int, object] = {}
        self.fits: dict[tuple[int, int], tuple[np.ndarray, float, bool]] = {}


def establish_correspondence(
    meshes: list[TriMesh],
    landmarks: list[LandmarkSet],
    hints: list | None = None,
    cfg: FitConfig | None = None,
    reference_index: int | None = None,
    indices: list[int] | None = None,
    cache: _FitCache | None = None,
) -> CorrespondenceResult:
    """Align every bone to a reference and deform the reference onto each one.

    The deformed copies of the reference share its connectivity and landmark
    indices and live in the reference frame; they form the PCA training set.
    ``indices`` restricts the family (used by leave-one-out folds).
    """
    cfg = cfg or FitConfig()
    cache = cache or _FitCache()
    idx = list(range(len(meshes))) if indices is None else list(indices)
    if len(idx) < 2:
        raise InconsistentTopology("need at least two bones to build a shape model")
    hints = hints or [None] * len(meshes)
    if reference_index is None:
        reference_index = idx[median_length_index([meshes[i] for i in idx])]
    ref = meshes[reference_index]
    ref_lms = landmarks[reference_index]
    ref_hint = distal_hint_for(ref_lms, ref, hints[reference_index])
    if reference_index not in cache.models:
        cache.models[reference_index] = reference_gp(ref, ref_lms, cfg)
    gp = cache.models[reference_index]

    out, residuals, conv = [], [], []
    for i in idx:
        if i == reference_index:
            out.append(ref)
            residuals.append(0.0)
            conv.append(True)
            continue
        key = (reference_index, i)
        if key not in cache.fits:
            hint = distal_hint_for(landmarks[i], meshes[i], hints[i])
            res = align_and_fit(gp, ref_hint, meshes[i], hint, cfg)
            cache.fits[key] = (res.fitted.vertices, res.fit.residual, res.fit.converged)
        verts, resid, ok = cache.fits[key]
        out.append(ref.with_vertices(verts))
        residuals.append(resid)
        conv.append(ok)
    lms = ref_lms.with_entries(ref_lms.entries)
    lms.extras = {}
    data = CorrespondedDataset(out, lms, ref_hint)
    return CorrespondenceResult(data, reference_index, residuals, conv)


# --- leave-one-out validation --------------------------------------------------------


@dataclass
class LoocvReport:
    folds: list[dict]  # {"held_out", "errors": {label: mm}, "mean", "error"}
    per_label: dict[str, float]
    grand_mean: float

    def to_dict(self) -> dict:
        return {"folds": self.folds, "per_label": self.per_label, "grand_mean": self.grand_mean}

    def table(self) -> str:
        labels = sorted(self.per_label)
        head = ["fold"] + labels + ["mean"]
        rows = [head]
        for f in self.folds:
            if f.get("error"):
                rows.append([str(f["held_out"])] + ["failed"] * len(labels) + [""])
                continue
            rows.append([str(f["held_out"])] + [f"{f['errors'][k]:.3f}" for k in labels] + [f"{f['mean']:.3f}"])
        rows.append(["all"] + [f"{self.per_label[k]:.3f}" for k in labels] + [f"{self.grand_mean:.3f}"])
        widths = [max(len(r[c]) for r in rows) for c in range(len(head))]
        return "\n".join("  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in rows) + "\n"


def loocv_landmarks(
    meshes: list[TriMesh],
    landmarks: list[LandmarkSet],
    hints: list | None = None,
    cfg: FitConfig | None = None,
    n_modes: int | None = None,
) -> LoocvReport:
    """Hold out each bone, model the rest, transfer landmarks onto it and measure errors.

    Errors are Euclidean distances in the held-out bone's own frame between
    the transferred and ground-truth landmark vertices.  A failing fold is
    recorded and skipped in the averages.
    """
    from .transfer import transfer_landmarks

    if len(meshes) < 3:
        raise InconsistentTopology("leave-one-out needs at least three bones")
    cfg = cfg or FitConfig()
    hints = hints or [None] * len(meshes)
    cache = _FitCache()
    folds = []
    for k in range(len(meshes)):
        rest = [i for i in range(len(meshes)) if i != k]
        try:
            corr = establish_correspondence(meshes, landmarks, hints, cfg, indices=rest, cache=cache)
            model = build_ssm(corr.dataset, n_modes)
            hint = distal_hint_for(landmarks[k], meshes[k], hints[k])
            rep = transfer_landmarks(model, meshes[k], hint, cfg)
            truth = landmarks[k].entries
            errs = {}
            for label, vi in rep.transferred.entries.items():
                if label in truth:
                    errs[label] = float(np.linalg.norm(meshes[k].vertices[vi] - meshes[k].vertices[truth[label]]))
            folds.append({"held_out": k, "reference": corr.reference_index, "errors": errs,
                          "mean": float(np.mean(list(errs.values()))) if errs else 0.0})
        except LigameshError as exc:
            folds.append({"held_out": k, "error": f"{type(exc).__name__}: {exc}"})
    good = [f for f in folds if "errors" in f]
    labels = sorted({lab for f in good for lab in f["errors"]})
    per_label = {lab: float(np.mean([f["errors"][lab] for f in good if lab in f["errors"]])) for lab in labels}
    all_errs = [e for f in good for e in f["errors"].values()]
    grand = float(np.mean(all_errs)) if all_errs else float("nan")
    return LoocvReport(folds, per_label, grand)
