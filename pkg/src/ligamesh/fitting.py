"""Settings and helpers shared by correspondence building and landmark transfer."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import gpmm
from .errors import ConfigInvalid
from .mesh.core import TriMesh, bone_length
from .mesh.landmarks import LandmarkSet
from .registration import IcpParams, IcpResult, RigidTransform, align

# distal-most first; a landmark from this list stands in for a missing distal hint
_DISTAL_ORDER = ("DOB", "DOAC", "AB", "CBD", "CBP", "POC")


@dataclass
class KernelConfig:
    """GP kernel as fractions of the reference bone length."""

    large_sd: float = 0.05
    large_scale: float = 0.40
    small_sd: float = 0.01
    small_scale: float = 0.05
    bump: float = 0.10

    def spec_for(self, mesh: TriMesh, landmarks: LandmarkSet | None) -> gpmm.GpKernelSpec:
        pts = None
        if landmarks is not None and landmarks.entries:
            pts = mesh.vertices[list(landmarks.entries.values())]
        return gpmm.GpKernelSpec.for_bone(
            bone_length(mesh), pts, self.large_sd, self.large_scale, self.small_sd, self.small_scale, self.bump
        )


@dataclass
class FitConfig:
    kernel: KernelConfig = field(default_factory=KernelConfig)
    rank: int = 50
    max_samples: int = 500
    regularization: float = 0.1
    icp: IcpParams = field(default_factory=IcpParams)
    fit: gpmm.FitOptions = field(default_factory=gpmm.FitOptions)

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigInvalid("rank must be >= 1")
        if self.regularization < 0:
            raise ConfigInvalid("regularization must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "FitConfig":
        data = dict(data)
        kernel = KernelConfig(**data.pop("kernel", {}))
        icp = IcpParams(**data.pop("icp", {}))
        fit = gpmm.FitOptions(**data.pop("fit", {}))
        return cls(kernel=kernel, icp=icp, fit=fit, **data)


def distal_hint_for(landmarks: LandmarkSet | None, mesh: TriMesh, hint=None) -> np.ndarray:
    """Explicit hint, else a ``distal_hint`` extra, else the distal-most landmark."""
    if hint is not None:
        return np.asarray(hint, dtype=np.float64).reshape(3)
    if landmarks is not None:
        if "distal_hint" in landmarks.extras:
            return np.asarray(landmarks.extras["distal_hint"], dtype=np.float64).reshape(3)
        for site in _DISTAL_ORDER:
            for label, idx in landmarks.entries.items():
                if label.split("_")[0] == site:
                    return mesh.vertices[idx].copy()
    raise ConfigInvalid("no distal hint: pass one explicitly or provide landmarks")


def reference_gp(mesh: TriMesh, landmarks: LandmarkSet | None, cfg: FitConfig) -> gpmm.LowRankGp:
    spec = cfg.kernel.spec_for(mesh, landmarks)
    rank = min(cfg.rank, 3 * min(cfg.max_samples, mesh.n_vertices))
    return gpmm.build_low_rank(mesh, spec, rank, cfg.max_samples, landmarks)


@dataclass
class AlignedFit:
    rigid: IcpResult
    aligned: TriMesh
    fit: gpmm.FitResult
    fitted: TriMesh

    @property
    def transform(self) -> RigidTransform:
        return self.rigid.transform


def align_and_fit(
    model: gpmm.LowRankGp,
    model_hint,
    target: TriMesh,
    target_hint,
    cfg: FitConfig,
) -> AlignedFit:
    """Rigidly bring ``target`` onto the model reference, then deform the reference onto it."""
    rigid = align(target, target_hint, model.reference, model_hint, cfg.icp)
    aligned = rigid.transform.apply_mesh(target)
    res = gpmm.fit_nonrigid(model, aligned, cfg.regularization, cfg.fit)
    return AlignedFit(rigid, aligned, res, gpmm.deform(model, res.alpha))
