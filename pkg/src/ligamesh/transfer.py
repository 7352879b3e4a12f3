"""Transfer insertion landmarks from a shape model onto a new bone."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gpmm
from .errors import NonConvergence
from .fitting import FitConfig, align_and_fit, reference_gp
from .mesh.core import TriMesh
from .mesh.landmarks import LandmarkSet
from .registration import RigidTransform
from .ssm import SsmModel


@dataclass
class TransferReport:
    transferred: LandmarkSet
    rigid: RigidTransform  # target frame -> model frame
    residual: float
    snap_distances: dict[str, float]
    converged: bool = True

    def positions(self, target: TriMesh) -> dict[str, np.ndarray]:
        return self.transferred.positions(target)

    def to_dict(self) -> dict:
        return {
            "landmarks": self.transferred.to_dict(),
            "rigid": self.rigid.to_dict(),
            "fit_residual": self.residual,
            "snap_distances": self.snap_distances,
            "converged": self.converged,
        }

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def transfer_landmarks(
    model: SsmModel,
    target: TriMesh,
    distal_hint,
    cfg: FitConfig | None = None,
    gp: gpmm.LowRankGp | None = None,
) -> TransferReport:
    """Label the target vertices that correspond to the model's landmarks.

    The target is rigidly aligned to the model mean, the GP over the mean is
    fitted to the aligned target, and every landmark of the deformed mean is
    snapped to its nearest aligned-target vertex (lowest index on ties).
    Indices are frame-independent, so they apply to the native target as is.
    """
    cfg = cfg or FitConfig()
    target.validate()
    if gp is None:
        gp = reference_gp(model.mean_mesh(), model.landmarks, cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NonConvergence)
        res = align_and_fit(gp, model.distal_hint, target, distal_hint, cfg)
    converged = res.fit.converged
    for w in caught:
        if not issubclass(w.category, NonConvergence):
            warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    if not converged:
        warnings.warn("landmark transfer used a non-converged fit", NonConvergence, stacklevel=2)

    labels = list(model.landmarks.entries)
    pts = res.fitted.vertices[[model.landmarks.entries[k] for k in labels]]
    dist, idx = res.aligned.nearest_index().query(pts, tiebreak=True)
    entries = {k: int(i) for k, i in zip(labels, idx)}
    snaps = {k: float(d) for k, d in zip(labels, dist)}
    out = LandmarkSet(entries, model.landmarks.bone, model.landmarks.side)
    return TransferReport(out, res.transform, res.fit.residual, snaps, converged)
