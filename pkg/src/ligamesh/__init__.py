"""Bone shape models, landmark transfer and ligament mesh generation."""

from .errors import *  # noqa: F401,F403
from .fitting import FitConfig, KernelConfig
from .gpmm import GpKernelSpec, LowRankGp, build_low_rank, deform, eval_kernel, fit_nonrigid
from .ligament import (
    BonePair,
    LigamentCorners,
    LigamentMesh,
    LigamentSpec,
    TetMesh,
    build_ligament,
    build_sheet,
    extrude,
    ligament_corners,
    tetrahedralize,
)
from .mesh import LandmarkSet, TriMesh, build_halfedge, load_mesh, save_mesh
from .metrics import SimilarityReport, aggregate_reports, compare_meshes
from .registration import IcpParams, RigidTransform, align, coarse_align, icp
from .ssm import SsmModel, build_ssm, loocv_landmarks, project_shape, sample_shape
from .transfer import TransferReport, transfer_landmarks

__version__ = "0.1.0"
