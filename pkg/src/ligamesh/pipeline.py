"""Stage-by-stage orchestration of the modelling pipeline on disk.

Layout under the output directory::

    meshes/   training bones, target bones, ligament sheets/solids, ground truth
    models/   shape models (.ssm) and reference GP models (.lgp)
    reports/  transfer, ligament, tetra and comparison reports
    logs/     one JSON log per stage (input digest, parameters, timings)

Everything outside logs/ is a pure function of the config, so identical
configs give byte-identical artifacts.
"""

from __future__ import annotations

import hashlib
import json
import time
import warnings
from pathlib import Path

import numpy as np

from . import metrics
from .config import BONES, STAGES, PipelineConfig
from .errors import ConfigInvalid, LigameshError, NonConvergence
from .fitting import reference_gp
from .ligament import (
    BonePair,
    LigamentMesh,
    LigamentSpec,
    build_sheet,
    extrude,
    grid_triangles,
    ligament_corners,
    tetrahedralize,
)
from .mesh.core import TriMesh
from .mesh.io import load_mesh, save_mesh
from .mesh.landmarks import LandmarkSet
from .mesh.spatial import set_brute_force, set_workers
from .registration import RigidTransform, axis_angle_matrix
from .ssm import SsmModel, build_ssm, establish_correspondence
from .synthgen import SynthFamilyConfig, analytic_ligament_oracle, family_manifest, generate_bone_family
from .transfer import transfer_landmarks

ORACLE_SAMPLES = 40


class StageError(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause

    def to_dict(self) -> dict:
        return {"stage": self.stage, "error": type(self.cause).__name__, "message": str(self.cause)}


def write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path: Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def file_digest(paths) -> str:
    h = hashlib.sha256()
    for p in sorted(Path(x) for x in paths):
        h.update(p.name.encode("utf-8"))
        h.update(p.read_bytes())
    return h.hexdigest()


def artifact_digests(out_dir) -> dict[str, str]:
    """sha256 of every artifact under models/, meshes/ and reports/."""
    out_dir = Path(out_dir)
    res = {}
    for sub in ("models", "meshes", "reports"):
        for p in sorted((out_dir / sub).rglob("*")):
            if p.is_file():
                res[p.relative_to(out_dir).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    return res


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigInvalid(f"{what} not found: {path}")
    return path


class Pipeline:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = cfg.out_dir

    # paths -----------------------------------------------------------------------------

    def _p(self, *parts) -> Path:
        return self.out.joinpath(*parts)

    def training_paths(self, bone: str) -> tuple[list[Path], list[Path]]:
        spec = self.cfg.training.get(bone)
        if spec:
            return [self.cfg.resolve(p) for p in spec["meshes"]], [self.cfg.resolve(p) for p in spec["landmarks"]]
        meshes = sorted(self._p("meshes", "training").glob(f"{bone}_*.obj"))
        return meshes, [m.with_suffix(".json") for m in meshes]

    def target_mesh_path(self, bone: str) -> Path:
        if bone in self.cfg.target:
            return self.cfg.resolve(self.cfg.target[bone])
        return self._p("meshes", "target", f"{bone}.obj")

    def target_hint(self, bone: str):
        key = f"{bone}_hint"
        if key in self.cfg.target:
            return np.asarray(self.cfg.target[key], dtype=np.float64)
        hint_file = self._p("meshes", "target", f"{bone}_hint.json")
        if hint_file.exists():
            return np.asarray(read_json(hint_file)["distal_hint"], dtype=np.float64)
        raise ConfigInvalid(f"no distal hint for target {bone}; set target.{key}")

    def truth_landmarks_path(self, bone: str) -> Path:
        truth = self.cfg.target.get("truth_landmarks", {})
        if bone in truth:
            return self.cfg.resolve(truth[bone])
        return self._p("meshes", "target", f"{bone}_truth.json")

    # stages ----------------------------------------------------------------------------

    def run(self, stages=None) -> dict:
        stages = list(STAGES) if not stages else list(stages)
        for s in stages:
            if s not in STAGES:
                raise ConfigInvalid(f"unknown stage {s!r}")
        set_workers(self.cfg.threads)
        set_brute_force(self.cfg.brute_force)
        summary = {}
        try:
            for stage in STAGES:
                if stage not in stages:
                    continue
                start = time.perf_counter()
                try:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", NonConvergence)
                        inputs, params, notes = getattr(self, "stage_" + stage.replace("-", "_"))()
                except (LigameshError, OSError, KeyError, ValueError) as exc:
                    raise StageError(stage, exc) from exc
                log = {
                    "stage": stage,
                    "inputs_digest": file_digest(inputs) if inputs else None,
                    "parameters": params,
                    "notes": notes,
                    "seconds": round(time.perf_counter() - start, 3),
                }
                write_json(self._p("logs", f"{stage}.json"), log)
                summary[stage] = log
        finally:
            set_brute_force(False)
            set_workers(1)
        return summary

    def stage_synth(self):
        s = self.cfg.synth
        common = {k: s[k] for k in ("count", "base_length", "base_radius", "mode_count", "mode_amplitudes",
                                    "length_jitter")}
        offset = np.asarray(s["ulna_offset"], dtype=np.float64)
        pose = RigidTransform(axis_angle_matrix(s["target_rotation_axis"], np.radians(s["target_rotation_deg"])),
                              s["target_translation"])
        manifests = {}
        for k, bone in enumerate(BONES):
            seed = (int(self.cfg.seed) * 2 + k) & 0xFFFFFFFFFFFFFFFF
            fcfg = SynthFamilyConfig(seed=seed, bone=bone, **common)
            fam = generate_bone_family(fcfg)
            names = [f"{bone}_{i:02d}" for i in range(len(fam))]
            for name, smp in zip(names, fam):
                save_mesh(smp.mesh, self._p("meshes", "training", f"{name}.obj"))
                lms = smp.landmarks.with_entries(smp.landmarks.entries)
                lms.extras = {"distal_hint": smp.distal_hint.tolist()}
                lms.save(self._p("meshes", "training", f"{name}.json"))
            manifests[bone] = json.loads(family_manifest(fcfg, fam, names))

            tcfg = SynthFamilyConfig(seed=(seed + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF, bone=bone,
                                     **{**common, "count": 2})
            smp = generate_bone_family(tcfg)[0]
            shift = offset if bone == "ulna" else np.zeros(3)
            placed = RigidTransform(np.eye(3), shift)
            world = pose @ placed
            save_mesh(world.apply_mesh(smp.mesh), self._p("meshes", "target", f"{bone}.obj"))
            smp.landmarks.save(self._p("meshes", "target", f"{bone}_truth.json"))
            write_json(self._p("meshes", "target", f"{bone}_hint.json"),
                       {"distal_hint": world.apply(smp.distal_hint[None, :])[0].tolist()})
            manifests[f"target_{bone}"] = {"seed": tcfg.seed, "coefficients": smp.coefficients.tolist(),
                                           "pose": world.to_dict()}
        write_json(self._p("reports", "synth_manifest.json"), manifests)
        return [], {"synth": s, "seed": self.cfg.seed}, {}

    def stage_build_ssm(self):
        inputs, notes = [], {}
        for bone in BONES:
            mesh_paths, lm_paths = self.training_paths(bone)
            if len(mesh_paths) < 2:
                raise ConfigInvalid(f"need at least two training meshes for {bone}")
            meshes = [load_mesh(p).validate() for p in mesh_paths]
            lms = [LandmarkSet.load(_require(p, "landmark file")) for p in lm_paths]
            inputs += mesh_paths + lm_paths
            corr = establish_correspondence(meshes, lms, None, self.cfg.fit)
            model = build_ssm(corr.dataset, self.cfg.ssm_modes)
            model.save(self._p("models", f"{bone}.ssm"))
            ref = meshes[corr.reference_index]
            gp = reference_gp(ref, lms[corr.reference_index], self.cfg.fit)
            gp.save(self._p("models", f"{bone}_reference.lgp"))
            report = {
                "bone": bone,
                "reference": mesh_paths[corr.reference_index].name,
                "fit_residuals": corr.residuals,
                "converged": corr.converged,
                "variances": model.variances.tolist(),
                "n_modes": model.n_modes,
            }
            write_json(self._p("reports", f"ssm_{bone}.json"), report)
            notes[bone] = {"samples": len(meshes), "reference_index": corr.reference_index}
        return inputs, {"fit": self.cfg.fit.to_dict(), "ssm_modes": self.cfg.ssm_modes}, notes

    def stage_transfer(self):
        inputs, notes = [], {}
        for bone in BONES:
            model_path = _require(self._p("models", f"{bone}.ssm"), "shape model")
            target_path = _require(self.target_mesh_path(bone), f"target {bone} mesh")
            model = SsmModel.load(model_path)
            target = load_mesh(target_path).validate()
            inputs += [model_path, target_path]
            rep = transfer_landmarks(model, target, self.target_hint(bone), self.cfg.fit)
            lms = rep.transferred.with_entries(rep.transferred.entries)
            lms.extras = {"distal_hint": np.asarray(self.target_hint(bone)).tolist()}
            lms.save(self._p("meshes", "target", f"{bone}_landmarks.json"))
            write_json(self._p("reports", f"transfer_{bone}.json"), rep.to_dict())
            notes[bone] = {"converged": rep.converged}
        return inputs, {"fit": self.cfg.fit.to_dict()}, notes

    def _bones(self, landmark_kind: str) -> BonePair:
        meshes, lms, hints = {}, {}, {}
        for bone in BONES:
            meshes[bone] = load_mesh(_require(self.target_mesh_path(bone), f"target {bone} mesh"))
            if landmark_kind == "truth":
                path = self.truth_landmarks_path(bone)
            else:
                path = self._p("meshes", "target", f"{bone}_landmarks.json")
            lms[bone] = LandmarkSet.load(_require(path, f"{bone} landmark file"))
            hints[bone] = self.target_hint(bone)
        return BonePair(meshes["radius"], meshes["ulna"], lms["radius"], lms["ulna"],
                        hints["radius"], hints["ulna"])

    def _ligament_dir(self, variant: str) -> Path:
        return self._p("meshes", "ligaments", variant)

    def stage_build_ligament(self):
        variants = ["sta"]
        if self.truth_landmarks_path("radius").exists() and self.truth_landmarks_path("ulna").exists():
            variants.append("clp")
        notes = {}
        for variant in variants:
            bones = self._bones("truth" if variant == "clp" else "transferred")
            for spec in self.cfg.ligament_specs():
                corners = ligament_corners(bones, spec)
                lig = extrude(build_sheet(bones, corners, spec), spec.thickness)
                d = self._ligament_dir(variant)
                save_mesh(lig.sheet, d / f"{spec.name}_sheet.obj")
                save_mesh(lig.extruded, d / f"{spec.name}_extruded.obj")
                write_json(d / f"{spec.name}_grid.json", {"grid_dims": list(lig.grid_dims),
                                                          "spec": spec.to_dict()})
                write_json(self._p("reports", f"ligament_{variant}_{spec.name}.json"), lig.report())
                if variant == "clp":
                    # ground truth: the exact ruled surface between the true corners
                    g = analytic_ligament_oracle(corners, ORACLE_SAMPLES)
                    gt = TriMesh(g, grid_triangles(ORACLE_SAMPLES, ORACLE_SAMPLES))
                    save_mesh(gt, self._p("meshes", "ground_truth", f"{spec.name}.obj"))
            notes[variant] = [s.name for s in self.cfg.ligament_specs()]
        return [], {"ligaments": self.cfg.ligaments}, notes

    def stage_tetra(self):
        notes = {}
        for d in sorted(self._p("meshes", "ligaments").glob("*")):
            if not d.is_dir():
                continue
            for grid_file in sorted(d.glob("*_grid.json")):
                name = grid_file.name[: -len("_grid.json")]
                meta = read_json(grid_file)
                sheet = load_mesh(d / f"{name}_sheet.obj")
                spec = LigamentSpec(**meta["spec"])
                ni, nj = meta["grid_dims"]
                lig = LigamentMesh.from_grid(sheet.vertices.reshape(ni, nj, 3), spec)
                tets = tetrahedralize(lig, spec.thickness, self.cfg.refine)
                tets.write_tetgen(d / f"{name}_tet")
                solid = extrude(lig, spec.thickness, self.cfg.refine).extruded
                notes[f"{d.name}/{name}"] = {
                    "tetrahedra": int(len(tets.tetrahedra)),
                    "tet_volume": tets.total_volume(),
                    "extruded_volume": solid.enclosed_volume(),
                }
        if not notes:
            raise ConfigInvalid("no ligament sheets found; run build-ligament first")
        write_json(self._p("reports", "tetra.json"), notes)
        return [], {"refine": self.cfg.refine}, {}

    def _compare_pairs(self) -> list[dict]:
        if self.cfg.compare:
            return [dict(p, model=str(self.cfg.resolve(p["model"])), truth=str(self.cfg.resolve(p["truth"])))
                    for p in self.cfg.compare]
        pairs = []
        for spec in self.cfg.ligament_specs():
            truth = self._p("meshes", "ground_truth", f"{spec.name}.obj")
            for variant in ("sta", "clp"):
                model = self._ligament_dir(variant) / f"{spec.name}_sheet.obj"
                if model.exists() and truth.exists():
                    pairs.append({"model": str(model), "truth": str(truth), "ligament": spec.name,
                                  "dataset": "synthetic", "variant": variant})
        if not pairs:
            raise ConfigInvalid("nothing to compare: no ligament meshes with ground truth")
        return pairs

    def stage_compare(self):
        reports, inputs = [], []
        for p in self._compare_pairs():
            m = load_mesh(_require(Path(p["model"]), "model mesh"))
            g = load_mesh(_require(Path(p["truth"]), "ground-truth mesh"))
            inputs += [Path(p["model"]), Path(p["truth"])]
            reports.append(metrics.compare_meshes(m, g, p.get("ligament", ""), p.get("dataset", ""),
                                                  p.get("variant", "")))
        write_json(self._p("reports", "compare.json"), {
            "reports": [r.to_dict() for r in reports],
            "averages": metrics.aggregate_reports(reports),
        })
        self._p("reports", "compare_table.txt").write_text(metrics.format_table(reports), encoding="utf-8")
        self._p("reports", "compare.csv").write_text(metrics.format_csv(reports), encoding="utf-8")
        return inputs, {}, {"pairs": len(reports)}


def run_pipeline(cfg: PipelineConfig, stages=None) -> dict:
    return Pipeline(cfg).run(stages)
