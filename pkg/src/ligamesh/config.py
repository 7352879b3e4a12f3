"""Pipeline configuration: one JSON document, every value overridable from the CLI."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigInvalid
from .fitting import FitConfig
from .ligament import LIGAMENTS, LigamentSpec

STAGES = ("synth", "build-ssm", "transfer", "build-ligament", "tetra", "compare")
BONES = ("radius", "ulna")


def _default_synth() -> dict:
    return {
        "count": 18,
        "base_length": 200.0,
        "base_radius": 12.0,
        "mode_count": 2,
        "mode_amplitudes": [3.0, 2.0],
        "length_jitter": 0.0,
        "ulna_offset": [50.0, 0.0, 0.0],
        # rigid pose of the synthetic patient forearm: axis-angle (deg) and translation (mm)
        "target_rotation_axis": [1.0, 1.0, 0.0],
        "target_rotation_deg": 12.0,
        "target_translation": [5.0, -3.0, 8.0],
    }


def _default_ligaments() -> dict:
    return {"CB": {}, "AB": {}}


@dataclass
class PipelineConfig:
    seed: int = 0
    out: str = "out"
    threads: int = 1
    brute_force: bool = False
    synth: dict = field(default_factory=_default_synth)
    # {"radius": {"meshes": [...], "landmarks": [...]}, "ulna": {...}}; empty -> synth outputs
    training: dict = field(default_factory=dict)
    # {"radius": path, "ulna": path, "radius_hint": [x,y,z], "ulna_hint": [...],
    #  "truth_landmarks": {"radius": path, "ulna": path}}; empty -> synth outputs
    target: dict = field(default_factory=dict)
    fit: FitConfig = field(default_factory=FitConfig)
    ssm_modes: int | None = None
    ligaments: dict = field(default_factory=_default_ligaments)
    refine: int = 0
    # [{"model": path, "truth": path, "ligament": "CB", "dataset": "...", "variant": "sta"}]
    compare: list = field(default_factory=list)
    base_dir: str = "."

    def __post_init__(self):
        if self.threads < 1:
            raise ConfigInvalid("threads must be >= 1")
        if self.refine < 0:
            raise ConfigInvalid("refine must be >= 0")
        merged = _default_synth()
        merged.update(self.synth or {})
        self.synth = merged
        for name in self.ligaments:
            if name not in LIGAMENTS:
                raise ConfigInvalid(f"unknown ligament {name!r} in config")
        for bone in self.training:
            if bone not in BONES:
                raise ConfigInvalid(f"unknown bone {bone!r} in training paths")

    @property
    def out_dir(self) -> Path:
        return self.resolve(self.out)

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def ligament_specs(self) -> list[LigamentSpec]:
        return [LigamentSpec.default(name, **overrides) for name, overrides in self.ligaments.items()]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "out": self.out,
            "threads": self.threads,
            "brute_force": self.brute_force,
            "synth": copy.deepcopy(self.synth),
            "training": copy.deepcopy(self.training),
            "target": copy.deepcopy(self.target),
            "fit": self.fit.to_dict(),
            "ssm_modes": self.ssm_modes,
            "ligaments": copy.deepcopy(self.ligaments),
            "refine": self.refine,
            "compare": copy.deepcopy(self.compare),
        }

    @classmethod
    def from_dict(cls, data: dict, base_dir=".") -> "PipelineConfig":
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        fit = data.pop("fit", None)
        try:
            fit_cfg = FitConfig.from_dict(fit) if fit else FitConfig()
        except TypeError as exc:
            raise ConfigInvalid(f"bad fit settings: {exc}") from None
        data.setdefault("base_dir", str(base_dir))
        return cls(fit=fit_cfg, **data)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigInvalid(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data, base_dir=path.parent)

    def check_paths(self) -> None:
        """Every explicitly referenced input file must exist."""
        for bone, spec in self.training.items():
            for p in list(spec.get("meshes", [])) + list(spec.get("landmarks", [])):
                if not self.resolve(p).exists():
                    raise ConfigInvalid(f"training file for {bone} not found: {p}")
        for pair in self.compare:
            for key in ("model", "truth"):
                if not self.resolve(pair[key]).exists():
                    raise ConfigInvalid(f"comparison {key} mesh not found: {pair[key]}")


def set_dotted(data: dict, key: str, value) -> None:
    """``set_dotted(d, "fit.regularization", 0.5)`` with JSON-parsed values."""
    parts = key.split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    try:
        node[parts[-1]] = json.loads(value) if isinstance(value, str) else value
    except json.JSONDecodeError:
        node[parts[-1]] = value
