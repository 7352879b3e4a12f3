"""Labeled ligament insertion sites attached to mesh vertices."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigInvalid, InvalidMesh
from .core import TriMesh

LIGAMENT_SITES = ("CBP", "CBD", "AB", "DOAC", "DOB", "POC")
BONE_SUFFIX = {"radius": "R", "ulna": "U"}
BONES = tuple(BONE_SUFFIX)
SIDES = ("left", "right")


def site_label(site: str, bone: str) -> str:
    """``site_label("CBP", "radius") == "CBP_R"``."""
    return f"{site}_{BONE_SUFFIX[bone]}"


def bone_labels(bone: str) -> tuple[str, ...]:
    return tuple(site_label(s, bone) for s in LIGAMENT_SITES)


def is_valid_label(label: str) -> bool:
    site, _, suffix = label.partition("_")
    return site in LIGAMENT_SITES and suffix in BONE_SUFFIX.values()


@dataclass
class LandmarkSet:
    entries: dict[str, int]
    bone: str = "radius"
    side: str = "right"
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.bone not in BONES:
            raise ConfigInvalid(f"unknown bone {self.bone!r}")
        if self.side not in SIDES:
            raise ConfigInvalid(f"unknown side {self.side!r}")
        for label in self.entries:
            if not is_valid_label(label):
                raise ConfigInvalid(f"unknown landmark label {label!r}")
        self.entries = {k: int(v) for k, v in self.entries.items()}

    @property
    def labels(self) -> list[str]:
        return list(self.entries)

    def is_complete(self) -> bool:
        return set(self.entries) == set(bone_labels(self.bone))

    def validate(self, mesh: TriMesh) -> "LandmarkSet":
        for label, idx in self.entries.items():
            if not 0 <= idx < mesh.n_vertices:
                raise InvalidMesh(f"landmark {label} index {idx} outside mesh with {mesh.n_vertices} vertices")
        return self

    def positions(self, mesh: TriMesh) -> dict[str, np.ndarray]:
        return {label: mesh.vertices[idx].copy() for label, idx in self.entries.items()}

    def with_entries(self, entries: dict[str, int]) -> "LandmarkSet":
        return LandmarkSet(dict(entries), self.bone, self.side, dict(self.extras))

    def to_dict(self) -> dict:
        out = {"bone": self.bone, "side": self.side, "landmarks": dict(self.entries)}
        out.update(self.extras)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "LandmarkSet":
        extras = {k: v for k, v in data.items() if k not in ("bone", "side", "landmarks")}
        return cls(dict(data["landmarks"]), data.get("bone", "radius"), data.get("side", "right"), extras)

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "LandmarkSet":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
