"""Vertex-based similarity metrics between a modelled mesh and ground truth.

``a_i`` is the distance from model vertex ``i`` to its nearest ground-truth
vertex, ``b_j`` the reverse.  Then

* ``d_ME``  = mean(a)                    (one-directional, model to truth)
* ``d_AS``  = mean(a and b pooled)
* ``d_RMS`` = sqrt(mean of squares of a and b pooled)
* ``d_HD``  = max(max a, max b)

Sums use ``math.fsum`` (exactly rounded, so independent of order) and the
nearest distances use the shared fixed-order formula, which makes the
accelerated path agree bitwise with an exhaustive search.  ``d_RMS`` is
clamped into ``[d_AS, d_HD]`` so last-ulp rounding never breaks the ordering.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import EmptyInput, EmptyMesh
from .mesh.core import TriMesh
from .mesh.spatial import NearestIndex

METRICS = ("d_HD", "d_ME", "d_AS", "d_RMS")
VARIANTS = ("sta", "clp")


@dataclass
class SimilarityReport:
    d_ME: float
    d_AS: float
    d_RMS: float
    d_HD: float
    n_model: int = 0
    n_truth: int = 0
    ligament: str = ""
    dataset: str = ""
    variant: str = ""

    def values(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "SimilarityReport":
        keys = cls.__dataclass_fields__
        return cls(**{k: v for k, v in data.items() if k in keys})


def _points(obj) -> np.ndarray:
    pts = obj.vertices if isinstance(obj, TriMesh) else np.asarray(obj, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyMesh("cannot compare an empty mesh")
    return pts


def nearest_distances(src: np.ndarray, dst: np.ndarray, brute_force: bool | None = None) -> np.ndarray:
    """Exact nearest-vertex distance from every ``src`` point to ``dst``."""
    d, _ = NearestIndex(dst, brute_force).query(src, tiebreak=True)
    return d


def compare_meshes(model, truth, ligament: str = "", dataset: str = "", variant: str = "",
                   brute_force: bool | None = None) -> SimilarityReport:
    """The four similarity metrics of ``model`` against ``truth`` (meshes or point arrays)."""
    m = _points(model)
    g = _points(truth)
    a = nearest_distances(m, g, brute_force)
    b = nearest_distances(g, m, brute_force)
    both = np.concatenate([a, b])
    d_me = math.fsum(a.tolist()) / len(a)
    d_as = math.fsum(both.tolist()) / len(both)
    d_hd = float(both.max())
    # AM <= QM <= max holds exactly; clamp the last-ulp rounding of the square root
    d_rms = min(max(math.sqrt(math.fsum((both * both).tolist()) / len(both)), d_as), d_hd)
    return SimilarityReport(d_me, d_as, d_rms, d_hd, len(m), len(g), ligament, dataset, variant)


def aggregate_reports(reports: list[SimilarityReport]) -> dict[str, dict[str, float]]:
    """Per-metric means for each variant label, plus ``"all"`` over every report."""
    if not reports:
        raise EmptyInput("no reports to aggregate")
    groups: dict[str, list[SimilarityReport]] = {}
    for r in reports:
        groups.setdefault(r.variant, []).append(r)
    groups["all"] = list(reports)
    return {
        label: {m: math.fsum(getattr(r, m) for r in rs) / len(rs) for m in METRICS}
        for label, rs in groups.items()
    }


def _table_rows(reports: list[SimilarityReport]) -> tuple[list[str], list[list[str]]]:
    variants = [v for v in VARIANTS if any(r.variant == v for r in reports)]
    variants += sorted({r.variant for r in reports} - set(variants))
    head = ["dataset", "ligament"] + [f"{m}[{v}]" for m in METRICS for v in variants]
    keyed: dict[tuple[str, str], dict[str, SimilarityReport]] = {}
    for r in reports:
        keyed.setdefault((r.dataset, r.ligament), {})[r.variant] = r
    rows = []
    for (ds, lig), by_var in keyed.items():
        row = [ds, lig]
        for m in METRICS:
            for v in variants:
                row.append(f"{getattr(by_var[v], m):.4g}" if v in by_var else "")
        rows.append(row)
    agg = aggregate_reports(reports)
    rows.append(["Average", ""] + [f"{agg[v][m]:.4g}" for m in METRICS for v in variants])
    return head, rows


def format_table(reports: list[SimilarityReport]) -> str:
    """Aligned text table: one row per dataset and ligament, metric x variant columns."""
    head, rows = _table_rows(reports)
    allrows = [head] + rows
    widths = [max(len(r[c]) for r in allrows) for c in range(len(head))]
    return "\n".join("  ".join(cell.ljust(w) if c < 2 else cell.rjust(w) for c, (cell, w) in
                               enumerate(zip(r, widths))).rstrip() for r in allrows) + "\n"


def format_csv(reports: list[SimilarityReport]) -> str:
    head, rows = _table_rows(reports)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(head)
    writer.writerows(rows)
    return buf.getvalue()
