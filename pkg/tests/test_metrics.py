import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ligamesh.errors import EmptyInput, EmptyMesh
from ligamesh.metrics import (
    METRICS,
    SimilarityReport,
    aggregate_reports,
    compare_meshes,
    format_csv,
    format_table,
)
from ligamesh.synthgen import icosphere

from conftest import random_rotation


def oracle(m: np.ndarray, g: np.ndarray) -> dict[str, float]:
    """Exhaustive double loop over all vertex pairs."""
    d = m[:, None, :] - g[None, :, :]
    full = np.sqrt((d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1]) + d[..., 2] * d[..., 2])
    a, b = full.min(axis=1), full.min(axis=0)
    both = np.concatenate([a, b])
    d_as, d_hd = math.fsum(both.tolist()) / len(both), float(both.max())
    rms = math.sqrt(math.fsum((both * both).tolist()) / len(both))
    return {"d_ME": math.fsum(a.tolist()) / len(a), "d_AS": d_as, "d_RMS": min(max(rms, d_as), d_hd), "d_HD": d_hd}


clouds = st.tuples(st.integers(1, 300), st.integers(1, 300), st.integers(0, 2**32 - 1)).map(
    lambda t: (np.random.default_rng(t[2]).uniform(0, 100, (t[0], 3)), np.random.default_rng(t[2] + 1).uniform(0, 100, (t[1], 3)))
)


def test_examples():
    sphere = icosphere(2)
    assert compare_meshes(sphere, sphere).values() == {m: 0.0 for m in METRICS}
    r = compare_meshes(np.zeros((1, 3)), [[3.0, 4.0, 0.0]])
    assert r.values() == {m: 5.0 for m in METRICS}
    rng = np.random.default_rng(0)
    a, b = rng.uniform(0, 100, (100, 3)), rng.uniform(0, 100, (100, 3))
    assert compare_meshes(a, b).values() == oracle(a, b)
    with pytest.raises(EmptyMesh):
        compare_meshes(np.zeros((0, 3)), a)


def test_d_me_is_one_directional():
    m = np.zeros((1, 3))
    g = np.array([[0.0, 0, 0], [10.0, 0, 0]])
    assert compare_meshes(m, g).d_ME == 0.0
    assert compare_meshes(g, m).d_ME == 5.0


@given(clouds, st.booleans())
@settings(max_examples=60, deadline=None)
def test_oracle_equivalence(pair, brute):
    m, g = pair
    assert compare_meshes(m, g, brute_force=brute).values() == oracle(m, g)


@given(clouds, st.integers(0, 2**32 - 1))
@settings(max_examples=100, deadline=None)
def test_axioms(pair, seed):
    m, g = pair
    r = compare_meshes(m, g)
    s = compare_meshes(g, m)
    for k in ("d_AS", "d_RMS", "d_HD"):
        assert getattr(r, k) == getattr(s, k)
    assert r.d_ME <= r.d_HD
    assert r.d_AS <= r.d_RMS <= r.d_HD
    rng = np.random.default_rng(seed)
    R, t = random_rotation(rng), rng.uniform(-100, 100, 3)
    moved = compare_meshes(m @ R.T + t, g @ R.T + t)
    for k in METRICS:
        assert abs(getattr(moved, k) - getattr(r, k)) <= 1e-9 * max(1.0, getattr(r, k))


def test_report_json_schema():
    r = compare_meshes(np.zeros((1, 3)), [[3.0, 4.0, 0.0]], ligament="CB", dataset="DS1", variant="clp")
    d = json.loads(r.to_json())
    assert {"dataset", "ligament", "variant", "d_ME", "d_AS", "d_RMS", "d_HD"} <= set(d)
    assert SimilarityReport.from_dict(d) == r


def test_aggregate_single_and_empty():
    r = SimilarityReport(1.0, 2.0, 3.0, 4.0, variant="sta")
    agg = aggregate_reports([r])
    assert agg["sta"] == agg["all"] == r.values()
    with pytest.raises(EmptyInput):
        aggregate_reports([])


def test_table_layout():
    reps = [
        SimilarityReport(0.2, 0.7, 1.1, 5.7, ligament="AB", dataset="DS1", variant="clp"),
        SimilarityReport(9.0, 5.9, 7.9, 22.1, ligament="AB", dataset="DS1", variant="sta"),
        SimilarityReport(0.3, 1.0, 1.4, 7.5, ligament="CB", dataset="DS1", variant="clp"),
    ]
    lines = format_table(reps).splitlines()
    assert lines[0].split()[:4] == ["dataset", "ligament", "d_HD[sta]", "d_HD[clp]"]
    assert lines[-1].startswith("Average") and len(lines) == 4
    rows = format_csv(reps).splitlines()
    assert rows[0].startswith("dataset,ligament,d_HD[sta],d_HD[clp],d_ME[sta]")
    assert rows[2].split(",")[2] == ""
