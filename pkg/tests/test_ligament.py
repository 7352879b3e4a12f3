import numpy as np
import pytest

from ligamesh.errors import ConfigInvalid, DegenerateQuad, MissingLandmark, SelfIntersection
from ligamesh.ligament import (
    BonePair,
    LigamentCorners,
    LigamentMesh,
    LigamentSpec,
    TetMesh,
    build_ligament,
    build_sheet,
    extrude,
    grid_triangles,
    ligament_corners,
    refine_grid,
    tetrahedralize,
)
from ligamesh.mesh import LandmarkSet, build_halfedge
from ligamesh.registration import axis_angle_matrix
from ligamesh.synthgen import cylinder_patch, strip_bone

NY = 101


def strips():
    """Radius strip x in [0, 4], ulna strip x in [30, 34], both along y in [0, 100]."""
    rad = strip_bone(0, 4, 100, 5, NY)
    uln = strip_bone(30, 4, 100, 5, NY)
    r = lambda y: 4 * NY + y  # inner edge x = 4
    u = lambda y: y  # inner edge x = 30
    rl = LandmarkSet({"CBP_R": r(70), "CBD_R": r(30), "AB_R": r(50), "DOB_R": r(20)}, "radius")
    ul = LandmarkSet({"CBP_U": u(80), "CBD_U": u(40), "AB_U": u(60)}, "ulna")
    return BonePair(rad, uln, rl, ul, np.array([2.0, -10, 0]), np.array([32.0, -10, 0]))


def flat_grid(lx=10.0, ly=20.0, ni=6, nj=5):
    u, v = np.meshgrid(np.linspace(0, lx, ni), np.linspace(0, ly, nj), indexing="ij")
    return np.stack([u, v, np.zeros_like(u)], axis=-1)


def curved_grid(radius=50.0, flip=False):
    g = cylinder_patch(radius, 0.6, 20, 12, 10).vertices.reshape(12, 10, 3)
    return g[:, ::-1] if flip else g


def test_four_landmark_corners_pass_through():
    b = strips()
    c = ligament_corners(b, LigamentSpec.default("CB"))
    v = b.radius.vertices
    assert np.array_equal(c.radius_proximal, v[b.radius_landmarks.entries["CBP_R"]])
    assert np.array_equal(c.radius_distal, v[b.radius_landmarks.entries["CBD_R"]])
    assert np.array_equal(c.ulna_distal, b.ulna.vertices[b.ulna_landmarks.entries["CBD_U"]])
    assert c.provenance == "landmark"


def test_midpoint_corner_formula():
    b = strips()
    lm = LandmarkSet({"AB_R": 0}, "radius")
    b = BonePair(b.radius, b.ulna, lm, b.ulna_landmarks, b.radius_hint, b.ulna_hint)
    spec = LigamentSpec("AB", width_R=4.0, width_U=7.0)
    c = ligament_corners(b, spec, d_R=[0, 0, 1], d_U=[0, 0, 1])
    np.testing.assert_array_equal(c.radius_distal, [0, 0, 2])
    np.testing.assert_array_equal(c.radius_proximal, [0, 0, -2])
    mid_u = b.ulna.vertices[b.ulna_landmarks.entries["AB_U"]]
    np.testing.assert_allclose(0.5 * (c.ulna_proximal + c.ulna_distal), mid_u, atol=1e-12)
    default = ligament_corners(strips(), LigamentSpec.default("AB"))
    assert default.provenance == "axis"
    np.testing.assert_allclose(default.radius_distal - default.radius_proximal, [0, -7.0, 0], atol=1e-9)


def test_missing_landmark():
    with pytest.raises(MissingLandmark, match="DOB_U"):
        ligament_corners(strips(), LigamentSpec.default("DOB"))


def test_spec_defaults_and_validation():
    cb = LigamentSpec.default("CB")
    assert (cb.corner_mode, cb.intra_samples, cb.inter_samples, cb.thickness) == ("four-landmark", 10, 12, 2.0)
    assert LigamentSpec.default("DOAC").width_R == 3.2
    assert LigamentSpec.default("DOB").width_U == 4.4
    assert LigamentSpec.default("AB").width_R == 7.0
    with pytest.raises(ConfigInvalid):
        LigamentSpec.default("POC")
    assert LigamentSpec.default("POC", width_R=5.0, width_U=5.0).name == "POC"
    with pytest.raises(ConfigInvalid):
        LigamentSpec("XX")
    with pytest.raises(ConfigInvalid):
        LigamentSpec("CB", "four-landmark", thickness=0)


def test_strip_sheet_counts_and_planarity():
    b = strips()
    spec = LigamentSpec.default("CB")
    lig = build_sheet(b, ligament_corners(b, spec), spec)
    assert lig.grid_dims == (10, 12) and lig.sheet.n_vertices == 120
    assert lig.sheet.n_triangles == 2 * 9 * 11 == 198
    assert np.abs(lig.sheet.vertices[:, 2]).max() <= 1e-9
    g = lig.grid()
    assert np.array_equal(g[:, 0], b.radius.vertices[lig.radius_attachments])
    assert np.array_equal(g[:, -1], b.ulna.vertices[lig.ulna_attachments])
    loops = build_halfedge(lig.sheet).boundary_loops()
    assert len(loops) == 1 and len(loops[0]) == 2 * (10 + 12) - 4
    rep = lig.report()
    assert rep["grid_dims"] == [10, 12] and len(rep["snap_distances"]["radius"]) == 10


def test_minimal_grid():
    b = strips()
    spec = LigamentSpec.default("CB", intra_samples=2, inter_samples=2)
    c = ligament_corners(b, spec)
    lig = build_sheet(b, c, spec)
    assert lig.sheet.n_triangles == 2
    np.testing.assert_array_equal(lig.sheet.vertices, [c.radius_proximal, c.ulna_proximal, c.radius_distal, c.ulna_distal])


def test_degenerate_quads():
    p = np.zeros(3)
    with pytest.raises(DegenerateQuad):
        LigamentCorners(p, p, np.ones(3), 2 * np.ones(3)).validate()
    b = strips()
    r = b.radius.vertices
    crossing = LigamentCorners(r[4 * NY + 70], b.ulna.vertices[40], b.ulna.vertices[80], r[4 * NY + 30])
    with pytest.raises(DegenerateQuad):
        build_sheet(b, crossing, LigamentSpec.default("CB"))


def test_grid_triangles_orientation():
    t = grid_triangles(2, 2)
    assert t.tolist() == [[0, 2, 3], [0, 3, 1]]


def test_flat_box_volume_and_closure():
    lig = LigamentMesh.from_grid(flat_grid())
    solid = extrude(lig, 2.0).extruded
    assert abs(solid.enclosed_volume() - 400.0) <= 1e-6
    he = build_halfedge(solid)
    assert he.is_closed() and he.euler_characteristic() == 2
    with pytest.raises(ConfigInvalid):
        extrude(lig, 0.0)


@pytest.mark.parametrize("flip", [False, True])
def test_curved_sheet_volume(flip):
    lig = LigamentMesh.from_grid(curved_grid(flip=flip))
    vol = extrude(lig, 2.0).extruded.enclosed_volume()
    assert abs(vol / (lig.sheet.area() * 2.0) - 1.0) <= 0.02


@pytest.mark.parametrize("t", [1.0, 4.0])
def test_sidedness_curvature_term(t):
    # one-sided offset of a cylinder of radius R changes the volume by about t/2R, centered by O((t/2R)^2)
    devs = []
    for flip in (False, True):
        lig = LigamentMesh.from_grid(curved_grid(flip=flip))
        ref = lig.sheet.area() * t
        assert abs(extrude(lig, t).extruded.enclosed_volume() / ref - 1.0) <= 0.02
        devs.append(extrude(lig, t, centered=False).extruded.enclosed_volume() / ref - 1.0)
    assert devs[0] * devs[1] < 0
    assert all(0.5 * t / 100.0 <= abs(d) <= 1.5 * t / 100.0 for d in devs)


def test_self_intersection_on_tight_curvature():
    lig = LigamentMesh.from_grid(cylinder_patch(3.0, 2.0, 10, 12, 6).vertices.reshape(12, 6, 3)[:, ::-1])
    with pytest.raises(SelfIntersection):
        extrude(lig, 8.0)


def test_single_prism_split():
    lig = LigamentMesh.from_grid(flat_grid(1.0, 1.0, 2, 2))
    tets = tetrahedralize(lig, 1.0)
    assert len(tets.tetrahedra) == 6
    vols = tets.volumes()
    assert np.all(vols > 0)
    np.testing.assert_allclose(vols.reshape(2, 3).sum(axis=1), [0.5, 0.5], atol=1e-9)


def test_tet_counts_and_volume_bookkeeping():
    b = strips()
    lig = build_ligament(b, LigamentSpec.default("CB"))
    for refine in (0, 1, 2):
        tets = tetrahedralize(lig, refine=refine)
        assert len(tets.tetrahedra) == 3 * 198 * 4**refine
        vol = extrude(lig, refine=refine).extruded.enclosed_volume()
        assert abs(tets.total_volume() - vol) <= 1e-6 * vol
    assert abs(tetrahedralize(lig, refine=1).total_volume() - tetrahedralize(lig).total_volume()) <= 1e-9


@pytest.mark.parametrize("grid", [flat_grid(), curved_grid(), curved_grid(flip=True)])
@pytest.mark.parametrize("centered", [False, True])
def test_tet_volume_matches_surface(grid, centered):
    lig = LigamentMesh.from_grid(grid)
    for t in (1.0, 4.0):
        vol = extrude(lig, t, centered=centered).extruded.enclosed_volume()
        assert abs(tetrahedralize(lig, t, centered=centered).total_volume() - vol) <= 1e-6 * vol


def test_refine_is_midpoint_subdivision():
    g = flat_grid(3, 2, 3, 2)
    r = refine_grid(g, 1)
    assert r.shape == (5, 3, 3)
    np.testing.assert_allclose(r[1, 1], 0.5 * (g[0, 0] + g[1, 1]))


def test_tetgen_and_json_roundtrip(tmp_path):
    tets = tetrahedralize(LigamentMesh.from_grid(curved_grid()), 2.0)
    node, ele = tets.write_tetgen(tmp_path / "o" / "cb")
    assert node.read_text().split("\n")[0] == f"{len(tets.vertices)} 3 0 0"
    assert ele.read_text().split("\n")[0] == f"{len(tets.tetrahedra)} 4 0"
    back = TetMesh.read_tetgen(tmp_path / "o" / "cb")
    assert np.array_equal(back.vertices, tets.vertices) and np.array_equal(back.tetrahedra, tets.tetrahedra)
    again = TetMesh.from_json(tets.to_json())
    assert np.array_equal(again.tetrahedra, tets.tetrahedra)


def test_rigid_equivariance():
    b = strips()
    R = axis_angle_matrix([1, -2, 0.5], 0.9)
    t = np.array([10.0, -20.0, 5.0])
    for name in ("CB", "AB"):
        spec = LigamentSpec.default(name)
        base = build_ligament(b, spec)
        moved = build_ligament(b.transformed(R, t), spec)
        assert moved.radius_attachments == base.radius_attachments
        back = (moved.sheet.vertices - t) @ R
        assert np.abs(back - base.sheet.vertices).max() <= 1e-9
        back = (moved.extruded.vertices - t) @ R
        assert np.abs(back - base.extruded.vertices).max() <= 1e-9
