import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strainforge.errors import BundleIOError, GeometryError, ValidationError
from strainforge.phantom import make_preset, sample_views
from strainforge.study import (LvFrame, Study, TrackedView, ViewGeometry, build_lv_frame,
                               inplane_displacement_to_patient, load_study, pixel_to_patient,
                               save_study, study_from_dict, study_to_dict, to_lv_space)


def geom(origin=(0, 0, 0), row=(0, 1, 0), col=(1, 0, 0), spacing=1.0):
    return ViewGeometry(np.array(origin, float), np.array(row, float), np.array(col, float),
                        spacing, spacing, 64, 64)


def ring_px(center, radius, n=12):
    th = 2 * np.pi * np.arange(n) / n
    return np.c_[center[0] + radius * np.sin(th), center[1] + radius * np.cos(th)]


def sax_view(z, k, frames=3, radius=(10.0, 15.0), center=(32.0, 32.0)):
    contours = {"endo": [ring_px(center, radius[0])], "epi": [ring_px(center, radius[1])]}
    return TrackedView("SAX", geom(origin=(-32, -32, z)), contours,
                       np.zeros((frames, 24, 2)), slice_index=k)


def lax_view(kind="4CH", frames=3):
    g = geom(origin=(-32, 0, 40), row=(0, 0, -1), col=(1, 0, 0))
    line = np.c_[np.linspace(0, 30, 5), np.full(5, 20.0)]
    contours = {"endo": [line], "epi": [line + [0, -5]]}
    return TrackedView(kind, g, contours, np.zeros((frames, 10, 2)))


# --- pixel/patient transforms ---------------------------------------------------

def test_pixel_to_patient_identity_geometry():
    assert np.allclose(pixel_to_patient(geom(), (0, 0)), 0.0)


def test_pixel_to_patient_spacing():
    assert np.allclose(pixel_to_patient(geom(spacing=2.0), (1, 0)), (0, 2, 0))


def test_pixel_to_patient_rotated_geometry():
    g = geom(origin=(5, 0, 0), row=(0, 0, 1), col=(0, 1, 0), spacing=1.5)
    assert np.allclose(pixel_to_patient(g, (2, 1)), (5, 1.5, 3), atol=1e-12)


def test_inplane_displacement_examples():
    g = geom(row=(0, 0, -1), col=(1, 0, 0))
    assert np.allclose(inplane_displacement_to_patient(g, (0, 0)), 0.0)
    assert np.allclose(inplane_displacement_to_patient(g, (1, 0)), (0, 0, -1))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-500, 500), min_size=4, max_size=4), st.floats(0, 1))
def test_pixel_to_patient_is_affine(vals, a):
    g = geom(origin=(3, -2, 7), row=(0, 0.6, 0.8), col=(1, 0, 0), spacing=0.7)
    p, q = np.array(vals[:2]), np.array(vals[2:])
    lhs = pixel_to_patient(g, a * p + (1 - a) * q)
    rhs = a * pixel_to_patient(g, p) + (1 - a) * pixel_to_patient(g, q)
    assert np.allclose(lhs, rhs, atol=1e-9)
    d = q - p
    assert np.allclose(pixel_to_patient(g, p + d) - pixel_to_patient(g, p),
                       inplane_displacement_to_patient(g, d), atol=1e-9)


def test_geometry_rejects_non_orthonormal():
    with pytest.raises(GeometryError):
        geom(row=(0, 1.01, 0))
    with pytest.raises(GeometryError):
        geom(row=(0, 1, 0), col=(0, 0.6, 0.8))
    with pytest.raises(ValidationError):
        ViewGeometry(np.zeros(3), np.array([0, 1.0, 0]), np.array([1.0, 0, 0]), 0.0, 1.0, 8, 8)


# --- bundles ------------------------------------------------------------------------

def minimal_study():
    return Study(views=(sax_view(10.0, 0), lax_view("4CH"), lax_view("2CH")))


def test_minimal_bundle_round_trip(tmp_path):
    save_study(minimal_study(), tmp_path)
    s = load_study(tmp_path)
    assert len(s.views) == 3
    assert [v.kind for v in s.views] == ["SAX", "4CH", "2CH"]


def test_phantom_bundle_round_trip_is_lossless(tmp_path):
    study = sample_views(make_preset("contractile"))
    save_study(study, tmp_path)
    back = load_study(tmp_path / "study.json")
    assert study_to_dict(back) == study_to_dict(study)
    for a, b in zip(study.views, back.views):
        assert np.array_equal(a.displacements, b.displacements)
        assert np.array_equal(a.points(), b.points())


def test_nonzero_frame0_rejected():
    d = study_to_dict(minimal_study())
    d["views"][0]["displacements"][0][0] = [0.5, 0.0]
    with pytest.raises(ValidationError, match="frame 0"):
        study_from_dict(d)


def test_unknown_and_missing_fields_named():
    d = study_to_dict(minimal_study())
    d["views"][1]["colour"] = "red"
    with pytest.raises(ValidationError, match="colour"):
        study_from_dict(d)
    d = study_to_dict(minimal_study())
    del d["views"][0]["geometry"]["row_spacing"]
    with pytest.raises(ValidationError, match="row_spacing"):
        study_from_dict(d)


def test_non_orthonormal_bundle_is_geometry_error():
    d = study_to_dict(minimal_study())
    d["views"][0]["geometry"]["row_dir"] = [0.0, 1.0, 0.1]
    with pytest.raises(GeometryError):
        study_from_dict(d)


def test_short_contour_rejected():
    d = study_to_dict(minimal_study())
    d["views"][0]["contours"]["endo"] = [[1.0, 1.0], [2.0, 2.0]]
    with pytest.raises(ValidationError):
        study_from_dict(d)


def test_missing_bundle_is_io_error(tmp_path):
    with pytest.raises(BundleIOError):
        load_study(tmp_path / "nope")
    (tmp_path / "study.json").write_text("{not json")
    with pytest.raises((BundleIOError, ValidationError)):
        load_study(tmp_path)


def test_bundle_file_is_json_utf8(tmp_path):
    save_study(minimal_study(), tmp_path)
    data = json.loads((tmp_path / "study.json").read_text(encoding="utf-8"))
    assert data["views"][0]["frames"] == 3


# --- LV frame -----------------------------------------------------------------------

def stack(offset=np.zeros(3), R=np.eye(3)):
    """Two SAX slices (basal at higher z) plus a 4CH view, rigidly placed."""
    views = []
    for k, z in enumerate((5.0, -5.0)):
        v = sax_view(z, k)
        g = v.geometry
        g2 = ViewGeometry(R @ g.origin + offset, R @ g.row_dir, R @ g.col_dir,
                          g.row_spacing, g.col_spacing, g.rows, g.cols)
        views.append(TrackedView("SAX", g2, v.contours, v.displacements, k))
    return Study(views=tuple(views))


def test_lv_frame_aligned_case():
    f = build_lv_frame(stack())
    assert np.allclose(f.center, 0.0, atol=1e-12)
    assert np.allclose(np.abs(f.rotation), np.eye(3), atol=1e-12)
    assert np.allclose(f.rotation[2], (0, 0, 1))


def test_lv_frame_translation_equivariance():
    f0 = build_lv_frame(stack())
    f1 = build_lv_frame(stack(offset=np.array([10.0, -5.0, 3.0])))
    assert np.allclose(f1.center, (10, -5, 3), atol=1e-12)
    assert np.allclose(f1.rotation, f0.rotation, atol=1e-12)


def test_lv_frame_tilted_normal():
    a = np.radians(20)
    R = np.array([[1, 0, 0], [0, np.cos(a), np.sin(a)], [0, -np.sin(a), np.cos(a)]])
    f = build_lv_frame(stack(R=R))
    n = np.array([0, np.sin(a), np.cos(a)])
    assert np.allclose(f.rotation @ n, (0, 0, 1), atol=1e-9)


def test_lv_frame_needs_two_slices():
    with pytest.raises(GeometryError):
        build_lv_frame(Study(views=(sax_view(0.0, 0), lax_view())))


def test_lv_frame_rejects_divergent_normals():
    v = sax_view(0.0, 1)
    a = np.radians(8)
    g = ViewGeometry(v.geometry.origin, np.array([0, np.cos(a), np.sin(a)]),
                     np.array([1.0, 0, 0]), 1.0, 1.0, 64, 64)
    tilted = TrackedView("SAX", g, v.contours, v.displacements, 1)
    with pytest.raises(GeometryError):
        build_lv_frame(Study(views=(sax_view(10.0, 0), tilted)))


def test_basal_direction_follows_slice_index():
    # slice 0 sits at the lower patient z, so +Z must flip
    views = (sax_view(-5.0, 0), sax_view(5.0, 1))
    f = build_lv_frame(Study(views=views))
    assert np.allclose(f.rotation[2], (0, 0, -1))


def test_basal_tie_break_by_area():
    views = (sax_view(-5.0, 0, radius=(6.0, 9.0)), sax_view(5.0, 0, radius=(10.0, 15.0)))
    f = build_lv_frame(Study(views=views))
    assert f.rotation[2] @ [0, 0, 1] > 0


def test_to_lv_space_examples():
    f = LvFrame(center=np.array([1.0, 2.0, 3.0]))
    assert np.allclose(to_lv_space(f, f.center), 0.0)
    assert np.allclose(to_lv_space(LvFrame(np.zeros(3)), [4.0, 5.0, 6.0]), (4, 5, 6))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.floats(0.1, 3.0),
       st.lists(st.floats(-100, 100), min_size=6, max_size=6))
def test_lv_transform_rigid_and_invertible(axis, angle, pts):
    ax = np.array(axis)
    if np.linalg.norm(ax) < 1e-3:
        ax = np.array([0.0, 0.0, 1.0])
    ax /= np.linalg.norm(ax)
    K = np.array([[0, -ax[2], ax[1]], [ax[2], 0, -ax[0]], [-ax[1], ax[0], 0]])
    R = np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K
    f = LvFrame(np.array([3.0, -1.0, 2.0]), R)
    p = np.array(pts).reshape(2, 3)
    q = f.to_lv(p)
    assert abs(np.linalg.norm(q[0] - q[1]) - np.linalg.norm(p[0] - p[1])) < 1e-9
    assert np.allclose(f.from_lv(q), p, atol=1e-12)


def test_lv_frame_rotation_validated():
    with pytest.raises(GeometryError):
        LvFrame(np.zeros(3), np.diag([1.0, 1.0, -1.0]))


def test_lv_frame_equivariant_under_rigid_motion():
    study = sample_views(make_preset("contractile"))
    a = np.radians(37.0)
    Q = np.array([[np.cos(a), 0, np.sin(a)], [0, 1, 0], [-np.sin(a), 0, np.cos(a)]])
    t = np.array([12.0, -7.0, 30.0])
    moved = []
    for v in study.views:
        g = v.geometry
        g2 = ViewGeometry(Q @ g.origin + t, Q @ g.row_dir, Q @ g.col_dir, g.row_spacing,
                          g.col_spacing, g.rows, g.cols)
        moved.append(TrackedView(v.kind, g2, v.contours, v.displacements, v.slice_index))
    f0 = build_lv_frame(study)
    f1 = build_lv_frame(Study(views=tuple(moved)))
    for v0, v1 in zip(study.views, moved):
        assert np.allclose(f0.to_lv(v0.patient_points()), f1.to_lv(v1.patient_points()),
                           atol=1e-9)
