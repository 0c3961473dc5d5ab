import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from strainforge.contours import (ContourRing, carry_displacements, chord_parameters,
                                  evaluate_closed, resample_closed, resample_open,
                                  resample_with_displacements)
from strainforge.errors import GeometryError, ValidationError


def circle(n, r=1.0):
    th = 2 * np.pi * np.arange(n) / n
    return np.c_[r * np.cos(th), r * np.sin(th), np.zeros(n)]


def test_resample_at_original_parameters_interpolates():
    pts = circle(7) * [1.0, 0.6, 1.0] + [0.1, 0.0, 0.0]
    ring = ContourRing(pts)
    t = chord_parameters(pts, closed=True)
    assert np.allclose(evaluate_closed(ring, t), pts, atol=1e-9)


def test_four_point_circle_radial_deviation():
    out = resample_closed(ContourRing(circle(4)), 64).points
    assert np.abs(np.linalg.norm(out[:, :2], axis=1) - 1.0).max() <= 0.06


def test_square_perimeter_close_to_arc_length():
    sq = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float)
    ring = ContourRing(sq)
    out = resample_closed(ring, 400).points
    poly = np.linalg.norm(np.diff(np.vstack([out, out[:1]]), axis=0), axis=1).sum()
    from strainforge.contours import _spline
    spl = _spline(chord_parameters(sq, True), sq, True)
    d = spl.derivative()
    knots = np.linspace(0, 1, 5)
    arc = sum(quad(lambda s: np.linalg.norm(d(s)), a, b, limit=200)[0]
              for a, b in zip(knots[:-1], knots[1:]))
    assert abs(poly - arc) / arc < 0.02


def test_degenerate_and_duplicate_rings_rejected():
    with pytest.raises(GeometryError):
        resample_closed(ContourRing(np.array([[0, 0, 0], [0, 0, 0], [1e-9, 0, 0]], float)), 8)
    with pytest.raises(GeometryError):
        chord_parameters(np.array([[0, 0], [1e-8, 0], [2e-8, 0]]) * 1e-1, closed=True)
    with pytest.raises(ValidationError):
        ContourRing(np.zeros((2, 3)))


def test_open_two_point_is_straight_line():
    out = resample_open(np.array([[0, 0, 0], [4, 2, 0]], float), 5).points
    assert np.allclose(out, np.linspace(0, 1, 5)[:, None] * [4, 2, 0])


def test_open_endpoints_exact_and_collinear():
    pts = np.array([[0.3, 1.7, -2.0], [1.1, 2.9, 0.5], [5.0, 0.0, 1.0], [6.5, 2.0, 2.0]])
    out = resample_open(pts, 33).points
    assert np.array_equal(out[0], pts[0]) and np.array_equal(out[-1], pts[-1])
    line = np.array([[0, 0, 0], [1, 2, 3], [3, 6, 9]], float)
    o = resample_open(line, 20).points
    cr = np.cross(o - line[0], [1, 2, 3])
    assert np.abs(cr).max() < 1e-9


def ring_with(disp):
    return ContourRing(circle(10, 20.0), displacements=disp)


def test_uniform_displacement_is_reproduced():
    d = np.zeros((3, 10, 3))
    d[1:] = [1.5, -2.0, 0.25]
    res = resample_with_displacements(ring_with(d), 64)
    assert np.allclose(res.displacements[1:], [1.5, -2.0, 0.25], atol=1e-12)
    assert np.array_equal(res.displacements[0], np.zeros((64, 3)))


def test_linear_displacement_along_open_parameter():
    pts = np.c_[np.linspace(0, 10, 6), np.zeros(6), np.zeros(6)]
    t = chord_parameters(pts, closed=False)
    d = np.zeros((2, 6, 3))
    d[1, :, 0] = 3.0 * t - 1.0
    ring = ContourRing(pts, closed=False, displacements=d)
    res = resample_with_displacements(ring, 17)
    assert np.allclose(res.displacements[1, :, 0], 3.0 * res.params - 1.0, atol=1e-9)


def test_carry_requires_displacements():
    with pytest.raises(ValidationError):
        carry_displacements(ContourRing(circle(5)), resample_closed(ContourRing(circle(5)), 8))


def test_carried_value_at_original_parameter():
    rng = np.random.default_rng(3)
    d = np.zeros((4, 10, 3))
    d[1:] = rng.normal(size=(3, 10, 3))
    ring = ring_with(d)
    t = chord_parameters(ring.points, True)
    probe = ContourRing(evaluate_closed(ring, t), params=t)
    assert np.allclose(carry_displacements(ring, probe), d, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 2 * np.pi), st.lists(st.floats(-50, 50), min_size=3, max_size=3),
       st.integers(8, 40))
def test_resampling_rigid_equivariance(angle, shift, n):
    pts = circle(9, 10.0) * [1.0, 0.7, 1.0] + [[0, 0, 0.1 * k] for k in range(9)]
    c, s = np.cos(angle), np.sin(angle)
    R = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    a = resample_closed(ContourRing(pts), n).points
    b = resample_closed(ContourRing(pts @ R.T + shift), n).points
    assert np.allclose(a @ R.T + shift, b, atol=1e-9)


def test_doubling_n_keeps_shared_samples():
    ring = ContourRing(circle(11, 5.0) * [1.0, 0.5, 1.0])
    a = resample_closed(ring, 32).points
    b = resample_closed(ring, 64).points
    assert np.abs(b[::2] - a).max() < 1e-12
