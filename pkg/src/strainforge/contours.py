"""Cubic-spline up-sampling of contour rings and open long-axis curves.

Parameters are normalised chord length: ``[0, 1)`` around a closed ring,
``[0, 1]`` along an open curve. Every ring remembers the parameter of each of
its points on the *source* curve so displacements can be carried across.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import GeometryError, ValidationError

_DUP_TOL = 1e-9
_MIN_LENGTH = 1e-6


@dataclass(frozen=True)
class ContourRing:
    points: np.ndarray                 # (k, d) positions, mm
    closed: bool = True
    roi: str = "endo"
    slice_tag: int = 0
    displacements: np.ndarray | None = None   # (frames, k, d)
    params: np.ndarray | None = None          # source-curve parameter per point

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 2 or len(pts) < (3 if self.closed else 2):
            raise ValidationError(f"contour needs at least {3 if self.closed else 2} points")
        if self.displacements is not None:
            d = np.asarray(self.displacements, dtype=float)
            if d.ndim != 3 or d.shape[1:] != pts.shape:
                raise ValidationError("displacements must be (frames, points, dim)")
            object.__setattr__(self, "displacements", d)

    @property
    def n(self):
        return len(self.points)

    def knots(self, centripetal=False):
        if self.params is not None:
            return self.params
        return chord_parameters(self.points, self.closed, centripetal)


def chord_parameters(points, closed=True, centripetal=False):
    """Normalised cumulative chord length of ``points``.

    Raises on consecutive duplicates or a degenerate total length.
    """
    pts = np.asarray(points, dtype=float)
    seg = np.diff(np.vstack([pts, pts[:1]]) if closed else pts, axis=0)
    lengths = np.linalg.norm(seg, axis=1)
    if np.any(lengths < _DUP_TOL):
        raise GeometryError("contour has consecutive duplicate points")
    if centripetal:
        lengths = np.sqrt(lengths)
    total = lengths.sum()
    if total < _MIN_LENGTH:
        raise GeometryError(f"degenerate contour, total chord length {total:g}")
    t = np.concatenate([[0.0], np.cumsum(lengths)]) / total
    return t[:-1] if closed else t


def _spline(t, values, closed):
    if closed:
        tt = np.append(t, 1.0)
        vv = np.concatenate([values, values[:1]], axis=0)
        return CubicSpline(tt, vv, bc_type="periodic", axis=0)
    return CubicSpline(t, values, bc_type="natural", axis=0)


def resample_closed(ring, n, offset=0.0, centripetal=False):
    """Periodic cubic spline through ``ring`` sampled at ``n`` equal parameter
    steps starting at ``offset``."""
    if n < 3:
        raise ValidationError("closed resampling needs n >= 3")
    if not ring.closed:
        raise ValidationError("resample_closed expects a closed ring")
    t = chord_parameters(ring.points, True, centripetal)
    spl = _spline(t, ring.points, True)
    s = np.mod(offset + np.arange(n) / n, 1.0)
    return ContourRing(points=spl(s), closed=True, roi=ring.roi, slice_tag=ring.slice_tag,
                       params=s)


def resample_open(polyline, n, centripetal=False):
    """Natural cubic spline along an open polyline, ``n`` samples, endpoints kept."""
    if n < 2:
        raise ValidationError("open resampling needs n >= 2")
    ring = polyline if isinstance(polyline, ContourRing) else ContourRing(polyline, closed=False)
    pts = ring.points
    t = chord_parameters(pts, False, centripetal)
    s = np.linspace(0.0, 1.0, n)
    if len(pts) == 2:
        out = pts[0] + s[:, None] * (pts[1] - pts[0])
    else:
        out = _spline(t, pts, False)(s)
    out[0], out[-1] = pts[0], pts[-1]
    return replace(ring, points=out, params=s, displacements=None)


def evaluate_closed(ring, s, centripetal=False):
    """Points on the periodic spline through ``ring`` at parameters ``s``."""
    t = chord_parameters(ring.points, True, centripetal)
    return _spline(t, ring.points, True)(np.mod(np.asarray(s, dtype=float), 1.0))


def carry_displacements(original, resampled, centripetal=False):
    """Spline the original per-frame displacements along the source parameter
    and evaluate them at the resampled points' parameters.

    Returns an array (frames, resampled.n, dim); frame 0 is exactly zero.
    """
    if original.displacements is None:
        raise ValidationError("original ring carries no displacements")
    if resampled.params is None:
        raise ValidationError("resampled ring has no recorded parameters")
    d = original.displacements
    frames, k, dim = d.shape
    t = chord_parameters(original.points, original.closed, centripetal)
    flat = np.moveaxis(d, 0, 1).reshape(k, frames * dim)
    s = resampled.params
    if original.closed:
        vals = _spline(t, flat, True)(np.mod(s, 1.0))
    elif k == 2:
        vals = flat[0] + s[:, None] * (flat[1] - flat[0])
    else:
        vals = _spline(t, flat, False)(s)
    out = np.moveaxis(vals.reshape(len(s), frames, dim), 1, 0).copy()
    out[0] = 0.0
    return out


def resample_with_displacements(ring, n, centripetal=False):
    """Resample a ring (closed or open) and carry its displacements along."""
    res = resample_closed(ring, n, centripetal=centripetal) if ring.closed \
        else resample_open(ring, n, centripetal=centripetal)
    if ring.displacements is not None:
        res = replace(res, displacements=carry_displacements(ring, res, centripetal))
    return res


def align_ring(ring, axis_origin=(0.0, 0.0)):
    """Reorder a closed ring (in LV space) to run counter-clockwise about +Z
    with index 0 nearest polar angle 0. Displacements and params follow."""
    pts = ring.points
    c = np.asarray(axis_origin, dtype=float)
    xy = pts[:, :2] - c
    area = 0.5 * np.sum(xy[:, 0] * np.roll(xy[:, 1], -1) - np.roll(xy[:, 0], -1) * xy[:, 1])
    order = np.arange(ring.n)
    if area < 0:
        order = np.concatenate([[0], order[:0:-1]])
    ang = np.arctan2(xy[order, 1], xy[order, 0])
    start = int(np.argmin(np.abs(ang)))
    order = np.roll(order, -start)
    disp = None if ring.displacements is None else ring.displacements[:, order]
    params = None if ring.params is None else ring.params[order]
    return replace(ring, points=pts[order], displacements=disp, params=params)
