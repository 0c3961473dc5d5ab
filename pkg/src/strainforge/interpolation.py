"""Piecewise-linear scattered-data interpolation over a Delaunay decomposition.

Queries inside the hull get barycentric weights of their containing simplex.
Outside the hull, ``nearest`` copies the nearest sample, ``project`` moves
the query to the closest point of the hull and interpolates there, and
``linear`` extends the affine function of that boundary simplex (unbounded). Weights
depend only on sample positions, so one interpolant serves every frame:
``weights(q)`` once, then ``apply(values)`` per frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.spatial import ConvexHull, Delaunay, QhullError, cKDTree

from .errors import ValidationError

EXTRAPOLATION_MODES = ("nearest", "project", "linear")
_INSIDE_TOL = 1e-9


@dataclass(frozen=True)
class QueryWeights:
    matrix: csr_matrix        # (queries, samples)
    extrapolated: np.ndarray  # (queries,) bool

    def apply(self, values):
        return self.matrix @ np.asarray(values, dtype=float)


class ScatteredInterpolant:
    """Linear interpolant on 3D (or lower-dimensional) scattered samples."""

    def __init__(self, positions, extrapolation="nearest"):
        pts = np.asarray(positions, dtype=float)
        if pts.ndim != 2 or len(pts) < 1:
            raise ValidationError("interpolant needs at least one sample")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("sample positions must be finite")
        if extrapolation not in EXTRAPOLATION_MODES:
            raise ValidationError(f"extrapolation must be one of {EXTRAPOLATION_MODES}")
        self.positions = pts
        self.extrapolation = extrapolation
        self.tree = cKDTree(pts)
        self.scale = float(np.ptp(pts, axis=0).max()) if len(pts) > 1 else 1.0
        self.tri = None
        self.degenerate = True
        dim = pts.shape[1]
        if len(pts) >= dim + 1:
            try:
                tri = Delaunay(pts)
                T = tri.transform
                ok = np.all(np.isfinite(T.reshape(len(T), -1)), axis=1)
                if ok.any():
                    self.tri, self._ok = tri, ok
                    self.degenerate = False
            except QhullError:
                pass
        self._hull = None

    # -- point location ------------------------------------------------------

    def _barycentric(self, simplices, q):
        T = self.tri.transform[simplices]
        dim = q.shape[1]
        b = np.einsum("ijk,ik->ij", T[:, :dim], q - T[:, dim])
        return np.c_[b, 1.0 - b.sum(axis=1)]

    def _locate(self, q):
        s = self.tri.find_simplex(q, tol=_INSIDE_TOL)
        s = np.where((s >= 0) & self._ok[np.maximum(s, 0)], s, -1)
        miss = np.flatnonzero(s < 0)
        if len(miss):
            # brute force over the non-flat simplices for points on shared facets
            good = np.flatnonzero(self._ok)
            for i in miss:
                bary = self._barycentric(good, np.repeat(q[i:i + 1], len(good), axis=0))
                worst = bary.min(axis=1)
                j = int(np.argmax(worst))
                if worst[j] >= -_INSIDE_TOL:
                    s[i] = good[j]
        return s

    def _hull_planes(self):
        if self._hull is None:
            hull = ConvexHull(self.positions)
            self._hull = hull
        return self._hull

    def _project_to_hull(self, q):
        """Closest point on the hull boundary triangles for each row of ``q``."""
        hull = self._hull_planes()
        tris = self.positions[hull.simplices]            # (F, 3, 3)
        out = np.empty_like(q)
        for i, p in enumerate(q):
            cand = _closest_on_triangles(p, tris)
            d = np.einsum("ij,ij->i", cand - p, cand - p)
            out[i] = cand[int(np.argmin(d))]
        return out

    # -- public API ----------------------------------------------------------

    def weights(self, queries):
        q = np.atleast_2d(np.asarray(queries, dtype=float))
        n, m = len(q), len(self.positions)
        rows, cols, vals = [], [], []
        extrap = np.zeros(n, dtype=bool)

        # exact hits return the sample itself
        dist, nn = self.tree.query(q)
        exact = dist <= 1e-12 * max(self.scale, 1.0)

        if self.degenerate:
            inside = np.zeros(n, dtype=bool)
            s = np.full(n, -1)
        else:
            s = self._locate(q)
            inside = s >= 0
        todo = inside & ~exact
        if todo.any():
            b = self._barycentric(s[todo], q[todo])
            verts = self.tri.simplices[s[todo]]
            r = np.repeat(np.flatnonzero(todo), verts.shape[1])
            rows.append(r)
            cols.append(verts.ravel())
            vals.append(b.ravel())
        outside = ~inside & ~exact
        extrap[outside] = True
        if outside.any():
            idx = np.flatnonzero(outside)
            if self.extrapolation in ("project", "linear") and not self.degenerate:
                pq = self._project_to_hull(q[idx])
                s2 = self._locate(pq)
                ok = s2 >= 0
                if ok.any():
                    at = pq[ok] if self.extrapolation == "project" else q[idx[ok]]
                    b = self._barycentric(s2[ok], at)
                    verts = self.tri.simplices[s2[ok]]
                    rows.append(np.repeat(idx[ok], verts.shape[1]))
                    cols.append(verts.ravel())
                    vals.append(b.ravel())
                idx = idx[~ok]
            rows.append(idx)
            cols.append(nn[idx])
            vals.append(np.ones(len(idx)))
        ex = np.flatnonzero(exact)
        rows.append(ex)
        cols.append(nn[ex])
        vals.append(np.ones(len(ex)))
        mat = csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, m))
        return QueryWeights(matrix=mat, extrapolated=extrap)

    def __call__(self, values, queries):
        return self.weights(queries).apply(values)


def build_interpolant(positions, extrapolation="nearest"):
    return ScatteredInterpolant(positions, extrapolation)


def _closest_on_triangles(p, tris):
    """Closest point to ``p`` on each triangle of ``tris`` (F, 3, 3).

    Vectorised form of the region tests in Ericson, Real-Time Collision
    Detection, 5.1.5.
    """
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        out = a + ab * v[:, None] + ac * w[:, None]
        # edge regions
        t_ab = d1 / (d1 - d3)
        e_ab = a + ab * t_ab[:, None]
        t_ac = d2 / (d2 - d6)
        e_ac = a + ac * t_ac[:, None]
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        e_bc = b + (c - b) * t_bc[:, None]
    m_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    m_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    m_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    out = np.where(m_bc[:, None], e_bc, out)
    out = np.where(m_ac[:, None], e_ac, out)
    out = np.where(m_ab[:, None], e_ab, out)
    # vertex regions last so they win
    m_c = (d6 >= 0) & (d5 <= d6)
    m_b = (d3 >= 0) & (d4 <= d3)
    m_a = (d1 <= 0) & (d2 <= 0)
    out = np.where(m_c[:, None], c, out)
    out = np.where(m_b[:, None], b, out)
    out = np.where(m_a[:, None], a, out)
    return out
