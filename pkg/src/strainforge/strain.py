"""Constant-strain tetrahedra: deformation gradient, Green-Lagrange strain,
radial/circumferential/longitudinal projection and AHA-16 reporting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateElementError, DomainError, GeometryError, ValidationError
from .parallel import parallel_map

MIN_REF_VOLUME = 1e-6
AXIS_TOL = 1e-6
Z_MARGIN = 1.0
N_SEGMENTS = 16
COMPONENTS = ("Err", "Ecc", "Ell")
MAX_EXCLUDED_FRACTION = 0.01


def _edge_matrix(tet):
    # columns are the edges from node 0
    return np.swapaxes(tet[..., 1:, :] - tet[..., :1, :], -1, -2)


def deformation_gradient(ref_tet, def_tet, element_ids=None):
    """F = D R^-1 for one tet (4, 3) or a batch (M, 4, 3)."""
    ref = np.asarray(ref_tet, dtype=float)
    cur = np.asarray(def_tet, dtype=float)
    R = _edge_matrix(ref)
    vol = np.linalg.det(R) / 6.0
    bad = np.atleast_1d(np.abs(vol) < MIN_REF_VOLUME)
    if bad.any():
        ids = np.flatnonzero(bad) if element_ids is None else np.asarray(element_ids)[bad]
        raise DegenerateElementError(f"degenerate reference element(s) {ids[:10].tolist()}",
                                     elements=ids.tolist())
    D = _edge_matrix(cur)
    # F R = D  <=>  R^T F^T = D^T
    Ft = np.linalg.solve(np.swapaxes(R, -1, -2), np.swapaxes(D, -1, -2))
    return np.swapaxes(Ft, -1, -2)


def green_lagrange(F):
    F = np.asarray(F, dtype=float)
    C = np.swapaxes(F, -1, -2) @ F
    return 0.5 * (C - np.eye(3))


@dataclass(frozen=True)
class LocalDirections:
    radial: np.ndarray
    circumferential: np.ndarray
    longitudinal: np.ndarray


def local_directions(centroids):
    """Straight-axis cardiac directions about the LV +Z axis.

    Accepts one point (3,) or many (M, 3). A single on-axis point raises;
    for batches the on-axis rows come back as NaN (see ``valid_directions``).
    """
    c = np.asarray(centroids, dtype=float)
    single = c.ndim == 1
    c = np.atleast_2d(c)
    rxy = np.c_[c[:, 0], c[:, 1], np.zeros(len(c))]
    norm = np.linalg.norm(rxy, axis=1, keepdims=True)
    on_axis = norm[:, 0] < AXIS_TOL
    if single and on_axis[0]:
        raise GeometryError("element centroid lies on the long axis; directions undefined")
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(on_axis[:, None], np.nan, rxy / norm)
    l = np.tile([0.0, 0.0, 1.0], (len(c), 1))
    circ = np.cross(l, r)
    if single:
        return LocalDirections(r[0], circ[0], l[0])
    return LocalDirections(r, circ, l)


def valid_directions(dirs):
    return np.all(np.isfinite(dirs.radial), axis=-1)


def project_strain(E, dirs):
    """(Err, Ecc, Ell) as the quadratic forms d^T E d."""
    E = np.asarray(E, dtype=float)

    def q(d):
        return np.einsum("...i,...ij,...j->...", d, E, d)

    return q(dirs.radial), q(dirs.circumferential), q(dirs.longitudinal)


def _segment_index(theta, nsec):
    width = 360.0 / nsec
    # half-open (lo, hi]: an edge angle belongs to the lower-numbered sector
    k = np.ceil(theta / width).astype(int) - 1
    return np.clip(k, 0, nsec - 1)


def aha16_assign(centroids, z_base, z_apex, theta0=0.0, strict=True):
    """AHA-16 segment ids (1..16) for centroids in LV space.

    Thirds of equal z extent give basal (1-6), mid (7-12) and apical (13-16)
    rings; sectors run counter-clockwise viewed from the base starting at
    ``theta0`` degrees. With ``strict=False`` out-of-range points get 0.
    """
    if not z_base > z_apex:
        raise ValidationError("z_base must exceed z_apex")
    c = np.asarray(centroids, dtype=float)
    single = c.ndim == 1
    c = np.atleast_2d(c)
    z = c[:, 2]
    out_of_range = (z > z_base + Z_MARGIN) | (z < z_apex - Z_MARGIN)
    if strict and out_of_range.any():
        raise DomainError(f"{int(out_of_range.sum())} centroid(s) outside the base-apex z range")
    third = (z_base - z_apex) / 3.0
    theta = np.mod(np.degrees(np.arctan2(c[:, 1], c[:, 0])) - theta0, 360.0)
    seg = np.where(z >= z_base - third, 1 + _segment_index(theta, 6),
                   np.where(z >= z_base - 2 * third, 7 + _segment_index(theta, 6),
                            13 + _segment_index(theta, 4)))
    seg = np.where(out_of_range, 0, seg)
    return int(seg[0]) if single else seg


@dataclass
class SegmentReport:
    curves: np.ndarray            # (frames, 16, 3) volume-weighted means, NaN when empty
    counts: np.ndarray            # (16,) elements per segment
    peaks: np.ndarray             # (16, 3) max Err, min Ecc, min Ell
    peak_frames: np.ndarray       # (16, 3)
    global_peaks: np.ndarray      # (3,) mean of segment peaks
    segments: np.ndarray          # (M,) per-element id, 0 = excluded
    element_strain: np.ndarray    # (frames, M, 3)
    excluded: dict = field(default_factory=dict)

    @property
    def included(self):
        return int(np.sum(self.segments > 0))

    def excluded_fraction(self):
        return float(np.mean(self.segments == 0)) if len(self.segments) else 0.0


def element_strains(ref_nodes, tets, displacements):
    """(frames, M, 3, 3) Green-Lagrange tensors for every frame."""
    ref = ref_nodes[tets]

    def one(d):
        F = deformation_gradient(ref, (ref_nodes + d)[tets])
        return green_lagrange(F)

    return np.stack(parallel_map(one, list(displacements)))


def strain_curves(mesh, displacements, theta0=0.0):
    """Per-element strains projected on cardiac directions and reduced to
    AHA-16 segment curves and peaks."""
    disp = np.asarray(displacements, dtype=float)
    if disp.ndim != 3 or disp.shape[1:] != mesh.nodes.shape:
        raise ValidationError("displacements must cover every mesh node: (frames, nodes, 3)")
    nodes, tets = mesh.nodes, mesh.tets
    M = len(tets)
    vol = mesh.volumes()
    degenerate = np.abs(vol) < MIN_REF_VOLUME
    if degenerate.mean() >= MAX_EXCLUDED_FRACTION:
        raise DegenerateElementError(f"{int(degenerate.sum())} of {M} elements are degenerate",
                                     elements=np.flatnonzero(degenerate)[:20].tolist())
    good = ~degenerate
    cent = mesh.centroids()
    dirs = local_directions(cent)
    on_axis = ~valid_directions(dirs)
    z = nodes[:, 2]
    seg = aha16_assign(cent, float(z.max()), float(z.min()), theta0, strict=False)
    out_of_range = seg == 0
    seg = np.where(on_axis | degenerate, 0, seg)

    E = np.full((disp.shape[0], M, 3, 3), np.nan)
    E[:, good] = element_strains(nodes, tets[good], disp)
    Err, Ecc, Ell = project_strain(E, dirs)
    comp = np.stack([Err, Ecc, Ell], axis=-1)          # (frames, M, 3)

    inc = seg > 0
    w = np.where(inc, vol, 0.0)
    wsum = np.bincount(seg[inc], weights=w[inc], minlength=N_SEGMENTS + 1)[1:]
    counts = np.bincount(seg[inc], minlength=N_SEGMENTS + 1)[1:]
    curves = np.full((disp.shape[0], N_SEGMENTS, 3), np.nan)
    for t in range(disp.shape[0]):
        for k in range(3):
            s = np.bincount(seg[inc], weights=(w * comp[t, :, k])[inc],
                            minlength=N_SEGMENTS + 1)[1:]
            with np.errstate(invalid="ignore", divide="ignore"):
                curves[t, :, k] = np.where(counts > 0, s / np.where(wsum > 0, wsum, 1.0), np.nan)

    peaks = np.full((N_SEGMENTS, 3), np.nan)
    peak_frames = np.full((N_SEGMENTS, 3), -1)
    has = counts > 0
    if has.any():
        peak_frames[has, 0] = np.argmax(curves[:, has, 0], axis=0)
        peak_frames[has, 1] = np.argmin(curves[:, has, 1], axis=0)
        peak_frames[has, 2] = np.argmin(curves[:, has, 2], axis=0)
        for k in range(3):
            peaks[has, k] = curves[peak_frames[has, k], np.flatnonzero(has), k]
    global_peaks = np.nanmean(peaks, axis=0) if has.any() else np.full(3, np.nan)
    return SegmentReport(
        curves=curves, counts=counts, peaks=peaks, peak_frames=peak_frames,
        global_peaks=global_peaks, segments=seg, element_strain=comp,
        excluded={"degenerate": int(degenerate.sum()), "on_axis": int((on_axis & good).sum()),
                  "out_of_range": int((out_of_range & good & ~on_axis).sum())},
    )
