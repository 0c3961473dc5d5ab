"""Study bundles: per-view DICOM-style geometry, ED contours and tracked
in-plane displacements, plus the patient-to-LV rigid frame.

A bundle is a directory holding ``study.json``. Geometry is in mm, contours and
displacements in (row, col) pixels. Each ROI in ``contours`` is either a single
polyline ``[[r, c], ...]`` or a list of polylines (long-axis views cut the wall
twice). Tracked points are ordered endo parts first, then epi parts.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import BundleIOError, GeometryError, ValidationError

VIEW_KINDS = ("SAX", "4CH", "2CH")
ROIS = ("endo", "epi")
APEX_CLOSURES = ("fan", "flat")
_ORTHO_TOL = 1e-9
_MAX_NORMAL_SPREAD_DEG = 5.0


@dataclass(frozen=True)
class ViewGeometry:
    origin: np.ndarray
    row_dir: np.ndarray
    col_dir: np.ndarray
    row_spacing: float
    col_spacing: float
    rows: int
    cols: int

    def __post_init__(self):
        for name in ("origin", "row_dir", "col_dir"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (3,) or not np.all(np.isfinite(v)):
                raise ValidationError(f"geometry.{name} must be a finite 3-vector")
            object.__setattr__(self, name, v)
        for name in ("row_dir", "col_dir"):
            if abs(np.linalg.norm(getattr(self, name)) - 1.0) > _ORTHO_TOL:
                raise GeometryError(f"geometry.{name} is not unit length", field=name)
        if abs(float(self.row_dir @ self.col_dir)) > _ORTHO_TOL:
            raise GeometryError("geometry.row_dir and col_dir are not orthogonal")
        if not (self.row_spacing > 0 and self.col_spacing > 0):
            raise ValidationError("geometry spacings must be positive")
        if int(self.rows) < 1 or int(self.cols) < 1:
            raise ValidationError("geometry rows/cols must be positive")

    @property
    def normal(self):
        return np.cross(self.row_dir, self.col_dir)

    def pixel_to_patient(self, p):
        """Map (row, col) pixel coordinates, shape (..., 2), to patient mm."""
        p = np.asarray(p, dtype=float)
        return (self.origin
                + (p[..., 0:1] * self.row_spacing) * self.row_dir
                + (p[..., 1:2] * self.col_spacing) * self.col_dir)

    def displacement_to_patient(self, d):
        d = np.asarray(d, dtype=float)
        return ((d[..., 0:1] * self.row_spacing) * self.row_dir
                + (d[..., 1:2] * self.col_spacing) * self.col_dir)

    def patient_to_displacement(self, v):
        """Inverse of displacement_to_patient for the in-plane part of ``v``."""
        v = np.asarray(v, dtype=float)
        return np.stack([v @ self.row_dir / self.row_spacing,
                         v @ self.col_dir / self.col_spacing], axis=-1)

    def patient_to_pixel(self, x):
        return self.patient_to_displacement(np.asarray(x, dtype=float) - self.origin)


def pixel_to_patient(geom, p):
    return geom.pixel_to_patient(p)


def inplane_displacement_to_patient(geom, d):
    return geom.displacement_to_patient(d)


@dataclass(frozen=True)
class TrackedView:
    kind: str
    geometry: ViewGeometry
    contours: dict          # roi -> list of (k, 2) arrays, in pixels
    displacements: np.ndarray  # (frames, points, 2), pixels
    slice_index: int = 0

    def __post_init__(self):
        if self.kind not in VIEW_KINDS:
            raise ValidationError(f"view kind must be one of {VIEW_KINDS}, got {self.kind!r}")
        d = np.asarray(self.displacements, dtype=float)
        object.__setattr__(self, "displacements", d)
        npts = self.n_points
        if d.ndim != 3 or d.shape[1:] != (npts, 2):
            raise ValidationError(
                f"displacements must have shape [frames][{npts}][2], got {list(d.shape)}",
                field="displacements")
        if d.shape[0] < 1:
            raise ValidationError("a view needs at least one frame", field="frames")
        if not np.all(np.isfinite(d)):
            raise ValidationError("displacements must be finite", field="displacements")
        if np.any(d[0] != 0.0):
            raise ValidationError("frame 0 displacements must be exactly zero (ED reference)",
                                  field="displacements[0]")

    @property
    def frames(self):
        return self.displacements.shape[0]

    @property
    def n_points(self):
        return sum(len(part) for roi in ROIS for part in self.contours.get(roi, []))

    def parts(self):
        """Yield (roi, part_index, points (k, 2), slice into the point axis)."""
        start = 0
        for roi in ROIS:
            for k, part in enumerate(self.contours.get(roi, [])):
                yield roi, k, part, slice(start, start + len(part))
                start += len(part)

    def points(self):
        return np.vstack([p for _, _, p, _ in self.parts()])

    def patient_points(self):
        return self.geometry.pixel_to_patient(self.points())

    def patient_displacements(self):
        """(frames, points, 3) displacements in patient mm."""
        return self.geometry.displacement_to_patient(self.displacements)


@dataclass(frozen=True)
class Study:
    views: tuple
    apex_closure: str | None = None

    @property
    def frames(self):
        return self.views[0].frames

    @property
    def sax_views(self):
        return [v for v in self.views if v.kind == "SAX"]

    @property
    def lax_views(self):
        return [v for v in self.views if v.kind != "SAX"]


@dataclass(frozen=True)
class LvFrame:
    """Rigid map patient -> LV space: ``rotation @ (p - center)``."""

    center: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        c = np.asarray(self.center, dtype=float)
        if R.shape != (3, 3) or np.abs(R @ R.T - np.eye(3)).max() > 1e-9 \
                or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise GeometryError("LV frame rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "center", c)

    def to_lv(self, p):
        return (np.asarray(p, dtype=float) - self.center) @ self.rotation.T

    def vector_to_lv(self, d):
        return np.asarray(d, dtype=float) @ self.rotation.T

    def from_lv(self, q):
        return np.asarray(q, dtype=float) @ self.rotation + self.center

    def to_dict(self):
        return {"center": self.center.tolist(), "rotation": self.rotation.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["center"], float), np.asarray(d["rotation"], float))


def to_lv_space(frame, p):
    return frame.to_lv(p)


# --- bundle I/O --------------------------------------------------------------

def _require(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise ValidationError(f"missing field {where}.{key}", field=f"{where}.{key}")
    return obj[key]


def _parse_parts(value, where):
    arr = value
    if not isinstance(arr, list) or not arr:
        raise ValidationError(f"{where} must be a non-empty list", field=where)
    # single polyline [[r, c], ...] vs list of polylines [[[r, c], ...], ...]
    nested = isinstance(arr[0], list) and arr[0] and isinstance(arr[0][0], list)
    polylines = arr if nested else [arr]
    parts = []
    for k, pl in enumerate(polylines):
        try:
            pts = np.asarray(pl, dtype=float)
        except (TypeError, ValueError):
            raise ValidationError(f"{where}[{k}] is not a numeric point list", field=where)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValidationError(f"{where}[{k}] must be a list of [row, col] pairs", field=where)
        if len(pts) < 3:
            raise ValidationError(f"{where}[{k}] needs at least 3 points", field=where)
        if not np.all(np.isfinite(pts)):
            raise ValidationError(f"{where}[{k}] has non-finite coordinates", field=where)
        parts.append(pts)
    return parts


def _parse_view(v, i):
    where = f"views[{i}]"
    if not isinstance(v, dict):
        raise ValidationError(f"{where} must be an object", field=where)
    allowed = {"kind", "slice_index", "geometry", "contours", "frames", "displacements"}
    unknown = set(v) - allowed
    if unknown:
        raise ValidationError(f"{where} has unknown keys {sorted(unknown)}", field=where)
    kind = _require(v, "kind", where)
    g = _require(v, "geometry", where)
    try:
        geom = ViewGeometry(
            origin=_require(g, "origin", where + ".geometry"),
            row_dir=_require(g, "row_dir", where + ".geometry"),
            col_dir=_require(g, "col_dir", where + ".geometry"),
            row_spacing=float(_require(g, "row_spacing", where + ".geometry")),
            col_spacing=float(_require(g, "col_spacing", where + ".geometry")),
            rows=int(_require(g, "rows", where + ".geometry")),
            cols=int(_require(g, "cols", where + ".geometry")),
        )
    except GeometryError as exc:
        raise GeometryError(f"{where}: {exc}", field=f"{where}.geometry") from None
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}.geometry: {exc}", field=f"{where}.geometry") from None
    c = _require(v, "contours", where)
    if not isinstance(c, dict) or set(c) - set(ROIS) or not c:
        raise ValidationError(f"{where}.contours must map 'endo'/'epi' to point lists",
                              field=f"{where}.contours")
    contours = {roi: _parse_parts(c[roi], f"{where}.contours.{roi}") for roi in ROIS if roi in c}
    frames = _require(v, "frames", where)
    disp = _require(v, "displacements", where)
    if not isinstance(frames, int) or frames < 1:
        raise ValidationError(f"{where}.frames must be a positive integer", field=f"{where}.frames")
    try:
        d = np.asarray(disp, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError(f"{where}.displacements is ragged or non-numeric",
                              field=f"{where}.displacements") from None
    if d.ndim != 3 or d.shape[0] != frames:
        raise ValidationError(f"{where}.displacements must have {frames} frames",
                              field=f"{where}.displacements")
    try:
        return TrackedView(kind=kind, geometry=geom, contours=contours, displacements=d,
                           slice_index=int(v.get("slice_index", 0)))
    except ValidationError as exc:
        raise type(exc)(f"{where}: {exc}", **exc.context) from None


def study_from_dict(data):
    if not isinstance(data, dict):
        raise ValidationError("study.json must hold an object")
    unknown = set(data) - {"views", "apex_closure"}
    if unknown:
        raise ValidationError(f"unknown top-level keys {sorted(unknown)}")
    views = _require(data, "views", "study")
    if not isinstance(views, list) or not views:
        raise ValidationError("study.views must be a non-empty list", field="views")
    parsed = tuple(_parse_view(v, i) for i, v in enumerate(views))
    frames = {v.frames for v in parsed}
    if len(frames) != 1:
        raise ValidationError(f"all views must share the frame count, got {sorted(frames)}",
                              field="frames")
    apex = data.get("apex_closure")
    if apex is not None and apex not in APEX_CLOSURES:
        raise ValidationError(f"apex_closure must be one of {APEX_CLOSURES}", field="apex_closure")
    return Study(views=parsed, apex_closure=apex)


def study_to_dict(study):
    views = []
    for v in study.views:
        g = v.geometry
        contours = {}
        for roi in ROIS:
            if roi in v.contours:
                parts = [p.tolist() for p in v.contours[roi]]
                contours[roi] = parts[0] if len(parts) == 1 else parts
        views.append({
            "kind": v.kind,
            "slice_index": int(v.slice_index),
            "geometry": {
                "origin": g.origin.tolist(), "row_dir": g.row_dir.tolist(),
                "col_dir": g.col_dir.tolist(), "row_spacing": float(g.row_spacing),
                "col_spacing": float(g.col_spacing), "rows": int(g.rows), "cols": int(g.cols),
            },
            "contours": contours,
            "frames": int(v.frames),
            "displacements": v.displacements.tolist(),
        })
    out = {"views": views}
    if study.apex_closure is not None:
        out["apex_closure"] = study.apex_closure
    return out


def _study_file(path):
    path = os.fspath(path)
    return os.path.join(path, "study.json") if os.path.isdir(path) else path


def load_study(path):
    fname = _study_file(path)
    try:
        with open(fname, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise BundleIOError(f"study bundle not found: {fname}", path=fname) from None
    except OSError as exc:
        raise BundleIOError(f"cannot read {fname}: {exc}", path=fname) from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{fname} is not valid JSON: {exc}", path=fname) from None
    return study_from_dict(data)


def save_study(study, path):
    os.makedirs(path, exist_ok=True)
    fname = os.path.join(path, "study.json")
    try:
        with open(fname, "w", encoding="utf-8") as fh:
            json.dump(study_to_dict(study), fh, separators=(",", ":"))
            fh.write("\n")
    except OSError as exc:
        raise BundleIOError(f"cannot write {fname}: {exc}", path=fname) from None
    return fname


# --- LV frame ----------------------------------------------------------------

def _polygon_area(pts_mm, normal):
    # area of a closed planar polygon via the vector shoelace formula
    s = np.cross(pts_mm, np.roll(pts_mm, -1, axis=0)).sum(axis=0)
    return 0.5 * abs(float(s @ normal))


def build_lv_frame(study, x_hint=None):
    """LV-centred frame: origin at the mean ED contour point, +Z along the SAX
    normal pointing to the base, +X along the 4CH in-plane transverse axis.

    ``x_hint`` (patient-space vector) overrides the 4CH convention.
    """
    sax = study.sax_views
    if len(sax) < 2:
        raise GeometryError(f"need at least 2 SAX slices to build the LV frame, got {len(sax)}")
    normals = [v.geometry.normal for v in sax]
    ref = normals[0]
    normals = [n if n @ ref >= 0 else -n for n in normals]
    for n in normals:
        ang = np.degrees(np.arccos(np.clip(n @ ref, -1.0, 1.0)))
        if ang > _MAX_NORMAL_SPREAD_DEG:
            raise GeometryError(f"SAX slice normals disagree by {ang:.2f} deg")
    z = np.mean(normals, axis=0)
    z /= np.linalg.norm(z)

    # basal end = lowest slice_index; fall back to the larger mean contour area
    heights = np.array([np.mean(v.patient_points() @ z) for v in sax])
    idx = np.array([v.slice_index for v in sax])
    lo, hi = int(np.argmin(heights)), int(np.argmax(heights))
    if len(set(idx.tolist())) == len(idx) and idx[lo] != idx[hi]:
        basal_is_high = idx[hi] < idx[lo]
    else:
        def area(v):
            pts = v.geometry.pixel_to_patient(v.contours.get("epi", v.contours.get("endo"))[0])
            return _polygon_area(pts, z)
        basal_is_high = area(sax[hi]) >= area(sax[lo])
    if not basal_is_high:
        z = -z

    if x_hint is not None:
        cand = np.asarray(x_hint, dtype=float)
    else:
        ch4 = [v for v in study.lax_views if v.kind == "4CH"]
        cand = None
        if ch4:
            g = ch4[0].geometry
            # of the two in-plane axes, the one crossing the long axis
            cand = g.row_dir if abs(g.row_dir @ z) < abs(g.col_dir @ z) else g.col_dir
    x = None
    for c in ([cand] if cand is not None else []) + [np.array([1.0, 0, 0]), np.array([0, 1.0, 0])]:
        proj = c - (c @ z) * z
        if np.linalg.norm(proj) > 1e-6:
            x = proj / np.linalg.norm(proj)
            break
    y = np.cross(z, x)
    R = np.vstack([x, y, z])
    center = np.vstack([v.patient_points() for v in study.views]).mean(axis=0)
    return LvFrame(center=center, rotation=R)
