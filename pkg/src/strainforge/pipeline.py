"""Stage orchestration: reconstruct -> fuse -> strain -> report.

Every stage reads its inputs from the bundle and the output directory and
writes its artifacts back there, so running the stages one by one produces
the same files as :func:`run_pipeline`.
"""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import glob
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import BundleIOError, NumericError, StrainforgeError, ValidationError
from .fusion import WEIGHTING_MODES, assemble_samples, deform_mesh
from .interpolation import EXTRAPOLATION_MODES
from .mesh import load_external_mesh, mesh_quality, tetrahedralize, write_mesh
from .pointcloud import build_point_cloud
from .registration import align_peak_times
from .strain import COMPONENTS, N_SEGMENTS, strain_curves
from .study import LvFrame, Study, load_study
from .vtkio import read_vtk

log = logging.getLogger(__name__)

MAX_EXTRAPOLATED_FRACTION = 0.20
MAX_EXCLUDED_FRACTION = 0.01

MESH_FILE = "mesh.vtk"
FRAME_FILE = "lv_frame.json"
QUALITY_FILE = "mesh_quality.json"
FUSION_FILE = "fusion.json"
STRAIN_FILE = "strain_summary.json"
CURVES_CSV = "strain_curves.csv"
PEAKS_CSV = "segment_peaks.csv"
REPORT_FILE = "report.json"
FRAMES_DIR = "frames"


# --- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    bundle: str = ""
    out_dir: str = "out"
    ring_samples: int = 64
    lax_samples: int = 64
    layers: int = 3
    centripetal: bool = False
    apex_closure: str | None = None      # None: take the bundle's, else "fan"
    weighting: str = "global"
    extrapolation: str = "nearest"
    theta0: float = 0.0
    x_hint: tuple | None = None
    align_peaks: bool = False
    figures: bool = True
    # registration, used by the track stage
    alpha: float = 0.01
    levels: int = 2
    control_spacing: float = 8.0
    max_iterations: int = 200
    # phantom overrides (Ri, Ro, h, frames)
    preset: dict = field(default_factory=dict)

    def __post_init__(self):
        def rng(name, lo, hi):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not lo <= v <= hi:
                raise ValidationError(f"config {name}={v!r} outside [{lo}, {hi}]", field=name)

        rng("ring_samples", 8, 4096)
        rng("lax_samples", 4, 4096)
        rng("layers", 1, 32)
        rng("theta0", -360.0, 360.0)
        rng("alpha", 0.0, 1e6)
        rng("levels", 1, 6)
        rng("control_spacing", 1.0, 1024.0)
        rng("max_iterations", 1, 100000)
        for name in ("ring_samples", "lax_samples", "layers", "levels", "max_iterations"):
            if int(getattr(self, name)) != getattr(self, name):
                raise ValidationError(f"config {name} must be an integer", field=name)
        if self.weighting not in WEIGHTING_MODES:
            raise ValidationError(f"weighting must be one of {WEIGHTING_MODES}", field="weighting")
        if self.extrapolation not in EXTRAPOLATION_MODES:
            raise ValidationError(f"extrapolation must be one of {EXTRAPOLATION_MODES}",
                                  field="extrapolation")
        if self.apex_closure not in (None, "fan", "flat"):
            raise ValidationError("apex_closure must be 'fan' or 'flat'", field="apex_closure")
        if self.x_hint is not None:
            h = np.asarray(self.x_hint, dtype=float)
            if h.shape != (3,) or not np.all(np.isfinite(h)) or np.linalg.norm(h) == 0:
                raise ValidationError("x_hint must be a non-zero 3-vector", field="x_hint")
            object.__setattr__(self, "x_hint", tuple(float(v) for v in h))
        unknown = set(self.preset) - {"Ri", "Ro", "h", "frames"}
        if unknown:
            raise ValidationError(f"unknown preset override(s) {sorted(unknown)}", field="preset")

    @classmethod
    def from_dict(cls, data, **overrides):
        if not isinstance(data, dict):
            raise ValidationError("config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = (set(data) | set(overrides)) - names
        if unknown:
            raise ValidationError(f"unknown config key(s) {sorted(unknown)}", keys=sorted(unknown))
        merged = dict(data)
        merged.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**merged)

    def to_dict(self):
        return dataclasses.asdict(self)

    def path(self, *parts):
        return os.path.join(self.out_dir, *parts)


def load_config(path, **overrides):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise BundleIOError(f"cannot read config {path}: {exc}", path=str(path)) from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}", path=str(path)) from None
    return PipelineConfig.from_dict(data, **overrides)


# --- errors ------------------------------------------------------------------

@contextlib.contextmanager
def stage(name):
    """Tag escaping errors with the stage name; map foreign errors onto exit codes."""
    try:
        yield
    except StrainforgeError as exc:
        exc.context.setdefault("stage", name)
        raise
    except OSError as exc:
        raise BundleIOError(str(exc), stage=name) from exc
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        raise NumericError(str(exc), stage=name) from exc


# --- small file helpers ------------------------------------------------------

def _write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise BundleIOError(f"missing stage input {path}; run the previous stage first",
                            path=str(path)) from None


def _num(v):
    return "nan" if not np.isfinite(v) else repr(float(v))


def _frame_path(cfg, t):
    return cfg.path(FRAMES_DIR, f"frame_{t:03d}.vtk")


def _frame_files(cfg):
    files = sorted(glob.glob(cfg.path(FRAMES_DIR, "frame_*.vtk")))
    if not files:
        raise BundleIOError(f"no frame files in {cfg.path(FRAMES_DIR)}; run the fuse stage first")
    return files


# --- peak-time alignment -----------------------------------------------------

def _signed_area(pts):
    # polygon area in the view's pixel plane (pixels^2)
    r, c = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(r * np.roll(c, -1) - np.roll(r, -1) * c))


def contraction_curve(view):
    """Area change of the closed endocardial outline over the cycle (px^2).

    LAX endocardium given as several open parts is closed by joining the
    parts in order.
    """
    sl = [s for roi, _, _, s in view.parts() if roi == "endo"]
    if not sl:
        raise ValidationError("view has no endocardial contour for peak alignment")
    pts = view.points()
    idx = np.concatenate([np.arange(pts.shape[0])[s] for s in sl])
    a0 = abs(_signed_area(pts[idx]))
    return np.array([abs(_signed_area(pts[idx] + d[idx])) - a0 for d in view.displacements])


def align_study(study):
    """Circularly shift every non-SAX view so its peak matches the SAX peak.

    Frame 0 stays the ED reference; the remaining frames rotate among
    themselves. Returns the new study and the per-view shifts.
    """
    sax = study.sax_views
    curves = {"SAX": np.sum([contraction_curve(v) for v in sax], axis=0)}
    for i, v in enumerate(study.views):
        if v.kind != "SAX":
            curves[f"{i}:{v.kind}"] = contraction_curve(v)
    shifts = align_peak_times(curves, "SAX")
    views = []
    for i, v in enumerate(study.views):
        k = shifts.get(f"{i}:{v.kind}", 0)
        if k:
            d = v.displacements.copy()
            d[1:] = np.roll(d[1:], k, axis=0)
            v = dataclasses.replace(v, displacements=d)
        views.append(v)
    return Study(views=tuple(views), apex_closure=study.apex_closure), shifts


# --- stages ------------------------------------------------------------------

def _load(cfg):
    study = load_study(cfg.bundle)
    if cfg.align_peaks:
        study, shifts = align_study(study)
        log.info("peak alignment shifts: %s", shifts)
    return study


def _closure(cfg, study):
    return cfg.apex_closure or study.apex_closure or "fan"


def reconstruct(cfg):
    """Point cloud and tet mesh in LV space -> mesh.vtk, lv_frame.json, mesh_quality.json."""
    with stage("reconstruct"):
        study = _load(cfg)
        cloud = build_point_cloud(study, cfg.ring_samples, cfg.lax_samples, cfg.centripetal,
                                  x_hint=cfg.x_hint)
        mesh = tetrahedralize(cloud.endo_rings(), cloud.epi_rings(), cfg.layers,
                              _closure(cfg, study))
        os.makedirs(cfg.out_dir, exist_ok=True)
        write_mesh(cfg.path(MESH_FILE), mesh)
        _write_json(cfg.path(FRAME_FILE), cloud.frame.to_dict())
        quality = mesh_quality(mesh)
        _write_json(cfg.path(QUALITY_FILE), quality)
        return {"mesh": MESH_FILE, "quality": quality}


def fuse(cfg):
    """Per-frame fused nodal displacements -> frames/frame_TTT.vtk, fusion.json."""
    with stage("fuse"):
        study = _load(cfg)
        mesh = load_external_mesh(cfg.path(MESH_FILE))
        frame = LvFrame.from_dict(_read_json(cfg.path(FRAME_FILE)))
        cloud = build_point_cloud(study, cfg.ring_samples, cfg.lax_samples, cfg.centripetal,
                                  lv_frame=frame)
        sax, lax = assemble_samples(cloud)
        motion = deform_mesh(mesh, sax, lax, cfg.weighting, cfg.extrapolation)
        os.makedirs(cfg.path(FRAMES_DIR), exist_ok=True)
        for old in glob.glob(cfg.path(FRAMES_DIR, "frame_*.vtk")):
            os.remove(old)
        ex = motion.node_extrapolated().astype(float)
        for t in range(motion.frames):
            write_mesh(_frame_path(cfg, t), mesh,
                       point_data={"displacement": motion.displacements[t], "extrapolated": ex})
        w = motion.weights
        summary = {
            "frames": motion.frames,
            "extrapolated_fraction": float(ex.mean()),
            "extrapolated_fraction_per_axis": motion.extrapolated.mean(axis=0).tolist(),
            "weighting": cfg.weighting,
            "extrapolation": cfg.extrapolation,
            "weights_degenerate": w.degenerate,
            "w_min": float(np.min(w.w_min)),
            "w_max": float(np.max(w.w_max)),
        }
        _write_json(cfg.path(FUSION_FILE), summary)
        return summary


def _read_displacements(cfg, n_nodes):
    out = []
    for path in _frame_files(cfg):
        _, _, _, pdata, _ = read_vtk(path)
        if "displacement" not in pdata or pdata["displacement"].shape != (n_nodes, 3):
            raise ValidationError(f"{path} lacks a displacement field matching the mesh")
        out.append(pdata["displacement"])
    return np.stack(out)


def strain(cfg):
    """Element strains and AHA-16 curves -> strain fields on the frame VTKs and CSVs."""
    with stage("strain"):
        mesh = load_external_mesh(cfg.path(MESH_FILE))
        disp = _read_displacements(cfg, mesh.n_nodes)
        _, _, _, pdata0, _ = read_vtk(_frame_files(cfg)[0])
        extrap = pdata0.get("extrapolated", np.zeros(mesh.n_nodes))
        rep = strain_curves(mesh, disp, cfg.theta0)
        seg = rep.segments.astype(float)
        for t in range(disp.shape[0]):
            cd = {name: rep.element_strain[t, :, k] for k, name in enumerate(COMPONENTS)}
            cd["segment"] = seg
            write_mesh(_frame_path(cfg, t), mesh,
                       point_data={"displacement": disp[t], "extrapolated": extrap}, cell_data=cd)
        with open(cfg.path(CURVES_CSV), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame", "segment", *COMPONENTS])
            for t in range(rep.curves.shape[0]):
                for s in range(N_SEGMENTS):
                    w.writerow([t, s + 1, *(_num(v) for v in rep.curves[t, s])])
        with open(cfg.path(PEAKS_CSV), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["segment", *(f"peak_{c}" for c in COMPONENTS),
                        *(f"peak_frame_{c}" for c in COMPONENTS)])
            for s in range(N_SEGMENTS):
                w.writerow([s + 1, *(_num(v) for v in rep.peaks[s]),
                            *(int(v) for v in rep.peak_frames[s])])
        summary = {
            "global_peaks": dict(zip(COMPONENTS, (float(v) for v in rep.global_peaks))),
            "excluded_fraction": rep.excluded_fraction(),
            "excluded": rep.excluded,
            "elements": int(len(rep.segments)),
            "segment_elements": rep.counts.astype(int).tolist(),
            "theta0": cfg.theta0,
        }
        _write_json(cfg.path(STRAIN_FILE), summary)
        return rep, summary


def read_curves_csv(path):
    """(frames, 16, 3) array from a strain_curves.csv."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            rows.append((int(r["frame"]), int(r["segment"]), *(float(r[c]) for c in COMPONENTS)))
    T = max(r[0] for r in rows) + 1
    out = np.full((T, N_SEGMENTS, 3), np.nan)
    for t, s, *v in rows:
        out[t, s - 1] = v
    return out


def read_peaks_csv(path):
    peaks = np.full((N_SEGMENTS, 3), np.nan)
    with open(path, encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            peaks[int(r["segment"]) - 1] = [float(r[f"peak_{c}"]) for c in COMPONENTS]
    return peaks


def qc_flags(extrapolated_fraction, excluded_fraction):
    flags = []
    if extrapolated_fraction > MAX_EXTRAPOLATED_FRACTION:
        flags.append("extrapolated_nodes")
    if excluded_fraction > MAX_EXCLUDED_FRACTION:
        flags.append("excluded_elements")
    return {"status": "degraded" if flags else "ok", "flags": flags}


def report(cfg):
    """report.json plus PNG figures next to the CSVs."""
    with stage("report"):
        quality = _read_json(cfg.path(QUALITY_FILE))
        fusion = _read_json(cfg.path(FUSION_FILE))
        st = _read_json(cfg.path(STRAIN_FILE))
        artifacts = [MESH_FILE, CURVES_CSV, PEAKS_CSV]
        artifacts += [os.path.relpath(p, cfg.out_dir) for p in _frame_files(cfg)]
        if cfg.figures:
            from .plotting import plot_segment_peaks, plot_strain_curves

            plot_strain_curves(cfg.path("strain_curves.png"), read_curves_csv(cfg.path(CURVES_CSV)))
            plot_segment_peaks(cfg.path("segment_peaks.png"), read_peaks_csv(cfg.path(PEAKS_CSV)))
            artifacts += ["strain_curves.png", "segment_peaks.png"]
        rep = {
            "global_peaks": st["global_peaks"],
            "frames": fusion["frames"],
            "extrapolated_fraction": fusion["extrapolated_fraction"],
            "excluded_fraction": st["excluded_fraction"],
            "excluded": st["excluded"],
            "fusion": {k: fusion[k] for k in ("weighting", "extrapolation", "weights_degenerate",
                                              "w_min", "w_max")},
            "mesh_quality": quality,
            "qc": qc_flags(fusion["extrapolated_fraction"], st["excluded_fraction"]),
            "artifacts": sorted(artifacts),
        }
        _write_json(cfg.path(REPORT_FILE), rep)
        return rep


@dataclass(frozen=True)
class RunReport:
    out_dir: str
    artifacts: list
    global_peaks: dict
    qc: dict
    report: dict


def run_pipeline(cfg):
    reconstruct(cfg)
    fuse(cfg)
    strain(cfg)
    rep = report(cfg)
    return RunReport(out_dir=cfg.out_dir, artifacts=rep["artifacts"],
                     global_peaks=rep["global_peaks"], qc=rep["qc"], report=rep)


def cohort_summary(reports):
    """Mean and population SD of the global peaks over report dicts or paths."""
    reports = list(reports)
    if not reports:
        raise ValidationError("cohort summary needs at least one report")
    peaks = []
    for r in reports:
        if not isinstance(r, dict):
            with stage("cohort"):
                r = _read_json(r)
        try:
            peaks.append([float(r["global_peaks"][c]) for c in COMPONENTS])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"report lacks global_peaks: {exc}", stage="cohort") from None
    a = np.array(peaks)
    return {"n": len(a),
            "mean": dict(zip(COMPONENTS, a.mean(axis=0).tolist())),
            "sd": dict(zip(COMPONENTS, a.std(axis=0, ddof=0).tolist()))}
