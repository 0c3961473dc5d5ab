"""LV-space point clouds: up-sampled SAX rings and LAX curves with their
carried displacements, ready for meshing and for the scattered interpolants."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contours import ContourRing, align_ring, resample_with_displacements
from .errors import ValidationError
from .study import build_lv_frame

DEFAULT_RING_SAMPLES = 64
DEFAULT_LAX_SAMPLES = 64


@dataclass(frozen=True)
class LvPointCloud:
    frame: object            # LvFrame
    sax_endo: list           # ContourRing per slice, base -> apex
    sax_epi: list
    lax_curves: list         # ContourRing per LAX contour part
    frames: int

    def endo_rings(self):
        return [r.points for r in self.sax_endo]

    def epi_rings(self):
        return [r.points for r in self.sax_epi]

    def sax_samples(self):
        """Positions (n, 3) and in-plane X/Y displacements (frames, n, 2)."""
        rings = self.sax_endo + self.sax_epi
        pos = np.vstack([r.points for r in rings])
        disp = np.concatenate([r.displacements[..., :2] for r in rings], axis=1)
        return pos, disp

    def lax_samples(self):
        """Positions (n, 3) and X/Y/Z displacements (frames, n, 3)."""
        if not self.lax_curves:
            raise ValidationError("study has no long-axis views")
        pos = np.vstack([r.points for r in self.lax_curves])
        disp = np.concatenate([r.displacements for r in self.lax_curves], axis=1)
        return pos, disp


def build_point_cloud(study, ring_samples=DEFAULT_RING_SAMPLES, lax_samples=DEFAULT_LAX_SAMPLES,
                      centripetal=False, lv_frame=None, x_hint=None):
    frame = lv_frame if lv_frame is not None else build_lv_frame(study, x_hint=x_hint)
    endo, epi, heights = [], [], []
    for v in study.sax_views:
        pts = frame.to_lv(v.patient_points())
        disp = frame.vector_to_lv(v.patient_displacements())
        rings = {}
        for roi, k, _, sl in v.parts():
            if k > 0:
                raise ValidationError(f"SAX slice {v.slice_index}: {roi} must be a single closed contour")
            ring = ContourRing(pts[sl], closed=True, roi=roi, slice_tag=v.slice_index,
                               displacements=disp[:, sl])
            res = resample_with_displacements(ring, ring_samples, centripetal)
            rings[roi] = align_ring(res, axis_origin=res.points[:, :2].mean(axis=0))
        if set(rings) != {"endo", "epi"}:
            raise ValidationError(f"SAX slice {v.slice_index} needs both endo and epi contours")
        endo.append(rings["endo"])
        epi.append(rings["epi"])
        heights.append(float(pts[:, 2].mean()))
    order = np.argsort(heights)[::-1]
    endo = [endo[i] for i in order]
    epi = [epi[i] for i in order]

    lax = []
    for v in study.lax_views:
        pts = frame.to_lv(v.patient_points())
        disp = frame.vector_to_lv(v.patient_displacements())
        for roi, k, _, sl in v.parts():
            ring = ContourRing(pts[sl], closed=False, roi=roi, slice_tag=k,
                               displacements=disp[:, sl])
            lax.append(resample_with_displacements(ring, lax_samples, centripetal))
    return LvPointCloud(frame=frame, sax_endo=endo, sax_epi=epi, lax_curves=lax,
                        frames=study.frames)
