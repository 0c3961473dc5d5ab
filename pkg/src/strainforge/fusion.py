"""Multi-view displacement fusion onto mesh nodes.

The longitudinal (Z) component comes only from the long-axis interpolant.
In-plane components blend short- and long-axis estimates with a per-node
weight that grows with the node's longitudinal displacement:

    W = w / (w_min - w_max), clamped to [0, 1]
    u = (1 - W) * u_sax + W * u_lax
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ValidationError
from .interpolation import ScatteredInterpolant
from .parallel import parallel_map

WEIGHTING_MODES = ("global", "per-point")
# spans of longitudinal motion below this (mm) are treated as no motion
W_SPAN_FLOOR = 1e-9


@dataclass(frozen=True)
class ScatteredSamples:
    positions: np.ndarray     # (n, 3)
    values: np.ndarray        # (frames, n, axes)
    source: str               # "SAX" | "LAX"

    @property
    def degenerate(self):
        p = self.positions
        if len(p) < 4:
            return True
        return np.linalg.matrix_rank(p[1:] - p[0], tol=1e-9 * max(np.ptp(p), 1.0)) < 3


@dataclass(frozen=True)
class FusionWeights:
    W: np.ndarray             # (frames, nodes)
    w_min: np.ndarray         # scalar (global) or (nodes,)
    w_max: np.ndarray
    degenerate: bool


@dataclass(frozen=True)
class FusedMotion:
    displacements: np.ndarray     # (frames, nodes, 3) mm
    extrapolated: np.ndarray      # (nodes, 3) bool per axis
    weights: FusionWeights

    @property
    def frames(self):
        return self.displacements.shape[0]

    def node_extrapolated(self):
        return self.extrapolated.any(axis=1)


def assemble_samples(cloud):
    """SAX X/Y samples and LAX X/Y/Z samples for every frame."""
    sp, sv = cloud.sax_samples()
    lp, lv = cloud.lax_samples()
    if len(sp) == 0 or len(lp) == 0:
        raise ValidationError("both SAX and LAX sample sets must be non-empty")
    return ScatteredSamples(sp, sv, "SAX"), ScatteredSamples(lp, lv, "LAX")


def compute_weights(w_l, w_min, w_max):
    """Normalised longitudinal weight; returns ``(W, degenerate)``."""
    w_l = np.asarray(w_l, dtype=float)
    w_min = np.asarray(w_min, dtype=float)
    w_max = np.asarray(w_max, dtype=float)
    if not (np.all(np.isfinite(w_l)) and np.all(np.isfinite(w_min)) and np.all(np.isfinite(w_max))):
        raise NumericError("non-finite longitudinal displacement in weighting")
    span = w_min - w_max
    ok = span < -W_SPAN_FLOOR
    with np.errstate(divide="ignore", invalid="ignore"):
        W = np.where(ok, w_l / np.where(ok, span, 1.0), 0.0)
    W = np.clip(W, 0.0, 1.0)
    return W, bool(not np.all(ok))


def fuse_inplane(u_cs, v_cs, u_l, v_l, W):
    arrs = [np.asarray(a, dtype=float) for a in (u_cs, v_cs, u_l, v_l, W)]
    if len({a.shape for a in arrs}) != 1:
        raise ValidationError("fuse_inplane inputs must have identical shapes")
    u_cs, v_cs, u_l, v_l, W = arrs
    return (1.0 - W) * u_cs + W * u_l, (1.0 - W) * v_cs + W * v_l


def deform_mesh(nodes, sax, lax, weighting="global", extrapolation="nearest"):
    """Fused per-frame nodal displacements for ``nodes`` (an LvMesh or (N, 3))."""
    nodes = getattr(nodes, "nodes", nodes)
    if weighting not in WEIGHTING_MODES:
        raise ValidationError(f"weighting must be one of {WEIGHTING_MODES}")
    nodes = np.asarray(nodes, dtype=float)
    frames = sax.values.shape[0]
    if lax.values.shape[0] != frames:
        raise ValidationError("SAX and LAX samples disagree on frame count")
    wq_sax = ScatteredInterpolant(sax.positions, extrapolation).weights(nodes)
    wq_lax = ScatteredInterpolant(lax.positions, extrapolation).weights(nodes)

    def interp(t):
        s = wq_sax.apply(sax.values[t])
        l = wq_lax.apply(lax.values[t])
        return s, l

    per_frame = parallel_map(interp, range(frames))
    u_cs = np.stack([s[:, 0] for s, _ in per_frame])
    v_cs = np.stack([s[:, 1] for s, _ in per_frame])
    u_l = np.stack([l[:, 0] for _, l in per_frame])
    v_l = np.stack([l[:, 1] for _, l in per_frame])
    w = np.stack([l[:, 2] for _, l in per_frame])
    w[0] = 0.0

    if weighting == "global":
        w_min, w_max = np.asarray(w.min()), np.asarray(w.max())
    else:
        w_min, w_max = w.min(axis=0), w.max(axis=0)
    W, degenerate = compute_weights(w, w_min, w_max)
    u, v = fuse_inplane(u_cs, v_cs, u_l, v_l, W)
    disp = np.stack([u, v, w], axis=-1)
    disp[0] = 0.0
    if not np.all(np.isfinite(disp)):
        raise NumericError("non-finite fused displacement")
    uses_lax = (W > 0).any(axis=0)
    ex_xy = wq_sax.extrapolated | (wq_lax.extrapolated & uses_lax)
    extrapolated = np.stack([ex_xy, ex_xy, wq_lax.extrapolated], axis=1)
    return FusedMotion(displacements=disp, extrapolated=extrapolated,
                       weights=FusionWeights(W=W, w_min=w_min, w_max=w_max, degenerate=degenerate))
