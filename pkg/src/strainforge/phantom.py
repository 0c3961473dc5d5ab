"""Analytic deforming thick-walled annulus used as ground truth.

Phantom coordinates put the long axis on +Z with the apical end at z = 0 and
the base at z = h. The motion at frame t is

    r' = sqrt(Ri'(t)^2 + (r^2 - Ri^2) / lambda_z(t))
    theta' = theta + tau(t) * z
    z' = lambda_z(t) * z

followed by an optional rigid rotation about +Z and a translation. The
cylindrical map has unit Jacobian for any Ri'(t); ``Ri'^2 = Ri^2 / lambda_z``
makes it a homogeneous radial expansion.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ValidationError
from .study import Study, TrackedView, ViewGeometry, save_study

FD_STEP = 1e-4
_DOMAIN_TOL = 1e-6

# Contractile preset: peak longitudinal stretch and peak endocardial radius.
# Mid-wall peaks land near typical systolic values: Err ~ +0.29,
# Ecc ~ -0.11, Ell -0.095.
CONTRACTILE_LAMBDA = 0.90
CONTRACTILE_RI_PEAK = 20.0
INCOMPRESSIBLE_LAMBDA = 0.85


def cycle(frames):
    """Systolic activation 0 -> 1 -> 0 over the cycle, peak at frames // 2."""
    t = np.arange(frames)
    s = np.sin(np.pi * t / frames) ** 2
    s[0] = 0.0
    return s


@dataclass(frozen=True)
class AnnulusPhantom:
    Ri: float = 25.0
    Ro: float = 35.0
    h: float = 80.0
    lambda_z: np.ndarray = field(default_factory=lambda: np.ones(10))
    Ri_prime: np.ndarray | None = None
    tau: np.ndarray | None = None
    rotation_deg: np.ndarray | None = None
    translation: np.ndarray | None = None

    def __post_init__(self):
        if not 0 < self.Ri < self.Ro:
            raise ValidationError("phantom radii must satisfy 0 < Ri < Ro")
        lam = np.asarray(self.lambda_z, dtype=float)
        T = len(lam)
        object.__setattr__(self, "lambda_z", lam)
        defaults = {
            "Ri_prime": self.Ri / np.sqrt(lam),
            "tau": np.zeros(T),
            "rotation_deg": np.zeros(T),
            "translation": np.zeros((T, 3)),
        }
        for name, default in defaults.items():
            v = getattr(self, name)
            v = default if v is None else np.asarray(v, dtype=float)
            if len(v) != T:
                raise ValidationError(f"phantom {name} must have one entry per frame")
            object.__setattr__(self, name, v)
        if lam[0] != 1.0 or self.Ri_prime[0] != self.Ri or self.tau[0] != 0.0 \
                or self.rotation_deg[0] != 0.0 or np.any(self.translation[0] != 0.0):
            raise ValidationError("phantom frame 0 must be the undeformed reference")
        if np.any(lam <= 0) or np.any(self.Ri_prime <= 0):
            raise ValidationError("phantom stretches and radii must be positive")

    @property
    def frames(self):
        return len(self.lambda_z)


def make_preset(name, frames=10, Ri=25.0, Ro=35.0, h=80.0):
    s = cycle(frames)
    if name == "incompressible":
        lam = 1.0 - (1.0 - INCOMPRESSIBLE_LAMBDA) * s
        return AnnulusPhantom(Ri, Ro, h, lambda_z=lam)
    if name == "contractile":
        lam = 1.0 - (1.0 - CONTRACTILE_LAMBDA) * s
        rip = Ri + (CONTRACTILE_RI_PEAK - Ri) * s
        return AnnulusPhantom(Ri, Ro, h, lambda_z=lam, Ri_prime=rip)
    if name == "rigid":
        t = np.arange(frames, dtype=float)
        return AnnulusPhantom(Ri, Ro, h, lambda_z=np.ones(frames), Ri_prime=np.full(frames, Ri),
                              rotation_deg=10.0 * t,
                              translation=5.0 * t[:, None] * np.array([0.6, 0.8, 0.0]))
    if name == "translate":
        return AnnulusPhantom(Ri, Ro, h, lambda_z=np.ones(frames), Ri_prime=np.full(frames, Ri),
                              translation=s[:, None] * np.array([3.0, -2.0, 1.5]))
    raise ValidationError(f"unknown phantom preset {name!r}; choose from {PRESETS}")


PRESETS = ("incompressible", "contractile", "rigid", "translate")


def _check_domain(ph, p, margin=0.0):
    r = np.hypot(p[..., 0], p[..., 1])
    z = p[..., 2]
    tol = _DOMAIN_TOL if margin == 0.0 else -margin
    ok = (r >= ph.Ri - tol) & (r <= ph.Ro + tol) & (z >= -tol) & (z <= ph.h + tol)
    if not np.all(ok):
        raise DomainError("point(s) outside the phantom annulus" +
                          (f" (margin {margin:g} mm)" if margin else ""))


def motion_map(ph, p, t, check=True):
    """Deformed position of reference point(s) ``p`` (..., 3) at frame ``t``."""
    p = np.asarray(p, dtype=float)
    if check:
        _check_domain(ph, p)
    if t == 0:
        return p.copy()
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    r2 = x * x + y * y
    rp = np.sqrt(ph.Ri_prime[t] ** 2 + (r2 - ph.Ri ** 2) / ph.lambda_z[t])
    th = np.arctan2(y, x) + ph.tau[t] * z
    q = np.stack([rp * np.cos(th), rp * np.sin(th), ph.lambda_z[t] * z], axis=-1)
    phi = np.radians(ph.rotation_deg[t])
    if phi != 0.0:
        c, s = np.cos(phi), np.sin(phi)
        q = q @ np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]).T
    return q + ph.translation[t]


def numeric_jacobian(ph, p, t, step=FD_STEP):
    """Central-difference deformation gradient(s) of the motion map."""
    p = np.asarray(p, dtype=float)
    cols = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = step
        cols.append((motion_map(ph, p + e, t, check=False)
                     - motion_map(ph, p - e, t, check=False)) / (2 * step))
    return np.stack(cols, axis=-1)


def analytic_strain(ph, p, t, step=FD_STEP):
    """Ground-truth Green-Lagrange strain from finite differences of the map."""
    p = np.asarray(p, dtype=float)
    _check_domain(ph, p, margin=2 * step)
    F = numeric_jacobian(ph, p, t, step)
    return 0.5 * (np.swapaxes(F, -1, -2) @ F - np.eye(3))


def segment_probes(ph):
    """One mid-wall probe per AHA-16 segment (theta0 = +X), phantom coords."""
    rm = 0.5 * (ph.Ri + ph.Ro)
    probes = []
    for seg in range(1, 17):
        if seg <= 12:
            ang = 30.0 + 60.0 * ((seg - 1) % 6)
            z = ph.h * (5.0 / 6.0 if seg <= 6 else 0.5)
        else:
            ang = 45.0 + 90.0 * (seg - 13)
            z = ph.h / 6.0
        a = np.radians(ang)
        probes.append((seg, np.array([rm * np.cos(a), rm * np.sin(a), z])))
    return probes


def oracle_table(ph):
    """Rows (frame, segment, x, y, z, Err, Ecc, Ell) at the segment probes."""
    rows = []
    for seg, p in segment_probes(ph):
        # straight-axis directions written out here, independent of strain.py
        er = np.array([p[0], p[1], 0.0]) / np.hypot(p[0], p[1])
        el = np.array([0.0, 0.0, 1.0])
        ec = np.cross(el, er)
        for t in range(ph.frames):
            E = analytic_strain(ph, p, t)
            rows.append((t, seg, *p.tolist(), er @ E @ er, ec @ E @ ec, el @ E @ el))
    rows.sort(key=lambda r: (r[0], r[1]))
    return rows


def write_oracle(path, ph):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "segment", "x", "y", "z", "Err", "Ecc", "Ell"])
        for row in oracle_table(ph):
            w.writerow([row[0], row[1]] + [repr(float(v)) for v in row[2:]])


def read_oracle(path):
    """{(frame, segment): (Err, Ecc, Ell)}"""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[(int(row["frame"]), int(row["segment"]))] = (
                float(row["Err"]), float(row["Ecc"]), float(row["Ell"]))
    return out


def default_pose():
    """Oblique patient-space placement: rotation and offset of the phantom."""
    a, b = np.radians(30.0), np.radians(-20.0)
    Rx = np.array([[1, 0, 0], [0, np.cos(a), -np.sin(a)], [0, np.sin(a), np.cos(a)]])
    Rz = np.array([[np.cos(b), -np.sin(b), 0], [np.sin(b), np.cos(b), 0], [0, 0, 1]])
    return Rz @ Rx, np.array([-20.0, 35.0, 110.0])


def _view(kind, ph, origin_ph, row_ph, col_ph, parts, spacing, size, pose, slice_index=0):
    R, off = pose
    geom = ViewGeometry(origin=R @ origin_ph + off, row_dir=R @ row_ph, col_dir=R @ col_ph,
                        row_spacing=spacing, col_spacing=spacing, rows=size, cols=size)
    contours, pts = {}, []
    for roi, polylines in parts.items():
        px = []
        for pl in polylines:
            rel = pl - origin_ph
            px.append(np.c_[rel @ row_ph / spacing, rel @ col_ph / spacing])
            pts.append(pl)
        contours[roi] = px
    pts = np.vstack(pts)
    disp = np.zeros((ph.frames, len(pts), 2))
    for t in range(1, ph.frames):
        d = motion_map(ph, pts, t) - pts
        disp[t] = np.c_[d @ row_ph / spacing, d @ col_ph / spacing]
    return TrackedView(kind=kind, geometry=geom, contours=contours, displacements=disp,
                       slice_index=slice_index)


def sample_views(ph, n_slices=9, lax_planes=("4CH", "2CH"), ring_points=32, lax_step=5.0,
                 spacing=1.0, size=128, pose=None, slice_z=None):
    """Study bundle of exact circular SAX contours and straight LAX wall lines."""
    pose = default_pose() if pose is None else pose
    zs = np.linspace(ph.h, 0.0, n_slices) if slice_z is None else np.asarray(slice_z, float)
    if np.any(zs < 0) or np.any(zs > ph.h):
        raise ValidationError("SAX slice positions must lie within [0, h]")
    half = 0.5 * spacing * size
    views = []
    th = 2.0 * np.pi * np.arange(ring_points) / ring_points
    ex, ey, ez = np.eye(3)
    for k, z in enumerate(zs):
        parts = {roi: [np.c_[r * np.cos(th), r * np.sin(th), np.full(ring_points, z)]]
                 for roi, r in (("endo", ph.Ri), ("epi", ph.Ro))}
        views.append(_view("SAX", ph, np.array([-half, -half, z]), ey, ex, parts, spacing, size,
                           pose, slice_index=k))
    nz = int(round(ph.h / lax_step)) + 1
    zline = np.linspace(ph.h, 0.0, nz)
    for kind in lax_planes:
        axis = {"4CH": ex, "2CH": ey}[kind]
        parts = {}
        for roi, r in (("endo", ph.Ri), ("epi", ph.Ro)):
            parts[roi] = [np.outer(np.ones(nz), -r * axis) + np.outer(zline, ez),
                          np.outer(np.ones(nz), r * axis) + np.outer(zline[::-1], ez)]
        top = ph.h + 0.3 * size * spacing
        views.append(_view(kind, ph, -half * axis + top * ez, -ez, axis, parts, spacing, size, pose))
    return Study(views=tuple(views), apex_closure="flat")


def write_phantom_bundle(out_dir, preset="contractile", frames=10, overrides=None, **layout):
    """Bundle plus oracle.csv; ``overrides`` may set Ri, Ro, h and frames."""
    params = {"frames": frames}
    params.update(overrides or {})
    ph = make_preset(preset, **params)
    study = sample_views(ph, **layout)
    os.makedirs(out_dir, exist_ok=True)
    save_study(study, out_dir)
    write_oracle(os.path.join(out_dir, "oracle.csv"), ph)
    return ph, study


# --- minimal image generator for registration tests --------------------------

def _blob_field(shape, shift, seed, n_blobs, sigma):
    rng = np.random.default_rng(seed)
    H, W = shape
    centers = rng.uniform([0, 0], [H, W], size=(n_blobs, 2))
    widths = rng.uniform(*sigma, size=n_blobs)
    amps = rng.uniform(0.3, 1.0, size=n_blobs)
    r, c = np.meshgrid(np.arange(H, dtype=float), np.arange(W, dtype=float), indexing="ij")
    r = r - shift[0]
    c = c - shift[1]
    img = np.zeros(shape)
    for (cr, cc), s, a in zip(centers, widths, amps):
        img += a * np.exp(-((r - cr) ** 2 + (c - cc) ** 2) / (2 * s * s))
    return img


def smooth_texture(shape=(64, 64), shift=(0.0, 0.0), seed=0, n_blobs=24, sigma=(3.0, 7.0)):
    """Sum of Gaussian blobs evaluated analytically, so a shifted copy is exact.

    ``shift`` (d_row, d_col) moves the content: ``I_shift(x) = I(x - shift)``.
    Normalised by the unshifted maximum so shifted copies share one scale.
    """
    ref = _blob_field(shape, (0.0, 0.0), seed, n_blobs, sigma).max()
    return _blob_field(shape, shift, seed, n_blobs, sigma) / ref


def textured_annulus_image(shape=(64, 64), center=(32.0, 32.0), Ri=10.0, Ro=18.0,
                           shift=(0.0, 0.0), seed=0):
    """Bright textured ring on a dark background, content shifted by ``shift``."""
    H, W = shape
    r, c = np.meshgrid(np.arange(H, dtype=float), np.arange(W, dtype=float), indexing="ij")
    rr = np.hypot(r - shift[0] - center[0], c - shift[1] - center[1])
    wall = 0.5 * (np.tanh((rr - Ri) / 1.0) - np.tanh((rr - Ro) / 1.0))
    return 0.6 * wall + 0.4 * wall * smooth_texture(shape, shift, seed)
