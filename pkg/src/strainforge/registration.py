"""2-D cubic B-spline free-form deformation registration.

The transform maps fixed-image pixel coordinates (row, col) to moving-image
coordinates, T(x) = x + u(x), with u a tensor-product cubic B-spline over a
uniform control lattice that has one ghost node before the image origin.
Cost: SSD(I_f(x), I_m(T(x))) / M + alpha * bending energy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.sparse import csr_matrix

from .errors import DomainError, RegistrationError, ValidationError

log = logging.getLogger(__name__)


def bspline_basis(t):
    """Uniform cubic B-spline weights (4, ...) at fractional offset t in [0, 1)."""
    t = np.asarray(t, dtype=float)
    u = 1.0 - t
    return np.stack([u ** 3 / 6.0,
                     (3 * t ** 3 - 6 * t ** 2 + 4) / 6.0,
                     (-3 * t ** 3 + 3 * t ** 2 + 3 * t + 1) / 6.0,
                     t ** 3 / 6.0])


@dataclass
class BSplineGrid:
    spacing: float
    displacements: np.ndarray        # (Kr, Kc, 2) in pixels, (d_row, d_col)
    origin: float = field(default=None)

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValidationError("control spacing must be positive")
        if self.origin is None:
            self.origin = -float(self.spacing)
        self.displacements = np.asarray(self.displacements, dtype=float)

    @classmethod
    def zeros(cls, shape, spacing):
        """Lattice covering an image of ``shape`` (rows, cols) plus the ghost ring."""
        K = [int(np.floor((n - 1) / spacing)) + 4 for n in shape]
        return cls(spacing, np.zeros((K[0], K[1], 2)))

    @property
    def shape(self):
        return self.displacements.shape[:2]

    def copy(self):
        return BSplineGrid(self.spacing, self.displacements.copy(), self.origin)

    def basis_matrix(self, points):
        """Sparse (P, Kr*Kc) matrix of the 16 tensor weights per point."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        s = (p - self.origin) / self.spacing
        i = np.floor(s).astype(int)
        f = s - i
        Kr, Kc = self.shape
        if np.any(i < 1) or np.any(i[:, 0] + 2 > Kr - 1) or np.any(i[:, 1] + 2 > Kc - 1):
            raise DomainError("point outside the control lattice coverage")
        br, bc = bspline_basis(f[:, 0]), bspline_basis(f[:, 1])
        rows, cols, vals = [], [], []
        n = len(p)
        for a in range(4):
            for b in range(4):
                rows.append(np.arange(n))
                cols.append((i[:, 0] - 1 + a) * Kc + (i[:, 1] - 1 + b))
                vals.append(br[a] * bc[b])
        return csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, Kr * Kc))

    def displacement_at(self, points):
        return self.basis_matrix(points) @ self.displacements.reshape(-1, 2)


def evaluate_ffd(grid, x):
    x = np.asarray(x, dtype=float)
    return x + grid.displacement_at(x.reshape(-1, 2)).reshape(x.shape)


def bending_energy(grid, with_gradient=False):
    """Mean over interior nodes of squared second differences (mixed term x2)."""
    d = grid.displacements
    Kr, Kc = grid.shape
    if Kr < 3 or Kc < 3:
        return (0.0, np.zeros_like(d)) if with_gradient else 0.0
    s2 = grid.spacing ** 2
    c = slice(1, -1)
    drr = (d[2:, c] - 2 * d[1:-1, c] + d[:-2, c]) / s2
    dcc = (d[c, 2:] - 2 * d[c, 1:-1] + d[c, :-2]) / s2
    drc = (d[2:, 2:] - d[2:, :-2] - d[:-2, 2:] + d[:-2, :-2]) / (4 * s2)
    n = (Kr - 2) * (Kc - 2)
    e = float((np.sum(drr ** 2) + np.sum(dcc ** 2) + 2 * np.sum(drc ** 2)) / n)
    if not with_gradient:
        return e
    g = np.zeros_like(d)
    a, b, m = 2 * drr / (n * s2), 2 * dcc / (n * s2), 4 * drc / (n * 4 * s2)
    g[2:, c] += a
    g[1:-1, c] -= 2 * a
    g[:-2, c] += a
    g[c, 2:] += b
    g[c, 1:-1] -= 2 * b
    g[c, :-2] += b
    g[2:, 2:] += m
    g[2:, :-2] -= m
    g[:-2, 2:] -= m
    g[:-2, :-2] += m
    return e, g


def sample_bilinear(img, pts, with_gradient=False):
    """Bilinear samples at (row, col) points, clamped to the image edge."""
    H, W = img.shape
    r = np.clip(pts[:, 0], 0.0, H - 1.0)
    c = np.clip(pts[:, 1], 0.0, W - 1.0)
    r0 = np.minimum(np.floor(r).astype(int), H - 2)
    c0 = np.minimum(np.floor(c).astype(int), W - 2)
    fr, fc = r - r0, c - c0
    i00, i01 = img[r0, c0], img[r0, c0 + 1]
    i10, i11 = img[r0 + 1, c0], img[r0 + 1, c0 + 1]
    top = i00 + fc * (i01 - i00)
    bot = i10 + fc * (i11 - i10)
    val = top + fr * (bot - top)
    if not with_gradient:
        return val
    gr = bot - top
    gc = (1 - fr) * (i01 - i00) + fr * (i11 - i10)
    # clamped coordinates do not move the sample
    gr = np.where((pts[:, 0] < 0) | (pts[:, 0] > H - 1), 0.0, gr)
    gc = np.where((pts[:, 1] < 0) | (pts[:, 1] > W - 1), 0.0, gc)
    return val, np.c_[gr, gc]


def _pixel_grid(shape, stride=1):
    r, c = np.meshgrid(np.arange(0, shape[0], stride, dtype=float),
                       np.arange(0, shape[1], stride, dtype=float), indexing="ij")
    return np.c_[r.ravel(), c.ravel()]


def _check_pair(fixed, moving):
    fixed = np.asarray(fixed, dtype=float)
    moving = np.asarray(moving, dtype=float)
    if fixed.shape != moving.shape:
        raise ValidationError("fixed and moving images differ in size",
                              fixed=list(fixed.shape), moving=list(moving.shape))
    return fixed, moving


def ssd(fixed, moving, grid):
    fixed, moving = _check_pair(fixed, moving)
    x = _pixel_grid(fixed.shape)
    return float(np.mean((fixed.ravel() - sample_bilinear(moving, evaluate_ffd(grid, x))) ** 2))


class _Cost:
    """SSD + alpha * bending with a precomputed basis matrix for one pixel set."""

    def __init__(self, fixed, moving, grid, alpha, stride=1):
        self.x = _pixel_grid(fixed.shape, stride)
        self.f = fixed[::stride, ::stride].ravel()
        self.moving = moving
        self.B = grid.basis_matrix(self.x)
        self.BT = self.B.T.tocsr()
        self.alpha = alpha
        self.template = grid

    def __call__(self, phi, gradient=True):
        g = self.template
        grid = BSplineGrid(g.spacing, phi.reshape(g.displacements.shape), g.origin)
        u = self.B @ phi.reshape(-1, 2)
        val, dI = sample_bilinear(self.moving, self.x + u, with_gradient=True)
        res = val - self.f
        M = len(res)
        be, bg = bending_energy(grid, with_gradient=True)
        cost = float(res @ res / M + self.alpha * be)
        if not gradient:
            return cost
        grad = (self.BT @ (2.0 / M * res[:, None] * dI)).ravel() + self.alpha * bg.ravel()
        return cost, grad


def registration_cost(fixed, moving, grid, alpha=0.0):
    """C = SSD + alpha * R and its gradient w.r.t. the control displacements."""
    fixed, moving = _check_pair(fixed, moving)
    c, g = _Cost(fixed, moving, grid, alpha)(grid.displacements.ravel())
    return c, g.reshape(grid.displacements.shape)


@dataclass(frozen=True)
class RegistrationParams:
    alpha: float = 0.01
    pyramid_levels: int = 2
    max_iterations: int = 200
    step_tolerance: float = 1e-4
    step_size: float = 1.0
    control_spacing: float = 8.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValidationError("alpha must be >= 0")
        if self.pyramid_levels < 1:
            raise ValidationError("pyramid_levels must be >= 1")
        if self.max_iterations < 1 or self.step_tolerance <= 0 or self.step_size <= 0:
            raise ValidationError("iteration count, step tolerance and step size must be positive")
        if not self.control_spacing > 0:
            raise ValidationError("control_spacing must be positive")


def _descend(cost, phi, params, level):
    """Gradient descent: Barzilai-Borwein trial step, Armijo backtracking."""
    c, g = cost(phi)
    step = params.step_size / max(np.abs(g).max(), 1e-12)
    prev = None
    for it in range(params.max_iterations):
        if not np.isfinite(c) or not np.all(np.isfinite(g)):
            raise RegistrationError("non-finite cost during optimisation", iteration=it, level=level)
        gg = g @ g
        if gg == 0.0:
            break
        if prev is not None:
            s, y = phi - prev[0], g - prev[1]
            sy = s @ y
            if sy > 0:
                step = (s @ s) / sy
        while True:
            trial = phi - step * g
            ct, gt = cost(trial)
            if np.isfinite(ct) and ct <= c - 1e-4 * step * gg:
                break
            step *= 0.5
            if step * np.sqrt(gg) < 1e-12:
                return phi, c
        prev = (phi, g)
        moved = np.abs(trial - phi).max()
        phi, c, g = trial, ct, gt
        if moved < params.step_tolerance:
            break
    return phi, c


def register_pair(fixed, moving, params=None, initial=None):
    """Control grid T with I_f(x) ~ I_m(T(x)); cost never exceeds the start grid's."""
    params = params or RegistrationParams()
    fixed, moving = _check_pair(fixed, moving)
    if min(fixed.shape) < 8:
        raise ValidationError("images must be at least 8x8")
    grid = initial.copy() if initial is not None else BSplineGrid.zeros(fixed.shape,
                                                                       params.control_spacing)
    phi = grid.displacements.ravel().copy()
    for level in range(params.pyramid_levels - 1, -1, -1):
        stride = 2 ** level
        if level:
            sig = 0.5 * stride
            f, m = gaussian_filter(fixed, sig, mode="nearest"), gaussian_filter(moving, sig, mode="nearest")
        else:
            f, m = fixed, moving
        cost = _Cost(f, m, grid, params.alpha, stride)
        before = cost(phi, gradient=False)
        phi_new, after = _descend(cost, phi, params, level)
        log.debug("level %d: cost %.6g -> %.6g", level, before, after)
        if after <= before:
            phi = phi_new
    grid.displacements = phi.reshape(grid.displacements.shape)
    # guard the contract at full resolution: a coarse result that hurts is dropped
    full = _Cost(fixed, moving, grid, params.alpha)
    start = initial.displacements.ravel() if initial is not None else np.zeros_like(phi)
    if full(phi, gradient=False) > full(start, gradient=False):
        grid.displacements = start.reshape(grid.displacements.shape).copy()
    return grid


@dataclass(frozen=True)
class TrackedSequence:
    points: np.ndarray          # (P, 2) frame-0 pixel coords
    displacements: np.ndarray   # (T, P, 2)
    out_of_domain: np.ndarray   # (P,) bool

    def to_dict(self):
        return {"points": self.points.tolist(),
                "displacements": self.displacements.tolist(),
                "out_of_domain": self.out_of_domain.astype(bool).tolist()}


def smooth_trajectories(disp, window=3):
    """Centred moving average along time; first and last frames untouched."""
    d = np.asarray(disp, dtype=float)
    if window != 3 or len(d) < 3:
        return d.copy()
    out = d.copy()
    out[1:-1] = (d[:-2] + d[1:-1] + d[2:]) / 3.0
    return out


def track_sequence(images, seeds, params=None, smooth=True):
    params = params or RegistrationParams()
    if len(images) < 2:
        raise ValidationError("tracking needs at least two frames")
    imgs = [np.asarray(i, dtype=float) for i in images]
    shape = imgs[0].shape
    if any(i.shape != shape for i in imgs):
        raise ValidationError("all frames must share one size")
    p0 = np.atleast_2d(np.asarray(seeds, dtype=float))
    hi = np.array(shape, dtype=float) - 1
    if np.any(p0 < 0) or np.any(p0 > hi):
        raise DomainError("seed points must lie inside frame 0")
    pos = p0.copy()
    flags = np.zeros(len(p0), dtype=bool)
    traj = [p0.copy()]
    for t in range(len(imgs) - 1):
        grid = register_pair(imgs[t], imgs[t + 1], params)
        pos = evaluate_ffd(grid, pos)
        outside = np.any((pos < 0) | (pos > hi), axis=1)
        flags |= outside
        pos = np.clip(pos, 0, hi)
        traj.append(pos.copy())
    disp = np.stack(traj) - p0
    disp[0] = 0.0
    if smooth:
        disp = smooth_trajectories(disp)
    return TrackedSequence(points=p0, displacements=disp, out_of_domain=flags)


def align_peak_times(curves, reference="SAX"):
    """Circular frame shifts aligning each curve's extremum to the reference's.

    ``curves`` maps a view name to its 1-D contraction curve. The extremum is
    the frame of largest absolute value.
    """
    if reference not in curves:
        raise ValidationError(f"reference curve {reference!r} missing")
    peaks = {}
    for name, c in curves.items():
        c = np.asarray(c, dtype=float)
        if c.ndim != 1 or not len(c) or np.abs(c).max() < 1e-9:
            raise ValidationError(f"curve {name!r} has no extremum above the noise floor")
        peaks[name] = int(np.argmax(np.abs(c)))
    return {name: peaks[reference] - p for name, p in peaks.items()}


def apply_shift(frames, shift):
    """Circularly shift a per-frame array along axis 0 (frame 0 stays the reference)."""
    return np.roll(np.asarray(frames), shift, axis=0)
