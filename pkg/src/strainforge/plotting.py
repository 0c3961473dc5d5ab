"""Report figures rendered headless to PNG."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .strain import COMPONENTS, N_SEGMENTS  # noqa: E402

_PNG_META = {"Software": None}
_RINGS = (("basal", range(1, 7)), ("mid", range(7, 13)), ("apical", range(13, 17)))


def plot_strain_curves(path, curves):
    """One panel per component; thin lines per segment, thick global mean."""
    frames = np.arange(curves.shape[0])
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6), sharex=True)
    colors = {"basal": "tab:blue", "mid": "tab:orange", "apical": "tab:green"}
    for k, (ax, name) in enumerate(zip(axes, COMPONENTS)):
        for ring, segs in _RINGS:
            for i, s in enumerate(segs):
                y = curves[:, s - 1, k]
                if np.all(np.isnan(y)):
                    continue
                ax.plot(frames, y, color=colors[ring], lw=0.8, alpha=0.7,
                        label=ring if i == 0 else None)
        with np.errstate(all="ignore"):
            mean = np.nanmean(curves[:, :, k], axis=1)
        ax.plot(frames, mean, color="k", lw=2, label="mean")
        ax.axhline(0.0, color="0.6", lw=0.5)
        ax.set_title(name)
        ax.set_xlabel("frame")
    axes[0].set_ylabel("Green-Lagrange strain")
    axes[0].legend(fontsize=7, loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def _bullseye(ax, values, title, cmap="RdBu_r"):
    finite = np.abs(values[np.isfinite(values)])
    lim = float(finite.max()) if finite.size else 1.0
    lim = lim or 1.0
    norm = matplotlib.colors.Normalize(-lim, lim)
    cm = plt.get_cmap(cmap)
    radii = ((0.67, 1.0), (0.34, 0.67), (0.0, 0.34))
    for (ring, segs), (r0, r1) in zip(_RINGS, radii):
        n = len(segs)
        for i, s in enumerate(segs):
            th0 = np.radians(i * 360.0 / n)
            th1 = np.radians((i + 1) * 360.0 / n)
            v = values[s - 1]
            ax.bar((th0 + th1) / 2, r1 - r0, width=th1 - th0, bottom=r0,
                   color=cm(norm(v)) if np.isfinite(v) else "0.85", edgecolor="k", lw=0.6)
            ax.text((th0 + th1) / 2, (r0 + r1) / 2, str(s), ha="center", va="center", fontsize=6)
    ax.set_title(title)
    ax.set_axis_off()
    plt.colorbar(matplotlib.cm.ScalarMappable(norm=norm, cmap=cm), ax=ax, shrink=0.6)


def plot_segment_peaks(path, peaks):
    fig, axes = plt.subplots(1, 3, figsize=(12, 4), subplot_kw={"projection": "polar"})
    for k, ax in enumerate(axes):
        _bullseye(ax, peaks[:N_SEGMENTS, k], f"peak {COMPONENTS[k]}")
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
