"""Optional PNG figures (non-interactive Agg backend)."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def quiver_map(wind, t: int, path, truth=None, step: int = 1,
               title: str | None = None) -> Path:
    """Arrows at valid pixels of ``wind`` at time ``t``; truth in grey."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 6))
    for field_, color in ((truth, "0.6"), (wind, "C0")):
        if field_ is None:
            continue
        valid = field_.valid_mask[t].copy()
        sub = np.zeros_like(valid)
        sub[::step, ::step] = True
        ii, jj = np.nonzero(valid & sub)
        ax.quiver(jj, ii, field_.u_map[t, ii, jj], field_.v_map[t, ii, jj],
                  color=color, angles="xy")
    ax.set_xlim(-1, wind.geometry.width)
    ax.set_ylim(wind.geometry.height, -1)
    ax.set_aspect("equal")
    ax.set_xlabel("column")
    ax.set_ylabel("row")
    ax.set_title(title or f"{wind.method or 'wind'} at t={t}")
    return _save(fig, path)


def sd_map(wind, t: int, path) -> Path:
    """Standard deviation of each component (NaN where variance is infinite)."""
    plt = _pyplot()
    fig, axes = plt.subplots(1, 2, figsize=(10, 4.5))
    for ax, var, name in zip(axes, (wind.var_u_map[t], wind.var_v_map[t]),
                             ("u", "v")):
        sd = np.where(wind.valid_mask[t] & np.isfinite(var), np.sqrt(var), np.nan)
        im = ax.imshow(sd, cmap="viridis")
        ax.set_title(f"SD of {name}")
        fig.colorbar(im, ax=ax, shrink=0.8)
    return _save(fig, path)


def prediction_maps(pred, var, observed, path) -> Path:
    plt = _pyplot()
    fig, axes = plt.subplots(1, 3, figsize=(14, 4.5))
    lim = np.nanmax(np.abs(observed))
    panels = ((observed, "observed", "RdBu_r", (-lim, lim)),
              (pred, "predicted", "RdBu_r", (-lim, lim)),
              (var, "prediction variance", "magma", (0, 1)))
    for ax, (img, name, cmap, (lo, hi)) in zip(axes, panels):
        im = ax.imshow(img, cmap=cmap, vmin=lo, vmax=hi)
        ax.set_title(name)
        fig.colorbar(im, ax=ax, shrink=0.8)
    return _save(fig, path)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    fig.clf()
    import matplotlib.pyplot as plt

    plt.close(fig)
    return path
