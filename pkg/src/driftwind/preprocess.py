"""Pixel-wise standardization with a kernel-smoothed standard deviation map."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gridstore import (GeometryMismatchError, GridGeometry, GridStack,
                        read_layers, write_layers)

DEFAULT_BANDWIDTH = 2.0
# above this many pixels the kernel is truncated at TRUNCATION_RADIUS * bandwidth
EXACT_KERNEL_MAX_PIXELS = 128 * 128
TRUNCATION_RADIUS = 6.0


class DegenerateVarianceError(ValueError):
    pass


def _pixel_coords(height, width):
    ii, jj = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return np.column_stack([ii.ravel(), jj.ravel()]).astype(float)


def gaussian_weights(targets, sources, bandwidth, truncate: bool = False,
                     log_scale=None):
    """Normalized Gaussian kernel weights, shape ``(len(targets), len(sources))``.

    Rows sum to one.  ``log_scale`` adds per-source log factors before
    normalization (used for inverse-variance weighting), and the row-wise
    maximum is subtracted so distant targets still get well-defined weights.
    Sources with ``log_scale == -inf`` get weight exactly zero.  Rows with no
    usable source are all-NaN.
    """
    targets = np.asarray(targets, dtype=float)
    sources = np.asarray(sources, dtype=float)
    d2 = (targets[:, None, 0] - sources[None, :, 0]) ** 2
    d2 += (targets[:, None, 1] - sources[None, :, 1]) ** 2
    logw = -d2 / (2.0 * bandwidth ** 2)
    if log_scale is not None:
        logw = logw + np.asarray(log_scale)[None, :]
    if truncate:
        logw = np.where(d2 <= (TRUNCATION_RADIUS * bandwidth) ** 2, logw, -np.inf)
    top = logw.max(axis=1, keepdims=True)
    ok = np.isfinite(top[:, 0])
    w = np.zeros_like(logw)
    w[ok] = np.exp(logw[ok] - top[ok])
    w[ok] /= w[ok].sum(axis=1, keepdims=True)
    w[~ok] = np.nan
    return w


def kernel_smooth(values_2d, bandwidth, log_scale_2d=None,
                  source_mask=None) -> np.ndarray:
    """Smooth an ``H x W`` map over all grid pixels with a Gaussian kernel.

    Only pixels in ``source_mask`` (default: all) contribute.  Output is
    evaluated at every pixel; it is NaN where no source has positive weight.
    """
    values_2d = np.asarray(values_2d, dtype=float)
    h, w = values_2d.shape
    coords = _pixel_coords(h, w)
    src = np.ones(h * w, dtype=bool) if source_mask is None else \
        np.asarray(source_mask, dtype=bool).ravel()
    src_coords = coords[src]
    src_vals = values_2d.ravel()[src]
    log_scale = None if log_scale_2d is None else \
        np.asarray(log_scale_2d, dtype=float).ravel()[src]
    truncate = h * w > EXACT_KERNEL_MAX_PIXELS
    out = np.empty(h * w)
    if src_vals.size == 0:
        out[:] = np.nan
        return out.reshape(h, w)
    safe_vals = np.where(np.isfinite(src_vals), src_vals, 0.0)
    chunk = max(1, 2_000_000 // src_vals.size)
    for start in range(0, h * w, chunk):
        stop = min(h * w, start + chunk)
        wts = gaussian_weights(coords[start:stop], src_coords, bandwidth,
                               truncate=truncate, log_scale=log_scale)
        out[start:stop] = wts @ safe_vals
    return out.reshape(h, w)


@dataclass(eq=False)
class StandardizationModel:
    mean_map: np.ndarray
    raw_sd_map: np.ndarray
    smoothed_sd_map: np.ndarray
    bandwidth: float
    geometry: GridGeometry | None = None

    def invert(self, stack: GridStack) -> GridStack:
        """Map standardized values back to the original scale."""
        _check_geometry(stack, self)
        values = stack.values * self.smoothed_sd_map + self.mean_map
        return stack.replace_values(values)


def _check_geometry(stack, model):
    if stack.values.shape[1:] != model.mean_map.shape or (
            model.geometry is not None and
            not stack.geometry.same_grid(model.geometry)):
        raise GeometryMismatchError(
            f"stack grid {stack.values.shape[1:]} does not match model grid "
            f"{model.mean_map.shape}")


def fit_standardization(stack: GridStack,
                        bandwidth: float = DEFAULT_BANDWIDTH) -> StandardizationModel:
    """Per-pixel temporal mean and SD; the SD map is kernel smoothed.

    ``bandwidth`` is in pixels.
    """
    if stack.geometry.n_times < 2:
        raise ValueError("standardization needs at least two frames")
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    obs = ~stack.missing_mask
    counts = obs.sum(axis=0)
    if (counts < 2).any():
        i, j = np.argwhere(counts < 2)[0]
        raise DegenerateVarianceError(
            f"pixel ({i}, {j}) has fewer than two observed frames")
    vals = np.where(obs, stack.values, 0.0)
    mean = vals.sum(axis=0) / counts
    resid = np.where(obs, stack.values - mean, 0.0)
    raw_sd = np.sqrt((resid ** 2).sum(axis=0) / (counts - 1))
    smoothed = kernel_smooth(raw_sd, bandwidth)
    bad = ~(smoothed > 0)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise DegenerateVarianceError(
            f"smoothed SD is zero at pixel ({i}, {j}); increase the bandwidth")
    return StandardizationModel(mean, raw_sd, smoothed, float(bandwidth),
                                stack.geometry)


def standardize(stack: GridStack, model: StandardizationModel) -> GridStack:
    _check_geometry(stack, model)
    values = (stack.values - model.mean_map) / model.smoothed_sd_map
    values = np.where(stack.missing_mask, 0.0, values)
    return stack.replace_values(values)


def write_model(model: StandardizationModel, path):
    geom = model.geometry or GridGeometry(model.mean_map.shape[1],
                                          model.mean_map.shape[0], 1)
    return write_layers(path, {"mean": model.mean_map[None],
                               "raw_sd": model.raw_sd_map[None],
                               "smoothed_sd": model.smoothed_sd_map[None]},
                        geom, extra={"bandwidth": model.bandwidth})


def read_model(path) -> StandardizationModel:
    layers, geom, extra = read_layers(path)
    return StandardizationModel(layers["mean"][0], layers["raw_sd"][0],
                                layers["smoothed_sd"][0],
                                float(extra["bandwidth"]), geom)
