"""Exponential space-time correlation with a drift term.

For a spatial lag ``d`` (length units) and time lag ``h`` (time units)

    C(d, h) = sigma2 * exp(-sqrt(|d - u h|^2 / alpha1^2 + h^2 / alpha2^2))

which is stationary, and space-time asymmetric whenever ``u != 0``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .gridstore import TargetWindow

#: Diagonal jitter added before every factorization of a model covariance.
JITTER = 1e-8


class InvalidParamsError(ValueError):
    pass


@dataclass(frozen=True)
class DriftParams:
    alpha1: float
    alpha2: float
    u: tuple[float, float] = (0.0, 0.0)
    sigma2: float = 1.0

    def __post_init__(self):
        u = tuple(float(c) for c in self.u)
        if len(u) != 2:
            raise InvalidParamsError("drift u must have two components")
        object.__setattr__(self, "u", u)
        if not (np.isfinite(self.alpha1) and self.alpha1 > 0):
            raise InvalidParamsError(f"alpha1 must be > 0, got {self.alpha1}")
        if not (np.isfinite(self.alpha2) and self.alpha2 > 0):
            raise InvalidParamsError(f"alpha2 must be > 0, got {self.alpha2}")
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise InvalidParamsError(f"sigma2 must be > 0, got {self.sigma2}")
        if not np.all(np.isfinite(u)):
            raise InvalidParamsError("drift u must be finite")

    @classmethod
    def from_squared(cls, alpha1_sq, alpha2_sq, u=(0.0, 0.0), sigma2=1.0):
        """Construct from squared ranges, the way ranges are usually quoted."""
        return cls(float(np.sqrt(alpha1_sq)), float(np.sqrt(alpha2_sq)), u, sigma2)

    def with_drift(self, u) -> "DriftParams":
        return DriftParams(self.alpha1, self.alpha2, tuple(u), self.sigma2)

    def to_dict(self) -> dict:
        return {"alpha1": self.alpha1, "alpha2": self.alpha2,
                "u": list(self.u), "sigma2": self.sigma2}


def correlation_array(dx, dy, h, params: DriftParams) -> np.ndarray:
    """Vectorized correlation for lag components ``dx, dy`` and time lag ``h``."""
    u1, u2 = params.u
    rx = dx - u1 * h
    ry = dy - u2 * h
    q = (rx * rx + ry * ry) / params.alpha1 ** 2 + (h * h) / params.alpha2 ** 2
    return params.sigma2 * np.exp(-np.sqrt(q))


def correlation(d, h, params: DriftParams) -> float:
    """Correlation between ``Z(x, t)`` and ``Z(x + d, t + h)``."""
    d = np.asarray(d, dtype=float)
    if d.shape != (2,) or not np.all(np.isfinite(d)) or not np.isfinite(h):
        raise InvalidParamsError("lags must be finite; d must be a 2-vector")
    return float(correlation_array(d[0], d[1], float(h), params))


@lru_cache(maxsize=16)
def _regular_lag_index(side: int, time_offsets: tuple[int, ...]):
    """Index of every member pair into a table of unique (dt, di, dj) lags."""
    offs = np.arange(side)
    ii, jj = np.meshgrid(offs, offs, indexing="ij")
    tt = np.array(time_offsets)
    t = np.repeat(tt, side * side)
    i = np.tile(ii.ravel(), len(tt))
    j = np.tile(jj.ravel(), len(tt))
    nt = int(tt.max() - tt.min())
    ns = side - 1
    dt = t[None, :] - t[:, None] + nt
    di = i[None, :] - i[:, None] + ns
    dj = j[None, :] - j[:, None] + ns
    w = 2 * ns + 1
    index = ((dt * w + di) * w + dj).astype(np.int32)
    index.flags.writeable = False
    lt, li, lj = np.meshgrid(np.arange(-nt, nt + 1), np.arange(-ns, ns + 1),
                             np.arange(-ns, ns + 1), indexing="ij")
    table = (lt.ravel(), li.ravel(), lj.ravel())
    return index, table


def cov_matrix(window: TargetWindow, params: DriftParams) -> np.ndarray:
    """Dense model covariance over the members of ``window``.

    Entry ``(a, b)`` is the correlation at lag ``x_b - x_a``, ``t_b - t_a``.
    """
    if len(window) == 0:
        raise ValueError("empty window")
    if window.is_regular:
        index, (lt, li, lj) = _regular_lag_index(window.side,
                                                 tuple(window.time_offsets))
        values = correlation_array(lj * window.pixel_size,
                                   li * window.pixel_size,
                                   lt * float(window.time_step), params)
        return values[index]
    xy = window.locations()
    tm = window.times()
    return correlation_array(xy[None, :, 0] - xy[:, None, 0],
                             xy[None, :, 1] - xy[:, None, 1],
                             tm[None, :] - tm[:, None], params)


def cross_cov(xy_a, t_a, xy_b, t_b, params: DriftParams) -> np.ndarray:
    """Covariance block between point sets ``a`` (rows) and ``b`` (columns)."""
    xy_a = np.atleast_2d(np.asarray(xy_a, dtype=float))
    xy_b = np.atleast_2d(np.asarray(xy_b, dtype=float))
    t_a = np.atleast_1d(np.asarray(t_a, dtype=float))
    t_b = np.atleast_1d(np.asarray(t_b, dtype=float))
    return correlation_array(xy_b[None, :, 0] - xy_a[:, None, 0],
                             xy_b[None, :, 1] - xy_a[:, None, 1],
                             t_b[None, :] - t_a[:, None], params)
