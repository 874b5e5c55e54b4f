"""Windowed Gaussian log-likelihood, its maximization and observed information."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

from .covmodel import JITTER, DriftParams, cov_matrix
from .gridstore import TargetWindow

#: Free parameters are (log alpha1, log alpha2, u1, u2).
N_PARAMS = 4
MIN_WINDOW_POINTS = 12
DEFAULT_BUDGET = 2000
SIMPLEX_TOL = 1e-5
HESSIAN_REL_STEP = 1e-4
# log-range bounds in pixel units; outside them the objective is +inf
_LOG_ALPHA_BOUNDS = (np.log(1e-3), np.log(1e4))


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


def _cholesky(sigma: np.ndarray) -> np.ndarray:
    sigma = sigma + JITTER * np.eye(len(sigma))
    try:
        return scipy.linalg.cholesky(sigma, lower=True, overwrite_a=True,
                                     check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from None


def gaussian_loglik(z: np.ndarray, sigma: np.ndarray) -> float:
    """``-0.5 log|sigma| - 0.5 z' sigma^-1 z`` via Cholesky (no 2*pi term)."""
    chol = _cholesky(sigma)
    w = scipy.linalg.solve_triangular(chol, z, lower=True, check_finite=False)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * logdet - 0.5 * (w @ w))


def loglik(z, window: TargetWindow, params: DriftParams) -> float:
    z = np.asarray(z, dtype=float)
    if z.shape != (len(window),):
        raise ValueError(f"data length {z.size} != window size {len(window)}")
    return gaussian_loglik(z, cov_matrix(window, params))


def numerical_hessian(fun: Callable[[np.ndarray], float], x, steps) -> np.ndarray:
    """Central-difference Hessian of ``fun`` at ``x``, symmetrized."""
    x = np.asarray(x, dtype=float)
    steps = np.asarray(steps, dtype=float)
    n = x.size
    f0 = fun(x)
    hess = np.empty((n, n))
    eye = np.eye(n)
    for i in range(n):
        ei = eye[i] * steps[i]
        hess[i, i] = (fun(x + ei) - 2.0 * f0 + fun(x - ei)) / steps[i] ** 2
        for j in range(i + 1, n):
            ej = eye[j] * steps[j]
            hess[i, j] = (fun(x + ei + ej) - fun(x + ei - ej)
                          - fun(x - ei + ej) + fun(x - ei - ej)) / (
                4.0 * steps[i] * steps[j])
            hess[j, i] = hess[i, j]
    if not np.all(np.isfinite(hess)):
        raise FloatingPointError("non-finite finite differences in Hessian")
    return 0.5 * (hess + hess.T)


@dataclass
class FitResult:
    params_hat: DriftParams
    loglik: float
    var_u: tuple[float, float]
    hessian_ok: bool
    n_evals: int
    converged: bool
    information: np.ndarray | None = field(default=None, repr=False)
    n_starts: int = 1


class _PixelProblem:
    """The likelihood in pixel/frame units, where the optimizer works.

    Rescaling space by ``pixel_size`` and time by ``time_step`` leaves the
    likelihood unchanged, so fits are invariant to the physical units.
    """

    def __init__(self, z, window: TargetWindow):
        self.z = np.asarray(z, dtype=float)
        if self.z.shape != (len(window),):
            raise ValueError(
                f"data length {self.z.size} != window size {len(window)}")
        self.window = TargetWindow(window.center, window.t, window.half_width,
                                   1.0, 1.0, window.time_offsets,
                                   window.members)
        self.speed = window.pixel_size / window.time_step
        self.pixel_size = window.pixel_size
        self.time_step = window.time_step

    def to_vector(self, params: DriftParams, log=True) -> np.ndarray:
        a1 = params.alpha1 / self.pixel_size
        a2 = params.alpha2 / self.time_step
        u1, u2 = np.asarray(params.u) / self.speed
        if log:
            return np.array([np.log(a1), np.log(a2), u1, u2])
        return np.array([a1, a2, u1, u2])

    def to_params(self, x, log=True) -> DriftParams:
        a1, a2 = (np.exp(x[:2]) if log else x[:2])
        return DriftParams(float(a1 * self.pixel_size),
                           float(a2 * self.time_step),
                           (float(x[2] * self.speed), float(x[3] * self.speed)))

    def loglik_vec(self, x, log=True) -> float:
        if log:
            if np.any(x[:2] < _LOG_ALPHA_BOUNDS[0]) or \
                    np.any(x[:2] > _LOG_ALPHA_BOUNDS[1]):
                return -np.inf
            a1, a2 = np.exp(x[:2])
        else:
            a1, a2 = x[:2]
            if a1 <= np.exp(_LOG_ALPHA_BOUNDS[0]) or \
                    a2 <= np.exp(_LOG_ALPHA_BOUNDS[0]):
                return -np.inf
        if not np.all(np.isfinite(x)):
            return -np.inf
        params = DriftParams(float(a1), float(a2), (float(x[2]), float(x[3])))
        try:
            return gaussian_loglik(self.z, cov_matrix(self.window, params))
        except NotPositiveDefiniteError:
            return -np.inf

    def information(self, x) -> np.ndarray:
        """Observed information wrt (log a1, log a2, u1, u2), pixel units."""
        steps = HESSIAN_REL_STEP * np.maximum(np.abs(x), 1.0)
        return -numerical_hessian(self.loglik_vec, x, steps)


def default_init(window: TargetWindow) -> DriftParams:
    return DriftParams(2.0 * window.pixel_size, 2.0 * window.time_step, (0.0, 0.0))


def _physical_information(info_px: np.ndarray, speed: float) -> np.ndarray:
    scale = np.array([1.0, 1.0, speed, speed])
    return info_px / np.outer(scale, scale)


def observed_information(z, window: TargetWindow, params_hat: DriftParams,
                         rel_step: float = HESSIAN_REL_STEP) -> np.ndarray:
    """Negative Hessian of the log-likelihood at ``params_hat``.

    Coordinates are ``(log alpha1, log alpha2, u1, u2)`` with ``u`` in the
    window's physical units.  Differences are taken in pixel/frame units with
    step ``rel_step * max(|x_i|, 1)`` per coordinate.
    """
    prob = _PixelProblem(z, window)
    x = prob.to_vector(params_hat)
    steps = rel_step * np.maximum(np.abs(x), 1.0)
    info_px = -numerical_hessian(prob.loglik_vec, x, steps)
    return _physical_information(info_px, prob.speed)


def _variances(info: np.ndarray):
    """u-diagonal of the inverse information, or ``None`` if not PD."""
    try:
        np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        return None
    cov = np.linalg.inv(info)
    var = np.diag(cov)[2:4]
    if not np.all(np.isfinite(var)) or np.any(var <= 0):
        return None
    return float(var[0]), float(var[1])


def _initial_simplex(x0, log=True):
    steps = np.array([0.5, 0.5, 1.0, 1.0])
    if not log:
        steps[:2] = 0.5 * x0[:2]
    return np.vstack([x0, x0 + np.diag(steps)])


def fit_window(z, window: TargetWindow, init: DriftParams | None = None,
               budget: int = DEFAULT_BUDGET,
               extra_inits: Sequence[DriftParams] = (),
               parameterization: str = "log",
               compute_variance: bool = True) -> FitResult:
    """Maximize the window log-likelihood with Nelder-Mead.

    Every start in ``[init, *extra_inits]`` is run with the full ``budget``
    and the highest-likelihood optimum is kept.  A start that exhausts its
    budget gives ``converged=False`` rather than an exception.
    """
    if len(window) < MIN_WINDOW_POINTS:
        raise ValueError(
            f"window has {len(window)} points; need >= {MIN_WINDOW_POINTS}")
    if parameterization not in ("log", "linear"):
        raise ValueError("parameterization must be 'log' or 'linear'")
    log = parameterization == "log"
    prob = _PixelProblem(z, window)
    starts = [init or default_init(window), *extra_inits]

    def objective(x):
        value = prob.loglik_vec(x, log=log)
        return -value if np.isfinite(value) else np.inf

    best = None
    n_evals = 0
    for start in starts:
        x0 = prob.to_vector(start, log=log)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(objective, x0, method="Nelder-Mead", options={
                "xatol": SIMPLEX_TOL, "fatol": np.inf, "maxfev": budget,
                "initial_simplex": _initial_simplex(x0, log=log)})
        n_evals += res.nfev
        if best is None or res.fun < best.fun:
            best = res
    x_hat = best.x
    converged = bool(best.status == 0 and np.isfinite(best.fun))
    params_hat = prob.to_params(x_hat, log=log)
    if not log:
        x_hat = prob.to_vector(params_hat)
    var_u, info, ok = (np.inf, np.inf), None, False
    if compute_variance and np.isfinite(best.fun):
        try:
            info = _physical_information(prob.information(x_hat), prob.speed)
            n_evals += 1 + 2 * N_PARAMS + 2 * N_PARAMS * (N_PARAMS - 1)
        except FloatingPointError:
            info = None
        if info is not None:
            var = _variances(info)
            if var is not None:
                var_u, ok = var, True
    return FitResult(params_hat=params_hat, loglik=float(-best.fun),
                     var_u=var_u, hessian_ok=ok, n_evals=int(n_evals),
                     converged=converged, information=info,
                     n_starts=len(starts))
