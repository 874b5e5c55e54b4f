"""Sliding-window drift estimation over a standardized stack."""
from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .covmodel import DriftParams
from .gridstore import (GridError, GridGeometry, GridStack, OutOfDomainError,
                        TargetWindow, read_layers, slice_window, window_fits,
                        write_layers)
from .likelihood import DEFAULT_BUDGET, FitResult, default_init, fit_window

WORKERS_ENV = "DRIFTWIND_WORKERS"

# Layers written for every wind field, in file order.
CORE_LAYERS = ("u", "v", "var_u", "var_v", "valid")


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def config_hash(config) -> str:
    payload = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(eq=False)
class WindField:
    """Per-pixel, per-time wind estimates.

    ``u_map``/``v_map`` hold the column- and row-direction components; the
    variance maps hold ``+inf`` where a fit failed.  Extra per-pixel layers
    (fitted ranges, log-likelihood, ...) live in ``diagnostics``.
    """

    geometry: GridGeometry
    u_map: np.ndarray
    v_map: np.ndarray
    var_u_map: np.ndarray
    var_v_map: np.ndarray
    valid_mask: np.ndarray
    provenance: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def empty(cls, geometry: GridGeometry, provenance=None, diagnostics=()):
        shape = geometry.shape
        nan = np.full(shape, np.nan)
        return cls(geometry, nan.copy(), nan.copy(), np.full(shape, np.inf),
                   np.full(shape, np.inf), np.zeros(shape, dtype=bool),
                   dict(provenance or {}),
                   {name: nan.copy() for name in diagnostics})

    @property
    def method(self) -> str:
        return self.provenance.get("method", "")

    def vectors(self, t: int) -> np.ndarray:
        """``(2, H, W)`` wind at time ``t``."""
        return np.stack([self.u_map[t], self.v_map[t]])

    def copy(self, **changes) -> "WindField":
        out = WindField(self.geometry, self.u_map.copy(), self.v_map.copy(),
                        self.var_u_map.copy(), self.var_v_map.copy(),
                        self.valid_mask.copy(), dict(self.provenance),
                        {k: v.copy() for k, v in self.diagnostics.items()})
        for key, value in changes.items():
            setattr(out, key, value)
        return out

    def to_records(self, t: int | None = None):
        """Per-pixel rows ``(t, i, j, x, y, u, v, var_u, var_v)`` of valid cells."""
        rows = []
        times = range(self.geometry.n_times) if t is None else [t]
        for k in times:
            ii, jj = np.nonzero(self.valid_mask[k])
            xy = self.geometry.location(ii, jj)
            for n, (i, j) in enumerate(zip(ii, jj)):
                rows.append((k, int(i), int(j), float(xy[n, 0]), float(xy[n, 1]),
                             float(self.u_map[k, i, j]), float(self.v_map[k, i, j]),
                             float(self.var_u_map[k, i, j]),
                             float(self.var_v_map[k, i, j])))
        return rows


def write_windfield(wf: WindField, path) -> Path:
    path = Path(path)
    layers = {"u": wf.u_map, "v": wf.v_map, "var_u": wf.var_u_map,
              "var_v": wf.var_v_map, "valid": wf.valid_mask.astype(float)}
    layers.update({f"diag:{k}": v for k, v in wf.diagnostics.items()})
    out = write_layers(path, layers, wf.geometry)
    stem = out.with_suffix("")
    with open(stem.with_name(stem.name + ".provenance.json"), "w") as fh:
        json.dump(wf.provenance, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return out


def read_windfield(path) -> WindField:
    layers, geom, _ = read_layers(path)
    missing = set(CORE_LAYERS) - layers.keys()
    if missing:
        raise GridError(f"wind field file lacks layers {sorted(missing)}")
    stem = Path(path)
    if stem.suffix in (".json", ".bin"):
        stem = stem.with_suffix("")
    prov_path = stem.with_name(stem.name + ".provenance.json")
    provenance = {}
    if prov_path.exists():
        with open(prov_path) as fh:
            provenance = json.load(fh)
    diagnostics = {k[5:]: v for k, v in layers.items() if k.startswith("diag:")}
    return WindField(geom, layers["u"], layers["v"], layers["var_u"],
                     layers["var_v"], layers["valid"].astype(bool),
                     provenance, diagnostics)


@dataclass(frozen=True)
class ScanConfig:
    half_width: int = 7
    stride: int = 1
    budget: int = DEFAULT_BUDGET
    # second Nelder-Mead start from a block-matching estimate on the window
    dmwa_init: bool = True
    # None: the largest template that leaves room for the search radius
    dmwa_inner_size: int | None = None
    dmwa_search_radius: int = 4
    # reuse the previous centre's optimum as an extra start (forces serial)
    warm_start: bool = False
    workers: int = 1

    def numeric_dict(self) -> dict:
        """Fields that can change results (the worker count cannot)."""
        d = asdict(self)
        d.pop("workers")
        return d


def admissible_centers(geometry: GridGeometry, half_width: int, stride: int = 1,
                       margin: int | None = None):
    margin = half_width if margin is None else margin
    rows = range(margin, geometry.height - margin, stride)
    cols = range(margin, geometry.width - margin, stride)
    return [(i, j) for i in rows for j in cols]


def window_dmwa_estimate(stack_values: np.ndarray, window: TargetWindow,
                         inner_size: int | None, search_radius: int):
    """Central block-matching estimate using only the window's own data.

    With ``inner_size=None`` the template is the largest square that keeps
    the search inside the window (side ``window.side - 2 * radius``).
    Returns the physical-unit drift, or ``None`` if the window is too small.
    """
    from .dmwa import mean_displacement_array

    side = window.side
    if inner_size is None:
        radius = min(search_radius, window.half_width - 1)
        inner_size = side - 2 * radius
    inner_half = inner_size // 2
    radius = min(search_radius, window.half_width - inner_half)
    if radius < 1:
        return None
    ci, cj = window.center
    hw = window.half_width
    block = stack_values[window.t - 1:window.t + 2,
                         ci - hw:ci + hw + 1, cj - hw:cj + hw + 1]
    if block.shape != (3, side, side):
        return None
    disp = mean_displacement_array(block, (hw, hw), 1, inner_size, radius)
    speed = window.pixel_size / window.time_step
    return (float(disp[0] * speed), float(disp[1] * speed))


def fit_center(stack: GridStack, center, t: int, config: ScanConfig,
               previous: DriftParams | None = None) -> FitResult:
    window, z = slice_window(stack, center, t, config.half_width)
    init = default_init(window)
    extra = []
    if config.dmwa_init:
        u0 = window_dmwa_estimate(stack.values, window, config.dmwa_inner_size,
                                  config.dmwa_search_radius)
        if u0 is not None:
            extra.append(init.with_drift(u0))
    if previous is not None:
        extra.append(previous)
    return fit_window(z, window, init=init, budget=config.budget,
                      extra_inits=extra)


_WORKER_STACK = None


def _init_worker(stack):
    global _WORKER_STACK
    _WORKER_STACK = stack


def _worker_task(args):
    center, t, config = args
    return fit_center(_WORKER_STACK, center, t, config)


def run_tasks(stack: GridStack, tasks, config: ScanConfig):
    """Fit every ``(center, t)`` task; results come back in task order."""
    workers = max(1, int(config.workers))
    if config.warm_start:
        results, previous = [], None
        for center, t in tasks:
            res = fit_center(stack, center, t, config, previous)
            previous = res.params_hat if res.converged else None
            results.append(res)
        return results
    if workers == 1 or len(tasks) <= 1:
        return [fit_center(stack, c, t, config) for c, t in tasks]
    payload = [(c, t, config) for c, t in tasks]
    chunk = max(1, len(payload) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                             initargs=(stack,)) as pool:
        return list(pool.map(_worker_task, payload, chunksize=chunk))


DIAGNOSTIC_LAYERS = ("alpha1", "alpha2", "loglik", "converged", "hessian_ok",
                     "n_evals")


def scan(stack: GridStack, half_width: int | None = None,
         t_range: Iterable[int] | None = None, config: ScanConfig | None = None,
         centers: Sequence[tuple[int, int]] | None = None) -> WindField:
    """Estimate the drift at every admissible centre and time.

    ``t_range`` defaults to every time with both neighbours present.  Centres
    default to the stride-``config.stride`` lattice of pixels whose window
    fits inside the grid; explicit ``centers`` must also fit.
    """
    config = config or ScanConfig()
    if half_width is not None:
        config = replace(config, half_width=int(half_width))
    hw = config.half_width
    geom = stack.geometry
    times = list(range(1, geom.n_times - 1)) if t_range is None else list(t_range)
    for t in times:
        if not 1 <= t <= geom.n_times - 2:
            raise OutOfDomainError(f"time {t} lacks a neighbouring frame")
    if centers is None:
        centers = admissible_centers(geom, hw, config.stride)
    else:
        centers = [(int(i), int(j)) for i, j in centers]
        bad = [c for c in centers if not window_fits(geom, c, 1, hw)]
        if bad:
            raise OutOfDomainError(f"centres {bad[:3]} do not admit a window")
    if not centers or not times:
        raise OutOfDomainError(
            f"no admissible centre for half_width={hw} on grid {geom.shape}")
    tasks = [(c, t) for t in times for c in centers]
    results = run_tasks(stack, tasks, config)
    out_config = {"scan": config.numeric_dict(), "times": times,
                  "n_centers": len(centers)}
    wf = WindField.empty(geom, {
        "method": "stdm", "half_width": hw, "window_size": 2 * hw + 1,
        "config": out_config, "config_hash": config_hash(out_config)},
        DIAGNOSTIC_LAYERS)
    for (center, t), res in zip(tasks, results):
        i, j = center
        u1, u2 = res.params_hat.u
        wf.u_map[t, i, j] = u1
        wf.v_map[t, i, j] = u2
        failed = not (res.converged and res.hessian_ok)
        wf.var_u_map[t, i, j] = np.inf if failed else res.var_u[0]
        wf.var_v_map[t, i, j] = np.inf if failed else res.var_u[1]
        wf.valid_mask[t, i, j] = bool(np.isfinite(u1) and np.isfinite(u2))
        d = wf.diagnostics
        d["alpha1"][t, i, j] = res.params_hat.alpha1
        d["alpha2"][t, i, j] = res.params_hat.alpha2
        d["loglik"][t, i, j] = res.loglik
        d["converged"][t, i, j] = float(res.converged)
        d["hessian_ok"][t, i, j] = float(res.hessian_ok)
        d["n_evals"][t, i, j] = res.n_evals
    return wf
