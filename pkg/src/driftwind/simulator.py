"""Exact Gaussian simulation from the drift model.

Two entry points: :func:`simulate_window` draws one target window directly
from the drifted covariance, and :func:`simulate_domain` draws a full grid
under a constant or rotational wind by warping locations through time and
evaluating the symmetric base correlation between warped coordinates.

Random numbers come from numpy's counter-based Philox bit generator; the
seed is recorded in every manifest.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import blas, lapack

from .covmodel import JITTER, DriftParams, cov_matrix, correlation_array
from .gridstore import GridGeometry, GridStack, TargetWindow, write_gridstack
from .scanner import WindField, write_windfield

MAX_JOINT_DIM = 12_000
GENERATOR_NAME = "numpy.random.Philox"

# Constant and rotational experiment settings on the 60 x 60 unit square.
TABLE2_PIXEL_SIZE = 1.0 / 59.0
TABLE2_ALPHA1 = 0.075
TABLE2_ALPHA2 = 15.0
TABLE2_DRIFT = (0.058, 0.058)
TABLE2_ROTATION_DEG = 6.0


class SimulationError(RuntimeError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class WindFieldSpec:
    kind: str = "constant"
    u_const: tuple[float, float] = (0.0, 0.0)
    rotation_deg_per_step: float = 0.0
    rotation_center: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "rotational"):
            raise ValueError(f"unknown wind kind {self.kind!r}")
        if self.kind == "constant" and not np.all(np.isfinite(self.u_const)):
            raise ValueError("u_const must be finite")
        if self.kind == "rotational" and not np.isfinite(self.rotation_deg_per_step):
            raise ValueError("rotation angle must be finite")
        object.__setattr__(self, "u_const", tuple(float(c) for c in self.u_const))


@dataclass(frozen=True)
class SimConfig:
    grid: GridGeometry
    params: DriftParams
    seed: int = 0


def _sample(sigma: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw ``L @ xi`` from N(0, sigma); ``sigma`` is overwritten."""
    n = len(sigma)
    sigma.flat[::n + 1] += JITTER
    # sigma is symmetric, so its transpose is a Fortran-ordered view of it
    factor, info = lapack.dpotrf(sigma.T, lower=0, clean=0, overwrite_a=1)
    if info != 0:
        raise SimulationError(f"covariance not positive definite (info={info})")
    xi = rng.standard_normal(n)
    return blas.dtrmv(factor, xi, lower=0, trans=1)


def simulate_window(size: int, params: DriftParams, seed: int,
                    pixel_size: float = 1.0, time_step: float = 1.0) -> GridStack:
    """Draw one ``3 x size x size`` stack from the drift covariance."""
    if size < 1 or size % 2 == 0:
        raise ValueError("size must be a positive odd integer")
    hw = size // 2
    window = TargetWindow((hw, hw), 1, hw, pixel_size, time_step)
    if len(window) > MAX_JOINT_DIM:
        raise SimulationError("window too large for dense simulation")
    sigma = np.array(cov_matrix(window, params), order="C")
    z = _sample(sigma, make_rng(seed))
    geom = GridGeometry(size, size, 3, pixel_size, time_step)
    return GridStack(geom, z.reshape(3, size, size))


def _rotation(angle_rad):
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[c, -s], [s, c]])


def default_rotation_center(grid: GridGeometry):
    return (grid.origin[0] + 0.5 * (grid.width - 1) * grid.pixel_size,
            grid.origin[1] + 0.5 * (grid.height - 1) * grid.pixel_size)


def warp_coordinates(spec: WindFieldSpec, grid: GridGeometry) -> np.ndarray:
    """Base-process coordinates of every (t, i, j), shape ``(T*H*W, 2)``.

    Constant: ``x - u t``.  Rotational: ``x`` rotated about the centre by
    ``-angle * t``, so features turn counter-clockwise (in x-y axes) by
    ``angle`` per frame.
    """
    ii, jj = np.meshgrid(np.arange(grid.height), np.arange(grid.width),
                         indexing="ij")
    xy = grid.location(ii.ravel(), jj.ravel())
    out = []
    for k in range(grid.n_times):
        t = k * grid.time_step
        if spec.kind == "constant":
            out.append(xy - np.asarray(spec.u_const) * t)
        else:
            c = np.asarray(spec.rotation_center or default_rotation_center(grid))
            rot = _rotation(-np.deg2rad(spec.rotation_deg_per_step) * k)
            out.append((xy - c) @ rot.T + c)
    return np.concatenate(out)


def domain_covariance(spec: WindFieldSpec, sim: SimConfig,
                      block_rows: int = 1024) -> np.ndarray:
    """Joint covariance of all grid points under the warped model."""
    grid = sim.grid
    warped = warp_coordinates(spec, grid)
    times = np.repeat(np.arange(grid.n_times) * grid.time_step,
                      grid.height * grid.width)
    base = DriftParams(sim.params.alpha1, sim.params.alpha2, (0.0, 0.0),
                       sim.params.sigma2)
    n = len(times)
    sigma = np.empty((n, n))
    for start in range(0, n, block_rows):
        stop = min(n, start + block_rows)
        sigma[start:stop] = correlation_array(
            warped[None, :, 0] - warped[start:stop, None, 0],
            warped[None, :, 1] - warped[start:stop, None, 1],
            times[None, :] - times[start:stop, None], base)
    return sigma


def true_wind(spec: WindFieldSpec, grid: GridGeometry) -> np.ndarray:
    """Per-pixel true wind, shape ``(2, H, W)`` in length units per time unit.

    For rotation this is the displacement of a feature over one frame.
    """
    ii, jj = np.meshgrid(np.arange(grid.height), np.arange(grid.width),
                         indexing="ij")
    if spec.kind == "constant":
        u = np.empty((2, grid.height, grid.width))
        u[0] = spec.u_const[0]
        u[1] = spec.u_const[1]
        return u
    xy = grid.location(ii, jj)
    c = np.asarray(spec.rotation_center or default_rotation_center(grid))
    rot = _rotation(np.deg2rad(spec.rotation_deg_per_step))
    moved = (xy - c) @ rot.T + c
    disp = (moved - xy) / grid.time_step
    return np.moveaxis(disp, -1, 0)


def simulate_domain(spec: WindFieldSpec, sim: SimConfig,
                    allow_large: bool = False):
    """Draw a full grid stack and its true wind field.

    Returns
    -------
    stack : GridStack
    truth : WindField
        Zero variances, valid everywhere.
    """
    grid = sim.grid
    n = int(np.prod(grid.shape))
    if n > MAX_JOINT_DIM and not allow_large:
        raise SimulationError(
            f"joint dimension {n} exceeds {MAX_JOINT_DIM}; pass allow_large")
    sigma = domain_covariance(spec, sim)
    z = _sample(sigma, make_rng(sim.seed))
    del sigma
    stack = GridStack(grid, z.reshape(grid.shape))
    wind = true_wind(spec, grid)
    shape = grid.shape
    truth = WindField(
        geometry=grid,
        u_map=np.broadcast_to(wind[0], shape).copy(),
        v_map=np.broadcast_to(wind[1], shape).copy(),
        var_u_map=np.zeros(shape), var_v_map=np.zeros(shape),
        valid_mask=np.ones(shape, dtype=bool),
        provenance={"method": "truth", "spec": asdict(spec),
                    "seed": int(sim.seed)})
    return stack, truth


def table2_setup(kind: str, seed: int = 0, size: int = 60):
    """The constant / rotational experiment configuration on the unit square."""
    grid = GridGeometry(size, size, 3, TABLE2_PIXEL_SIZE, 1.0)
    params = DriftParams(TABLE2_ALPHA1, TABLE2_ALPHA2)
    if kind == "constant":
        spec = WindFieldSpec("constant", u_const=TABLE2_DRIFT)
    elif kind == "rotational":
        spec = WindFieldSpec("rotational",
                             rotation_deg_per_step=TABLE2_ROTATION_DEG)
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return spec, SimConfig(grid, params, seed)


def write_simulation(outdir, stack: GridStack, truth: WindField,
                     spec: WindFieldSpec, sim: SimConfig):
    """Write ``data``, ``truth`` and ``manifest.json`` into ``outdir``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_gridstack(stack, outdir / "data")
    write_windfield(truth, outdir / "truth")
    manifest = {
        "spec": asdict(spec),
        "params": sim.params.to_dict(),
        "grid": sim.grid.to_header(),
        "seed": int(sim.seed),
        "generator": GENERATOR_NAME,
    }
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
