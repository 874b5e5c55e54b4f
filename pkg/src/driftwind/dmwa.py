"""Block-matching baseline: SSD tracking, leg averaging, nested tracking.

Displacements are integer pixel shifts ``(du, dv)`` along (column, row),
matching the wind-vector ordering used elsewhere.  A target's displacement
is the mean of its backward (t-1 -> t) and forward (t -> t+1) legs, so
components are always multiples of one half.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from .gridstore import GridStack, OutOfDomainError
from .scanner import WindField, admissible_centers, config_hash


@dataclass(frozen=True)
class DmwaConfig:
    outer_size: int = 15
    inner_size: int = 3
    search_radius: int = 4
    dbscan_eps: float = 1.0
    dbscan_min_pts: int = 4
    # "central": one inner window at the scene centre; "nested": every inner
    # window inside the scene, combined by DBSCAN
    mode: str = "central"

    def __post_init__(self):
        for name in ("outer_size", "inner_size"):
            v = getattr(self, name)
            if v < 1 or v % 2 == 0:
                raise ValueError(f"{name} must be a positive odd integer")
        if self.inner_size > self.outer_size:
            raise ValueError("inner_size must not exceed outer_size")
        if self.search_radius < 0 or self.dbscan_min_pts < 1 or \
                not self.dbscan_eps > 0:
            raise ValueError("invalid search radius or DBSCAN settings")
        if self.mode not in ("central", "nested"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def margin(self) -> int:
        """Pixels needed on each side of a scene centre."""
        half = (self.outer_size if self.mode == "nested" else self.inner_size) // 2
        return half + self.search_radius


@dataclass
class NestedResult:
    displacement: np.ndarray
    vectors: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    n_clusters: int = 0
    cluster_size: int = 0
    fallback: bool = False


def _shift_table(radius: int):
    offs = np.arange(-radius, radius + 1)
    dv, du = np.meshgrid(offs, offs, indexing="ij")
    return du, dv


def ssd_table(frame_from: np.ndarray, frame_to: np.ndarray, center,
              inner_size: int, search_radius: int) -> np.ndarray:
    """SSD for every integer shift; entry ``[dv + r, du + r]``."""
    k = inner_size // 2
    r = search_radius
    ci, cj = center
    h, w = frame_from.shape
    if ci - k - r < 0 or cj - k - r < 0 or ci + k + r >= h or cj + k + r >= w:
        raise OutOfDomainError(
            f"search region around {center} (inner {inner_size}, radius {r}) "
            f"exceeds frame {frame_from.shape}")
    template = frame_from[ci - k:ci + k + 1, cj - k:cj + k + 1]
    region = frame_to[ci - k - r:ci + k + r + 1, cj - k - r:cj + k + r + 1]
    views = sliding_window_view(region, template.shape)
    diff = views - template
    return np.einsum("abij,abij->ab", diff, diff)


def _argmin_shift(table: np.ndarray, radius: int) -> np.ndarray:
    du, dv = _shift_table(radius)
    best = table.min()
    cand = np.flatnonzero(table.ravel() == best)
    keys = sorted(cand, key=lambda n: (du.flat[n] ** 2 + dv.flat[n] ** 2,
                                       du.flat[n], dv.flat[n]))
    n = keys[0]
    return np.array([du.flat[n], dv.flat[n]], dtype=float)


def ssd_match_array(values: np.ndarray, center, t_from: int, t_to: int,
                    inner_size: int, search_radius: int) -> np.ndarray:
    table = ssd_table(values[t_from], values[t_to], center, inner_size,
                      search_radius)
    return _argmin_shift(table, search_radius)


def ssd_match(stack: GridStack, window_center, t_from: int, t_to: int,
              inner_size: int, search_radius: int) -> np.ndarray:
    """Integer shift minimizing the SSD between the inner window at ``t_from``
    and shifted windows at ``t_to``.

    Ties go to the smallest shift norm, then lexicographic ``(du, dv)``.
    """
    _check_times(stack, t_from, t_to)
    return ssd_match_array(stack.values, window_center, t_from, t_to,
                           inner_size, search_radius)


def _check_times(stack, *times):
    for t in times:
        if not 0 <= t < stack.geometry.n_times:
            raise OutOfDomainError(f"time {t} outside stack")


def mean_displacement_array(values, center, t, inner_size, search_radius):
    backward = ssd_match_array(values, center, t - 1, t, inner_size,
                               search_radius)
    forward = ssd_match_array(values, center, t, t + 1, inner_size,
                              search_radius)
    return 0.5 * (backward + forward)


def mean_displacement(stack: GridStack, center, t: int,
                      config: DmwaConfig) -> np.ndarray:
    """Average of the t-1 -> t and t -> t+1 legs, in pixels per frame."""
    _check_times(stack, t - 1, t + 1)
    return mean_displacement_array(stack.values, center, t, config.inner_size,
                                   config.search_radius)


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """DBSCAN labels (``-1`` = noise) independent of point order.

    A point is core if at least ``min_pts`` points (itself included) lie
    within ``eps``.  Clusters are connected components of core points; a
    border point joins the cluster of its nearest core neighbour, ties going
    to the cluster whose smallest member is lexicographically first.  Cluster
    ids are numbered in that same canonical order.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if n == 0:
        return np.zeros(0, dtype=int)
    dist = cdist(points, points)
    near = dist <= eps
    core = near.sum(axis=1) >= min_pts
    labels = np.full(n, -1)
    if not core.any():
        return labels
    core_idx = np.flatnonzero(core)
    graph = csr_matrix(near[np.ix_(core_idx, core_idx)])
    _, comp = connected_components(graph, directed=False)
    # canonical cluster order: lexicographically smallest member point
    keys = {}
    for c in np.unique(comp):
        members = points[core_idx[comp == c]]
        keys[c] = tuple(min(map(tuple, members)))
    order = sorted(keys, key=lambda c: keys[c])
    rank = {c: r for r, c in enumerate(order)}
    labels[core_idx] = [rank[c] for c in comp]
    for p in np.flatnonzero(~core):
        nbrs = core_idx[near[p, core_idx]]
        if len(nbrs) == 0:
            continue
        d = dist[p, nbrs]
        closest = nbrs[d == d.min()]
        labels[p] = min(labels[q] for q in closest)
    return labels


def nested_track(stack: GridStack, scene_center, t: int,
                 config: DmwaConfig) -> NestedResult:
    """Dominant motion of a scene from all nested inner windows."""
    _check_times(stack, t - 1, t + 1)
    return _nested_array(stack.values, scene_center, t, config)


def _nested_array(values, scene_center, t, config: DmwaConfig) -> NestedResult:
    reach = (config.outer_size - config.inner_size) // 2
    ci, cj = scene_center
    vectors = np.array([
        mean_displacement_array(values, (ci + di, cj + dj), t,
                                config.inner_size, config.search_radius)
        for di in range(-reach, reach + 1) for dj in range(-reach, reach + 1)])
    return combine_vectors(vectors, config.dbscan_eps, config.dbscan_min_pts)


def combine_vectors(vectors, eps, min_pts) -> NestedResult:
    """Mean of the largest DBSCAN cluster; all vectors if none is found."""
    vectors = np.asarray(vectors, dtype=float)
    labels = dbscan(vectors, eps, min_pts)
    n_clusters = int(labels.max() + 1) if labels.size else 0
    if n_clusters == 0:
        return NestedResult(vectors.mean(axis=0), vectors, labels, 0,
                            len(vectors), fallback=True)
    sizes = np.bincount(labels[labels >= 0], minlength=n_clusters)
    largest = int(np.argmax(sizes))  # first of equal sizes in canonical order
    members = vectors[labels == largest]
    return NestedResult(members.mean(axis=0), vectors, labels, n_clusters,
                        int(sizes[largest]))


def scene_estimate(values, center, t, config: DmwaConfig) -> np.ndarray:
    if config.mode == "nested":
        return _nested_array(values, center, t, config).displacement
    return mean_displacement_array(values, center, t, config.inner_size,
                                   config.search_radius)


def dmwa_scan(stack: GridStack, t_range=None, config: DmwaConfig | None = None,
              centers=None, stride: int = 1) -> WindField:
    """Block-matching wind field.

    The baseline has no uncertainty measure, so every valid estimate gets
    the same variance sentinel of 1.0; smooth it in unweighted mode.
    """
    config = config or DmwaConfig()
    geom = stack.geometry
    times = list(range(1, geom.n_times - 1)) if t_range is None else list(t_range)
    for t in times:
        if not 1 <= t <= geom.n_times - 2:
            raise OutOfDomainError(f"time {t} lacks a neighbouring frame")
    m = config.margin
    if centers is None:
        centers = admissible_centers(geom, 0, stride, margin=m)
    centers = [(int(i), int(j)) for i, j in centers]
    for i, j in centers:
        if i < m or j < m or i >= geom.height - m or j >= geom.width - m:
            raise OutOfDomainError(f"scene at {(i, j)} needs margin {m}")
    if not centers or not times:
        raise OutOfDomainError("no admissible scene centre")
    speed = geom.pixel_size / geom.time_step
    prov_config = {"dmwa": config.__dict__, "times": times,
                   "n_centers": len(centers)}
    wf = WindField.empty(geom, {
        "method": "dmwa", "window_size": config.outer_size,
        "variance": "uniform sentinel 1.0",
        "config": prov_config, "config_hash": config_hash(prov_config)})
    for t in times:
        for i, j in centers:
            d = scene_estimate(stack.values, (i, j), t, config)
            wf.u_map[t, i, j] = d[0] * speed
            wf.v_map[t, i, j] = d[1] * speed
            wf.var_u_map[t, i, j] = 1.0
            wf.var_v_map[t, i, j] = 1.0
            wf.valid_mask[t, i, j] = True
    return wf
