"""Gridded image stacks, target windows and the on-disk grid-stack format.

Coordinate conventions
----------------------
Values are indexed ``[t, i, j]`` (time, row, column).  Pixel ``(i, j)`` sits
at the physical location ``origin + (j * pixel_size, i * pixel_size)``, so the
first spatial component runs along columns and the second along rows.  Wind
vectors use the same ordering: ``u[0]`` is the column-direction component and
``u[1]`` the row-direction component, in length units per time unit.

File format
-----------
A stack named ``name`` is stored as ``name.json`` (header), ``name.bin``
(``T*H*W`` little-endian float64, t-major then row-major) and an optional
``name.mask.bin`` holding one byte per element (1 = missing).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

HEADER_KEYS = {
    "width", "height", "n_times", "pixel_size", "time_step", "origin",
    "dtype", "order", "endianness",
}
OPTIONAL_HEADER_KEYS = {"layers", "extra"}


class GridError(ValueError):
    """Base class for grid-stack errors."""


class HeaderError(GridError):
    """Malformed or inconsistent grid-stack header."""


class PayloadLengthError(GridError):
    """Binary payload does not hold the number of elements the header promises."""


class NonFiniteValueError(GridError):
    """An unmasked value is NaN or infinite."""


class OutOfDomainError(GridError):
    """A requested window or index range leaves the grid."""


class MissingDataError(GridError):
    """A window touches missing observations."""


class GeometryMismatchError(GridError):
    """Two objects that must share a grid do not."""


@dataclass(frozen=True)
class GridGeometry:
    width: int
    height: int
    n_times: int
    pixel_size: float = 1.0
    time_step: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.n_times < 1:
            raise HeaderError(
                f"grid dimensions must be positive, got "
                f"{self.n_times}x{self.height}x{self.width}")
        if not self.pixel_size > 0 or not self.time_step > 0:
            raise HeaderError("pixel_size and time_step must be positive")
        object.__setattr__(self, "origin",
                           (float(self.origin[0]), float(self.origin[1])))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n_times, self.height, self.width)

    def location(self, i, j):
        """Physical ``(x, y)`` of pixel ``(i, j)``; broadcasts over arrays."""
        i = np.asarray(i, dtype=float)
        j = np.asarray(j, dtype=float)
        return np.stack([self.origin[0] + j * self.pixel_size,
                         self.origin[1] + i * self.pixel_size], axis=-1)

    def pixel_of(self, xy):
        """Inverse of :meth:`location`, returning float ``(i, j)``."""
        xy = np.asarray(xy, dtype=float)
        j = (xy[..., 0] - self.origin[0]) / self.pixel_size
        i = (xy[..., 1] - self.origin[1]) / self.pixel_size
        return i, j

    def with_times(self, n_times: int) -> "GridGeometry":
        return GridGeometry(self.width, self.height, n_times,
                            self.pixel_size, self.time_step, self.origin)

    def same_grid(self, other: "GridGeometry") -> bool:
        return (self.width == other.width and self.height == other.height
                and self.pixel_size == other.pixel_size
                and self.origin == other.origin)

    def to_header(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "n_times": self.n_times,
            "pixel_size": self.pixel_size,
            "time_step": self.time_step,
            "origin": list(self.origin),
            "dtype": "f64",
            "order": "t-major,row-major",
            "endianness": "little",
        }


@dataclass(frozen=True, eq=False)
class GridStack:
    """A ``T x H x W`` stack of scalar images with a missing-value mask.

    Instances are treated as immutable; the arrays are flagged read-only.
    """

    geometry: GridGeometry
    values: np.ndarray
    missing_mask: np.ndarray | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, order="C")
        if values.shape != self.geometry.shape:
            raise GeometryMismatchError(
                f"values shape {values.shape} does not match geometry "
                f"{self.geometry.shape}")
        if self.missing_mask is None:
            mask = np.zeros(values.shape, dtype=bool)
        else:
            mask = np.array(self.missing_mask, dtype=bool)
            if mask.shape != values.shape:
                raise GeometryMismatchError("mask shape does not match values")
        bad = ~np.isfinite(values) & ~mask
        if bad.any():
            t, i, j = np.argwhere(bad)[0]
            raise NonFiniteValueError(
                f"non-finite unmasked value at (t={t}, i={i}, j={j})")
        values.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing_mask", mask)

    @classmethod
    def from_array(cls, values, pixel_size=1.0, time_step=1.0,
                   origin=(0.0, 0.0), missing_mask=None) -> "GridStack":
        values = np.asarray(values, dtype=float)
        if values.ndim == 2:
            values = values[None]
        t, h, w = values.shape
        geom = GridGeometry(w, h, t, pixel_size, time_step, origin)
        return cls(geom, values, missing_mask)

    @property
    def shape(self):
        return self.values.shape

    def frame(self, t: int) -> np.ndarray:
        return self.values[t]

    def replace_values(self, values, missing_mask=None) -> "GridStack":
        mask = self.missing_mask if missing_mask is None else missing_mask
        return GridStack(self.geometry, values, mask)

    def subset_times(self, start: int, stop: int) -> "GridStack":
        """Frames ``start:stop`` as a new stack (same spatial grid)."""
        if not 0 <= start < stop <= self.geometry.n_times:
            raise OutOfDomainError(f"time range {start}:{stop} outside stack")
        return GridStack(self.geometry.with_times(stop - start),
                         self.values[start:stop], self.missing_mask[start:stop])


@dataclass(frozen=True, eq=False)
class TargetWindow:
    """Square spatial patch times the three frames ``t-1, t, t+1``.

    Members are enumerated time-major, then row-major over the patch.
    """

    center: tuple[int, int]
    t: int
    half_width: int
    pixel_size: float = 1.0
    time_step: float = 1.0
    time_offsets: tuple[int, ...] = (-1, 0, 1)
    _members: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.half_width < 0:
            raise ValueError("half_width must be >= 0")
        if self._members is None:
            object.__setattr__(self, "_members", _window_members(
                self.center, self.t, self.half_width, self.time_offsets))

    @classmethod
    def from_points(cls, tij, pixel_size=1.0, time_step=1.0) -> "TargetWindow":
        """Build a window from an explicit ``(n, 3)`` array of (t, i, j)."""
        tij = np.asarray(tij, dtype=np.int64).reshape(-1, 3)
        if len(tij) == 0:
            raise ValueError("window must contain at least one point")
        return cls(center=(int(tij[0, 1]), int(tij[0, 2])), t=int(tij[0, 0]),
                   half_width=0, pixel_size=pixel_size, time_step=time_step,
                   time_offsets=(0,), _members=tij)

    @property
    def side(self) -> int:
        return 2 * self.half_width + 1

    @property
    def members(self) -> np.ndarray:
        """``(n, 3)`` integer array of (t, i, j) in canonical order."""
        return self._members

    def __len__(self):
        return len(self._members)

    @cached_property
    def is_regular(self) -> bool:
        expected = _window_members(self.center, self.t, self.half_width,
                                   self.time_offsets)
        return (expected.shape == self._members.shape
                and bool(np.all(expected == self._members)))

    def locations(self) -> np.ndarray:
        """Physical ``(n, 2)`` coordinates, origin-free (only lags matter)."""
        m = self._members
        return np.stack([m[:, 2] * self.pixel_size,
                         m[:, 1] * self.pixel_size], axis=1).astype(float)

    def times(self) -> np.ndarray:
        return self._members[:, 0] * float(self.time_step)


def _window_members(center, t, half_width, time_offsets):
    ci, cj = center
    offs = np.arange(-half_width, half_width + 1)
    di, dj = np.meshgrid(offs, offs, indexing="ij")
    n = di.size
    blocks = []
    for dt in time_offsets:
        blocks.append(np.column_stack([
            np.full(n, t + dt), ci + di.ravel(), cj + dj.ravel()]))
    return np.concatenate(blocks).astype(np.int64)


def window_fits(geometry: GridGeometry, center, t, half_width,
                time_offsets=(-1, 0, 1)) -> bool:
    ci, cj = center
    return (ci - half_width >= 0 and cj - half_width >= 0
            and ci + half_width < geometry.height
            and cj + half_width < geometry.width
            and t + min(time_offsets) >= 0
            and t + max(time_offsets) < geometry.n_times)


def slice_window(stack: GridStack, center, t: int, half_width: int,
                 time_offsets=(-1, 0, 1)):
    """Extract the target window centred at ``center`` (row, col) and time ``t``.

    Returns
    -------
    window : TargetWindow
    z : ndarray of length ``len(time_offsets) * (2*half_width+1)**2``
    """
    geom = stack.geometry
    center = (int(center[0]), int(center[1]))
    if not window_fits(geom, center, t, half_width, time_offsets):
        raise OutOfDomainError(
            f"window centre {center}, t={t}, half_width={half_width} exceeds "
            f"grid {geom.shape}")
    window = TargetWindow(center, int(t), int(half_width), geom.pixel_size,
                          geom.time_step, tuple(time_offsets))
    ci, cj = center
    rows = slice(ci - half_width, ci + half_width + 1)
    cols = slice(cj - half_width, cj + half_width + 1)
    times = [t + dt for dt in time_offsets]
    if stack.missing_mask[times, rows, cols].any():
        raise MissingDataError(
            f"window centre {center}, t={t} touches missing data")
    z = stack.values[times, rows, cols].reshape(-1).copy()
    return window, z


# -- serialization -----------------------------------------------------------

def _stem(path) -> Path:
    path = Path(path)
    if path.suffix in (".json", ".bin"):
        path = path.with_suffix("")
    return path


def write_gridstack(stack: GridStack, path, extra: dict | None = None) -> Path:
    """Write ``stack`` as ``<stem>.json`` + ``<stem>.bin`` (+ mask if needed)."""
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    header = stack.geometry.to_header()
    if extra:
        header["extra"] = extra
    stack.values.astype("<f8").tofile(stem.with_suffix(".bin"))
    mask_path = stem.with_name(stem.name + ".mask.bin")
    if stack.missing_mask.any():
        stack.missing_mask.astype(np.uint8).tofile(mask_path)
    elif mask_path.exists():
        mask_path.unlink()
    with open(stem.with_suffix(".json"), "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return stem.with_suffix(".json")


def read_header(path) -> dict:
    stem = _stem(path)
    try:
        with open(stem.with_suffix(".json")) as fh:
            header = json.load(fh)
    except json.JSONDecodeError as exc:
        raise HeaderError(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise HeaderError("header must be a JSON object")
    missing = HEADER_KEYS - header.keys()
    unknown = header.keys() - HEADER_KEYS - OPTIONAL_HEADER_KEYS
    if missing:
        raise HeaderError(f"header missing keys: {sorted(missing)}")
    if unknown:
        raise HeaderError(f"header has unknown keys: {sorted(unknown)}")
    if header["dtype"] != "f64" or header["endianness"] != "little":
        raise HeaderError("only little-endian f64 payloads are supported")
    if header["order"] != "t-major,row-major":
        raise HeaderError(f"unsupported order {header['order']!r}")
    return header


def _geometry_from_header(header) -> GridGeometry:
    try:
        origin = header["origin"]
        if len(origin) != 2:
            raise HeaderError("origin must hold two numbers")
        return GridGeometry(int(header["width"]), int(header["height"]),
                            int(header["n_times"]), float(header["pixel_size"]),
                            float(header["time_step"]),
                            (float(origin[0]), float(origin[1])))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, HeaderError):
            raise
        raise HeaderError(f"bad header field: {exc}") from exc


def read_gridstack(path) -> GridStack:
    """Read a stack written by :func:`write_gridstack`."""
    stem = _stem(path)
    header = read_header(stem)
    geom = _geometry_from_header(header)
    n = int(np.prod(geom.shape))
    raw = np.fromfile(stem.with_suffix(".bin"), dtype="<f8")
    if raw.size != n:
        raise PayloadLengthError(
            f"payload length mismatch: header promises {n} values, "
            f"file holds {raw.size}")
    values = raw.astype(np.float64).reshape(geom.shape)
    mask_path = stem.with_name(stem.name + ".mask.bin")
    mask = None
    if mask_path.exists():
        mraw = np.fromfile(mask_path, dtype=np.uint8)
        if mraw.size != n:
            raise PayloadLengthError(
                f"mask payload length mismatch: expected {n}, got {mraw.size}")
        mask = mraw.reshape(geom.shape).astype(bool)
    return GridStack(geom, values, mask)


def read_csv_stack(path, pixel_size=1.0, time_step=1.0, origin=(0.0, 0.0)):
    """Import a small stack from CSV with columns ``t,i,j,value``.

    Cells that never appear in the file are marked missing.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or \
                not {"t", "i", "j", "value"} <= set(reader.fieldnames):
            raise HeaderError("CSV must have columns t,i,j,value")
        for rec in reader:
            rows.append((int(rec["t"]), int(rec["i"]), int(rec["j"]),
                         float(rec["value"])))
    if not rows:
        raise HeaderError("CSV holds no records")
    arr = np.array(rows)
    tij = arr[:, :3].astype(int)
    if (tij < 0).any():
        raise HeaderError("negative indices in CSV")
    shape = tuple(tij.max(axis=0) + 1)
    values = np.zeros(shape)
    mask = np.ones(shape, dtype=bool)
    values[tij[:, 0], tij[:, 1], tij[:, 2]] = arr[:, 3]
    mask[tij[:, 0], tij[:, 1], tij[:, 2]] = False
    geom = GridGeometry(shape[2], shape[1], shape[0], pixel_size, time_step,
                        origin)
    return GridStack(geom, values, mask)


def write_layers(path, layers: dict[str, np.ndarray], geometry: GridGeometry,
                 extra: dict | None = None) -> Path:
    """Write named ``T x H x W`` layers as one stacked grid file.

    Layers are concatenated along time, so the payload holds
    ``len(layers) * T`` frames; the header records the layer names.
    """
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    names = list(layers)
    data = np.concatenate([np.asarray(layers[k], dtype=float).reshape(
        -1, geometry.height, geometry.width) for k in names])
    header = geometry.with_times(data.shape[0]).to_header()
    header["layers"] = {"names": names, "frames_per_layer": data.shape[0] // len(names)}
    if extra:
        header["extra"] = extra
    data.astype("<f8").tofile(stem.with_suffix(".bin"))
    with open(stem.with_suffix(".json"), "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return stem.with_suffix(".json")


def read_layers(path):
    """Inverse of :func:`write_layers`: returns ``(layers, geometry, extra)``.

    Non-finite entries (e.g. infinite variances) are kept as stored.
    """
    stem = _stem(path)
    header = read_header(stem)
    if "layers" not in header:
        raise HeaderError("file is not a layered grid file")
    geom = _geometry_from_header(header)
    n = int(np.prod(geom.shape))
    raw = np.fromfile(stem.with_suffix(".bin"), dtype="<f8")
    if raw.size != n:
        raise PayloadLengthError(
            f"payload length mismatch: header promises {n} values, "
            f"file holds {raw.size}")
    names = header["layers"]["names"]
    per = int(header["layers"]["frames_per_layer"])
    if per * len(names) != geom.n_times:
        raise HeaderError("layer bookkeeping inconsistent with n_times")
    data = raw.reshape(geom.shape)
    layers = {name: data[k * per:(k + 1) * per].copy()
              for k, name in enumerate(names)}
    return layers, geom.with_times(per), header.get("extra", {})
