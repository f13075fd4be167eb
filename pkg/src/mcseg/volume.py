"""Data model for 3D multi-channel volumes, label volumes and simplex fields.

A volume lives on a regular grid of ``n1 x n2 x n3`` voxels.  The linear
index convention is fixed: x varies fastest, then y, then z, i.e.

    index(x, y, z) = x + n1 * (y + n2 * z)

Grids are held as numpy arrays of shape ``(n1, n2, n3)`` indexed ``[x, y, z]``;
linearisation therefore uses Fortran order.  Volumes are immutable after
construction and safe to share across workers.

On-disk format: a UTF-8 JSON sidecar ``<name>.mcv.json`` plus a raw
little-endian payload ``<name>.mcv.raw`` (see `save_volume`).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

SIMPLEX_TOL = 1e-6

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


@dataclass(frozen=True)
class GridShape:
    """Voxel counts per axis."""

    n1: int
    n2: int
    n3: int

    def __post_init__(self):
        for name in ("n1", "n2", "n3"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise InputError(f"{name} must be a positive integer, got {v!r}")

    @property
    def count(self) -> int:
        return self.n1 * self.n2 * self.n3

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.n1, self.n2, self.n3)


def linear_index(shape: GridShape, x, y, z):
    """Linear voxel index with x varying fastest."""
    return x + shape.n1 * (y + shape.n2 * z)


def index_to_coords(shape: GridShape, i):
    """Inverse of `linear_index`."""
    x = i % shape.n1
    rest = i // shape.n1
    return x, rest % shape.n2, rest // shape.n2


def grid_to_flat(grid: np.ndarray) -> np.ndarray:
    """Flatten an (n1, n2, n3) grid to the linear voxel order."""
    return grid.reshape(-1, order="F")


def flat_to_grid(values: np.ndarray, shape: GridShape) -> np.ndarray:
    """Arrange a linear voxel vector as an (n1, n2, n3) grid."""
    return values.reshape(shape.as_tuple(), order="F")


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass
class MultiChannelVolume:
    """``c`` co-registered scalar channels on one grid.

    ``data`` has shape ``(channels, n1, n2, n3)`` and dtype float32; all
    values must be finite.
    """

    shape: GridShape
    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 4 or d.shape[1:] != self.shape.as_tuple():
            raise InputError(
                f"data shape {d.shape} does not match (c, {self.shape.as_tuple()})"
            )
        if d.shape[0] < 1:
            raise InputError("volume needs at least one channel")
        if not np.isfinite(d).all():
            raise InputError("volume contains NaN or Inf values")
        self.data = _freeze(d)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    def channel_subset(self, channels) -> "MultiChannelVolume":
        """New volume restricted to the given channel indices (in order)."""
        channels = list(channels)
        if not channels:
            raise InputError("channel subset must be nonempty")
        if any(c < 0 or c >= self.channels for c in channels):
            raise InputError(f"channel index out of range: {channels}")
        return MultiChannelVolume(self.shape, self.data[channels].copy())


@dataclass
class LabelVolume:
    """One integer label per voxel from {0, ..., num_labels-1}; 0 is background."""

    shape: GridShape
    labels: np.ndarray
    num_labels: int

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.uint8)
        if lab.shape != self.shape.as_tuple():
            raise InputError(f"labels shape {lab.shape} != grid {self.shape.as_tuple()}")
        if self.num_labels < 2:
            raise InputError("num_labels must be at least 2")
        if lab.size and int(lab.max()) >= self.num_labels:
            raise InputError(
                f"label {int(lab.max())} out of range for num_labels={self.num_labels}"
            )
        self.labels = _freeze(lab)

    def flat(self) -> np.ndarray:
        """Labels in linear voxel order."""
        return grid_to_flat(self.labels)

    def foreground_mask(self) -> np.ndarray:
        """Boolean grid, True where label != 0."""
        return self.labels != 0


def _simplex_rows(values: np.ndarray, what: str) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise InputError(f"{what} values must be 2-D (voxels x labels)")
    if v.min(initial=0.0) < 0.0:
        raise InputError(f"{what} has negative entries")
    err = np.abs(v.sum(axis=1) - 1.0).max(initial=0.0)
    if err > SIMPLEX_TOL:
        raise InputError(f"{what} rows do not sum to 1 (max deviation {err:.3e})")
    return v


@dataclass
class SimplexField:
    """Relaxed labeling u: one point on the unit simplex per voxel.

    ``values`` has shape ``(n, num_labels)``, rows nonnegative and summing
    to 1 within ``SIMPLEX_TOL``; row order is the linear voxel order.
    """

    shape: GridShape
    num_labels: int
    values: np.ndarray

    def __post_init__(self):
        v = _simplex_rows(self.values, type(self).__name__)
        if v.shape != (self.shape.count, self.num_labels):
            raise InputError(
                f"values shape {v.shape} != ({self.shape.count}, {self.num_labels})"
            )
        self.values = _freeze(v)


class PosteriorField(SimplexField):
    """Per-voxel posterior distribution over labels (same layout as SimplexField)."""


def one_hot(lab: LabelVolume) -> SimplexField:
    """Indicator field: row i has a single 1 at the voxel's label."""
    flat = lab.flat()
    values = np.zeros((lab.shape.count, lab.num_labels))
    values[np.arange(flat.size), flat] = 1.0
    return SimplexField(lab.shape, lab.num_labels, values)


def argmax_labels(u: SimplexField) -> LabelVolume:
    """Winner-takes-all labels; ties resolve to the lowest label index."""
    flat = np.argmax(u.values, axis=1).astype(np.uint8)
    return LabelVolume(u.shape, flat_to_grid(flat, u.shape), u.num_labels)


def _split_path(path: str) -> str:
    for suffix in (".mcv.json", ".mcv.raw"):
        if path.endswith(suffix):
            return path[: -len(suffix)]
    return path


def save_volume(vol, path: str) -> None:
    """Write ``<path>.mcv.json`` + ``<path>.mcv.raw``.

    Real volumes are stored as little-endian float32, label volumes as
    unsigned bytes.  The payload is channel-major with x varying fastest
    within each channel; `load_volume` inverts the write bit-exactly.
    """
    base = _split_path(path)
    if isinstance(vol, MultiChannelVolume):
        dtype, channels = "f32", vol.channels
        planes = [vol.data[k] for k in range(channels)]
    elif isinstance(vol, LabelVolume):
        dtype, channels = "u8", 1
        planes = [vol.labels]
    else:
        raise InputError(f"cannot save object of type {type(vol).__name__}")
    header = {
        "dims": list(vol.shape.as_tuple()),
        "channels": channels,
        "dtype": dtype,
        "order": "x-fastest",
        "channel_layout": "channel-major",
    }
    payload = b"".join(
        np.ascontiguousarray(grid_to_flat(p)).astype(_DTYPES[dtype]).tobytes()
        for p in planes
    )
    with open(base + ".mcv.json", "w", encoding="utf-8") as fh:
        json.dump(header, fh)
    with open(base + ".mcv.raw", "wb") as fh:
        fh.write(payload)


def load_volume(path: str, num_labels: int | None = None):
    """Load a volume pair written by `save_volume`.

    Returns a `MultiChannelVolume` for dtype f32 and a `LabelVolume` for
    dtype u8.  For label volumes, ``num_labels`` overrides the inferred
    ``max(label) + 1`` and triggers range validation against it.
    """
    base = _split_path(path)
    header_path, raw_path = base + ".mcv.json", base + ".mcv.raw"
    for p in (header_path, raw_path):
        if not os.path.exists(p):
            raise InputError(f"missing volume file: {p}")
    try:
        with open(header_path, encoding="utf-8") as fh:
            header = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed volume header {header_path}: {exc}") from exc
    try:
        dims = header["dims"]
        channels = int(header["channels"])
        dtype = header["dtype"]
        order = header["order"]
        layout = header["channel_layout"]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed volume header {header_path}: {exc}") from exc
    if (
        not isinstance(dims, list)
        or len(dims) != 3
        or not all(isinstance(d, int) and d >= 1 for d in dims)
    ):
        raise InputError(f"bad dims in header: {dims!r}")
    if order != "x-fastest" or layout != "channel-major":
        raise InputError(f"unsupported order/layout: {order!r}/{layout!r}")
    if dtype not in _DTYPES:
        raise InputError(f"unsupported dtype {dtype!r}")
    if channels < 1 or (dtype == "u8" and channels != 1):
        raise InputError(f"bad channel count {channels} for dtype {dtype}")

    shape = GridShape(*dims)
    np_dtype = _DTYPES[dtype]
    expected = shape.count * channels * np_dtype.itemsize
    actual = os.path.getsize(raw_path)
    if actual != expected:
        raise InputError(
            f"payload size mismatch in {raw_path}: header implies {expected} bytes, "
            f"file has {actual}"
        )
    raw = np.fromfile(raw_path, dtype=np_dtype)

    if dtype == "f32":
        data = np.stack(
            [
                flat_to_grid(raw[k * shape.count : (k + 1) * shape.count], shape)
                for k in range(channels)
            ]
        )
        return MultiChannelVolume(shape, data)

    observed = int(raw.max(initial=0))
    if num_labels is None:
        num_labels = max(2, observed + 1)
    elif observed >= num_labels:
        raise InputError(f"label {observed} out of range for num_labels={num_labels}")
    return LabelVolume(shape, flat_to_grid(raw, shape), num_labels)
