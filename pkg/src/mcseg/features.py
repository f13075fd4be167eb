"""Per-voxel feature extraction and standardization.

Each channel contributes nine features per voxel, in this fixed order:

    0  center intensity
    1  mean over the 26-neighborhood (center excluded)
    2  standard deviation over the 26-neighborhood (population divisor 26)
    3..8  the six face-adjacent intensities, ordered -x, +x, -y, +y, -z, +z

Channels are concatenated in channel order, so a c-channel volume yields
m = 9*c features.  Coordinates outside the grid are clamped to the nearest
voxel (replicate padding), which avoids fabricating zero contrast at the
volume faces.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericalError
from .volume import GridShape, LabelVolume, MultiChannelVolume, grid_to_flat

FEATURES_PER_CHANNEL = 9

_OFFSETS_26 = [
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
    if (dx, dy, dz) != (0, 0, 0)
]
_FACE_OFFSETS = [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)]


@dataclass
class FeatureMatrix:
    """Rows of per-voxel feature vectors plus the row -> voxel index map."""

    values: np.ndarray
    voxel_indices: np.ndarray = None
    shape: GridShape = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise InputError("feature values must be 2-D")
        if not np.isfinite(v).all():
            raise InputError("feature matrix contains non-finite values")
        if self.voxel_indices is None:
            self.voxel_indices = np.arange(v.shape[0], dtype=np.int64)
        else:
            self.voxel_indices = np.asarray(self.voxel_indices, dtype=np.int64)
            if self.voxel_indices.shape != (v.shape[0],):
                raise InputError("voxel index map length != row count")
        self.values = v

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


def _shifted(padded: np.ndarray, shape, dx, dy, dz) -> np.ndarray:
    n1, n2, n3 = shape
    return padded[1 + dx : 1 + dx + n1, 1 + dy : 1 + dy + n2, 1 + dz : 1 + dz + n3]


def extract_features(
    volume: MultiChannelVolume, mask: LabelVolume | None = None
) -> FeatureMatrix:
    """Build the m = 9*c feature matrix for all voxels, or those inside ``mask``.

    ``mask`` is a label volume used as an inclusion mask: voxels with a
    nonzero label are extracted, in linear voxel order.
    """
    shape = volume.shape.as_tuple()
    if mask is not None and mask.shape != volume.shape:
        raise InputError(
            f"mask shape {mask.shape.as_tuple()} != volume shape {shape}"
        )

    columns = []
    for k in range(volume.channels):
        g = volume.data[k].astype(np.float64)
        padded = np.pad(g, 1, mode="edge")

        total = np.zeros_like(g)
        for off in _OFFSETS_26:
            total += _shifted(padded, shape, *off)
        mean26 = total / 26.0

        sq = np.zeros_like(g)
        for off in _OFFSETS_26:
            d = _shifted(padded, shape, *off) - mean26
            sq += d * d
        std26 = np.sqrt(sq / 26.0)

        columns.append(g)
        columns.append(mean26)
        columns.append(std26)
        for off in _FACE_OFFSETS:
            columns.append(_shifted(padded, shape, *off))

    values = np.stack([grid_to_flat(c) for c in columns], axis=1)
    voxel_indices = np.arange(volume.shape.count, dtype=np.int64)
    if mask is not None:
        keep = grid_to_flat(mask.labels) != 0
        values = values[keep]
        voxel_indices = voxel_indices[keep]
    return FeatureMatrix(values, voxel_indices, volume.shape)


@dataclass
class StandardizationStats:
    """Per-feature means plus the variance scale fitted on training data.

    mode "global" (default) uses a single scale sqrt(sum_j var_j), so the
    standardized training matrix has total variance 1 across all features.
    mode "per-feature" scales each column by its own standard deviation.
    """

    mean: np.ndarray
    scale: np.ndarray
    mode: str = "global"

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.scale = np.asarray(self.scale, dtype=np.float64)
        if self.mode not in ("global", "per-feature"):
            raise InputError(f"unknown standardization mode {self.mode!r}")
        if np.any(self.scale <= 0):
            raise InputError("standardization scale must be positive")


def fit_standardization(f: FeatureMatrix, mode: str = "global") -> StandardizationStats:
    """Fit means and scale on a training feature matrix (>= 2 rows)."""
    if f.rows < 2:
        raise InputError(f"need at least 2 rows to fit standardization, got {f.rows}")
    mean = f.values.mean(axis=0)
    var = np.mean((f.values - mean) ** 2, axis=0)
    if mode == "global":
        total = var.sum()
        if total <= 0.0:
            raise NumericalError("feature matrix has zero total variance")
        scale = np.sqrt(total)
    elif mode == "per-feature":
        if np.any(var <= 0.0):
            raise NumericalError("a feature column has zero variance")
        scale = np.sqrt(var)
    else:
        raise InputError(f"unknown standardization mode {mode!r}")
    return StandardizationStats(mean, scale, mode)


def apply_standardization(f: FeatureMatrix, stats: StandardizationStats) -> FeatureMatrix:
    """(F - mean) / scale with the training-set statistics; no refit."""
    if f.rows == 0:
        raise InputError("cannot standardize an empty feature matrix")
    if stats.mean.shape != (f.cols,):
        raise InputError(
            f"stats fitted for {stats.mean.shape[0]} columns, matrix has {f.cols}"
        )
    values = (f.values - stats.mean) / stats.scale
    return FeatureMatrix(values, f.voxel_indices.copy(), f.shape)


def save_stats(stats: StandardizationStats, path: str) -> None:
    doc = {
        "mode": stats.mode,
        "mean": stats.mean.tolist(),
        "scale": stats.scale.tolist() if stats.scale.ndim else float(stats.scale),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_stats(path: str) -> StandardizationStats:
    if not os.path.exists(path):
        raise InputError(f"missing stats file: {path}")
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return StandardizationStats(np.array(doc["mean"]), np.array(doc["scale"]), doc["mode"])


def save_feature_matrix(f: FeatureMatrix, path: str) -> None:
    """Write ``<path>.fm.json`` + ``<path>.fm.raw`` (float32 payload)."""
    base = path[: -len(".fm.json")] if path.endswith(".fm.json") else path
    header = {"rows": f.rows, "cols": f.cols, "dtype": "f32"}
    with open(base + ".fm.json", "w", encoding="utf-8") as fh:
        json.dump(header, fh)
    with open(base + ".fm.raw", "wb") as fh:
        fh.write(np.ascontiguousarray(f.values, dtype="<f4").tobytes())


def load_feature_matrix(path: str) -> FeatureMatrix:
    base = path[: -len(".fm.json")] if path.endswith(".fm.json") else path
    header_path, raw_path = base + ".fm.json", base + ".fm.raw"
    for p in (header_path, raw_path):
        if not os.path.exists(p):
            raise InputError(f"missing feature matrix file: {p}")
    with open(header_path, encoding="utf-8") as fh:
        header = json.load(fh)
    rows, cols = int(header["rows"]), int(header["cols"])
    if header.get("dtype") != "f32":
        raise InputError(f"unsupported feature dtype {header.get('dtype')!r}")
    expected = rows * cols * 4
    if os.path.getsize(raw_path) != expected:
        raise InputError(f"feature payload size mismatch in {raw_path}")
    raw = np.fromfile(raw_path, dtype="<f4").astype(np.float64)
    return FeatureMatrix(raw.reshape(rows, cols))
