"""Supervised per-voxel posterior estimators.

Both estimators are nonparametric and share one distance core: squared
Euclidean distances between query rows and all training rows, computed
chunk-by-chunk through BLAS (``|q|^2 + |t|^2 - 2 q.t``).  The k-NN path
re-checks any near-tied candidates with an exact difference-based sum so
that the "lower training row wins distance ties" rule holds even when the
BLAS expansion loses a few bits.

k-NN posterior:   p(l | q) = (# of label-l rows among the k nearest) / k
Parzen posterior: p(l | q) ∝ sum_{i: y_i = l} exp(-d^2(q, i) / (2 h^2))

The Parzen sums are factored by the smallest distance per query before
exponentiation, so a far-from-everything query still gets a well-defined
(normalized) posterior instead of 0/0.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .features import StandardizationStats
from .rng import PortableRng

DEFAULT_K = 3
DEFAULT_H = 0.1668

_CHUNK_ROWS = 2048


@dataclass
class TrainingSet:
    """Feature rows with integer labels in {0, ..., num_labels-1}."""

    features: np.ndarray
    labels: np.ndarray
    num_labels: int

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        lab = np.asarray(self.labels)
        if f.ndim != 2 or f.shape[0] < 1:
            raise InputError("training features must be a nonempty 2-D array")
        if not np.isfinite(f).all():
            raise InputError("training features contain non-finite values")
        if lab.shape != (f.shape[0],):
            raise InputError("labels length != feature row count")
        if self.num_labels < 2:
            raise InputError("num_labels must be at least 2")
        lab = lab.astype(np.int64)
        if lab.min() < 0 or lab.max() >= self.num_labels:
            raise InputError("training labels out of range")
        self.features = f
        self.labels = lab

    @property
    def rows(self) -> int:
        return self.features.shape[0]

    @property
    def cols(self) -> int:
        return self.features.shape[1]


def subsample_training(ts: TrainingSet, per_class_cap: int, seed: int) -> TrainingSet:
    """Cap each class at ``per_class_cap`` rows, chosen by the portable RNG.

    Rows of class l are shuffled by sort keys drawn from stream l, the
    first ``cap`` survive, and the kept rows are re-sorted into original
    order so row indices stay monotone.  Same seed -> same subset on any
    platform.
    """
    if per_class_cap < 1:
        raise InputError("per_class_cap must be positive")
    rng = PortableRng(seed)
    keep: list[np.ndarray] = []
    for l in range(ts.num_labels):
        idx = np.nonzero(ts.labels == l)[0]
        if idx.size > per_class_cap:
            keys = rng.raw(l, idx.size)
            order = np.argsort(keys, kind="stable")
            idx = idx[order[:per_class_cap]]
        keep.append(idx)
    kept = np.sort(np.concatenate(keep))
    return TrainingSet(ts.features[kept], ts.labels[kept], ts.num_labels)


def _chunked_sq_distances(queries, train, train_sq):
    """Yield (row_slice, d2) blocks of squared distances, clipped at 0."""
    q = queries
    for lo in range(0, q.shape[0], _CHUNK_ROWS):
        hi = min(lo + _CHUNK_ROWS, q.shape[0])
        block = q[lo:hi]
        d2 = block @ train.T
        d2 *= -2.0
        d2 += np.einsum("ij,ij->i", block, block)[:, None]
        d2 += train_sq[None, :]
        np.maximum(d2, 0.0, out=d2)
        yield slice(lo, hi), d2


def _validate_queries(queries, cols):
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != cols:
        raise InputError(f"queries must be 2-D with {cols} columns, got {q.shape}")
    if q.shape[0] == 0:
        raise InputError("empty query matrix")
    if not np.isfinite(q).all():
        raise InputError("queries contain non-finite values")
    return q


class KnnModel:
    """Exact k-nearest-neighbor vote fractions over the training set."""

    kind = "knn"

    def __init__(self, train: TrainingSet, k: int = DEFAULT_K,
                 stats: StandardizationStats | None = None):
        if k < 1:
            raise InputError("k must be positive")
        if k > train.rows:
            raise InputError(f"k={k} exceeds training set size {train.rows}")
        self.train = train
        self.k = k
        self.stats = stats
        self._train_sq = np.einsum("ij,ij->i", train.features, train.features)
        self._onehot = np.eye(train.num_labels)[train.labels]

    def predict_posteriors(self, queries: np.ndarray) -> np.ndarray:
        q = _validate_queries(queries, self.train.cols)
        k, t, labels = self.k, self.train.features, self.train.labels
        out = np.empty((q.shape[0], self.train.num_labels))
        for rows, d2 in _chunked_sq_distances(q, t, self._train_sq):
            kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
            # slack well above BLAS round-off, far below real distance gaps
            margin = 1e-9 * (1.0 + kth)
            near = d2 <= (kth + margin)[:, None]
            counts = near.sum(axis=1)
            plain = counts == k
            if plain.any():
                idx = np.argpartition(d2[plain], k - 1, axis=1)[:, :k]
                block_out = out[rows]  # view: rows is a plain slice
                block_out[plain] = self._onehot[idx].sum(axis=1)
            block = q[rows]
            for r in np.nonzero(~plain)[0]:
                cand = np.nonzero(near[r])[0]
                diff = t[cand] - block[r]
                exact = np.einsum("ij,ij->i", diff, diff)
                order = np.lexsort((cand, exact))
                cand = cand[order[:k]]
                votes = np.bincount(labels[cand], minlength=self.train.num_labels)
                out[rows.start + r] = votes
        out /= float(k)
        return out


class ParzenModel:
    """Gaussian-kernel density vote with a single isotropic bandwidth."""

    kind = "parzen"

    def __init__(self, train: TrainingSet, h: float = DEFAULT_H,
                 stats: StandardizationStats | None = None):
        if not (h > 0):
            raise InputError("bandwidth h must be positive")
        self.train = train
        self.h = float(h)
        self.stats = stats
        self._train_sq = np.einsum("ij,ij->i", train.features, train.features)

    def predict_posteriors(self, queries: np.ndarray) -> np.ndarray:
        q = _validate_queries(queries, self.train.cols)
        inv = 1.0 / (2.0 * self.h * self.h)
        labels = self.train.labels
        num_labels = self.train.num_labels
        out = np.empty((q.shape[0], num_labels))
        onehot = np.eye(num_labels)[labels]  # (n_train, num_labels)
        for rows, d2 in _chunked_sq_distances(q, self.train.features, self._train_sq):
            d2 -= d2.min(axis=1, keepdims=True)  # factor out the peak kernel
            d2 *= -inv
            np.exp(d2, out=d2)
            scores = d2 @ onehot
            totals = scores.sum(axis=1, keepdims=True)
            degenerate = totals[:, 0] <= 0.0
            if degenerate.any():  # unreachable after factoring; belt and braces
                scores[degenerate] = 1.0
                totals[degenerate] = float(num_labels)
            out[rows] = scores / totals
        return out


def save_model(model, path: str) -> None:
    """Write ``<path>.model.json`` (manifest) + ``<path>.model.raw`` (features).

    Features go to disk as little-endian float32; labels and hyperparameters
    live in the manifest.
    """
    base = path[: -len(".model.json")] if path.endswith(".model.json") else path
    manifest = {
        "type": model.kind,
        "num_labels": model.train.num_labels,
        "rows": model.train.rows,
        "cols": model.train.cols,
        "labels": model.train.labels.tolist(),
    }
    if model.kind == "knn":
        manifest["k"] = model.k
    elif model.kind == "parzen":
        manifest["h"] = model.h
    if model.stats is not None:
        manifest["standardization"] = {
            "mode": model.stats.mode,
            "mean": model.stats.mean.tolist(),
            "scale": model.stats.scale.tolist()
            if model.stats.scale.ndim
            else float(model.stats.scale),
        }
    with open(base + ".model.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh)
    with open(base + ".model.raw", "wb") as fh:
        fh.write(np.ascontiguousarray(model.train.features, dtype="<f4").tobytes())


def load_model(path: str):
    base = path[: -len(".model.json")] if path.endswith(".model.json") else path
    manifest_path, raw_path = base + ".model.json", base + ".model.raw"
    for p in (manifest_path, raw_path):
        if not os.path.exists(p):
            raise InputError(f"missing model file: {p}")
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as e:
        raise InputError(f"malformed model manifest: {e}") from e
    try:
        rows, cols = int(manifest["rows"]), int(manifest["cols"])
        num_labels = int(manifest["num_labels"])
        labels = np.asarray(manifest["labels"], dtype=np.int64)
        kind = manifest["type"]
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f"model manifest missing required fields: {e}") from e
    if os.path.getsize(raw_path) != rows * cols * 4:
        raise InputError(f"model payload size mismatch in {raw_path}")
    features = np.fromfile(raw_path, dtype="<f4").astype(np.float64).reshape(rows, cols)
    ts = TrainingSet(features, labels, num_labels)
    stats = None
    if "standardization" in manifest:
        s = manifest["standardization"]
        stats = StandardizationStats(np.array(s["mean"]), np.array(s["scale"]), s["mode"])
    if kind == "knn":
        return KnnModel(ts, int(manifest["k"]), stats)
    if kind == "parzen":
        return ParzenModel(ts, float(manifest["h"]), stats)
    raise InputError(f"unknown model type {kind!r}")
