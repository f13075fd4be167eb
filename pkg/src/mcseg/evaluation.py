"""Evaluation against reference labels, plus the standard experiment sweeps.

Metrics are exact integer counting: entry (i, j) of the confusion matrix is
the number of evaluated voxels whose reference label is i and predicted
label is j.  Percentages are rational functions of those counts, so
recomputation is bit-stable.

The sweep helpers re-run the segmentation stage per parameter value.
Classification is deterministic for a fixed model and volume, so each
sweep classifies a volume once and reuses the posterior across its rows;
the resulting table is identical to re-classifying every time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import InputError
from . import pipeline
from .solver import SolverConfig, build_weighted_data_term, solve
from .volume import (
    LabelVolume,
    SimplexField,
    argmax_labels,
    grid_to_flat,
)


@dataclass
class ConfusionMatrix:
    """counts[i, j] = voxels with reference label i predicted as label j."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 2:
            raise InputError("confusion matrix must be square, at least 2x2")
        if (c < 0).any():
            raise InputError("confusion counts must be nonnegative")
        self.counts = c

    @property
    def num_labels(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["ref\\pred"] + [str(j) for j in range(self.num_labels)])
            for i in range(self.num_labels):
                writer.writerow([str(i)] + [int(v) for v in self.counts[i]])


def confusion(
    pred: LabelVolume, ref: LabelVolume, mask: np.ndarray | None = None
) -> ConfusionMatrix:
    """Exact label-pair counts over masked voxels (default: all voxels)."""
    if pred.shape != ref.shape:
        raise InputError("prediction and reference disagree in shape")
    if pred.num_labels != ref.num_labels:
        raise InputError("prediction and reference disagree in label count")
    nl = ref.num_labels
    p = pred.flat()
    r = ref.flat()
    if mask is not None:
        m = np.asarray(mask)
        if m.dtype != bool:
            raise InputError("mask must be boolean")
        if m.shape == ref.shape.as_tuple():
            m = grid_to_flat(m)
        elif m.shape != (ref.shape.count,):
            raise InputError("mask shape matches neither grid nor voxel vector")
        p, r = p[m], r[m]
    joint = np.bincount(
        r.astype(np.int64) * nl + p.astype(np.int64), minlength=nl * nl
    )
    return ConfusionMatrix(joint.reshape(nl, nl))


def global_error(cm: ConfusionMatrix) -> float:
    """Percent of evaluated voxels whose predicted label is wrong."""
    total = cm.total
    if total == 0:
        raise InputError("empty confusion matrix")
    wrong = total - int(np.trace(cm.counts))
    return 100.0 * wrong / total


def tp_rate_nuclei(cm: ConfusionMatrix) -> float:
    """Percent of non-background reference voxels predicted correctly.

    Pooled over all non-background labels: sum of diagonal entries for
    labels >= 1 over the total reference mass of labels >= 1.
    """
    fg = cm.counts[1:, :]
    denom = int(fg.sum())
    if denom == 0:
        raise InputError("no non-background reference voxels")
    hits = int(np.trace(cm.counts) - cm.counts[0, 0])
    return 100.0 * hits / denom


@dataclass
class MetricsReport:
    """Headline percentages plus per-label precision/recall."""

    global_error_pct: float
    tp_nuclei_pct: float
    precision_pct: np.ndarray
    recall_pct: np.ndarray
    evaluated_voxels: int

    def pretty(self) -> str:
        lines = [
            f"evaluated voxels : {self.evaluated_voxels}",
            f"global error     : {self.global_error_pct:.2f}%",
            f"TP rate (nuclei) : {self.tp_nuclei_pct:.2f}%",
        ]
        for l, (p, r) in enumerate(zip(self.precision_pct, self.recall_pct)):
            lines.append(f"label {l}: precision {p:6.2f}%  recall {r:6.2f}%")
        return "\n".join(lines)


def report(cm: ConfusionMatrix) -> MetricsReport:
    """Summarize a confusion matrix; empty rows/columns score 0."""
    diag = np.diag(cm.counts).astype(np.float64)
    col = cm.counts.sum(axis=0).astype(np.float64)
    row = cm.counts.sum(axis=1).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(col > 0, 100.0 * diag / col, 0.0)
        recall = np.where(row > 0, 100.0 * diag / row, 0.0)
    return MetricsReport(
        global_error_pct=global_error(cm),
        tp_nuclei_pct=tp_rate_nuclei(cm),
        precision_pct=precision,
        recall_pct=recall,
        evaluated_voxels=cm.total,
    )


def write_table(path: str, header: list[str], rows: list[tuple]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(list(row))


def pretty_table(header: list[str], rows: list[tuple]) -> str:
    cells = [header] + [
        [f"{v:.3f}" if isinstance(v, float) else str(v) for v in row] for row in rows
    ]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    return "\n".join(lines)


def sweep_lambda(
    model,
    volume,
    ref: LabelVolume,
    lambdas,
    base_config: SolverConfig | None = None,
    mask: np.ndarray | None = None,
) -> list[tuple[float, float]]:
    """Global error per regularization weight, one segmentation run each."""
    if not lambdas:
        raise InputError("lambda list must be nonempty")
    if any(l <= 0 for l in lambdas):
        raise InputError("lambda values must be positive")
    posterior = pipeline.classify(model, volume)
    rows = []
    for lam in lambdas:
        cfg = pipeline.config_with_lambda(base_config, lam)
        labels, _, _ = pipeline.segment(posterior, cfg)
        rows.append((float(lam), global_error(confusion(labels, ref, mask))))
    return rows


def sweep_w(
    model,
    subjects,
    prior: SimplexField,
    ws,
    config: SolverConfig | None = None,
    mask: np.ndarray | None = None,
) -> list[tuple[float, float, float]]:
    """(w, mean global error, SEM) across subjects for each prior weight.

    ``subjects`` is a list of (volume, reference-labels) pairs; SEM uses the
    N-1 divisor and is 0 for a single subject.
    """
    if not subjects:
        raise InputError("need at least one subject")
    if not ws:
        raise InputError("w list must be nonempty")
    cfg = config if config is not None else SolverConfig()
    posteriors = [(pipeline.classify(model, vol), ref) for vol, ref in subjects]
    rows = []
    for w in ws:
        errs = []
        for posterior, ref in posteriors:
            dt = build_weighted_data_term(posterior, prior, w, cfg.epsilon_clamp)
            u, _ = solve(dt, cfg, init=posterior)
            errs.append(global_error(confusion(argmax_labels(u), ref, mask)))
        errs = np.array(errs)
        sem = float(errs.std(ddof=1) / np.sqrt(len(errs))) if len(errs) > 1 else 0.0
        rows.append((float(w), float(errs.mean()), sem))
    return rows


def all_channel_subsets(channels: int) -> list[tuple[int, ...]]:
    """Every nonempty channel subset, smallest first."""
    out = []
    for size in range(1, channels + 1):
        out.extend(combinations(range(channels), size))
    return out


def ablate_contrasts(
    template_volume,
    template_labels: LabelVolume,
    subjects,
    subsets,
    train_params: "pipeline.TrainParams",
    config: SolverConfig | None = None,
    mask: np.ndarray | None = None,
) -> list[tuple[tuple[int, ...], float]]:
    """Mean global error per channel subset, retraining from scratch each time."""
    if not subsets:
        raise InputError("channel subset list must be nonempty")
    if not subjects:
        raise InputError("need at least one subject")
    rows = []
    for subset in subsets:
        subset = tuple(subset)
        tvol = template_volume.channel_subset(subset)
        model = pipeline.train_model(tvol, template_labels, train_params)
        errs = []
        for vol, ref in subjects:
            posterior = pipeline.classify(model, vol.channel_subset(subset))
            labels, _, _ = pipeline.segment(posterior, config)
            errs.append(global_error(confusion(labels, ref, mask)))
        rows.append((subset, float(np.mean(errs))))
    return rows
