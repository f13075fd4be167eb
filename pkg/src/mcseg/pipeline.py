"""Shared orchestration: train a classifier, classify a volume, segment.

The stages mirror the processing chain end to end: neighborhood features
from the template, standardization fitted on the template feature matrix,
optional per-class subsampling, classifier training; then for a test
volume, features -> training-set standardization -> posteriors ->
(optionally prior-weighted) data term -> convex solve -> hard labels.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .classifiers import (
    DEFAULT_H,
    DEFAULT_K,
    KnnModel,
    ParzenModel,
    TrainingSet,
    subsample_training,
)
from .errors import InputError
from .features import apply_standardization, extract_features, fit_standardization
from .solver import (
    SolveDiagnostics,
    SolverConfig,
    build_data_term,
    build_weighted_data_term,
    solve,
)
from .volume import (
    LabelVolume,
    MultiChannelVolume,
    PosteriorField,
    SimplexField,
    argmax_labels,
)

# regularization defaults per data-term source
DEFAULT_LAMBDA = {"knn": 1.0, "parzen": 5.0}
DEFAULT_PER_CLASS_CAP = 800
DEFAULT_SUBSAMPLE_SEED = 42


@dataclass(frozen=True)
class TrainParams:
    """Everything cmd-level code needs to (re)train a classifier."""

    kind: str = "knn"
    k: int = DEFAULT_K
    h: float = DEFAULT_H
    per_class_cap: int | None = DEFAULT_PER_CLASS_CAP
    subsample_seed: int = DEFAULT_SUBSAMPLE_SEED
    standardization_mode: str = "global"

    def __post_init__(self):
        if self.kind not in ("knn", "parzen"):
            raise InputError(f"classifier kind must be knn or parzen, got {self.kind!r}")
        if self.per_class_cap is not None and self.per_class_cap < 1:
            raise InputError("per_class_cap must be positive")


def default_lambda(kind: str) -> float:
    if kind not in DEFAULT_LAMBDA:
        raise InputError(f"no default lambda for classifier kind {kind!r}")
    return DEFAULT_LAMBDA[kind]


def train_model(
    volume: MultiChannelVolume, labels: LabelVolume, params: TrainParams
):
    """Features + standardization + optional subsample + classifier fit."""
    if volume.shape != labels.shape:
        raise InputError("template volume and labels disagree in shape")
    feats = extract_features(volume)
    stats = fit_standardization(feats, params.standardization_mode)
    std = apply_standardization(feats, stats)
    ts = TrainingSet(std.values, labels.flat(), labels.num_labels)
    if params.per_class_cap is not None:
        ts = subsample_training(ts, params.per_class_cap, params.subsample_seed)
    if params.kind == "knn":
        return KnnModel(ts, params.k, stats=stats)
    return ParzenModel(ts, params.h, stats=stats)


def classify(model, volume: MultiChannelVolume) -> PosteriorField:
    """Posterior field for every voxel, using the model's training stats."""
    if model.stats is None:
        raise InputError("model carries no standardization stats")
    feats = extract_features(volume)
    std = apply_standardization(feats, model.stats)
    post = model.predict_posteriors(std.values)
    return PosteriorField(volume.shape, model.train.num_labels, post)


def config_with_lambda(base: SolverConfig | None, lam: float) -> SolverConfig:
    if base is None:
        return SolverConfig(lam=lam)
    return replace(base, lam=lam, tau=base.tau, sigma=base.sigma)


def segment(
    posterior: PosteriorField,
    config: SolverConfig | None = None,
    w: float | None = None,
    prior: SimplexField | None = None,
) -> tuple[LabelVolume, SimplexField, SolveDiagnostics]:
    """Convex segmentation of a posterior field; returns labels, u*, trace.

    ``w`` switches on the prior-weighted data term and requires ``prior``;
    ``w=None`` (or no prior) is the plain negative-log-posterior path.
    """
    cfg = config if config is not None else SolverConfig()
    if w is None:
        dt = build_data_term(posterior, cfg.epsilon_clamp)
    else:
        if prior is None:
            raise InputError("prior weight given without a prior field")
        dt = build_weighted_data_term(posterior, prior, w, cfg.epsilon_clamp)
    u, diag = solve(dt, cfg, init=posterior)
    return argmax_labels(u), u, diag


def entropy(posterior: PosteriorField) -> float:
    """Mean Shannon entropy (nats) of the per-voxel posterior rows."""
    p = posterior.values
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return float(terms.sum(axis=1).mean())
