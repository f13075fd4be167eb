"""Command-line front end: train, classify, segment, evaluate, sweep, phantom.

All commands read one JSON config document (``--config``); a handful of
frequently-swept settings also have flags.  Precedence is uniform:
command-line flag > config file > built-in default.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.  Errors are
reported on stderr as ``mcseg <command>: <kind> error: [<step>] <detail>``.

Volumes and labels use the ``.mcv.json``/``.mcv.raw`` pair format of
:mod:`mcseg.volume`; posterior fields are exported as a float32 volume with
one channel per label.  Mask files are label volumes: voxels with nonzero
labels are evaluated.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import contextmanager

import numpy as np

from . import pipeline
from .classifiers import DEFAULT_H, DEFAULT_K, load_model, save_model
from .errors import InputError, NumericalError
from .evaluation import (
    all_channel_subsets,
    confusion,
    global_error,
    pretty_table,
    report,
    write_table,
)
from .phantom import (
    DEFAULT_DEFORM_AMPLITUDE,
    DEFAULT_EXTRA_NOISE,
    SUBJECT_SEED_OFFSET,
    default_confusable_spec,
    generate,
    load_spec,
    make_subject,
    save_spec,
)
from .pipeline import DEFAULT_PER_CLASS_CAP, DEFAULT_SUBSAMPLE_SEED, TrainParams
from .solver import SolverConfig, build_weighted_data_term, solve
from .volume import (
    LabelVolume,
    MultiChannelVolume,
    argmax_labels,
    flat_to_grid,
    load_volume,
    one_hot,
    save_volume,
)

_CONFIG_KEYS = frozenset(
    {
        "template_volume",
        "template_labels",
        "subject_volume",
        "subject_labels",
        "subjects",
        "model",
        "out",
        "classifier",
        "k",
        "h",
        "per_class_cap",
        "subsample_seed",
        "channels",
        "solver",
        "w",
        "prior_labels",
        "mask_labels",
        "lambdas",
        "ws",
        "seed",
        "save_posterior",
        "pred_labels",
        "ref_labels",
    }
)

_AXES = {"x": 0, "y": 1, "z": 2}

# label colors for PPM export; index = label
_PALETTE = (
    (0, 0, 0),  # background: black
    (255, 0, 0),  # red
    (0, 255, 0),  # green
    (0, 255, 255),  # cyan
    (255, 255, 0),
    (255, 0, 255),
    (0, 0, 255),
    (255, 255, 255),
)


class PipelineConfig:
    """A validated JSON config document with typed access."""

    def __init__(self, doc: dict | None = None):
        doc = {} if doc is None else doc
        if not isinstance(doc, dict):
            raise InputError("config document must be a JSON object")
        unknown = set(doc) - _CONFIG_KEYS
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        if "w" in doc and not (0.0 <= float(doc["w"]) <= 1.0):
            raise InputError("config key 'w' must lie in [0, 1]")
        if "channels" in doc and not doc["channels"]:
            raise InputError("config key 'channels' must be a nonempty list")
        self.doc = doc

    @classmethod
    def load(cls, path: str | None) -> "PipelineConfig":
        if path is None:
            return cls({})
        try:
            with open(path, encoding="utf-8") as fh:
                return cls(json.load(fh))
        except FileNotFoundError as e:
            raise InputError(f"missing config file: {path}") from e
        except json.JSONDecodeError as e:
            raise InputError(f"malformed config file {path}: {e}") from e

    def get(self, key: str, default=None):
        return self.doc.get(key, default)

    def require(self, key: str, command: str):
        if key not in self.doc:
            raise InputError(f"config key {key!r} is required for {command}")
        return self.doc[key]


@contextmanager
def _step(name: str):
    """Tag errors with the pipeline step they came from (once)."""
    try:
        yield
    except (InputError, NumericalError) as e:
        if not getattr(e, "_step_tagged", False):
            e.args = (f"[{name}] {e}",)
            e._step_tagged = True
        raise


def _pick(flag_value, cfg: PipelineConfig, key: str, default):
    """Uniform three-level setting precedence."""
    if flag_value is not None:
        return flag_value
    value = cfg.get(key)
    return default if value is None else value


def _parse_channels(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip() != ""]
    except ValueError as e:
        raise InputError(f"bad channel list {text!r}") from e


def _channels_arg(args) -> list[int] | None:
    text = getattr(args, "channels", None)
    return None if text is None else _parse_channels(text)


def _numeric_list(cfg: PipelineConfig, key: str, command: str) -> list[float]:
    values = cfg.require(key, command)
    if (
        not isinstance(values, list)
        or not values
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                   for v in values)
    ):
        raise InputError(f"config key {key!r} must be a nonempty list of numbers")
    return [float(v) for v in values]


def _parse_indices(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip() != ""]
    except ValueError as e:
        raise InputError(f"bad index list {text!r}") from e


def _outdir(args, cfg: PipelineConfig) -> str:
    out = _pick(args.out, cfg, "out", ".")
    os.makedirs(out, exist_ok=True)
    return out


def _solver_config(args, cfg: PipelineConfig, default_lam: float) -> SolverConfig:
    doc = dict(cfg.get("solver", {}))
    if getattr(args, "lam", None) is not None:
        doc["lambda"] = args.lam
    if getattr(args, "tv_mode", None) is not None:
        doc["tv_mode"] = args.tv_mode
    if doc.get("tv_mode") == "2d":  # CLI shorthand for the slicewise stencil
        doc["tv_mode"] = "2d-slicewise"
    doc.setdefault("lambda", default_lam)
    return SolverConfig.from_dict(doc)


def _load_subject_volume(args, cfg: PipelineConfig, command: str) -> MultiChannelVolume:
    with _step("load-volume"):
        vol = load_volume(cfg.require("subject_volume", command))
        channels = _pick(_channels_arg(args), cfg, "channels", None)
        if channels is not None:
            vol = vol.channel_subset(channels)
    return vol


def _load_mask(cfg: PipelineConfig):
    path = cfg.get("mask_labels")
    if path is None:
        return None
    with _step("load-mask"):
        mask_vol = load_volume(path)
        if not isinstance(mask_vol, LabelVolume):
            raise InputError("mask file must be a label volume")
        return mask_vol.foreground_mask()


def _posterior_volume(post) -> MultiChannelVolume:
    planes = np.stack(
        [flat_to_grid(post.values[:, l], post.shape) for l in range(post.num_labels)]
    )
    return MultiChannelVolume(post.shape, planes.astype(np.float32))


def _load_subjects(cfg: PipelineConfig, command: str) -> list[tuple]:
    entries = cfg.require("subjects", command)
    if not isinstance(entries, list) or not entries:
        raise InputError("config key 'subjects' must be a nonempty list")
    pairs = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or {"volume", "labels"} - set(entry):
            raise InputError(
                f"subjects[{i}] must be an object with 'volume' and 'labels'"
            )
        with _step(f"load-subject-{i}"):
            vol = load_volume(entry["volume"])
            ref = load_volume(entry["labels"])
        pairs.append((vol, ref))
    return pairs


def _unify_labels(a: LabelVolume, b: LabelVolume) -> tuple[LabelVolume, LabelVolume]:
    nl = max(a.num_labels, b.num_labels)
    return (
        LabelVolume(a.shape, a.labels, nl),
        LabelVolume(b.shape, b.labels, nl),
    )


# --- commands ----------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = PipelineConfig.load(args.config)
    out = _outdir(args, cfg)
    kind = _pick(args.classifier, cfg, "classifier", "knn")
    params = TrainParams(
        kind=kind,
        k=int(_pick(args.k, cfg, "k", DEFAULT_K)),
        h=float(_pick(args.h, cfg, "h", DEFAULT_H)),
        per_class_cap=cfg.get("per_class_cap", DEFAULT_PER_CLASS_CAP),
        subsample_seed=int(
            _pick(args.seed, cfg, "subsample_seed", DEFAULT_SUBSAMPLE_SEED)
        ),
    )
    with _step("load-template"):
        vol = load_volume(cfg.require("template_volume", "train"))
        lab = load_volume(cfg.require("template_labels", "train"))
        if not isinstance(lab, LabelVolume):
            raise InputError("template_labels must be a label volume")
        channels = _pick(_channels_arg(args), cfg, "channels", None)
        if channels is not None:
            vol = vol.channel_subset(channels)
    with _step("train"):
        model = pipeline.train_model(vol, lab, params)
    base = os.path.join(out, "model")
    with _step("save-model"):
        save_model(model, base)
    rows, cols = model.train.features.shape
    extra = f"k={model.k}" if kind == "knn" else f"h={model.h}"
    print(
        f"trained {kind} model: {extra}, features={cols}, "
        f"labels={model.train.num_labels}, training rows={rows}"
    )
    print(f"wrote {base}.model.json and {base}.model.raw")
    return 0


def _classify_stage(args, cfg: PipelineConfig, command: str):
    with _step("load-model"):
        model = load_model(cfg.require("model", command))
    vol = _load_subject_volume(args, cfg, command)
    with _step("classify"):
        post = pipeline.classify(model, vol)
    return model, post


def cmd_classify(args) -> int:
    cfg = PipelineConfig.load(args.config)
    out = _outdir(args, cfg)
    model, post = _classify_stage(args, cfg, "classify")
    labels = argmax_labels(post)
    with _step("save-output"):
        save_volume(labels, os.path.join(out, "labels_wta"))
        save_volume(_posterior_volume(post), os.path.join(out, "posterior"))
    print(
        f"classified {post.shape.count} voxels into {post.num_labels} labels "
        f"(winner-takes-all)"
    )
    print(f"wrote {out}/labels_wta.mcv.* and {out}/posterior.mcv.*")
    return 0


def cmd_segment(args) -> int:
    cfg = PipelineConfig.load(args.config)
    out = _outdir(args, cfg)
    model, post = _classify_stage(args, cfg, "segment")
    solver_cfg = _solver_config(args, cfg, pipeline.default_lambda(model.kind))
    w = _pick(args.w, cfg, "w", None)
    prior = None
    if w is not None:
        w = float(w)
        if not (0.0 <= w <= 1.0):
            raise InputError("w must lie in [0, 1]")
        with _step("load-prior"):
            prior_lab = load_volume(
                cfg.require("prior_labels", "segment with w"),
                num_labels=post.num_labels,
            )
            prior = one_hot(
                LabelVolume(prior_lab.shape, prior_lab.labels, post.num_labels)
            )
    with _step("solve"):
        labels, u, diag = pipeline.segment(post, solver_cfg, w=w, prior=prior)
    with _step("save-output"):
        save_volume(labels, os.path.join(out, "labels"))
        diag.write_csv(os.path.join(out, "diagnostics.csv"))
        if _pick(args.save_posterior, cfg, "save_posterior", False):
            save_volume(_posterior_volume(post), os.path.join(out, "posterior"))
    tail = "" if w is None else f", w={w}"
    print(
        f"segmented with lambda={solver_cfg.lam}{tail}: "
        f"{diag.iterations} iterations, converged={diag.converged}, "
        f"energy={diag.primal[-1]:.6f}, gap={diag.gap[-1]:.3e}"
    )
    print(f"wrote {out}/labels.mcv.* and {out}/diagnostics.csv")
    return 0


def cmd_evaluate(args) -> int:
    cfg = PipelineConfig.load(args.config)
    out = _outdir(args, cfg)
    pred_path = args.pred if args.pred is not None else cfg.require(
        "pred_labels", "evaluate"
    )
    ref_path = args.ref if args.ref is not None else cfg.require(
        "ref_labels", "evaluate"
    )
    with _step("load-labels"):
        pred = load_volume(pred_path)
        ref = load_volume(ref_path)
        for name, lab in (("pred", pred), ("ref", ref)):
            if not isinstance(lab, LabelVolume):
                raise InputError(f"{name} file must be a label volume")
        pred, ref = _unify_labels(pred, ref)
    mask = _load_mask(cfg)
    if args.mask is not None:
        with _step("load-mask"):
            mask_vol = load_volume(args.mask)
            if not isinstance(mask_vol, LabelVolume):
                raise InputError("mask file must be a label volume")
            mask = mask_vol.foreground_mask()
    with _step("evaluate"):
        cm = confusion(pred, ref, mask)
        rep = report(cm)
    print(rep.pretty())
    with _step("save-output"):
        cm.write_csv(os.path.join(out, "confusion.csv"))
        with open(os.path.join(out, "metrics.txt"), "w", encoding="utf-8") as fh:
            fh.write(rep.pretty() + "\n")
    print(f"wrote {out}/confusion.csv and {out}/metrics.txt")
    return 0


def _sweep_lambda_rows(args, cfg: PipelineConfig, mask):
    model, post = _classify_stage(args, cfg, "sweep lambda")
    with _step("load-reference"):
        ref = load_volume(cfg.require("subject_labels", "sweep lambda"))
    lambdas = _numeric_list(cfg, "lambdas", "sweep lambda")
    base = _solver_config(args, cfg, pipeline.default_lambda(model.kind))
    rows = []
    for lam in lambdas:
        try:
            solver_cfg = pipeline.config_with_lambda(base, lam)
            labels, _, _ = pipeline.segment(post, solver_cfg)
            rows.append((float(lam), global_error(confusion(labels, ref, mask)), "ok"))
        except (InputError, NumericalError) as e:
            print(f"mcseg sweep: row lambda={lam} failed: {e}", file=sys.stderr)
            rows.append((lam, "", f"failed: {e}"))
    return ["lambda", "error_pct", "status"], rows


def _sweep_w_rows(args, cfg: PipelineConfig, mask):
    with _step("load-model"):
        model = load_model(cfg.require("model", "sweep w"))
    subjects = _load_subjects(cfg, "sweep w")
    nl = model.train.num_labels
    with _step("load-prior"):
        prior_lab = load_volume(cfg.require("prior_labels", "sweep w"), num_labels=nl)
        prior = one_hot(LabelVolume(prior_lab.shape, prior_lab.labels, nl))
    ws = _numeric_list(cfg, "ws", "sweep w")
    solver_cfg = _solver_config(args, cfg, pipeline.default_lambda(model.kind))
    with _step("classify"):
        posts = [(pipeline.classify(model, vol), ref) for vol, ref in subjects]
    rows = []
    for w in ws:
        try:
            if not (0.0 <= w <= 1.0):
                raise InputError("w must lie in [0, 1]")
            errs = []
            for post, ref in posts:
                dt = build_weighted_data_term(
                    post, prior, w, solver_cfg.epsilon_clamp
                )
                u, _ = solve(dt, solver_cfg, init=post)
                errs.append(global_error(confusion(argmax_labels(u), ref, mask)))
            errs = np.array(errs)
            sem = (
                float(errs.std(ddof=1) / np.sqrt(len(errs))) if len(errs) > 1 else 0.0
            )
            rows.append((w, float(errs.mean()), sem, "ok"))
        except (InputError, NumericalError) as e:
            print(f"mcseg sweep: row w={w} failed: {e}", file=sys.stderr)
            rows.append((w, "", "", f"failed: {e}"))
    return ["w", "mean_error_pct", "sem", "status"], rows


def _sweep_contrasts_rows(args, cfg: PipelineConfig, mask):
    with _step("load-template"):
        tvol = load_volume(cfg.require("template_volume", "sweep contrasts"))
        tlab = load_volume(cfg.require("template_labels", "sweep contrasts"))
    subjects = _load_subjects(cfg, "sweep contrasts")
    kind = _pick(args.classifier, cfg, "classifier", "knn")
    params = TrainParams(
        kind=kind,
        k=int(_pick(args.k, cfg, "k", DEFAULT_K)),
        h=float(_pick(args.h, cfg, "h", DEFAULT_H)),
        per_class_cap=cfg.get("per_class_cap", DEFAULT_PER_CLASS_CAP),
        subsample_seed=int(
            _pick(args.seed, cfg, "subsample_seed", DEFAULT_SUBSAMPLE_SEED)
        ),
    )
    solver_cfg = _solver_config(args, cfg, pipeline.default_lambda(kind))
    rows = []
    for subset in all_channel_subsets(tvol.channels):
        name = "+".join(str(c) for c in subset)
        try:
            model = pipeline.train_model(tvol.channel_subset(subset), tlab, params)
            errs = []
            for vol, ref in subjects:
                post = pipeline.classify(model, vol.channel_subset(subset))
                labels, _, _ = pipeline.segment(post, solver_cfg)
                errs.append(global_error(confusion(labels, ref, mask)))
            rows.append((name, float(np.mean(errs)), "ok"))
        except (InputError, NumericalError) as e:
            print(f"mcseg sweep: row channels={name} failed: {e}", file=sys.stderr)
            rows.append((name, "", f"failed: {e}"))
    return ["channels", "mean_error_pct", "status"], rows


_SWEEPS = {
    "lambda": (_sweep_lambda_rows, "sweep_lambda.csv"),
    "w": (_sweep_w_rows, "sweep_w.csv"),
    "contrasts": (_sweep_contrasts_rows, "sweep_contrasts.csv"),
}


def cmd_sweep(args) -> int:
    cfg = PipelineConfig.load(args.config)
    out = _outdir(args, cfg)
    runner, filename = _SWEEPS[args.kind]
    mask = _load_mask(cfg)
    header, rows = runner(args, cfg, mask)
    path = os.path.join(out, filename)
    with _step("save-output"):
        write_table(path, header, rows)
    print(pretty_table(header, rows))
    print(f"wrote {path}")
    failed = [r for r in rows if r[-1] != "ok"]
    if failed and len(failed) == len(rows):
        raise InputError("every sweep row failed; see stderr for details")
    return 0


def cmd_phantom(args) -> int:
    cfg = PipelineConfig.load(args.config)
    out = _outdir(args, cfg)
    if (args.spec is None) == (not args.canonical):
        raise InputError("give exactly one of --spec PATH or --canonical")
    if args.canonical:
        spec = default_confusable_spec(seed=0 if args.seed is None else args.seed)
    else:
        spec = load_spec(args.spec)
        if args.seed is not None:
            doc = spec.to_dict()
            doc["seed"] = args.seed
            spec = type(spec).from_dict(doc)
    if args.subjects < 0:
        raise InputError("--subjects must be nonnegative")
    with _step("generate"):
        template = generate(spec)
    with _step("save-output"):
        save_spec(spec, os.path.join(out, "spec.json"))
        save_volume(template[0], os.path.join(out, "template"))
        save_volume(template[1], os.path.join(out, "template_labels"))
        written = ["spec.json", "template", "template_labels"]
        for i in range(args.subjects):
            subject = make_subject(
                template,
                args.deform_amplitude,
                args.extra_noise,
                seed=spec.seed + SUBJECT_SEED_OFFSET + i,
            )
            save_volume(subject[0], os.path.join(out, f"subject_{i:02d}"))
            save_volume(subject[1], os.path.join(out, f"subject_{i:02d}_labels"))
            written += [f"subject_{i:02d}", f"subject_{i:02d}_labels"]
    print(f"wrote {', '.join(written)} in {out}")
    return 0


def _slice_plane(grid: np.ndarray, axis: int, index: int) -> np.ndarray:
    if not (0 <= index < grid.shape[axis]):
        raise InputError(
            f"slice index {index} out of range for axis size {grid.shape[axis]}"
        )
    return np.take(grid, index, axis=axis)


def _write_pgm(path: str, plane: np.ndarray) -> None:
    lo, hi = float(plane.min()), float(plane.max())
    if hi > lo:
        scaled = np.rint((plane - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        scaled = np.zeros(plane.shape, dtype=np.uint8)
    h, w = plane.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(scaled.tobytes())


def _write_ppm(path: str, plane: np.ndarray, num_labels: int) -> None:
    if num_labels > len(_PALETTE):
        raise InputError(
            f"label palette covers {len(_PALETTE)} labels, volume has {num_labels}"
        )
    palette = np.array(_PALETTE[:num_labels], dtype=np.uint8)
    rgb = palette[plane]
    h, w = plane.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def cmd_export_slices(args) -> int:
    cfg = PipelineConfig.load(args.config)
    out = _outdir(args, cfg)
    if (args.volume is None) == (args.labels is None):
        raise InputError("give exactly one of --volume PATH or --labels PATH")
    axis = _AXES[args.axis]
    indices = _parse_indices(args.indices)
    if not indices:
        raise InputError("no slice indices given")
    written = []
    if args.labels is not None:
        with _step("load-labels"):
            lab = load_volume(args.labels)
            if not isinstance(lab, LabelVolume):
                raise InputError("--labels file must be a label volume")
        for idx in indices:
            plane = _slice_plane(lab.labels, axis, idx)
            name = f"labels_{args.axis}{idx:03d}.ppm"
            _write_ppm(os.path.join(out, name), plane, lab.num_labels)
            written.append(name)
    else:
        with _step("load-volume"):
            vol = load_volume(args.volume)
            if not isinstance(vol, MultiChannelVolume):
                raise InputError("--volume file must be a multi-channel volume")
        for ch in range(vol.channels):
            for idx in indices:
                plane = _slice_plane(vol.data[ch], axis, idx)
                name = f"volume_c{ch}_{args.axis}{idx:03d}.pgm"
                _write_pgm(os.path.join(out, name), plane)
                written.append(name)
    print(f"wrote {', '.join(written)} in {out}")
    return 0


# --- parser ------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcseg",
        description="Multi-channel volume segmentation: supervised posteriors "
        "refined by convex total-variation labeling.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config document")
        p.add_argument("--out", help="output directory (default '.')")

    p = sub.add_parser("train", help="fit a classifier on a labeled template")
    common(p)
    p.add_argument("--classifier", choices=("knn", "parzen"))
    p.add_argument("--k", type=int, help="neighbor count for knn")
    p.add_argument("--h", type=float, help="kernel bandwidth for parzen")
    p.add_argument("--channels", help="comma-separated channel indices")
    p.add_argument("--seed", type=int, help="training subsample seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="winner-takes-all labels + posteriors")
    common(p)
    p.add_argument("--channels", help="comma-separated channel indices")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("segment", help="classify then convex-TV segment")
    common(p)
    p.add_argument("--channels", help="comma-separated channel indices")
    p.add_argument("--lambda", dest="lam", type=float, help="TV weight")
    p.add_argument("--w", type=float, help="prior blend weight in [0, 1]")
    p.add_argument("--tv-mode", choices=("3d", "2d"))
    p.add_argument(
        "--save-posterior",
        dest="save_posterior",
        action="store_true",
        default=None,
        help="also write the classifier posterior volume",
    )
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("evaluate", help="confusion matrix + metrics report")
    common(p)
    p.add_argument("pred", nargs="?", help="predicted label volume")
    p.add_argument("ref", nargs="?", help="reference label volume")
    p.add_argument("--mask", help="label volume; nonzero voxels are evaluated")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="tabulate error across a parameter range")
    common(p)
    p.add_argument("kind", choices=tuple(_SWEEPS))
    p.add_argument("--classifier", choices=("knn", "parzen"))
    p.add_argument("--k", type=int)
    p.add_argument("--h", type=float)
    p.add_argument("--seed", type=int, help="training subsample seed")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--tv-mode", choices=("3d", "2d"))
    p.add_argument("--channels", help="comma-separated channel indices")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("phantom", help="write a synthetic template (+ subjects)")
    common(p)
    p.add_argument("--spec", help="phantom spec JSON")
    p.add_argument(
        "--canonical", action="store_true", help="use the built-in 64-cube spec"
    )
    p.add_argument("--seed", type=int, help="override the spec's seed")
    p.add_argument("--subjects", type=int, default=0)
    p.add_argument("--deform-amplitude", type=float, default=DEFAULT_DEFORM_AMPLITUDE)
    p.add_argument("--extra-noise", type=float, default=DEFAULT_EXTRA_NOISE)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("export-slices", help="write PGM/PPM slice images")
    common(p)
    p.add_argument("--volume", help="multi-channel volume to export")
    p.add_argument("--labels", help="label volume to export")
    p.add_argument("--axis", choices=tuple(_AXES), required=True)
    p.add_argument("--indices", required=True, help="comma-separated slice indices")
    p.set_defaults(func=cmd_export_slices)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as e:
        print(f"mcseg {args.command}: input error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"mcseg {args.command}: numerical error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
