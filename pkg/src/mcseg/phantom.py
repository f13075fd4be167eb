"""Synthetic multi-contrast phantoms with known ground-truth labels.

Geometry: three disjoint axis-aligned ellipsoids ("nuclei", labels 1-3)
inside a background (label 0).  Centers and radii are fixed fractions of
the grid, so the same layout scales to any shape that can hold it:

    nucleus 1: center (0.266, 0.266, 0.266),  nucleus 2: (0.719, 0.719, 0.266),
    nucleus 3: center (0.500, 0.500, 0.719),  radii 0.2547 of each dimension.

Ellipsoid boundaries are perturbed by smooth noise: a coarse 9x9x9 normal
grid per nucleus, trilinearly upsampled, scaled by ``smoothness`` and added
to the implicit ellipsoid function.  Channel intensities are
``class_means[label][ch]`` plus Gaussian noise of ``noise_sigma[ch]``.

All randomness comes from the portable counter-based generator, with one
stream per purpose so any part can be regenerated independently:

    streams 0..c-1   per-channel intensity noise, counter = linear voxel index
    streams 8..10    coarse boundary-perturbation grids, one per nucleus
    (make_subject)   streams 0..2: coarse displacement per axis;
                     streams 16..16+c-1: extra intensity noise

``make_subject`` derives a noisier "individual" volume from a template by
a smooth random displacement (nearest-neighbor warp for labels, trilinear
for intensities) plus extra noise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .rng import PortableRng
from .volume import GridShape, LabelVolume, MultiChannelVolume, flat_to_grid

_CENTERS_FRAC = ((0.266, 0.266, 0.266), (0.719, 0.719, 0.266), (0.5, 0.5, 0.719))
_RADIUS_FRAC = 0.2547
_BOUNDARY_GRID = 9
_BOUNDARY_STREAM = 8
_DISPLACEMENT_GRID = 5
_EXTRA_NOISE_STREAM = 16

DEFAULT_NOISE_SIGMA = 1.5
DEFAULT_SMOOTHNESS = 0.2
# canonical subject protocol: template seed s -> subject i uses seed s+1000+i
DEFAULT_DEFORM_AMPLITUDE = 1.5
DEFAULT_EXTRA_NOISE = 0.4
SUBJECT_SEED_OFFSET = 1000


@dataclass
class PhantomSpec:
    """Everything :func:`generate` needs; a pure value object."""

    shape: GridShape
    num_labels: int = 4
    channels: int = 3
    class_means: np.ndarray = None
    noise_sigma: np.ndarray = None
    smoothness: float = DEFAULT_SMOOTHNESS
    seed: int = 0

    def __post_init__(self):
        if self.num_labels < 2:
            raise InputError("num_labels must be at least 2")
        if self.channels < 1:
            raise InputError("channels must be positive")
        if self.class_means is None:
            raise InputError("class_means is required")
        means = np.asarray(self.class_means, dtype=np.float64)
        if means.shape != (self.num_labels, self.channels):
            raise InputError(
                f"class_means shape {means.shape} != ({self.num_labels}, {self.channels})"
            )
        for a in range(self.num_labels):
            for b in range(a + 1, self.num_labels):
                if np.array_equal(means[a], means[b]):
                    raise InputError(f"class means {a} and {b} coincide as vectors")
        sigma = np.broadcast_to(
            np.asarray(
                DEFAULT_NOISE_SIGMA if self.noise_sigma is None else self.noise_sigma,
                dtype=np.float64,
            ),
            (self.channels,),
        ).copy()
        if (sigma < 0).any():
            raise InputError("noise_sigma must be nonnegative")
        if self.smoothness < 0:
            raise InputError("smoothness must be nonnegative")
        self.class_means = means
        self.noise_sigma = sigma
        self.seed = int(self.seed)

    def to_dict(self) -> dict:
        return {
            "shape": list(self.shape.as_tuple()),
            "num_labels": self.num_labels,
            "channels": self.channels,
            "class_means": self.class_means.tolist(),
            "noise_sigma": self.noise_sigma.tolist(),
            "smoothness": self.smoothness,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        try:
            shape = GridShape(*d["shape"])
        except (KeyError, TypeError) as e:
            raise InputError(f"phantom spec missing/invalid shape: {e}") from e
        kwargs = {}
        for key in ("num_labels", "channels", "class_means", "noise_sigma",
                    "smoothness", "seed"):
            if key in d:
                kwargs[key] = d[key]
        unknown = set(d) - {"shape", "num_labels", "channels", "class_means",
                            "noise_sigma", "smoothness", "seed"}
        if unknown:
            raise InputError(f"unknown phantom spec keys: {sorted(unknown)}")
        return cls(shape, **kwargs)


def load_spec(path: str) -> PhantomSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as e:
        raise InputError(f"missing phantom spec: {path}") from e
    except json.JSONDecodeError as e:
        raise InputError(f"malformed phantom spec {path}: {e}") from e
    return PhantomSpec.from_dict(doc)


def save_spec(spec: PhantomSpec, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, indent=2)


def _trilinear(grid: np.ndarray, xs, ys, zs) -> np.ndarray:
    """Sample ``grid`` at fractional coordinates (clamped to the box)."""
    m1, m2, m3 = grid.shape

    def locate(s, m):
        s = np.clip(s, 0.0, m - 1.0)
        lo = np.minimum(np.floor(s).astype(np.int64), max(m - 2, 0))
        f = np.clip(s - lo, 0.0, 1.0)
        hi = np.minimum(lo + 1, m - 1)
        return lo, hi, f

    x0, x1, fx = locate(xs, m1)
    y0, y1, fy = locate(ys, m2)
    z0, z1, fz = locate(zs, m3)
    out = grid[x0, y0, z0] * (1 - fx) * (1 - fy) * (1 - fz)
    out += grid[x1, y0, z0] * fx * (1 - fy) * (1 - fz)
    out += grid[x0, y1, z0] * (1 - fx) * fy * (1 - fz)
    out += grid[x0, y0, z1] * (1 - fx) * (1 - fy) * fz
    out += grid[x1, y1, z0] * fx * fy * (1 - fz)
    out += grid[x1, y0, z1] * fx * (1 - fy) * fz
    out += grid[x0, y1, z1] * (1 - fx) * fy * fz
    out += grid[x1, y1, z1] * fx * fy * fz
    return out


def _coarse_grid(rng: PortableRng, stream: int, size: int) -> np.ndarray:
    flat = rng.normal(stream, size**3)
    return flat_to_grid(flat, GridShape(size, size, size))


def _upsample(coarse: np.ndarray, shape: GridShape) -> np.ndarray:
    """Trilinear upsample of a coarse cube onto the full grid."""
    n1, n2, n3 = shape.as_tuple()
    m = coarse.shape[0]

    def axis_coords(n):
        if n == 1:
            return np.zeros(1)
        return np.arange(n) / (n - 1.0) * (m - 1.0)

    xs = axis_coords(n1)[:, None, None]
    ys = axis_coords(n2)[None, :, None]
    zs = axis_coords(n3)[None, None, :]
    full = np.broadcast_arrays(
        xs * np.ones((1, n2, n3)), ys * np.ones((n1, 1, n3)), zs * np.ones((n1, n2, 1))
    )
    return _trilinear(coarse, *full)


def generate(spec: PhantomSpec) -> tuple[MultiChannelVolume, LabelVolume]:
    """Deterministic phantom volume + ground-truth labels for a spec."""
    if spec.num_labels != 4:
        raise InputError(
            f"the three-nucleus geometry defines 4 labels, spec has {spec.num_labels}"
        )
    n1, n2, n3 = spec.shape.as_tuple()
    dims = np.array([n1, n2, n3], dtype=np.float64)
    radii = _RADIUS_FRAC * dims
    if radii.min() < 1.0:
        raise InputError(
            f"grid {spec.shape.as_tuple()} too small: nucleus radius would be "
            f"{radii.min():.2f} voxels"
        )
    rng = PortableRng(spec.seed)
    x = np.arange(n1, dtype=np.float64)[:, None, None]
    y = np.arange(n2, dtype=np.float64)[None, :, None]
    z = np.arange(n3, dtype=np.float64)[None, None, :]

    psi = np.empty((3, n1, n2, n3))
    for j, frac in enumerate(_CENTERS_FRAC):
        cx, cy, cz = (np.array(frac) * (dims - 1.0)).tolist()
        phi = (
            ((x - cx) / radii[0]) ** 2
            + ((y - cy) / radii[1]) ** 2
            + ((z - cz) / radii[2]) ** 2
            - 1.0
        )
        psi[j] = phi
        if spec.smoothness > 0:
            eta = _upsample(_coarse_grid(rng, _BOUNDARY_STREAM + j, _BOUNDARY_GRID),
                            spec.shape)
            psi[j] += spec.smoothness * eta

    best = np.argmin(psi, axis=0)
    inside = np.take_along_axis(psi, best[None], axis=0)[0] <= 0.0
    labels = np.where(inside, best + 1, 0).astype(np.uint8)

    data = np.empty((spec.channels, n1, n2, n3), dtype=np.float64)
    for ch in range(spec.channels):
        base = spec.class_means[labels, ch]
        if spec.noise_sigma[ch] > 0:
            noise = flat_to_grid(rng.normal(ch, spec.shape.count), spec.shape)
            base = base + spec.noise_sigma[ch] * noise
        data[ch] = base
    vol = MultiChannelVolume(spec.shape, data.astype(np.float32))
    lab = LabelVolume(spec.shape, labels, 4)
    return vol, lab


def default_confusable_spec(seed: int = 0) -> PhantomSpec:
    """Canonical 64-cube, 3-channel spec with engineered channel confusions.

    Means: background (0,0,0); nucleus j peaks at 2 in channel j and sits at
    1 elsewhere.  Each single channel therefore collapses one nucleus pair
    (channel 1 cannot separate labels 2 and 3, channel 2 confuses 1 and 3,
    channel 3 confuses 1 and 2), while all three channels jointly separate
    everything -- so error must drop strictly as channels are added.
    """
    means = np.array(
        [
            [0.0, 0.0, 0.0],
            [2.0, 1.0, 1.0],
            [1.0, 2.0, 1.0],
            [1.0, 1.0, 2.0],
        ]
    )
    return PhantomSpec(
        GridShape(64, 64, 64),
        num_labels=4,
        channels=3,
        class_means=means,
        noise_sigma=np.full(3, DEFAULT_NOISE_SIGMA),
        smoothness=DEFAULT_SMOOTHNESS,
        seed=seed,
    )


def make_subject(
    template_pair: tuple[MultiChannelVolume, LabelVolume],
    deform_amplitude: float,
    extra_noise,
    seed: int,
) -> tuple[MultiChannelVolume, LabelVolume]:
    """Warp a template into a noisier "individual subject" volume.

    A smooth random displacement field (coarse 5-cube per axis, trilinearly
    upsampled, scaled to ``deform_amplitude`` voxels) moves every voxel;
    labels are pulled back with nearest-neighbor sampling, intensities with
    trilinear sampling, then per-channel ``extra_noise`` Gaussian noise is
    added.  The warped labels are the subject's ground truth.

    The displacement tapers linearly to zero over a thin margin at the
    volume faces, so moderate amplitudes keep every source coordinate
    inside the grid; amplitudes large enough to escape anyway are an error.
    """
    vol, lab = template_pair
    if vol.shape != lab.shape:
        raise InputError("template volume and labels disagree in shape")
    if deform_amplitude < 0:
        raise InputError("deform_amplitude must be nonnegative")
    sigma = np.broadcast_to(
        np.asarray(extra_noise, dtype=np.float64), (vol.channels,)
    ).copy()
    if (sigma < 0).any():
        raise InputError("extra_noise must be nonnegative")

    shape = vol.shape
    n1, n2, n3 = shape.as_tuple()
    rng = PortableRng(seed)

    x = np.arange(n1, dtype=np.float64)[:, None, None] * np.ones((1, n2, n3))
    y = np.arange(n2, dtype=np.float64)[None, :, None] * np.ones((n1, 1, n3))
    z = np.arange(n3, dtype=np.float64)[None, None, :] * np.ones((n1, n2, 1))
    source = [x, y, z]
    if deform_amplitude > 0:
        # linear ramp over `margin` voxels; a displacement can only escape the
        # grid if amplitude * |field| exceeds the margin itself
        margin = max(4.0, 0.15 * min(n1, n2, n3))

        def face_taper(n):
            i = np.arange(n, dtype=np.float64)
            return np.clip(np.minimum(i, n - 1 - i) / margin, 0.0, 1.0)

        taper = (
            face_taper(n1)[:, None, None]
            * face_taper(n2)[None, :, None]
            * face_taper(n3)[None, None, :]
        )
        for a in range(3):
            disp = _upsample(_coarse_grid(rng, a, _DISPLACEMENT_GRID), shape)
            source[a] = source[a] + deform_amplitude * taper * disp
        limits = (n1 - 1.0, n2 - 1.0, n3 - 1.0)
        for a in range(3):
            if source[a].min() < 0.0 or source[a].max() > limits[a]:
                raise InputError(
                    "deformation exits the grid; reduce deform_amplitude"
                )

    rounded = [np.rint(s).astype(np.int64) for s in source]
    warped_labels = lab.labels[rounded[0], rounded[1], rounded[2]]

    data = np.empty((vol.channels, n1, n2, n3), dtype=np.float64)
    for ch in range(vol.channels):
        warped = _trilinear(vol.data[ch].astype(np.float64), *source)
        if sigma[ch] > 0:
            noise = flat_to_grid(
                rng.normal(_EXTRA_NOISE_STREAM + ch, shape.count), shape
            )
            warped = warped + sigma[ch] * noise
        data[ch] = warped
    out_vol = MultiChannelVolume(shape, data.astype(np.float32))
    out_lab = LabelVolume(shape, warped_labels, lab.num_labels)
    return out_vol, out_lab
