"""Convex multi-label segmentation by a first-order primal-dual method.

The problem solved is

    min_{u : rows on the unit simplex}  sum_x sum_l u(x,l) cost(x,l)
                                        + lambda * TV(u)

with anisotropic total variation: the L1 norm of forward finite differences
per label channel, zero (Neumann) difference at the far face of each axis.

The saddle-point form  min_u max_{|p| <= lambda} <u, c> + <grad u, p>  is
solved by alternating a projected dual ascent and a projected primal
descent with over-relaxation:

    p   <- clamp(p + sigma * grad(u_bar), [-lambda, lambda])
    u'  <- proj_simplex(u + tau * (div p - c))
    u_bar <- u' + theta (u' - u)

Convergence requires tau * sigma * L^2 <= 1 where L^2 bounds the squared
operator norm of the gradient (12 in 3d mode, 8 in 2d-slicewise mode).
The over-relaxed gradient is formed from the identity
grad(u_bar) = (1 + theta) grad(u') - theta grad(u), so each iteration
evaluates one gradient, and both energies reuse intermediates already in
hand: the primal energy needs grad(u'), the dual energy
sum_x min_l (c - div p)(x,l) needs div p.

Iterations stop when the relative primal-dual gap
(E_primal - E_dual) / max(1, |E_primal|) drops to ``tol``, or at
``max_iters``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericalError
from .volume import (
    GridShape,
    PosteriorField,
    SimplexField,
    flat_to_grid,
    grid_to_flat,
)

DEFAULT_EPS_CLAMP = 1e-6
DEFAULT_TOL = 1e-5
DEFAULT_MAX_ITERS = 2000
TV_MODES = ("3d", "2d-slicewise")

# forward-difference squared operator norm bound: 4 per active axis
_L2 = {"3d": 12.0, "2d-slicewise": 8.0}
_AXES = {"3d": (1, 2, 3), "2d-slicewise": (1, 2)}


@dataclass
class DataTerm:
    """Per-voxel, per-label unary costs in linear voxel order."""

    shape: GridShape
    num_labels: int
    costs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.costs, dtype=np.float64)
        if c.shape != (self.shape.count, self.num_labels):
            raise InputError(
                f"costs shape {c.shape} != ({self.shape.count}, {self.num_labels})"
            )
        if not np.isfinite(c).all():
            raise InputError("data term contains non-finite costs")
        # posteriors may exceed 1 by the simplex row-sum slack, nothing more
        if c.min() < -1e-5:
            raise InputError(f"negative cost {c.min():.3e} below tolerance")
        self.costs = c


@dataclass
class SolverConfig:
    """Step sizes, regularization weight, and stopping rule.

    ``tau``/``sigma`` default to 1/sqrt(L^2) for the chosen ``tv_mode``,
    which meets the convergence condition tau*sigma*L^2 <= 1 with equality.
    """

    lam: float = 1.0
    max_iters: int = DEFAULT_MAX_ITERS
    tol: float = DEFAULT_TOL
    tau: float | None = None
    sigma: float | None = None
    theta: float = 1.0
    tv_mode: str = "3d"
    epsilon_clamp: float = DEFAULT_EPS_CLAMP

    def __post_init__(self):
        if self.tv_mode not in TV_MODES:
            raise InputError(f"tv_mode must be one of {TV_MODES}, got {self.tv_mode!r}")
        l2 = _L2[self.tv_mode]
        if self.tau is None:
            self.tau = 1.0 / np.sqrt(l2)
        if self.sigma is None:
            self.sigma = 1.0 / np.sqrt(l2)
        if not (self.lam > 0):
            raise InputError("lambda must be positive")
        if not (self.tau > 0 and self.sigma > 0):
            raise InputError("tau and sigma must be positive")
        if not (0.0 <= self.theta <= 1.0):
            raise InputError("theta must lie in [0, 1]")
        if not (self.tol > 0):
            raise InputError("tol must be positive")
        if self.max_iters < 1:
            raise InputError("max_iters must be at least 1")
        if not (0.0 < self.epsilon_clamp < 1.0):
            raise InputError("epsilon_clamp must lie in (0, 1)")
        if self.tau * self.sigma * l2 > 1.0 + 1e-12:
            raise InputError(
                f"tau*sigma*L^2 = {self.tau * self.sigma * l2:.6f} exceeds 1"
            )

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        known = {
            "lambda": "lam",
            "lam": "lam",
            "max_iters": "max_iters",
            "tol": "tol",
            "tau": "tau",
            "sigma": "sigma",
            "theta": "theta",
            "tv_mode": "tv_mode",
            "epsilon_clamp": "epsilon_clamp",
        }
        kwargs = {}
        for key, value in d.items():
            if key not in known:
                raise InputError(f"unknown solver config key {key!r}")
            kwargs[known[key]] = value
        return cls(**kwargs)


@dataclass
class DualField:
    """One gradient-shaped field per label channel.

    ``components[a, l]`` is the finite-difference component along active
    axis ``a`` for label ``l``, on the full grid.
    """

    shape: GridShape
    num_labels: int
    tv_mode: str
    components: np.ndarray

    def __post_init__(self):
        if self.tv_mode not in TV_MODES:
            raise InputError(f"tv_mode must be one of {TV_MODES}")
        comp = np.asarray(self.components, dtype=np.float64)
        d = len(_AXES[self.tv_mode])
        want = (d, self.num_labels) + self.shape.as_tuple()
        if comp.shape != want:
            raise InputError(f"dual components shape {comp.shape} != {want}")
        if not np.isfinite(comp).all():
            raise InputError("dual field contains non-finite values")
        self.components = comp


def _field_to_grids(values: np.ndarray, shape: GridShape) -> np.ndarray:
    """(n, l) rows in linear voxel order -> (l, n1, n2, n3) stack."""
    return np.stack([flat_to_grid(values[:, l], shape) for l in range(values.shape[1])])


def _grids_to_field(grids: np.ndarray) -> np.ndarray:
    """(l, n1, n2, n3) stack -> (n, l) rows in linear voxel order."""
    return np.stack([grid_to_flat(g) for g in grids], axis=1)


def _grad_into(u: np.ndarray, out: np.ndarray, axes) -> np.ndarray:
    """Forward differences of (l, n1, n2, n3) along grid axes, far face 0."""
    for a, ax in enumerate(axes):
        comp = out[a]
        n = u.shape[ax]
        head = [slice(None)] * u.ndim
        tail = [slice(None)] * u.ndim
        head[ax] = slice(0, n - 1)
        tail[ax] = slice(1, n)
        np.subtract(u[tuple(tail)], u[tuple(head)], out=comp[tuple(head)])
        far = [slice(None)] * u.ndim
        far[ax] = slice(n - 1, n)
        comp[tuple(far)] = 0.0
    return out


def _div_into(p: np.ndarray, out: np.ndarray, axes) -> np.ndarray:
    """Exact negative adjoint of ``_grad_into`` under the same convention."""
    out.fill(0.0)
    ndim = out.ndim
    for a, ax in enumerate(axes):
        comp = p[a]
        n = out.shape[ax]
        if n == 1:
            continue  # single-voxel axis: gradient is identically zero

        def sl(i, j=None):
            s = [slice(None)] * ndim
            s[ax] = slice(i, j) if j is not None else slice(i, i + 1)
            return tuple(s)

        out[sl(0)] += comp[sl(0)]
        if n > 2:
            out[sl(1, n - 1)] += comp[sl(1, n - 1)]
            out[sl(1, n - 1)] -= comp[sl(0, n - 2)]
        out[sl(n - 1)] -= comp[sl(n - 2)]
    return out


def gradient(u: SimplexField, mode: str = "3d") -> DualField:
    """Forward-difference gradient of each label channel."""
    if mode not in TV_MODES:
        raise InputError(f"tv_mode must be one of {TV_MODES}")
    axes = _AXES[mode]
    grids = _field_to_grids(u.values, u.shape)
    out = np.empty((len(axes),) + grids.shape)
    _grad_into(grids, out, axes)
    return DualField(u.shape, u.num_labels, mode, out)


def divergence(p: DualField, mode: str | None = None) -> np.ndarray:
    """Negative adjoint of :func:`gradient`; (n, l) rows in voxel order."""
    mode = p.tv_mode if mode is None else mode
    if mode != p.tv_mode:
        raise InputError(f"mode {mode!r} != dual field mode {p.tv_mode!r}")
    axes = _AXES[mode]
    out = np.empty(p.components.shape[1:])
    _div_into(p.components, out, axes)
    return _grids_to_field(out)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of each trailing-axis vector onto the simplex.

    Accepts a single vector or any stack of them (labels on the last axis).
    Vectors already on the simplex (entries >= 0, sum within 1e-9 of 1) are
    returned unchanged, which makes repeated projection exactly idempotent.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 0 or v.shape[-1] < 1:
        raise InputError("need at least one label to project")
    if not np.isfinite(v).all():
        raise InputError("cannot project non-finite values")
    single = v.ndim == 1
    rows = v.reshape(1, -1) if single else v.reshape(-1, v.shape[-1])

    feasible = (rows >= 0.0).all(axis=1) & (np.abs(rows.sum(axis=1) - 1.0) <= 1e-9)
    out = np.empty_like(rows)
    if not feasible.all():
        work = rows[~feasible]
        s = np.sort(work, axis=1)[:, ::-1]
        css = np.cumsum(s, axis=1) - 1.0
        j = np.arange(1, s.shape[1] + 1)
        rho = np.count_nonzero(s * j > css, axis=1)
        theta = css[np.arange(work.shape[0]), rho - 1] / rho
        out[~feasible] = np.maximum(work - theta[:, None], 0.0)
    out[feasible] = rows[feasible]
    return out[0] if single else out.reshape(v.shape)


def project_dual(p: DualField, lam: float) -> DualField:
    """Clamp every component into [-lambda, lambda] (anisotropic dual box)."""
    if not (lam > 0):
        raise InputError("lambda must be positive")
    return DualField(
        p.shape, p.num_labels, p.tv_mode, np.clip(p.components, -lam, lam)
    )


def _cost_from_probs(probs: np.ndarray, eps: float) -> np.ndarray:
    if not (0.0 < eps < 1.0):
        raise InputError("epsilon_clamp must lie in (0, 1)")
    return -np.log(np.maximum(probs, eps))


def build_data_term(p: PosteriorField, eps: float = DEFAULT_EPS_CLAMP) -> DataTerm:
    """cost(x, l) = -log(max(p(x, l), eps))."""
    return DataTerm(p.shape, p.num_labels, _cost_from_probs(p.values, eps))


def build_weighted_data_term(
    p: PosteriorField, prior: SimplexField, w: float, eps: float = DEFAULT_EPS_CLAMP
) -> DataTerm:
    """cost(x, l) = -log(max((1-w) p(x, l) + w prior(x, l), eps)).

    At w = 0 the blend multiplies by exactly 1.0 and adds exactly +0.0, so
    the costs are bit-identical to :func:`build_data_term`.
    """
    if not (0.0 <= w <= 1.0):
        raise InputError(f"prior weight w must lie in [0, 1], got {w}")
    if prior.shape != p.shape or prior.num_labels != p.num_labels:
        raise InputError("posterior and prior disagree in shape or labels")
    blend = (1.0 - w) * p.values + w * prior.values
    return DataTerm(p.shape, p.num_labels, _cost_from_probs(blend, eps))


def energy(u: SimplexField, dt: DataTerm, lam: float, mode: str = "3d") -> float:
    """Primal objective: data cost plus lambda times anisotropic TV."""
    if u.shape != dt.shape or u.num_labels != dt.num_labels:
        raise InputError("field and data term disagree in shape or labels")
    g = gradient(u, mode)
    return float((u.values * dt.costs).sum() + lam * np.abs(g.components).sum())


@dataclass
class SolveDiagnostics:
    """Per-iteration solver trace; arrays all have length ``iterations``."""

    iterations: int
    converged: bool
    primal: np.ndarray
    dual: np.ndarray
    gap: np.ndarray
    simplex_deviation: np.ndarray
    min_entry: np.ndarray

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "energy", "gap"])
            for i in range(self.iterations):
                writer.writerow([i + 1, repr(float(self.primal[i])), repr(float(self.gap[i]))])


def solve(
    dt: DataTerm, cfg: SolverConfig, init: SimplexField | None = None
) -> tuple[SimplexField, SolveDiagnostics]:
    """Minimize the relaxed labeling objective for the given data term.

    ``init`` seeds the primal variable (the caller usually passes the
    posterior field); when omitted, the row-normalized exponential of the
    negative costs is used, which recovers the clamped posterior.  The dual
    starts at zero.
    """
    shape, nl = dt.shape, dt.num_labels
    axes = _AXES[cfg.tv_mode]
    d = len(axes)
    lam, tau, sigma, theta = cfg.lam, cfg.tau, cfg.sigma, cfg.theta

    c = _field_to_grids(dt.costs, shape)
    if init is not None:
        if init.shape != shape or init.num_labels != nl:
            raise InputError("init field disagrees with data term")
        u = _field_to_grids(init.values, shape)
    else:
        u = np.exp(-c)
        u /= u.sum(axis=0, keepdims=True)

    p = np.zeros((d,) + u.shape)
    g_cur = np.empty_like(p)
    g_prev = np.empty_like(p)
    gbar = np.empty_like(p)
    div = np.empty_like(u)
    _grad_into(u, g_cur, axes)
    g_prev[...] = g_cur

    primal, dual, gap, sdev, smin = [], [], [], [], []
    converged = False
    for _ in range(cfg.max_iters):
        # gradient of the over-relaxed iterate, from the two stored gradients
        np.subtract(g_cur, g_prev, out=gbar)
        gbar *= theta
        gbar += g_cur

        gbar *= sigma
        p += gbar
        np.clip(p, -lam, lam, out=p)

        _div_into(p, div, axes)
        e_dual = float((c - div).min(axis=0).sum())

        # primal descent: u + tau*(div p - c), then back onto the simplex
        div -= c
        div *= tau
        div += u
        flat = div.reshape(nl, -1).T
        u = np.ascontiguousarray(project_simplex(flat).T).reshape(u.shape)

        g_prev, g_cur = g_cur, g_prev
        _grad_into(u, g_cur, axes)
        e_primal = float((u * c).sum() + lam * np.abs(g_cur).sum())
        if not (np.isfinite(e_primal) and np.isfinite(e_dual)):
            raise NumericalError("solver produced non-finite energy")

        rel_gap = (e_primal - e_dual) / max(1.0, abs(e_primal))
        sums = u.sum(axis=0)
        primal.append(e_primal)
        dual.append(e_dual)
        gap.append(rel_gap)
        sdev.append(float(np.abs(sums - 1.0).max()))
        smin.append(float(u.min()))
        if rel_gap <= cfg.tol:
            converged = True
            break

    diag = SolveDiagnostics(
        iterations=len(primal),
        converged=converged,
        primal=np.array(primal),
        dual=np.array(dual),
        gap=np.array(gap),
        simplex_deviation=np.array(sdev),
        min_entry=np.array(smin),
    )
    result = SimplexField(shape, nl, _grids_to_field(u))
    return result, diag
