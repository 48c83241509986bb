"""Operator view of the diffusion recursion.

A block vector is an array of shape ``(N, M)``: row ``k`` is the
``M``-dimensional estimate held by node ``k``. Leading batch axes are
allowed wherever it is cheap to support them. ``stack``/``unstack`` convert
to and from the flat ``MN`` column layout used by the Kronecker-lifted
matrices in :mod:`diffpareto.analysis`.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .costs import CostModel, hessian_bounds

log = logging.getLogger(__name__)

__all__ = [
    "StepSizeWarning",
    "FixedPointError",
    "GradientDescentSpec",
    "stack",
    "unstack",
    "combine",
    "gradient_descent",
    "power",
    "block_max_norm",
    "diffuse",
    "contraction_factor",
    "iterate_fixed_point",
    "find_fixed_point",
]


class StepSizeWarning(UserWarning):
    """Step-sizes outside ``0 < mu_k < 2 / sigma_k,max``."""


class FixedPointError(RuntimeError):
    pass


def stack(x) -> np.ndarray:
    """``(..., N, M)`` block vector to its ``(..., MN)`` column form."""
    x = np.asarray(x)
    return x.reshape(x.shape[:-2] + (-1,))


def unstack(v, n_blocks: int) -> np.ndarray:
    v = np.asarray(v)
    return v.reshape(v.shape[:-1] + (n_blocks, -1))


@dataclass(frozen=True)
class GradientDescentSpec:
    """Costs, gradient-sharing matrix ``C`` and step-sizes for ``T_G``.

    ``c[l, k]`` weights the gradient of cost ``l`` inside node ``k``'s update.
    """

    costs: tuple
    c: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        costs = tuple(self.costs)
        c = np.asarray(self.c, dtype=float)
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        n = len(costs)
        if c.shape != (n, n) or mu.shape != (n,):
            raise ValueError(f"need {n} costs, a {n}x{n} C and {n} step-sizes")
        if any(not isinstance(cost, CostModel) for cost in costs):
            raise TypeError("costs must implement CostModel")
        if len({cost.dim for cost in costs}) != 1:
            raise ValueError("all costs must share one dimension")
        if np.any(mu < 0):
            raise ValueError("step-sizes must be non-negative")
        lam_min, _ = hessian_bounds(costs)
        agg = c.T @ lam_min
        if np.any(agg <= 0):
            bad = np.flatnonzero(agg <= 0).tolist()
            raise ValueError(f"sum_l c[l,k] lambda_l,min must be positive; fails at nodes {bad}")
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "mu", mu)

    @property
    def n_nodes(self) -> int:
        return len(self.costs)

    @property
    def dim(self) -> int:
        return self.costs[0].dim

    def sigma_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-node ``sigma_k,min = sum_l c_lk lambda_l,min`` and the max analogue."""
        lam_min, lam_max = hessian_bounds(self.costs)
        return self.c.T @ lam_min, self.c.T @ lam_max


def combine(a, x) -> np.ndarray:
    """Combination operator: block ``k`` of the output is ``sum_l a[l, k] x_l``."""
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim < 2 or x.shape[-2] != a.shape[0] or a.shape[0] != a.shape[1]:
        raise ValueError(f"cannot combine {a.shape} matrix with block vector {x.shape}")
    return a.T @ x


def aggregate_gradients(spec: GradientDescentSpec, x, noise=None) -> np.ndarray:
    """``sum_l c[l, k] grad J_l(x_k)`` for every node ``k``.

    ``noise``, when given, is a sequence of standard normal draws (one array
    of shape ``(..., noise_dim_l)`` per cost) and adds ``v_l(x_k)`` to each
    gradient. One draw per cost is shared by every point it is evaluated at.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for l, cost in enumerate(spec.costs):
        targets = np.flatnonzero(spec.c[l])
        if targets.size == 0:
            continue
        pts = x[..., targets, :]
        g = cost.gradient(pts)
        if noise is not None and cost.noise_dim:
            g = g + cost.gradient_noise(pts, noise[l][..., None, :])
        out[..., targets, :] += spec.c[l, targets, None] * g
    return out


def gradient_descent(spec: GradientDescentSpec, x) -> np.ndarray:
    """Noise-free adaptation ``x_k - mu_k sum_l c[l, k] grad J_l(x_k)``."""
    x = np.asarray(x, dtype=float)
    return x - spec.mu[:, None] * aggregate_gradients(spec, x)


def power(x) -> np.ndarray:
    """Squared Euclidean norm of every block."""
    x = np.asarray(x, dtype=float)
    return np.sum(x * x, axis=-1)


def block_max_norm(x) -> float:
    return float(np.sqrt(np.max(power(x))))


def diffuse(a1, spec: GradientDescentSpec, a2, x) -> np.ndarray:
    """Noise-free diffusion map: combine with ``A1``, adapt, combine with ``A2``."""
    return combine(a2, gradient_descent(spec, combine(a1, x)))


def contraction_factor(spec: GradientDescentSpec) -> tuple[float, np.ndarray]:
    """``(|Gamma|_inf, gamma)`` with ``gamma_k = max |1 - mu_k sigma_k|`` over both bounds."""
    s_min, s_max = spec.sigma_bounds()
    gamma = np.maximum(np.abs(1.0 - spec.mu * s_max), np.abs(1.0 - spec.mu * s_min))
    return float(gamma.max()), gamma


def iterate_fixed_point(mapping, x0, tol: float = 1e-12, max_iters: int = 1_000_000):
    """Iterate ``x <- mapping(x)`` until successive iterates are ``tol``-close.

    Distances are measured in the block maximum norm. Returns the final
    iterate and the number of steps taken.
    """
    x = np.array(x0, dtype=float)
    for it in range(1, max_iters + 1):
        nxt = mapping(x)
        if not np.all(np.isfinite(nxt)):
            raise FixedPointError(f"iteration diverged after {it} steps")
        if block_max_norm(nxt - x) < tol:
            return nxt, it
        x = nxt
    raise FixedPointError(f"no convergence within {max_iters} steps (tol={tol:g})")


def find_fixed_point(a1, spec: GradientDescentSpec, a2, x0, tol: float = 1e-12,
                     max_iters: int = 1_000_000, on_violation: str = "raise") -> np.ndarray:
    """Fixed point of the noise-free diffusion map.

    Parameters
    ----------
    on_violation : {"raise", "warn", "ignore"}
        What to do when some ``mu_k`` breaks ``0 < mu_k < 2 / sigma_k,max``,
        the condition under which the map is a contraction. ``"warn"`` keeps
        iterating so divergence can be observed.
    """
    _, s_max = spec.sigma_bounds()
    bad = np.flatnonzero(~((spec.mu > 0) & (spec.mu < 2.0 / s_max)))
    if bad.size:
        msg = f"0 < mu_k < 2/sigma_k,max violated at nodes {bad.tolist()}"
        if on_violation == "raise":
            raise ValueError(msg)
        if on_violation == "warn":
            warnings.warn(msg, StepSizeWarning, stacklevel=2)
    w, steps = iterate_fixed_point(lambda x: diffuse(a1, spec, a2, x), x0, tol, max_iters)
    log.debug("fixed point reached after %d steps", steps)
    return w
