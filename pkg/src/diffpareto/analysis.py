"""Closed-form performance predictions for diffusion strategies.

Block quantities use the flat ``MN`` layout (node-major): the lifted matrices
are ``A kron I_M``. Per-node outputs are ``(N,)`` vectors; block vectors are
returned as ``(N, M)`` arrays like everywhere else in the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from .costs import hessian_bounds
from .operators import power, stack, unstack

__all__ = [
    "InstabilityError",
    "spectral_radius",
    "sigma_bounds",
    "noise_constants",
    "step_size_limit_contraction",
    "step_size_limit_mss",
    "SpectralData",
    "spectral_data",
    "msp_bound_trajectory",
    "msp_o_mu_bound",
    "bias_fixed_point",
    "ZeroBiasCheck",
    "check_zero_bias_condition",
    "gradient_noise_covariance",
    "SteadyStateOperators",
    "steady_state_operators",
    "steady_state_mse",
    "PerformanceReport",
    "performance_report",
]

DENSE_LIMIT = 64


class InstabilityError(ArithmeticError):
    """A recursion matrix has spectral radius >= 1."""


def spectral_radius(mat) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(mat, dtype=float)))))


def _lift(mat, m):
    return np.kron(np.asarray(mat, dtype=float), np.eye(m))


def _one_norm(c) -> float:
    """Maximum absolute column sum."""
    return float(np.max(np.abs(np.asarray(c)).sum(axis=0)))


def sigma_bounds(costs, c) -> tuple[np.ndarray, np.ndarray]:
    lam_min, lam_max = hessian_bounds(costs)
    c = np.asarray(c, dtype=float)
    return c.T @ lam_min, c.T @ lam_max


def noise_constants(costs) -> tuple[float, float]:
    """Network-wide ``(alpha, sigma_v^2)``: the largest declared per-cost values."""
    params = np.array([cost.noise_params for cost in costs], dtype=float)
    return float(params[:, 0].max()), float(params[:, 1].max())


def step_size_limit_contraction(costs, c) -> np.ndarray:
    """Upper limits ``2 / sigma_k,max`` that make the noise-free map contractive."""
    _, s_max = sigma_bounds(costs, c)
    return 2.0 / s_max


def step_size_limit_mss(costs, c, alpha: float) -> np.ndarray:
    """Sufficient step-size limits for mean-square stability."""
    s_min, s_max = sigma_bounds(costs, c)
    _, lam_max = hessian_bounds(costs)
    extra = 4.0 * alpha * lam_max.max() ** 2 * _one_norm(c) ** 2
    return np.minimum(s_max / (s_max**2 + extra), s_min / (s_min**2 + extra))


@dataclass
class SpectralData:
    """Ingredients of the mean-square-perturbation bounds.

    Attributes
    ----------
    gamma : ndarray (N,)
        Per-node contraction factors.
    gamma_d : ndarray (N,)
        Diagonal of ``Gamma^2 + 4 alpha lambda_max^2 |C|_1^2 Omega^2``.
    b_v : ndarray (N,)
        Driving term of the MSP recursion.
    """

    gamma: np.ndarray
    gamma_d: np.ndarray
    lambda_max: float
    c_one_norm: float
    b_v: np.ndarray
    alpha: float
    sigma_v2: float
    mu: np.ndarray

    @property
    def mu_max(self) -> float:
        return float(self.mu.max())


def spectral_data(costs, a1, c, mu, w_o, bias=None, alpha=None, sigma_v2=None,
                  a2=None) -> SpectralData:
    """Collect ``Gamma``, ``Gamma_d`` and ``b_v`` for a configuration.

    ``bias`` is the fixed-point error ``1 kron w^o - w_inf`` as an ``(N, M)``
    array; when omitted it is computed with :func:`bias_fixed_point`, which
    needs ``a2``.
    """
    costs = tuple(costs)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    a1 = np.asarray(a1, dtype=float)
    w_o = np.asarray(w_o, dtype=float)
    d_alpha, d_sigma = noise_constants(costs)
    alpha = d_alpha if alpha is None else float(alpha)
    sigma_v2 = d_sigma if sigma_v2 is None else float(sigma_v2)
    s_min, s_max = sigma_bounds(costs, c)
    gamma = np.maximum(np.abs(1.0 - mu * s_max), np.abs(1.0 - mu * s_min))
    _, lam_max = hessian_bounds(costs)
    lmax = float(lam_max.max())
    cn = _one_norm(c)
    gamma_d = gamma**2 + 4.0 * alpha * lmax**2 * cn**2 * mu**2
    if bias is None:
        if a2 is None:
            raise ValueError("need a2 to compute the bias")
        bias = bias_fixed_point(costs, a1, a2, c, mu, w_o)
    grad_sq = np.array([np.sum(cost.gradient(w_o) ** 2) for cost in costs])
    b_v = (4.0 * alpha * lmax**2 * (a1.T @ power(bias))
           + np.max(2.0 * alpha * grad_sq + sigma_v2))
    return SpectralData(gamma, gamma_d, lmax, cn, b_v, alpha, sigma_v2, mu)


def msp_bound_trajectory(spectral: SpectralData, a1, a2, msp0, horizon: int):
    """Non-asymptotic MSP bound for ``i = 0..horizon`` and its limit.

    Returns
    -------
    bounds : ndarray (horizon + 1, N)
        ``B^i (msp0 - ub) + ub`` with ``B = A2^T Gamma_d A1^T``.
    ub : ndarray (N,)
        ``|C|_1^2 (I - B)^{-1} A2^T Omega^2 b_v``.

    Raises
    ------
    InstabilityError
        If ``rho(B) >= 1``.
    """
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    b = a2.T @ np.diag(spectral.gamma_d) @ a1.T
    rho = spectral_radius(b)
    if rho >= 1.0:
        raise InstabilityError(f"rho(A2^T Gamma_d A1^T) = {rho:.6g} >= 1")
    n = b.shape[0]
    drive = spectral.c_one_norm**2 * (a2.T @ (spectral.mu**2 * spectral.b_v))
    ub = np.linalg.solve(np.eye(n) - b, drive)
    out = np.empty((horizon + 1, n))
    gap = np.asarray(msp0, dtype=float) - ub
    for i in range(horizon + 1):
        out[i] = gap + ub
        gap = b @ gap
    return out, ub


def msp_o_mu_bound(spectral: SpectralData, beta: float, sigma_min: float, sigma_max: float) -> float:
    """Small step-size bound on ``|MSP_inf|_inf``, linear in ``mu_max``.

    ``beta = mu_min / mu_max``; ``sigma_min``/``sigma_max`` are the extreme
    aggregate Hessian bounds over nodes.
    """
    mu_max = spectral.mu_max
    cn2 = spectral.c_one_norm**2
    denom = 2.0 * beta * sigma_min - mu_max * (
        sigma_max**2 + 4.0 * spectral.alpha * spectral.lambda_max**2 * cn2)
    if denom <= 0:
        raise InstabilityError(f"step-size too large for the O(mu) bound (denominator {denom:.3g})")
    return float(cn2 * np.max(spectral.b_v) * mu_max / denom)


def _gauss_legendre(order):
    x, wts = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * wts


def _r_matrix(costs, a1, c, w_o, bias, quad_order):
    """Block-diagonal ``R`` with block ``k = sum_l c_lk H_lk``.

    ``bias=None`` evaluates every Hessian at ``w^o``; otherwise ``H_lk`` is
    the average Hessian of ``J_l`` on the segment from ``w^o`` to ``phi_k``.
    """
    n, m = len(costs), costs[0].dim
    r = np.zeros((n * m, n * m))
    if bias is None:
        hess = [cost.hessian(w_o) for cost in costs]
        for k in range(n):
            r[k * m:(k + 1) * m, k * m:(k + 1) * m] = sum(c[l, k] * hess[l] for l in range(n) if c[l, k])
        return r
    nodes, wts = _gauss_legendre(quad_order)
    phi_tilde = a1.T @ bias
    for k in range(n):
        blk = np.zeros((m, m))
        for l in range(n):
            if c[l, k]:
                h = sum(wt * costs[l].hessian(w_o - t * phi_tilde[k]) for t, wt in zip(nodes, wts))
                blk += c[l, k] * h
        r[k * m:(k + 1) * m, k * m:(k + 1) * m] = blk
    return r


def bias_fixed_point(costs, a1, a2, c, mu, w_o, hessian: str = "approx", tol: float = 1e-15,
                     max_iters: int = 100, quad_order: int = 40) -> np.ndarray:
    """Fixed-point error ``1 kron w^o - w_inf`` from the linear fixed-point equation.

    Solves ``[I - A2^T (I - M R) A1^T] x = A2^T M C^T g^o`` with lifted
    matrices. ``hessian="approx"`` uses Hessians at ``w^o`` (exact for
    quadratic costs); ``"exact"`` uses segment-averaged Hessians and iterates
    the solve to self-consistency.

    Raises
    ------
    InstabilityError
        If the system matrix is numerically singular.
    """
    costs = tuple(costs)
    n, m = len(costs), costs[0].dim
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    c = np.asarray(c, dtype=float)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (n,))
    w_o = np.asarray(w_o, dtype=float)
    big_a1, big_a2, big_c = _lift(a1, m), _lift(a2, m), _lift(c, m)
    big_m = np.kron(np.diag(mu), np.eye(m))
    g_o = np.concatenate([cost.gradient(w_o) for cost in costs])
    rhs = big_a2.T @ big_m @ big_c.T @ g_o
    eye = np.eye(n * m)

    def solve(r):
        sys_mat = eye - big_a2.T @ (eye - big_m @ r) @ big_a1.T
        if np.linalg.cond(sys_mat) > 1e14:
            raise InstabilityError("bias system is singular; check step-sizes and stochasticity")
        return unstack(np.linalg.solve(sys_mat, rhs), n)

    bias = solve(_r_matrix(costs, a1, c, w_o, None, quad_order))
    if hessian == "approx":
        return bias
    if hessian != "exact":
        raise ValueError(f"unknown hessian mode {hessian!r}")
    for _ in range(max_iters):
        nxt = solve(_r_matrix(costs, a1, c, w_o, bias, quad_order))
        if np.max(np.abs(nxt - bias)) <= tol * max(1.0, np.max(np.abs(nxt))):
            return nxt
        bias = nxt
    return bias


@dataclass
class ZeroBiasCheck:
    holds: bool
    c0: float | None
    row: np.ndarray


def check_zero_bias_condition(theta, a2, mu, c, rtol: float = 1e-10) -> ZeroBiasCheck:
    """Whether ``theta^T A2^T Omega C^T`` is a constant row ``c0 1^T``.

    ``mu`` may be the step-size vector or the diagonal matrix ``Omega``.
    """
    mu = np.asarray(mu, dtype=float)
    omega = mu if mu.ndim == 2 else np.diag(mu)
    row = np.asarray(theta, dtype=float) @ np.asarray(a2).T @ omega @ np.asarray(c).T
    spread = np.max(np.abs(row - row.mean()))
    holds = bool(spread <= rtol * max(np.max(np.abs(row)), np.finfo(float).tiny))
    return ZeroBiasCheck(holds, float(row.mean()) if holds else None, row)


def gradient_noise_covariance(costs, w_o, c, mode: str = "analytic", samples: int = 1_000_000,
                              rng: np.random.Generator | None = None, batch: int = 100_000) -> np.ndarray:
    """Covariance ``R_v`` of the stacked gradient noise at ``w^o``.

    Block ``k`` of the noise vector is ``sum_l c_lk v_l(w^o)``; one
    realization of ``v_l`` is shared across the nodes that use cost ``l``.
    ``mode="monte_carlo"`` estimates the same matrix from ``samples`` draws.
    """
    costs = tuple(costs)
    n, m = len(costs), costs[0].dim
    c = np.asarray(c, dtype=float)
    w_o = np.asarray(w_o, dtype=float)
    if mode == "analytic":
        r_v = np.zeros((n * m, n * m))
        for l, cost in enumerate(costs):
            if cost.noise_dim:
                r_v += np.kron(np.outer(c[l], c[l]), cost.noise_covariance(w_o))
        return r_v
    if mode != "monte_carlo":
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng() if rng is None else rng
    acc = np.zeros((n * m, n * m))
    done = 0
    while done < samples:
        s = min(batch, samples - done)
        g = np.zeros((s, n, m))
        for l, cost in enumerate(costs):
            if cost.noise_dim:
                v = cost.gradient_noise(np.broadcast_to(w_o, (s, m)), rng.standard_normal((s, cost.noise_dim)))
                g += c[l][None, :, None] * v[:, None, :]
        flat = g.reshape(s, -1)
        acc += flat.T @ flat
        done += s
    return acc / samples


@dataclass
class SteadyStateOperators:
    """Linearized error recursion around ``w^o``.

    ``b`` is ``A2^T (I - M R_inf) A1^T`` (the mean-error matrix) and ``h`` is
    the constant drive ``A2^T M C^T g^o``. The weighted-variance matrices
    ``f``, ``r`` and ``q`` are built densely only on request.
    """

    n_nodes: int
    block_dim: int
    a1: np.ndarray
    a2: np.ndarray
    c: np.ndarray
    mu: np.ndarray
    r_inf: np.ndarray
    g_o: np.ndarray
    r_v: np.ndarray
    e_w_inf: np.ndarray
    extras: dict = field(default_factory=dict)

    @cached_property
    def _lifted(self):
        m = self.block_dim
        return (_lift(self.a1, m), _lift(self.a2, m), _lift(self.c, m),
                np.kron(np.diag(self.mu), np.eye(m)))

    @cached_property
    def b(self) -> np.ndarray:
        big_a1, big_a2, _, big_m = self._lifted
        eye = np.eye(big_m.shape[0])
        return big_a2.T @ (eye - big_m @ self.r_inf) @ big_a1.T

    @cached_property
    def h(self) -> np.ndarray:
        _, big_a2, big_c, big_m = self._lifted
        return big_a2.T @ big_m @ big_c.T @ self.g_o

    @cached_property
    def noise_drive(self) -> np.ndarray:
        _, big_a2, _, big_m = self._lifted
        return big_a2.T @ big_m @ self.r_v @ big_m @ big_a2

    @cached_property
    def f(self) -> np.ndarray:
        x = self.b.T
        return np.kron(x, x)

    @cached_property
    def r(self) -> np.ndarray:
        return self.noise_drive.reshape(-1, order="F") + np.kron(self.h, self.h)

    @cached_property
    def q(self) -> np.ndarray:
        return 2.0 * np.kron(self.b, self.h[:, None])

    @cached_property
    def rho_f(self) -> float:
        # rho(X kron X) = rho(X)^2
        return spectral_radius(self.b) ** 2

    def selector(self, k: int) -> np.ndarray:
        """``vec(diag(e_k) kron I_M)``."""
        e = np.zeros(self.n_nodes)
        e[k] = 1.0
        return np.kron(np.diag(e), np.eye(self.block_dim)).reshape(-1, order="F")


def steady_state_operators(costs, a1, a2, c, mu, w_o, r_v=None, hessian: str = "approx") -> SteadyStateOperators:
    costs = tuple(costs)
    n, m = len(costs), costs[0].dim
    a1, a2, c = (np.asarray(x, dtype=float) for x in (a1, a2, c))
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (n,)).copy()
    w_o = np.asarray(w_o, dtype=float)
    bias = bias_fixed_point(costs, a1, a2, c, mu, w_o, hessian=hessian)
    r_inf = _r_matrix(costs, a1, c, w_o, None if hessian == "approx" else bias, 40)
    g_o = np.concatenate([cost.gradient(w_o) for cost in costs])
    if r_v is None:
        r_v = gradient_noise_covariance(costs, w_o, c)
    return SteadyStateOperators(n, m, a1, a2, c, mu, r_inf, g_o, r_v, stack(bias))


def steady_state_mse(ops: SteadyStateOperators, node=None, method: str = "auto"):
    """Predicted steady-state MSE.

    Parameters
    ----------
    node : int, "all" or None
        A node index, ``"all"`` for the per-node vector, or ``None`` for the
        network average.
    method : {"auto", "dense", "lyapunov"}
        ``"dense"`` solves ``(I - F)^T y = r + Q E w_inf`` with the
        ``(MN)^2``-sized matrices; ``"lyapunov"`` solves the equivalent
        Stein equation ``Y = B Y B^T + S`` without forming ``F``.
        ``"auto"`` picks dense up to ``MN = 64``.
    """
    if ops.rho_f >= 1.0:
        raise InstabilityError(f"rho(F) = {ops.rho_f:.6g} >= 1; step-sizes too large")
    n, m = ops.n_nodes, ops.block_dim
    nm = n * m
    if method == "auto":
        method = "dense" if nm <= DENSE_LIMIT else "lyapunov"
    if method == "dense":
        s = ops.r + ops.q @ ops.e_w_inf
        y = np.linalg.solve((np.eye(nm * nm) - ops.f).T, s)
        per_node = np.array([y @ ops.selector(k) for k in range(n)])
    elif method == "lyapunov":
        be = ops.b @ ops.e_w_inf
        s_mat = ops.noise_drive + np.outer(ops.h, ops.h) + np.outer(ops.h, be) + np.outer(be, ops.h)
        y = scipy.linalg.solve_discrete_lyapunov(ops.b, s_mat)
        per_node = np.array([np.trace(y[k * m:(k + 1) * m, k * m:(k + 1) * m]) for k in range(n)])
    else:
        raise ValueError(f"unknown method {method!r}")
    if node is None:
        return float(per_node.mean())
    if isinstance(node, str) and node == "all":
        return per_node
    return float(per_node[node])


@dataclass
class PerformanceReport:
    """Analytical summary of one configuration."""

    mse_nodes: np.ndarray
    mse_network: float
    bias: np.ndarray
    bias_power: np.ndarray
    msp_ub: np.ndarray | None
    msp_o_mu: float | None
    limit_contraction: np.ndarray
    limit_mss: np.ndarray
    gamma: np.ndarray
    gamma_d: np.ndarray
    rho_f: float
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        def conv(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            return v
        return {k: conv(v) for k, v in self.__dict__.items()}

    def to_text(self) -> str:
        import yaml

        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def performance_report(costs, a1, a2, c, mu, w_o, hessian: str = "approx") -> PerformanceReport:
    costs = tuple(costs)
    n = len(costs)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (n,)).copy()
    ops = steady_state_operators(costs, a1, a2, c, mu, w_o, hessian=hessian)
    bias = unstack(ops.e_w_inf, n)
    spec = spectral_data(costs, a1, c, mu, w_o, bias=bias)
    notes = []
    try:
        _, ub = msp_bound_trajectory(spec, a1, a2, np.zeros(n), 0)
    except InstabilityError as exc:
        ub = None
        notes.append(f"MSP bound unavailable: {exc}")
    s_min, s_max = sigma_bounds(costs, c)
    try:
        o_mu = msp_o_mu_bound(spec, mu.min() / mu.max(), s_min.min(), s_max.max())
    except InstabilityError as exc:
        o_mu = None
        notes.append(f"O(mu) MSP bound unavailable: {exc}")
    per_node = steady_state_mse(ops, "all")
    return PerformanceReport(
        mse_nodes=per_node,
        mse_network=float(per_node.mean()),
        bias=bias,
        bias_power=power(bias),
        msp_ub=ub,
        msp_o_mu=o_mu,
        limit_contraction=step_size_limit_contraction(costs, c),
        limit_mss=step_size_limit_mss(costs, c, spec.alpha),
        gamma=spec.gamma,
        gamma_d=spec.gamma_d,
        rho_f=ops.rho_f,
        notes=notes,
    )
