"""Per-agent cost models with noisy gradient oracles.

Every cost works on arrays with arbitrary leading axes: ``w`` of shape
``(..., M)`` maps to gradients of shape ``(..., M)``. Gradient noise is
driven by standard normal draws ``z`` of shape ``(..., noise_dim)`` so that a
simulation can pre-draw randomness in bulk and still reproduce the
single-step path exactly.
"""

from __future__ import annotations

import enum
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

__all__ = [
    "CostModel",
    "QuadraticCost",
    "SoftplusBarrier",
    "default_barrier",
    "Role",
    "FinanceCost",
    "HessianReport",
    "hessian_check",
    "hessian_bounds",
    "total_gradient",
]


class CostModel(ABC):
    """Contract shared by all costs.

    Subclasses declare ``dim``, Hessian bounds and the noise envelope
    ``(alpha, sigma_v2)`` such that ``E|v|^2 <= alpha |grad J(w)|^2 + sigma_v2``.
    """

    dim: int
    noise_dim: int = 0

    @abstractmethod
    def value(self, w):
        ...

    @abstractmethod
    def gradient(self, w):
        ...

    @abstractmethod
    def hessian(self, w):
        ...

    @property
    @abstractmethod
    def hessian_bounds(self) -> tuple[float, float]:
        ...

    @property
    def noise_params(self) -> tuple[float, float]:
        return 0.0, 0.0

    def gradient_noise(self, w, z):
        """Noise ``v(w)`` driven by standard normals ``z``; zero by default."""
        return np.zeros(np.shape(w))

    def noise_covariance(self, w) -> np.ndarray:
        """Covariance of ``v(w)`` at a single point."""
        return np.zeros((self.dim, self.dim))

    def stochastic_gradient(self, w, rng: np.random.Generator):
        w = np.asarray(w, dtype=float)
        if self.noise_dim == 0:
            return self.gradient(w)
        z = rng.standard_normal(w.shape[:-1] + (self.noise_dim,))
        return self.gradient(w) + self.gradient_noise(w, z)


class QuadraticCost(CostModel):
    """``J(w) = 1/2 w^T q w - b^T w`` with additive isotropic Gaussian noise."""

    def __init__(self, q, b, noise_std: float = 0.0):
        q = np.atleast_2d(np.asarray(q, dtype=float))
        if not np.allclose(q, q.T, rtol=0, atol=1e-14):
            raise ValueError("q must be symmetric")
        self.q = 0.5 * (q + q.T)
        self.b = np.asarray(b, dtype=float).reshape(-1)
        self.dim = self.q.shape[0]
        if self.b.shape != (self.dim,):
            raise ValueError("b must match q")
        self.noise_std = float(noise_std)
        self.noise_dim = self.dim if self.noise_std > 0 else 0
        eig = np.linalg.eigvalsh(self.q)
        if eig[0] < -1e-12:
            raise ValueError("q must be positive semidefinite")
        self._bounds = (max(float(eig[0]), 0.0), float(eig[-1]))

    @classmethod
    def isotropic(cls, curvature: float, minimizer, noise_std: float = 0.0) -> "QuadraticCost":
        """``curvature/2 * |w - minimizer|^2`` up to a constant."""
        minimizer = np.asarray(minimizer, dtype=float).reshape(-1)
        m = minimizer.size
        return cls(curvature * np.eye(m), curvature * minimizer, noise_std)

    def value(self, w):
        w = np.asarray(w, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", w, self.q, w) - w @ self.b

    def gradient(self, w):
        return np.asarray(w, dtype=float) @ self.q - self.b

    def hessian(self, w):
        return self.q.copy()

    @property
    def hessian_bounds(self):
        return self._bounds

    @property
    def noise_params(self):
        return 0.0, self.dim * self.noise_std**2

    def gradient_noise(self, w, z):
        if self.noise_dim == 0:
            return np.zeros(np.shape(w))
        return self.noise_std * z

    def noise_covariance(self, w):
        return self.noise_std**2 * np.eye(self.dim)

    def minimizer(self):
        return np.linalg.solve(self.q, self.b)


class SoftplusBarrier:
    """Smooth penalty ``phi(x) = (rho/t) ln(1 + exp(t (x + tau) / rho))``.

    Convex, non-decreasing, and vanishing as ``x -> -inf``; ``tau`` shifts
    the penalty so it starts acting slightly before the constraint boundary.
    """

    def __init__(self, t: float = 10.0, rho: float = 0.1, tau: float = 0.1):
        if t <= 0 or rho <= 0 or tau < 0:
            raise ValueError("need t > 0, rho > 0, tau >= 0")
        self.t, self.rho, self.tau = float(t), float(rho), float(tau)
        self._gain = self.t / self.rho

    def __repr__(self):
        return f"SoftplusBarrier(t={self.t}, rho={self.rho}, tau={self.tau})"

    def _z(self, x):
        return self._gain * (np.asarray(x, dtype=float) + self.tau)

    def phi(self, x):
        return np.logaddexp(0.0, self._z(x)) / self._gain

    def dphi(self, x):
        return expit(self._z(x))

    def d2phi(self, x):
        z = self._z(x)
        return self._gain * expit(z) * expit(-z)

    @property
    def max_slope(self) -> float:
        return 1.0

    @property
    def max_curvature(self) -> float:
        return self._gain / 4.0

    def curvature_range(self, lo, hi) -> tuple[float, float]:
        """Min and max of ``phi''`` over ``[lo, hi]``; ``phi''`` peaks at ``-tau``."""
        peak = float(np.clip(-self.tau, lo, hi))
        ends = self.d2phi(np.array([lo, hi]))
        return float(ends.min()), float(self.d2phi(peak))


def default_barrier(t: float = 10.0, rho: float = 0.1, tau: float = 0.1) -> SoftplusBarrier:
    return SoftplusBarrier(t, rho, tau)


class Role(str, enum.Enum):
    U = "U"  # expected return
    S = "S"  # return variance
    H = "H"  # tax constraint h^T w >= b
    K = "K"  # budget constraint 1^T w <= b0


@dataclass
class FinanceCost(CostModel):
    """Cost held by one agent of the collaborative investment problem.

    Parameters
    ----------
    role : Role
        ``U`` observes returns ``u ~ N(p_bar, r_u)``; ``S`` observes centered
        returns ``s ~ N(0, r_p)``; ``H`` and ``K`` hold a deterministic
        constraint.
    dim : int
        Number of assets ``M``.
    barrier : SoftplusBarrier or None
        Penalty used for the role's constraint and for ``w >= 0``; ``None``
        drops every barrier term.
    ridge : float
        Adds ``ridge * |w|^2``.
    region : tuple of arrays, optional
        Box ``(lo, hi)`` over which ``hessian_bounds`` is evaluated. Without
        it the bounds hold on all of ``R^M``.
    noisy : bool
        ``False`` turns the stochastic oracle into the true gradient.
    """

    role: Role
    dim: int
    barrier: SoftplusBarrier | None = None
    ridge: float = 0.0
    p_bar: np.ndarray | None = None
    r_u: np.ndarray | None = None
    r_p: np.ndarray | None = None
    h: np.ndarray | None = None
    b: float | None = None
    b0: float | None = None
    region: tuple | None = None
    noisy: bool = True

    def __post_init__(self):
        self.role = Role(self.role)
        m = self.dim
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")
        if self.role is Role.U:
            self.p_bar = np.ones(m) if self.p_bar is None else np.asarray(self.p_bar, float).reshape(m)
            self.r_u = np.eye(m) if self.r_u is None else np.asarray(self.r_u, float).reshape(m, m)
            self._chol = np.linalg.cholesky(self.r_u)
        elif self.role is Role.S:
            self.r_p = np.eye(m) if self.r_p is None else np.asarray(self.r_p, float).reshape(m, m)
            self._chol = np.linalg.cholesky(self.r_p)
        elif self.role is Role.H:
            if self.h is None or self.b is None:
                raise ValueError("role H needs h and b")
            self.h = np.asarray(self.h, float).reshape(m)
            self.b = float(self.b)
        else:
            if self.b0 is None:
                raise ValueError("role K needs b0")
            self.b0 = float(self.b0)
        self.noise_dim = m if (self.noisy and self.role in (Role.U, Role.S)) else 0

    # constraint term phi(a^T w + offset) for roles H and K
    def _constraint(self):
        if self.role is Role.H:
            return -self.h, self.b
        if self.role is Role.K:
            return np.ones(self.dim), -self.b0
        return None

    def value(self, w):
        w = np.asarray(w, dtype=float)
        if self.role is Role.U:
            out = -(w @ self.p_bar)
        elif self.role is Role.S:
            out = np.einsum("...i,ij,...j->...", w, self.r_p, w)
        else:
            out = np.zeros(w.shape[:-1])
        if self.barrier is not None:
            out = out + self.barrier.phi(-w).sum(axis=-1)
            con = self._constraint()
            if con is not None:
                out = out + self.barrier.phi(w @ con[0] + con[1])
        return out + self.ridge * np.sum(w * w, axis=-1)

    def gradient(self, w):
        w = np.asarray(w, dtype=float)
        if self.role is Role.U:
            g = np.broadcast_to(-self.p_bar, w.shape).copy()
        elif self.role is Role.S:
            g = 2.0 * w @ self.r_p
        else:
            g = np.zeros(w.shape)
        if self.barrier is not None:
            g -= self.barrier.dphi(-w)
            con = self._constraint()
            if con is not None:
                g += self.barrier.dphi(w @ con[0] + con[1])[..., None] * con[0]
        return g + 2.0 * self.ridge * w

    def hessian(self, w):
        w = np.asarray(w, dtype=float)
        hess = 2.0 * self.ridge * np.eye(self.dim)
        if self.role is Role.S:
            hess = hess + 2.0 * self.r_p
        if self.barrier is not None:
            hess = hess + np.diag(self.barrier.d2phi(-w))
            con = self._constraint()
            if con is not None:
                hess = hess + self.barrier.d2phi(w @ con[0] + con[1]) * np.outer(con[0], con[0])
        return hess

    @property
    def hessian_bounds(self):
        lo = 2.0 * self.ridge
        hi = 2.0 * self.ridge
        if self.role is Role.S:
            eig = np.linalg.eigvalsh(self.r_p)
            lo += 2.0 * eig[0]
            hi += 2.0 * eig[-1]
        if self.barrier is None:
            return lo, hi
        con = self._constraint()
        if self.region is None:
            hi += self.barrier.max_curvature
            if con is not None:
                hi += self.barrier.max_curvature * float(con[0] @ con[0])
            return lo, hi
        box_lo, box_hi = (np.broadcast_to(np.asarray(v, float), (self.dim,)) for v in self.region)
        # nonnegativity term: diag(phi''(-w_m)) with -w_m in [-hi_m, -lo_m]
        ranges = [self.barrier.curvature_range(-bh, -bl) for bl, bh in zip(box_lo, box_hi)]
        lo += min(r[0] for r in ranges)
        hi += max(r[1] for r in ranges)
        if con is not None:
            a, off = con
            arg_lo = np.sum(np.minimum(a * box_lo, a * box_hi)) + off
            arg_hi = np.sum(np.maximum(a * box_lo, a * box_hi)) + off
            hi += self.barrier.curvature_range(arg_lo, arg_hi)[1] * float(a @ a)
        return lo, hi

    @property
    def noise_params(self):
        if self.noise_dim == 0:
            return 0.0, 0.0
        if self.role is Role.U:
            return 0.0, float(np.trace(self.r_u))
        # v = 2 (s s^T - R) w has E|v|^2 = 4 [(w^T R w) tr R + w^T R^2 w]
        #   <= kappa |2 R w|^2  with kappa = lmax (tr R + lmax) / lmin^2.
        eig = np.linalg.eigvalsh(self.r_p)
        kappa = eig[-1] * (eig.sum() + eig[-1]) / eig[0] ** 2
        if self.barrier is None:
            return float(kappa), 0.0
        # grad J = 2 (R + ridge) w + e with |e|^2 <= M max_slope^2, and
        # |2Rw| <= |2(R + ridge)w|, so |2Rw|^2 <= 2 |grad J|^2 + 2 |e|^2.
        alpha = 2.0 * kappa
        return float(alpha), float(alpha * self.dim * self.barrier.max_slope**2)

    def gradient_noise(self, w, z):
        w = np.asarray(w, dtype=float)
        if self.noise_dim == 0:
            return np.zeros(w.shape)
        x = z @ self._chol.T
        if self.role is Role.U:
            return np.broadcast_to(-x, np.broadcast_shapes(w.shape, x.shape)).copy()
        sw = np.sum(x * w, axis=-1, keepdims=True)
        return 2.0 * (x * sw - w @ self.r_p)

    def noise_covariance(self, w):
        if self.noise_dim == 0:
            return np.zeros((self.dim, self.dim))
        if self.role is Role.U:
            return self.r_u.copy()
        w = np.asarray(w, dtype=float)
        rw = self.r_p @ w
        return 4.0 * ((w @ rw) * self.r_p + np.outer(rw, rw))


@dataclass
class HessianReport:
    bounds: tuple[float, float]
    eig_min: float
    eig_max: float
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations


def hessian_check(cost: CostModel, points, slack: float = 1e-9) -> HessianReport:
    """Check that Hessian eigenvalues stay inside the declared bounds."""
    lo, hi = cost.hessian_bounds
    violations = []
    eig_min, eig_max = np.inf, -np.inf
    for idx, w in enumerate(np.atleast_2d(points)):
        eig = np.linalg.eigvalsh(cost.hessian(w))
        eig_min = min(eig_min, eig[0])
        eig_max = max(eig_max, eig[-1])
        if eig[0] < lo - slack or eig[-1] > hi + slack:
            violations.append(f"point {idx}: eigenvalues [{eig[0]:.6g}, {eig[-1]:.6g}] outside [{lo:.6g}, {hi:.6g}]")
    return HessianReport((lo, hi), float(eig_min), float(eig_max), violations)


def hessian_bounds(costs) -> tuple[np.ndarray, np.ndarray]:
    """Stack per-cost ``(lambda_min, lambda_max)`` into two vectors."""
    pairs = np.array([c.hessian_bounds for c in costs], dtype=float)
    return pairs[:, 0], pairs[:, 1]


def total_gradient(costs, w):
    return sum(c.gradient(w) for c in costs)
