"""Stochastic diffusion recursions, baselines and Monte Carlo learning curves.

All recursions share one kernel that acts on states with optional leading
batch axes, so the single-step functions and the vectorized Monte Carlo
engine execute the same arithmetic. Gradient noise is drawn once per cost
and iteration as a block of ``D = sum_l noise_dim_l`` standard normals.

Monte Carlo run ``r`` with base seed ``s`` owns the stream
``numpy.random.default_rng(SeedSequence([s, r]))``.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .costs import QuadraticCost
from .operators import GradientDescentSpec, aggregate_gradients, combine

log = logging.getLogger(__name__)

VARIANTS = ("general", "atc", "cta", "consensus", "centralized")

__all__ = [
    "VARIANTS",
    "StrategyConfig",
    "LearningCurve",
    "run_rng",
    "draw_noise",
    "general_diffusion_step",
    "atc_step",
    "cta_step",
    "consensus_step",
    "centralized_step",
    "strategy_step",
    "noise_free_map",
    "run_monte_carlo",
    "solve_reference_optimum",
]


@dataclass(frozen=True)
class StrategyConfig:
    """One recursion plus its Monte Carlo settings.

    Use the ``general``/``atc``/``cta``/``consensus``/``centralized``
    constructors rather than filling the matrices by hand. For ATC, CTA and
    consensus the combination matrix lives in ``a``; ``a1``, ``c`` and ``a2``
    hold the equivalent general-form triple.
    """

    variant: str
    mu: np.ndarray
    a1: np.ndarray
    c: np.ndarray
    a2: np.ndarray
    horizon: int = 10_000
    runs: int = 200
    seed: int = 0
    initial_state: np.ndarray | None = None
    window: float = 0.2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.horizon < 1 or self.runs < 1:
            raise ValueError("horizon and runs must be >= 1")
        if not 0 < self.window <= 1:
            raise ValueError("window must lie in (0, 1]")
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        if np.any(mu <= 0):
            raise ValueError("step-sizes must be positive")
        object.__setattr__(self, "mu", mu)
        for name in ("a1", "c", "a2"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @classmethod
    def general(cls, a1, c, a2, mu, **kw):
        n = np.shape(a1)[0]
        return cls("general", np.broadcast_to(mu, (n,)), a1, c, a2, **kw)

    @classmethod
    def atc(cls, a, mu, **kw):
        n = np.shape(a)[0]
        return cls("atc", np.broadcast_to(mu, (n,)), np.eye(n), np.eye(n), a, **kw)

    @classmethod
    def cta(cls, a, mu, **kw):
        n = np.shape(a)[0]
        return cls("cta", np.broadcast_to(mu, (n,)), a, np.eye(n), np.eye(n), **kw)

    @classmethod
    def consensus(cls, a, mu, **kw):
        n = np.shape(a)[0]
        return cls("consensus", np.broadcast_to(mu, (n,)), a, np.eye(n), np.eye(n), **kw)

    @classmethod
    def centralized(cls, n_nodes, mu, **kw):
        eye = np.eye(n_nodes)
        return cls("centralized", np.broadcast_to(mu, (n_nodes,)), eye, eye, eye, **kw)

    @property
    def a(self) -> np.ndarray:
        """Single combination matrix of the ATC/CTA/consensus forms."""
        return self.a1 if self.variant in ("cta", "consensus") else self.a2

    @property
    def n_nodes(self) -> int:
        return self.mu.size

    def with_(self, **changes) -> "StrategyConfig":
        return replace(self, **changes)


def run_rng(seed: int, run: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(run)]))


def _noise_layout(costs):
    offsets = np.cumsum([0] + [c.noise_dim for c in costs])
    return offsets


def _split_noise(costs, z):
    """Per-cost views into a ``(..., D)`` block of standard normals."""
    offsets = _noise_layout(costs)
    return [z[..., offsets[l]:offsets[l + 1]] for l in range(len(costs))]


def draw_noise(costs, rng: np.random.Generator, batch_shape=()):
    total = int(_noise_layout(costs)[-1])
    return _split_noise(costs, rng.standard_normal(tuple(batch_shape) + (total,)))


def _own_spec(costs, mu):
    n = len(costs)
    return GradientDescentSpec(costs, np.eye(n), mu)


def _kernel(variant, w, costs, cfg: StrategyConfig, noise, spec=None):
    """One iteration of ``variant``; ``noise=None`` uses true gradients."""
    mu = cfg.mu[:, None]
    if variant == "general":
        spec = spec or GradientDescentSpec(costs, cfg.c, cfg.mu)
        phi = combine(cfg.a1, w)
        psi = phi - mu * aggregate_gradients(spec, phi, noise)
        return combine(cfg.a2, psi)
    if variant == "centralized":
        g = sum(_grad(cost, w, None if noise is None else noise[k]) for k, cost in enumerate(costs))
        return w - (cfg.mu.max() / len(costs)) * g
    spec = spec or _own_spec(costs, cfg.mu)
    if variant == "atc":
        psi = w - mu * aggregate_gradients(spec, w, noise)
        return combine(cfg.a2, psi)
    if variant == "cta":
        phi = combine(cfg.a1, w)
        return phi - mu * aggregate_gradients(spec, phi, noise)
    if variant == "consensus":
        # the gradient is taken at the node's previous iterate, not at the combination
        return combine(cfg.a1, w) - mu * aggregate_gradients(spec, w, noise)
    raise ValueError(variant)


def _grad(cost, w, z):
    g = cost.gradient(w)
    if z is not None and cost.noise_dim:
        g = g + cost.gradient_noise(w, z)
    return g


def strategy_step(w, costs, cfg: StrategyConfig, rng: np.random.Generator | None):
    """Advance ``w`` by one iteration of ``cfg.variant``.

    ``rng=None`` runs the noise-free recursion with true gradients.
    """
    w = np.asarray(w, dtype=float)
    batch = w.shape[:-1] if cfg.variant == "centralized" else w.shape[:-2]
    noise = None if rng is None else draw_noise(costs, rng, batch)
    return _kernel(cfg.variant, w, costs, cfg, noise)


def _check_variant(cfg, *allowed):
    if cfg.variant not in allowed:
        raise ValueError(f"config variant {cfg.variant!r} cannot drive this step (expected {allowed})")


def general_diffusion_step(w, costs, cfg: StrategyConfig, rng):
    """``phi = A1 combine``, adapt with C-weighted noisy gradients at ``phi_k``, ``A2`` combine."""
    return strategy_step(w, costs, cfg.with_(variant="general"), rng)


def atc_step(w, costs, cfg: StrategyConfig, rng):
    _check_variant(cfg, "atc")
    return strategy_step(w, costs, cfg, rng)


def cta_step(w, costs, cfg: StrategyConfig, rng):
    _check_variant(cfg, "cta")
    return strategy_step(w, costs, cfg, rng)


def consensus_step(w, costs, cfg: StrategyConfig, rng):
    _check_variant(cfg, "consensus")
    return strategy_step(w, costs, cfg, rng)


def centralized_step(w, costs, mu: float, rng):
    """``w - mu/N sum_k grad_hat J_k(w)`` on a single ``M``-vector."""
    w = np.asarray(w, dtype=float)
    noise = None if rng is None else draw_noise(costs, rng, w.shape[:-1])
    g = sum(_grad(cost, w, None if noise is None else noise[k]) for k, cost in enumerate(costs))
    return w - (mu / len(costs)) * g


def noise_free_map(costs, cfg: StrategyConfig):
    """The deterministic map ``w_{i-1} -> w_i`` of ``cfg`` (true gradients)."""
    spec = (GradientDescentSpec(costs, cfg.c, cfg.mu) if cfg.variant == "general"
            else None if cfg.variant == "centralized" else _own_spec(costs, cfg.mu))
    return lambda w: _kernel(cfg.variant, w, costs, cfg, None, spec)


@dataclass
class LearningCurve:
    """Monte Carlo averages of per-node squared errors against ``reference``.

    ``mse_nodes[i, k]`` estimates ``E|w^o - w_k,i|^2`` after iteration ``i+1``.
    ``msp_nodes`` (optional) is the same quantity measured against a fixed
    point instead of ``w^o``. ``run_steady_state`` holds, per run, the
    network error averaged over the steady-state window.
    """

    variant: str
    reference: np.ndarray
    mse_nodes: np.ndarray
    runs: int
    window: float = 0.2
    mse_se: np.ndarray | None = None
    msp_nodes: np.ndarray | None = None
    msp_se: np.ndarray | None = None
    run_steady_state: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.mse_nodes.shape[0]

    @property
    def mse_network(self) -> np.ndarray:
        return self.mse_nodes.mean(axis=1)

    @property
    def mse_network_db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 10.0 * np.log10(self.mse_network)

    def _window(self) -> slice:
        start = self.horizon - max(1, int(round(self.window * self.horizon)))
        return slice(start, None)

    def steady_state(self) -> float:
        """Network MSE averaged over the final ``window`` fraction of iterations."""
        return float(self.mse_network[self._window()].mean())

    def steady_state_db(self) -> float:
        return float(10.0 * np.log10(self.steady_state()))

    def steady_state_nodes(self) -> np.ndarray:
        return self.mse_nodes[self._window()].mean(axis=0)

    def steady_state_msp(self) -> np.ndarray:
        if self.msp_nodes is None:
            raise ValueError("curve was run without a fixed point")
        return self.msp_nodes[self._window()].mean(axis=0)

    def to_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            for line in header_comment.splitlines():
                buf.write(f"# {line}\n")
        writer = csv.writer(buf, lineterminator="\n")
        n = self.mse_nodes.shape[1]
        writer.writerow(["iteration", "mse_network", "mse_network_db"] + [f"mse_node_{k}" for k in range(n)])
        net, db = self.mse_network, self.mse_network_db
        for i in range(self.horizon):
            writer.writerow([i] + [repr(float(v)) for v in (net[i], db[i], *self.mse_nodes[i])])
        return buf.getvalue()

    @staticmethod
    def read_csv(text: str) -> dict:
        """Parse :meth:`to_csv` output back into arrays (comment lines skipped)."""
        rows = [r for r in csv.reader(line for line in text.splitlines() if line and not line.startswith("#"))]
        header, body = rows[0], np.array(rows[1:], dtype=float)
        return {name: body[:, j] for j, name in enumerate(header)}


def run_monte_carlo(costs, cfg: StrategyConfig, reference, fixed_point=None, chunk: int = 256) -> LearningCurve:
    """Average ``cfg.runs`` independent trajectories of ``cfg.variant``.

    Runs are advanced together as one batch; each run draws its noise from
    its own seeded stream in blocks of ``chunk`` iterations.
    """
    costs = tuple(costs)
    n, m = len(costs), costs[0].dim
    runs, horizon = cfg.runs, cfg.horizon
    reference = np.asarray(reference, dtype=float).reshape(m)
    central = cfg.variant == "centralized"
    if cfg.initial_state is None:
        w = np.zeros((runs, m) if central else (runs, n, m))
    else:
        init = np.asarray(cfg.initial_state, dtype=float)
        w = np.broadcast_to(init, (runs,) + init.shape).copy()
    spec = (GradientDescentSpec(costs, cfg.c, cfg.mu) if cfg.variant == "general"
            else None if central else _own_spec(costs, cfg.mu))
    total = int(_noise_layout(costs)[-1])
    gens = [run_rng(cfg.seed, r) for r in range(runs)]

    mse_sum = np.zeros((horizon, n))
    mse_sq = np.zeros((horizon, n))
    track_msp = fixed_point is not None
    if track_msp:
        fixed_point = np.asarray(fixed_point, dtype=float)
        msp_sum = np.zeros((horizon, n))
        msp_sq = np.zeros((horizon, n))
    win_start = horizon - max(1, int(round(cfg.window * horizon)))
    run_ss = np.zeros(runs)

    for start in range(0, horizon, chunk):
        steps = min(chunk, horizon - start)
        z = np.stack([g.standard_normal((steps, total)) for g in gens]) if total else None
        for j in range(steps):
            i = start + j
            noise = _split_noise(costs, z[:, j, :]) if total else [np.empty((runs, 0))] * n
            w = _kernel(cfg.variant, w, costs, cfg, noise, spec)
            err = w - reference
            sq = np.sum(err * err, axis=-1)
            if central:
                sq = np.repeat(sq[:, None], n, axis=1)
            mse_sum[i] = sq.sum(axis=0)
            mse_sq[i] = (sq * sq).sum(axis=0)
            if i >= win_start:
                run_ss += sq.mean(axis=1)
            if track_msp:
                d = w - fixed_point
                p = np.sum(d * d, axis=-1)
                if central:
                    p = np.repeat(p[:, None], n, axis=1)
                msp_sum[i] = p.sum(axis=0)
                msp_sq[i] = (p * p).sum(axis=0)

    mean = mse_sum / runs
    curve = LearningCurve(
        variant=cfg.variant,
        reference=reference,
        mse_nodes=mean,
        runs=runs,
        window=cfg.window,
        mse_se=_std_err(mse_sq, mean, runs),
        run_steady_state=run_ss / (horizon - win_start),
    )
    if track_msp:
        msp_mean = msp_sum / runs
        curve.msp_nodes = msp_mean
        curve.msp_se = _std_err(msp_sq, msp_mean, runs)
    return curve


def _std_err(sq_sum, mean, runs):
    if runs < 2:
        return np.full_like(mean, np.nan)
    var = np.maximum(sq_sum / runs - mean**2, 0.0) * runs / (runs - 1)
    return np.sqrt(var / runs)


def solve_reference_optimum(costs, tol: float = 1e-12, max_iters: int = 500) -> np.ndarray:
    """Minimizer of ``sum_l J_l``.

    Quadratic families are solved directly; anything else goes through a
    damped Newton method with Armijo backtracking until the aggregate
    gradient norm drops below ``tol`` times the summed norms of the
    individual gradients.

    Raises
    ------
    RuntimeError
        If the aggregate is not strongly convex enough for Newton to converge.
    """
    costs = tuple(costs)
    m = costs[0].dim
    if all(isinstance(c, QuadraticCost) for c in costs):
        q = sum(c.q for c in costs)
        b = sum(c.b for c in costs)
        return np.linalg.solve(q, b)

    def value(w):
        return float(sum(c.value(w) for c in costs))

    def grad(w):
        parts = [c.gradient(w) for c in costs]
        # rounding floor of the sum scales with the individual terms
        scale = max(1.0, sum(float(np.linalg.norm(p)) for p in parts))
        return sum(parts), scale

    w = np.zeros(m)
    for _ in range(max_iters):
        g, scale = grad(w)
        if np.linalg.norm(g) < tol * scale:
            return w
        hess = sum(c.hessian(w) for c in costs)
        try:
            step = -np.linalg.solve(hess, g)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError("aggregate Hessian is singular; costs are not strongly convex") from exc
        if g @ step >= 0:
            step = -g
        decrement = -(g @ step)
        if decrement < 1e-10:
            # quadratic convergence region; cost differences are below rounding here
            w = w + step
            continue
        f0, t = value(w), 1.0
        while value(w + t * step) > f0 - 1e-4 * t * decrement and t > 1e-12:
            t *= 0.5
        w = w + t * step
    g, scale = grad(w)
    if np.linalg.norm(g) < tol * scale:
        return w
    raise RuntimeError(f"reference solve stalled at |grad| = {np.linalg.norm(g):.3e}")
