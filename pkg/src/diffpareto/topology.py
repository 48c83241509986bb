"""Network graphs and combination matrices.

Combination matrices follow the column convention: entry ``a[l, k]`` is the
weight node ``k`` assigns to information coming from node ``l``. ``A1`` and
``A2`` are left-stochastic (columns sum to one) and ``C`` is right-stochastic
(rows sum to one).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STOCHASTIC_TOL = 1e-12

__all__ = [
    "TopologyError",
    "NetworkTopology",
    "CombinationSet",
    "StepSizeProfile",
    "build_random_geometric",
    "metropolis_matrix",
    "identity_matrix",
    "uniform_neighborhood_matrix",
    "validate_combination_set",
    "is_regular",
    "left_perron_vector",
]


class TopologyError(ValueError):
    """Raised when a graph cannot be built or violates its invariants."""


@dataclass(frozen=True)
class NetworkTopology:
    """Undirected graph with self-loops.

    Attributes
    ----------
    adjacency : ndarray of bool, shape (N, N)
        Symmetric adjacency relation; the diagonal is forced to ``True`` so
        that every node belongs to its own neighborhood.
    positions : ndarray, shape (N, 2), optional
        Node coordinates when the graph was built geometrically.
    """

    adjacency: np.ndarray
    positions: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] < 1:
            raise TopologyError(f"adjacency must be a non-empty square matrix, got shape {adj.shape}")
        if not np.array_equal(adj, adj.T):
            raise TopologyError("adjacency must be symmetric")
        np.fill_diagonal(adj, True)
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @classmethod
    def from_edges(cls, n_nodes: int, edges) -> "NetworkTopology":
        adj = np.zeros((n_nodes, n_nodes), dtype=bool)
        for l, k in edges:
            adj[l, k] = adj[k, l] = True
        return cls(adj)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def neighborhoods(self) -> list[list[int]]:
        """Neighborhood of each node, the node itself included."""
        return [np.flatnonzero(row).tolist() for row in self.adjacency]

    @property
    def degrees(self) -> np.ndarray:
        """Neighborhood sizes, counting the self-loop."""
        return self.adjacency.sum(axis=0)

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges ``(l, k)`` with ``l < k``; self-loops are implicit."""
        l, k = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(l.tolist(), k.tolist()))

    def is_connected(self) -> bool:
        seen = np.zeros(self.n_nodes, dtype=bool)
        seen[0] = True
        frontier = seen.copy()
        while frontier.any():
            reach = self.adjacency[frontier].any(axis=0) & ~seen
            seen |= reach
            frontier = reach
        return bool(seen.all())


@dataclass(frozen=True)
class CombinationSet:
    """The triple ``(A1, A2, C)`` that parameterizes a diffusion strategy."""

    a1: np.ndarray
    a2: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        for name in ("a1", "a2", "c"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def n_nodes(self) -> int:
        return self.a1.shape[0]


@dataclass(frozen=True)
class StepSizeProfile:
    """Per-node step-sizes ``mu_k``."""

    mu: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float)).copy()
        if mu.ndim != 1 or mu.size == 0:
            raise ValueError("step-sizes must be a non-empty vector")
        if not np.all(mu > 0):
            raise ValueError(f"step-sizes must be positive, got {mu}")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    @classmethod
    def uniform(cls, mu: float, n_nodes: int) -> "StepSizeProfile":
        return cls(np.full(n_nodes, float(mu)))

    @property
    def mu_max(self) -> float:
        return float(self.mu.max())

    @property
    def mu_min(self) -> float:
        return float(self.mu.min())

    @property
    def beta(self) -> np.ndarray:
        """Relative step-sizes ``mu_k / mu_max``, all in ``(0, 1]``."""
        return self.mu / self.mu_max

    @property
    def omega(self) -> np.ndarray:
        return np.diag(self.mu)

    def lifted(self, block_dim: int) -> np.ndarray:
        """``diag(mu) kron I_M``."""
        return np.kron(self.omega, np.eye(block_dim))


def build_random_geometric(n: int, radius: float, seed: int, max_retries: int = 1000) -> NetworkTopology:
    """Connected random geometric graph in the unit square.

    Nodes are dropped uniformly at random and linked when their Euclidean
    distance is at most ``radius``. Disconnected draws are discarded and
    redrawn from the same seeded stream.

    Raises
    ------
    TopologyError
        If no connected graph appears within ``max_retries`` draws.
    """
    if n < 1:
        raise ValueError("need at least one node")
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        pos = rng.uniform(size=(n, 2))
        dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        topo = NetworkTopology(dist <= radius, positions=pos)
        if topo.is_connected():
            return topo
    raise TopologyError(
        f"connectivity: no connected graph after {max_retries} draws (n={n}, radius={radius}); "
        "increase the radius"
    )


def metropolis_matrix(topology: NetworkTopology) -> np.ndarray:
    """Metropolis weights ``1 / max(n_k, n_l)`` with ``n_k = |N_k|`` (self included).

    The diagonal takes the residual mass, so the result is symmetric and
    doubly stochastic.
    """
    deg = topology.degrees.astype(float)
    adj = topology.adjacency
    a = np.where(adj, 1.0 / np.maximum.outer(deg, deg), 0.0)
    np.fill_diagonal(a, 0.0)
    np.fill_diagonal(a, 1.0 - a.sum(axis=0))
    return a


def identity_matrix(n: int) -> np.ndarray:
    return np.eye(n)


def uniform_neighborhood_matrix(topology: NetworkTopology) -> np.ndarray:
    """Left-stochastic matrix with ``1/|N_k|`` on every ``l`` in ``N_k``."""
    adj = topology.adjacency.astype(float)
    return adj / adj.sum(axis=0, keepdims=True)


def validate_combination_set(cset: CombinationSet, topology: NetworkTopology,
                             tol: float = STOCHASTIC_TOL) -> list[str]:
    """List every violated stochasticity or sparsity requirement.

    An empty list means the set is admissible.
    """
    n = topology.n_nodes
    violations = []
    outside = ~topology.adjacency
    for name, mat, axis, kind in (("A1", cset.a1, 0, "column"),
                                  ("A2", cset.a2, 0, "column"),
                                  ("C", cset.c, 1, "row")):
        if mat.shape != (n, n):
            violations.append(f"{name}: shape {mat.shape} != ({n}, {n})")
            continue
        for l, k in zip(*np.nonzero(mat < 0)):
            violations.append(f"{name}: negative entry at ({l}, {k})")
        sums = mat.sum(axis=axis)
        for idx in np.flatnonzero(np.abs(sums - 1.0) > tol):
            violations.append(f"{name}: {kind} {idx} sum {sums[idx]:.15g} != 1")
        for l, k in zip(*np.nonzero(outside & (mat != 0))):
            violations.append(f"{name}: sparsity violated at ({l}, {k}), node {l} not in neighborhood of {k}")
    return violations


def is_regular(p: np.ndarray) -> bool:
    """Whether some power of ``p`` is entrywise positive (primitivity).

    Uses Wielandt's bound ``m <= N^2 - 2N + 2``: a primitive pattern is
    positive at every power beyond the bound, so squaring the boolean
    pattern past it decides the question.
    """
    p = np.asarray(p)
    n = p.shape[0]
    pattern = (p > 0).astype(np.int64)
    bound = n * n - 2 * n + 2
    power = 1
    while power < bound:
        pattern = np.minimum(pattern @ pattern, 1)
        power *= 2
    return bool(pattern.all())


def left_perron_vector(p: np.ndarray, tol: float = 1e-13, max_iters: int = 100_000) -> np.ndarray:
    """Left eigenvector ``theta`` of a regular right-stochastic matrix.

    Power iteration on ``p.T``; the result is positive and sums to one.
    """
    p = np.asarray(p, dtype=float)
    n = p.shape[0]
    theta = np.full(n, 1.0 / n)
    for _ in range(max_iters):
        nxt = p.T @ theta
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - theta)) < tol:
            return nxt
        theta = nxt
    raise RuntimeError(f"power iteration did not converge in {max_iters} steps; is the matrix regular?")
