"""Experiment configuration documents.

A configuration is a YAML mapping with the sections below; every key is
optional and falls back to the collaborative-investment example (10 agents,
5 assets). See ``README.md`` for the full schema.

.. code-block:: yaml

    network:     {builder: random_geometric, nodes: 10, radius: 0.4, seed: 4}
    combination: {a: metropolis, a1: identity, a2: metropolis, c: identity}
    costs:
      family: finance
      dim: 5
      subset_sizes: {U: 3, S: 4, H: 2, K: 1}
      partition_seed: 0
      ridge: 0.01
      barrier: {t: 10, rho: 0.1, tau: 0.1}
      budget: 5
      holdings: [{h: [1, 2, 3, 4, 5], b: 2}, {h: [5, 4, 3, 2, 1], b: 3}]
      noisy: true
      operating_radius: 0.1
    step_size:   {mu: 0.01, sweep: {start: 0.001, stop: 0.1, per_decade: 5}}
    strategies:  [atc, cta, consensus, centralized]
    simulation:  {horizon: 10000, runs: 200, seed: 0, window: 0.2, jobs: 1}
    fixed_point: {tol: 1.0e-15, max_iters: 10000000, sweep: false}
    output:      {dir: results}
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .costs import FinanceCost, QuadraticCost, Role, SoftplusBarrier
from .strategies import VARIANTS, StrategyConfig, solve_reference_optimum
from .topology import (
    CombinationSet,
    NetworkTopology,
    build_random_geometric,
    identity_matrix,
    metropolis_matrix,
    uniform_neighborhood_matrix,
)

__all__ = ["ConfigError", "DEFAULTS", "ExperimentConfig", "Experiment", "load_config", "decade_grid"]


class ConfigError(ValueError):
    """The configuration document is malformed or inconsistent."""


DEFAULTS = {
    "network": {"builder": "random_geometric", "nodes": 10, "radius": 0.4, "seed": 4, "edges": None},
    "combination": {"a": "metropolis", "a1": "identity", "a2": "metropolis", "c": "identity"},
    "costs": {
        "family": "finance",
        "dim": 5,
        "subset_sizes": {"U": 3, "S": 4, "H": 2, "K": 1},
        "partition_seed": 0,
        "roles": None,
        "ridge": 0.01,
        "barrier": {"t": 10.0, "rho": 0.1, "tau": 0.1},
        "budget": 5.0,
        "holdings": [{"h": [1, 2, 3, 4, 5], "b": 2.0}, {"h": [5, 4, 3, 2, 1], "b": 3.0}],
        "noisy": True,
        "operating_radius": 0.1,
        # quadratic family only
        "curvatures": None,
        "minimizers": None,
        "noise_std": 0.0,
    },
    "step_size": {"mu": 0.01, "sweep": {"start": 1e-3, "stop": 1e-1, "per_decade": 5}},
    "strategies": ["atc", "cta", "consensus", "centralized"],
    "simulation": {"horizon": 10000, "runs": 200, "seed": 0, "window": 0.2, "jobs": 1},
    "fixed_point": {"tol": 1e-15, "max_iters": 10_000_000, "sweep": False},
    "output": {"dir": "results"},
}

MATRIX_BUILDERS = {
    "metropolis": metropolis_matrix,
    "uniform": uniform_neighborhood_matrix,
    "identity": lambda topo: identity_matrix(topo.n_nodes),
}


def decade_grid(start: float, stop: float, per_decade: int) -> list[float]:
    """Log-spaced grid with ``per_decade`` intervals per decade, endpoints included."""
    decades = np.log10(stop) - np.log10(start)
    count = int(round(decades * per_decade)) + 1
    return [float(v) for v in np.logspace(np.log10(start), np.log10(stop), count)]


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(val, dict) and key not in ("subset_sizes",):
            out[key] = _merge(base[key], val, f"{path}{key}.")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


@dataclass
class ExperimentConfig:
    """Validated configuration document.

    ``data`` holds the complete document with defaults filled in; the hash
    is taken over its canonical JSON form, so two files that differ only in
    layout or omitted defaults share a hash.
    """

    data: dict
    source: str | None = None

    def __post_init__(self):
        self.data = _merge(DEFAULTS, _jsonable(self.data or {}))
        self._check()

    @classmethod
    def from_yaml(cls, text: str, source: str | None = None) -> "ExperimentConfig":
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse configuration: {exc}") from exc
        if doc is not None and not isinstance(doc, dict):
            raise ConfigError("configuration must be a mapping")
        return cls(doc or {}, source)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True)

    @property
    def hash(self) -> str:
        canon = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def override(self, **sections) -> "ExperimentConfig":
        """Copy with some keys replaced, e.g. ``override(simulation={"runs": 10})``."""
        return ExperimentConfig(_merge(self.data, sections))

    # convenience accessors
    @property
    def n_nodes(self) -> int:
        return int(self.data["network"]["nodes"])

    @property
    def strategies(self) -> list[str]:
        return list(self.data["strategies"])

    @property
    def sim(self) -> dict:
        return self.data["simulation"]

    @property
    def sweep_values(self) -> list[float]:
        sweep = self.data["step_size"]["sweep"]
        if isinstance(sweep, dict):
            return decade_grid(float(sweep["start"]), float(sweep["stop"]), int(sweep["per_decade"]))
        return [float(v) for v in sweep]

    def _check(self):
        d = self.data
        n = self.n_nodes
        if n < 1:
            raise ConfigError("network.nodes must be >= 1")
        for name in ("a", "a1", "a2", "c"):
            if d["combination"][name] not in MATRIX_BUILDERS:
                raise ConfigError(f"combination.{name}: unknown builder {d['combination'][name]!r}")
        bad = [s for s in d["strategies"] if s not in VARIANTS]
        if bad:
            raise ConfigError(f"unknown strategies {bad}; expected a subset of {list(VARIANTS)}")
        costs = d["costs"]
        if costs["family"] == "finance":
            sizes = costs["subset_sizes"]
            if set(sizes) - {r.value for r in Role}:
                raise ConfigError(f"costs.subset_sizes: unknown roles {sorted(set(sizes) - {r.value for r in Role})}")
            if sum(int(v) for v in sizes.values()) != n or any(int(v) < 0 for v in sizes.values()):
                raise ConfigError(f"costs.subset_sizes {sizes} must partition the {n} nodes")
            roles = costs["roles"]
            if roles is not None and (len(roles) != n or any(r not in {x.value for x in Role} for r in roles)):
                raise ConfigError(f"costs.roles must list one of U/S/H/K for each of the {n} nodes")
            n_h = roles.count("H") if roles is not None else int(sizes.get("H", 0))
            if len(costs["holdings"]) < n_h:
                raise ConfigError(f"need {n_h} entries in costs.holdings, got {len(costs['holdings'])}")
        elif costs["family"] == "quadratic":
            for key in ("curvatures", "minimizers"):
                if costs[key] is None or len(costs[key]) != n:
                    raise ConfigError(f"costs.{key} needs one entry per node for the quadratic family")
        else:
            raise ConfigError(f"costs.family must be 'finance' or 'quadratic', got {costs['family']!r}")
        mu = np.atleast_1d(np.asarray(d["step_size"]["mu"], dtype=float))
        if mu.size not in (1, n):
            raise ConfigError(f"step_size.mu must be a scalar or a list of {n} values")
        values = self.sweep_values
        if any(v <= 0 for v in values) or any(b <= a for a, b in zip(values, values[1:])):
            raise ConfigError("sweep values must be positive and strictly ascending")
        sim = d["simulation"]
        if int(sim["horizon"]) < 1 or int(sim["runs"]) < 1:
            raise ConfigError("simulation.horizon and simulation.runs must be >= 1")

    def build(self, mu=None) -> "Experiment":
        """Instantiate topology, matrices and costs.

        Raises
        ------
        TopologyError
            When the graph cannot be built (for example no connected draw).
        """
        d = self.data
        net = d["network"]
        if net["builder"] == "random_geometric":
            topo = build_random_geometric(self.n_nodes, float(net["radius"]), int(net["seed"]))
        elif net["builder"] == "edges":
            topo = NetworkTopology.from_edges(self.n_nodes, net["edges"])
        else:
            raise ConfigError(f"network.builder must be 'random_geometric' or 'edges', got {net['builder']!r}")
        mats = {name: MATRIX_BUILDERS[d["combination"][name]](topo) for name in ("a", "a1", "a2", "c")}
        costs, roles = self._build_costs()
        w_o = solve_reference_optimum(costs)
        radius = d["costs"]["operating_radius"]
        if d["costs"]["family"] == "finance" and radius is not None:
            region = (w_o - float(radius), w_o + float(radius))
            costs = [replace(c, region=region) for c in costs]
        mu = d["step_size"]["mu"] if mu is None else mu
        mu = np.broadcast_to(np.asarray(mu, dtype=float), (self.n_nodes,)).copy()
        return Experiment(self, topo, mats["a"], mats["a1"], mats["a2"], mats["c"], tuple(costs), roles, w_o, mu)

    def _build_costs(self):
        spec = self.data["costs"]
        n, m = self.n_nodes, int(spec["dim"])
        if spec["family"] == "quadratic":
            costs = [QuadraticCost.isotropic(float(k), np.asarray(w, dtype=float).reshape(m), float(spec["noise_std"]))
                     for k, w in zip(spec["curvatures"], spec["minimizers"])]
            return costs, None
        if spec["roles"] is not None:
            roles = list(spec["roles"])
        else:
            pool = [r for r, count in spec["subset_sizes"].items() for _ in range(int(count))]
            roles = [str(r) for r in np.random.default_rng(int(spec["partition_seed"])).permutation(pool)]
        barrier = SoftplusBarrier(**spec["barrier"]) if spec["barrier"] is not None else None
        holdings = iter(spec["holdings"])
        costs = []
        for role in roles:
            kw = {"barrier": barrier, "noisy": bool(spec["noisy"])}
            if role != "S":
                kw["ridge"] = float(spec["ridge"])
            if role == "H":
                item = next(holdings)
                kw.update(h=np.asarray(item["h"], dtype=float), b=float(item["b"]))
            elif role == "K":
                kw["b0"] = float(spec["budget"])
            costs.append(FinanceCost(role, m, **kw))
        return costs, roles


@dataclass
class Experiment:
    """A built configuration: graph, matrices, costs and the Pareto point."""

    config: ExperimentConfig
    topology: NetworkTopology
    a: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    c: np.ndarray
    costs: tuple
    roles: list | None
    w_o: np.ndarray
    mu: np.ndarray
    extras: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.topology.n_nodes

    def triple(self, variant: str) -> CombinationSet:
        """``(A1, A2, C)`` of a strategy; consensus reports its single matrix as ``A1``."""
        eye = np.eye(self.n_nodes)
        if variant == "atc":
            return CombinationSet(eye, self.a, eye)
        if variant in ("cta", "consensus"):
            return CombinationSet(self.a, eye, eye)
        if variant == "general":
            return CombinationSet(self.a1, self.a2, self.c)
        return CombinationSet(eye, eye, eye)

    def strategy(self, variant: str, mu=None, **overrides) -> StrategyConfig:
        sim = self.config.sim
        kw = {"horizon": int(sim["horizon"]), "runs": int(sim["runs"]), "seed": int(sim["seed"]),
              "window": float(sim["window"])}
        kw.update(overrides)
        mu = self.mu if mu is None else np.broadcast_to(np.asarray(mu, dtype=float), (self.n_nodes,))
        if variant == "centralized":
            return StrategyConfig.centralized(self.n_nodes, float(np.max(mu)), **kw)
        if variant == "general":
            return StrategyConfig.general(self.a1, self.c, self.a2, mu, **kw)
        return getattr(StrategyConfig, variant)(self.a, mu, **kw)


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Read a configuration file; ``None`` gives the defaults."""
    if path is None:
        return ExperimentConfig({})
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return ExperimentConfig.from_yaml(text, str(path))
