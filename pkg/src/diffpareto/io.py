"""Plain-text forms of topologies, matrices and block vectors."""

from __future__ import annotations

import numpy as np
import yaml

from .topology import NetworkTopology

__all__ = ["format_matrix", "parse_matrix", "topology_document", "read_topology_document",
           "format_block_vector", "parse_block_vector"]


def format_matrix(mat) -> list[str]:
    """Dense row-major rows of shortest round-trip decimals."""
    return [" ".join(repr(float(v)) for v in row) for row in np.atleast_2d(mat)]


def parse_matrix(rows) -> np.ndarray:
    return np.array([[float(v) for v in row.split()] for row in rows])


def topology_document(topology: NetworkTopology, matrices: dict | None = None) -> str:
    """YAML document with the node count, edge list and named matrices."""
    doc = {"nodes": topology.n_nodes, "edges": [list(e) for e in topology.edges()]}
    if topology.positions is not None:
        doc["positions"] = format_matrix(topology.positions)
    if matrices:
        doc["matrices"] = {name: format_matrix(m) for name, m in matrices.items()}
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)


def read_topology_document(text: str) -> tuple[NetworkTopology, dict]:
    doc = yaml.safe_load(text)
    topo = NetworkTopology.from_edges(int(doc["nodes"]), [tuple(e) for e in doc.get("edges", [])])
    if "positions" in doc:
        topo = NetworkTopology(topo.adjacency, positions=parse_matrix(doc["positions"]))
    mats = {name: parse_matrix(rows) for name, rows in (doc.get("matrices") or {}).items()}
    return topo, mats


def format_block_vector(x) -> str:
    """``N`` lines of ``M`` decimal values."""
    return "\n".join(format_matrix(np.asarray(x, dtype=float).reshape(np.shape(x)[0], -1))) + "\n"


def parse_block_vector(text: str) -> np.ndarray:
    return parse_matrix([line for line in text.splitlines() if line.strip()])
