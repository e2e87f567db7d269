"""Directed road network, edge-level diffusion weights, and transition matrices.

Diffusion operates on the *edges* of the road graph (features live per edge):
W[i][j] > 0 iff edge j starts at the node where edge i ends. The weight kernel
is 1 / (1 + d_ij) with d_ij the mean free-flow traversal time of the two
edges, a monotone travel-time distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .errors import ConfigError, DataError
from .util import read_json, write_json

NODE_KINDS = ("intersection", "entry", "exit")


@dataclass(frozen=True)
class Node:
    id: str
    x: float
    y: float
    kind: str = "intersection"


@dataclass(frozen=True)
class Edge:
    id: str
    from_node: str
    to_node: str
    length_m: float
    vmax_mps: float
    lanes: int = 1

    @property
    def freeflow_tt(self) -> float:
        return self.length_m / self.vmax_mps


@dataclass
class RoadGraph:
    """Validated directed road network with a dense edge-adjacency weight matrix."""

    nodes: list[Node]
    edges: list[Edge]
    W: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._validate()
        self._node_by_id = {n.id: n for n in self.nodes}
        self._edge_by_id = {e.id: e for e in self.edges}
        self.edge_index = {e.id: i for i, e in enumerate(self.edges)}
        self.W = self._build_weights()

    # -- lookups -------------------------------------------------------------
    def node(self, node_id: str) -> Node:
        return self._node_by_id[node_id]

    def edge(self, edge_id: str) -> Edge:
        return self._edge_by_id[edge_id]

    def edge_ids(self) -> list[str]:
        return [e.id for e in self.edges]

    def out_edges(self, node_id: str) -> list[Edge]:
        return [e for e in self.edges if e.from_node == node_id]

    def point_on_edge(self, edge_id: str, offset_m: float) -> tuple[float, float]:
        """World coordinates of the point `offset_m` along the edge axis."""
        e = self.edge(edge_id)
        a, b = self.node(e.from_node), self.node(e.to_node)
        f = min(max(offset_m / e.length_m, 0.0), 1.0)
        return (a.x + f * (b.x - a.x), a.y + f * (b.y - a.y))

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        for n in self.nodes:
            g.add_node(n.id, x=n.x, y=n.y, kind=n.kind)
        for e in self.edges:
            g.add_edge(e.from_node, e.to_node, id=e.id, tt=e.freeflow_tt)
        return g

    def shortest_edge_path(self, src: str, dst: str) -> list[str]:
        """Edge-id route from node src to node dst, minimizing free-flow time."""
        g = self.to_networkx()
        try:
            node_path = nx.shortest_path(g, src, dst, weight="tt")
        except nx.NetworkXNoPath as exc:
            raise DataError(f"no route from {src} to {dst}") from exc
        return [g.edges[u, v]["id"] for u, v in zip(node_path, node_path[1:])]

    # -- validation and construction ------------------------------------------
    def _validate(self) -> None:
        node_ids = [n.id for n in self.nodes]
        if len(set(node_ids)) != len(node_ids):
            raise ConfigError("duplicate node ids")
        edge_ids = [e.id for e in self.edges]
        if len(set(edge_ids)) != len(edge_ids):
            raise ConfigError("duplicate edge ids")
        known = set(node_ids)
        for n in self.nodes:
            if n.kind not in NODE_KINDS:
                raise ConfigError(f"node {n.id}: unknown kind {n.kind!r}")
        for e in self.edges:
            if e.from_node not in known or e.to_node not in known:
                raise ConfigError(f"edge {e.id} references a missing node")
            if e.length_m <= 0:
                raise ConfigError(f"edge {e.id}: length must be positive")
            if e.vmax_mps <= 0:
                raise ConfigError(f"edge {e.id}: speed limit must be positive")
            if e.lanes < 1:
                raise ConfigError(f"edge {e.id}: lane count must be >= 1")
        if not self.nodes or not self.edges:
            raise ConfigError("network needs at least one node and one edge")
        undirected = nx.Graph()
        undirected.add_nodes_from(node_ids)
        undirected.add_edges_from((e.from_node, e.to_node) for e in self.edges)
        if not nx.is_connected(undirected):
            raise ConfigError("network has isolated components")

    def _build_weights(self) -> np.ndarray:
        n = len(self.edges)
        w = np.zeros((n, n))
        by_tail: dict[str, list[int]] = {}
        for j, e in enumerate(self.edges):
            by_tail.setdefault(e.from_node, []).append(j)
        for i, e in enumerate(self.edges):
            for j in by_tail.get(e.to_node, []):
                d = 0.5 * (e.freeflow_tt + self.edges[j].freeflow_tt)
                w[i, j] = 1.0 / (1.0 + d)
        return w


@dataclass(frozen=True)
class TransitionPair:
    """Row-stochastic forward/backward random-walk matrices over edges."""

    fwd: np.ndarray
    bwd: np.ndarray


def transition_matrices(W: np.ndarray) -> TransitionPair:
    """Row-normalize W and its transpose into random-walk transition matrices.

    Rows with zero out-strength (in-strength for the backward walk) stay
    all-zero: diffusion cannot leave such a vertex.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise DataError(f"weight matrix must be square, got shape {W.shape}")
    if (W < 0).any():
        raise DataError("weight matrix has negative entries")

    def normalize(mat: np.ndarray) -> np.ndarray:
        strength = mat.sum(axis=1)
        out = np.zeros_like(mat)
        nz = strength > 0
        out[nz] = mat[nz] / strength[nz, None]
        return out

    return TransitionPair(fwd=normalize(W), bwd=normalize(W.T))


def power_apply(S: np.ndarray, k: int, X: np.ndarray) -> np.ndarray:
    """Compute S^k @ X by repeated application; k = 0 returns X unchanged."""
    S = np.asarray(S, dtype=float)
    X = np.asarray(X, dtype=float)
    if k < 0:
        raise DataError("hop count must be >= 0")
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[1] != X.shape[0]:
        raise DataError(f"shape mismatch: S {S.shape} vs X {X.shape}")
    out = X.copy()
    for _ in range(k):
        out = S @ out
    return out


# -- serialization -------------------------------------------------------------

def network_from_dict(doc: dict) -> RoadGraph:
    if not isinstance(doc, dict) or "nodes" not in doc or "edges" not in doc:
        raise ConfigError("network file must contain 'nodes' and 'edges'")
    try:
        nodes = [Node(id=str(n["id"]), x=float(n["x"]), y=float(n["y"]),
                      kind=str(n.get("kind", "intersection")))
                 for n in doc["nodes"]]
        edges = [Edge(id=str(e["id"]), from_node=str(e["from"]), to_node=str(e["to"]),
                      length_m=float(e["length_m"]), vmax_mps=float(e["vmax_mps"]),
                      lanes=int(e.get("lanes", 1)))
                 for e in doc["edges"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed network record: {exc}") from exc
    return RoadGraph(nodes=nodes, edges=edges)


def network_to_dict(graph: RoadGraph) -> dict:
    return {
        "nodes": [{"id": n.id, "x": n.x, "y": n.y, "kind": n.kind} for n in graph.nodes],
        "edges": [{"id": e.id, "from": e.from_node, "to": e.to_node,
                   "length_m": e.length_m, "vmax_mps": e.vmax_mps, "lanes": e.lanes}
                  for e in graph.edges],
    }


def load_network(path) -> RoadGraph:
    return network_from_dict(read_json(path))


def save_network(graph: RoadGraph, path) -> None:
    write_json(path, network_to_dict(graph))


def grid_network(rows: int, cols: int, block_m: float = 150.0,
                 vmax_mps: float = 13.9, lanes: int = 1) -> RoadGraph:
    """Rows x cols grid with bidirectional street segments.

    Perimeter nodes alternate entry/exit by checkerboard parity so every
    generated network has both; interior nodes are intersections. Every
    segment gets one directed edge per direction, so an R x C grid has
    2*(R*(C-1) + C*(R-1)) edges.
    """
    if rows < 2 or cols < 2:
        raise ConfigError("grid needs rows >= 2 and cols >= 2")
    if block_m <= 0:
        raise ConfigError("block length must be positive")
    nodes = []
    for r in range(rows):
        for c in range(cols):
            boundary = r in (0, rows - 1) or c in (0, cols - 1)
            kind = "intersection" if not boundary else ("entry" if (r + c) % 2 == 0 else "exit")
            nodes.append(Node(id=f"n{r}_{c}", x=c * block_m, y=r * block_m, kind=kind))
    edges = []

    def link(a: str, b: str) -> None:
        edges.append(Edge(id=f"e_{a}_{b}", from_node=a, to_node=b,
                          length_m=block_m, vmax_mps=vmax_mps, lanes=lanes))

    for r in range(rows):
        for c in range(cols):
            here = f"n{r}_{c}"
            if c + 1 < cols:
                right = f"n{r}_{c + 1}"
                link(here, right)
                link(right, here)
            if r + 1 < rows:
                down = f"n{r + 1}_{c}"
                link(here, down)
                link(down, here)
    return RoadGraph(nodes=nodes, edges=edges)
