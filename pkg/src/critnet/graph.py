"""Undirected weighted graphs: representation, generators, features, and I/O.

The :class:`Graph` type stores a canonical undirected edge list (u < v,
strictly positive weights, no self-loops, no duplicates) over densely
numbered nodes 0..n_nodes-1.  All operations return new graphs; nothing
mutates a graph after construction, so instances are safe to share.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field

import numpy as np

from .errors import EdgeListParseError, ParameterError
from .validation import check_probability


@dataclass(frozen=True)
class Graph:
    """Immutable undirected weighted graph with dense integer node ids."""

    n_nodes: int
    edges_u: np.ndarray = field(repr=False)
    edges_v: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @classmethod
    def from_edges(cls, n_nodes: int, edges) -> "Graph":
        """Build a graph from ``(u, v, w)`` triples, validating invariants.

        Edges may be given in either orientation; they are canonicalised to
        u < v and sorted.  Self-loops, duplicate edges (in any orientation),
        non-positive weights, and out-of-range endpoints are rejected.
        """
        if n_nodes < 1:
            raise ParameterError(f"graph needs at least one node, got {n_nodes}")
        triples = [(int(u), int(v), float(w)) for u, v, w in edges]
        us = np.empty(len(triples), dtype=np.int64)
        vs = np.empty(len(triples), dtype=np.int64)
        ws = np.empty(len(triples), dtype=float)
        for k, (u, v, w) in enumerate(triples):
            if u == v:
                raise ParameterError(f"self-loop at node {u}")
            if not (0 <= u < n_nodes and 0 <= v < n_nodes):
                raise ParameterError(f"edge ({u},{v}) out of range for {n_nodes} nodes")
            if not w > 0.0:
                raise ParameterError(f"edge ({u},{v}) has non-positive weight {w}")
            us[k], vs[k] = (u, v) if u < v else (v, u)
            ws[k] = w
        order = np.lexsort((vs, us))
        us, vs, ws = us[order], vs[order], ws[order]
        if len(us) > 1 and np.any((us[1:] == us[:-1]) & (vs[1:] == vs[:-1])):
            dup = np.nonzero((us[1:] == us[:-1]) & (vs[1:] == vs[:-1]))[0][0]
            raise ParameterError(f"duplicate edge ({us[dup]},{vs[dup]})")
        us.setflags(write=False)
        vs.setflags(write=False)
        ws.setflags(write=False)
        return cls(n_nodes=n_nodes, edges_u=us, edges_v=vs, weights=ws)

    @property
    def edge_count(self) -> int:
        return len(self.edges_u)

    def degrees(self) -> np.ndarray:
        """Weighted degree of every node (sum of incident edge weights)."""
        d = np.zeros(self.n_nodes)
        np.add.at(d, self.edges_u, self.weights)
        np.add.at(d, self.edges_v, self.weights)
        return d

    def adjacency_matrix(self) -> np.ndarray:
        """Dense symmetric weighted adjacency matrix."""
        a = np.zeros((self.n_nodes, self.n_nodes))
        a[self.edges_u, self.edges_v] = self.weights
        a[self.edges_v, self.edges_u] = self.weights
        return a

    def neighbor_lists(self) -> list[list[tuple[int, float]]]:
        """Per-node adjacency as (neighbor, weight) pairs, sorted by neighbor."""
        adj: list[list[tuple[int, float]]] = [[] for _ in range(self.n_nodes)]
        for u, v, w in zip(self.edges_u, self.edges_v, self.weights):
            adj[u].append((int(v), float(w)))
            adj[v].append((int(u), float(w)))
        for lst in adj:
            lst.sort()
        return adj

    def neighbor_sets(self) -> list[set[int]]:
        sets: list[set[int]] = [set() for _ in range(self.n_nodes)]
        for u, v in zip(self.edges_u, self.edges_v):
            sets[u].add(int(v))
            sets[v].add(int(u))
        return sets

    def has_edge(self, u: int, v: int) -> bool:
        if u > v:
            u, v = v, u
        idx = np.searchsorted(self.edges_u, u)
        while idx < len(self.edges_u) and self.edges_u[idx] == u:
            if self.edges_v[idx] == v:
                return True
            idx += 1
        return False

    def edge_triples(self) -> list[tuple[int, int, float]]:
        return [(int(u), int(v), float(w))
                for u, v, w in zip(self.edges_u, self.edges_v, self.weights)]

    def connected_components(self) -> np.ndarray:
        """Component id per node (0-based, in order of first appearance)."""
        comp = np.full(self.n_nodes, -1, dtype=np.int64)
        adj = self.neighbor_sets()
        cid = 0
        for start in range(self.n_nodes):
            if comp[start] >= 0:
                continue
            stack = [start]
            comp[start] = cid
            while stack:
                node = stack.pop()
                for nb in adj[node]:
                    if comp[nb] < 0:
                        comp[nb] = cid
                        stack.append(nb)
            cid += 1
        return comp

    def is_connected(self) -> bool:
        return self.n_nodes <= 1 or int(self.connected_components().max()) == 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (self.n_nodes == other.n_nodes
                and np.array_equal(self.edges_u, other.edges_u)
                and np.array_equal(self.edges_v, other.edges_v)
                and np.array_equal(self.weights, other.weights))


def _random_distinct_targets(candidates: list[int], m: int, rng: random.Random) -> list[int]:
    # Sample m distinct values from a list whose multiplicities encode the
    # degree-preferential weighting.  Insertion order keeps the draw
    # deterministic across interpreter versions.
    targets: dict[int, None] = {}
    while len(targets) < m:
        targets.setdefault(candidates[rng.randrange(len(candidates))], None)
    return list(targets)


def generate_power_law_cluster(n: int, m: int, p: float, seed: int) -> Graph:
    """Grow a power-law cluster graph (preferential attachment + triad closure).

    Every new node attaches ``m`` edges.  Each attachment is preferential by
    degree; with probability ``p`` the next attachment instead closes a
    triangle with a random neighbor of the previously attached node.  The
    first arriving node links to all ``m`` founder nodes, so the result is
    always connected.  All edge weights are 1.0.

    Parameters
    ----------
    n : total number of nodes (n >= m + 1)
    m : edges added per new node (m >= 1)
    p : triangle-closure probability in [0, 1]
    seed : RNG seed; the edge set is a deterministic function of (n, m, p, seed)
    """
    if m < 1:
        raise ParameterError(f"m must be >= 1, got {m}")
    if n < m + 1:
        raise ParameterError(f"n must be >= m + 1, got n={n}, m={m}")
    check_probability(p, "p")

    rng = random.Random(int(seed))
    edges: list[tuple[int, int, float]] = []
    neighbor_sets: list[set[int]] = [set() for _ in range(n)]
    # One entry per founder, then one entry per edge endpoint: sampling from
    # this list is degree-preferential with add-one smoothing for founders.
    repeated_nodes = list(range(m))

    def add_edge(a: int, b: int) -> None:
        edges.append((a, b, 1.0))
        neighbor_sets[a].add(b)
        neighbor_sets[b].add(a)

    for source in range(m, n):
        possible = _random_distinct_targets(repeated_nodes, m, rng)
        target = possible.pop()  # last drawn first, mirroring the growth recipe
        add_edge(source, target)
        repeated_nodes.append(target)
        count = 1
        while count < m:
            if rng.random() < p:
                # Triad closure: link to a neighbor of the last target that
                # is not yet adjacent to the new node.
                candidates = sorted(neighbor_sets[target]
                                    - neighbor_sets[source] - {source})
                if candidates:
                    nb = candidates[rng.randrange(len(candidates))]
                    add_edge(source, nb)
                    repeated_nodes.append(nb)
                    count += 1
                    continue
            target = possible.pop()
            add_edge(source, target)
            repeated_nodes.append(target)
            count += 1
        repeated_nodes.extend([source] * m)

    return Graph.from_edges(n, edges)


def add_noise_links(g: Graph, node_fraction: float, seed: int) -> tuple[Graph, int]:
    """Add one random unit-weight link at a fraction of the nodes.

    Selects ``ceil(node_fraction * n)`` distinct nodes uniformly at random;
    each gets one new edge to a uniformly random non-neighbor.  Nodes already
    adjacent to every other node are skipped and counted.  Original edges are
    untouched.

    Returns
    -------
    (noisy_graph, skip_count)
    """
    check_probability(node_fraction, "node_fraction", inclusive_low=False)
    rng = random.Random(int(seed))
    n = g.n_nodes
    n_pick = math.ceil(node_fraction * n)
    picked = rng.sample(range(n), n_pick)

    neighbor_sets = g.neighbor_sets()
    new_edges = list(g.edge_triples())
    skipped = 0
    for node in picked:
        non_neighbors = [v for v in range(n) if v != node and v not in neighbor_sets[node]]
        if not non_neighbors:
            skipped += 1
            continue
        other = non_neighbors[rng.randrange(len(non_neighbors))]
        new_edges.append((node, other, 1.0))
        neighbor_sets[node].add(other)
        neighbor_sets[other].add(node)
    return Graph.from_edges(n, new_edges), skipped


def compute_features(g: Graph, scale: bool = True) -> np.ndarray:
    """Per-node features: [weighted degree, average neighbor degree].

    The average neighbor degree of a node is the unweighted mean of its
    neighbors' weighted degrees (0 for isolated nodes).  With ``scale`` each
    column is min-max scaled to [0, 1] over the graph; a zero-range column
    maps to 0.
    """
    deg = g.degrees()
    neigh_sum = np.zeros(g.n_nodes)
    neigh_cnt = np.zeros(g.n_nodes)
    np.add.at(neigh_sum, g.edges_u, deg[g.edges_v])
    np.add.at(neigh_sum, g.edges_v, deg[g.edges_u])
    np.add.at(neigh_cnt, g.edges_u, 1.0)
    np.add.at(neigh_cnt, g.edges_v, 1.0)
    avg_neigh = np.divide(neigh_sum, neigh_cnt,
                          out=np.zeros(g.n_nodes), where=neigh_cnt > 0)
    x = np.column_stack([deg, avg_neigh])
    if scale:
        lo = x.min(axis=0)
        rng_ = x.max(axis=0) - lo
        scaled = np.zeros_like(x)
        np.divide(x - lo, rng_, out=scaled, where=rng_ > 0)
        x = scaled
    return x


def remove_node(g: Graph, v: int) -> tuple[Graph, np.ndarray]:
    """Delete node ``v`` and its incident edges, re-indexing densely.

    Returns the residual graph on n-1 nodes and the old-to-new id map
    (-1 marks the removed node).
    """
    if not 0 <= v < g.n_nodes:
        raise IndexError(f"node {v} out of range for {g.n_nodes} nodes")
    mapping = np.arange(g.n_nodes, dtype=np.int64)
    mapping[v] = -1
    mapping[v + 1:] -= 1
    keep = (g.edges_u != v) & (g.edges_v != v)
    edges = zip(mapping[g.edges_u[keep]], mapping[g.edges_v[keep]], g.weights[keep])
    return Graph.from_edges(g.n_nodes - 1, edges), mapping


def save_edge_list(g: Graph, path) -> None:
    """Write a whitespace-separated edge list with a ``#nodes N`` header."""
    with open(path, "w") as fh:
        fh.write(f"#nodes {g.n_nodes}\n")
        for u, v, w in g.edge_triples():
            fh.write(f"{u} {v} {w!r}\n")


def load_edge_list(path) -> Graph:
    """Load a graph written by :func:`save_edge_list`.

    Raises :class:`EdgeListParseError` (with the line number) on malformed
    lines or invariant violations.
    """
    n_nodes = None
    edges: list[tuple[int, int, float]] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "nodes":
                    try:
                        n_nodes = int(parts[1])
                    except ValueError:
                        raise EdgeListParseError("invalid node count", lineno) from None
                continue
            parts = line.split()
            if len(parts) != 3:
                raise EdgeListParseError(
                    f"expected 'u v w', got {len(parts)} fields", lineno)
            try:
                u, v, w = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError:
                raise EdgeListParseError(f"cannot parse fields {parts}", lineno) from None
            if n_nodes is None:
                raise EdgeListParseError("missing '#nodes N' header", lineno)
            try:
                Graph.from_edges(n_nodes, [(u, v, w)])
            except ParameterError as exc:
                raise EdgeListParseError(str(exc), lineno) from None
            edges.append((u, v, w))
    if n_nodes is None:
        raise EdgeListParseError("missing '#nodes N' header", 0)
    try:
        return Graph.from_edges(n_nodes, edges)
    except ParameterError as exc:
        raise EdgeListParseError(str(exc), 0) from None


def graph_to_json(g: Graph) -> str:
    """JSON export: node count plus (u, v, w) edge triples."""
    return json.dumps({"nodes": g.n_nodes, "edges": g.edge_triples()})


def graph_from_json(text: str) -> Graph:
    data = json.loads(text)
    return Graph.from_edges(int(data["nodes"]), data["edges"])
