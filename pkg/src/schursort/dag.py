"""Weighted DAG ground truth: random generation, structural queries, (de)serialization.

Graphs are over nodes ``0..d-1``. An edge ``(j, i)`` points parent ``j`` to
child ``i``; the linear structural convention is ``x = B x + eps`` with
``B[i, j]`` holding the weight of edge ``j -> i``, so ``B`` is strictly
lower-triangular under any topological relabeling.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InputError, ParameterError

Edge = tuple[int, int]

# Default edge-weight law: magnitude uniform on [0.5, 2.0], Rademacher sign.
# Keeps every mechanism coefficient bounded away from zero (non-degeneracy).
WEIGHT_LOW = 0.5
WEIGHT_HIGH = 2.0


@dataclass
class WeightedDag:
    """Ground-truth causal graph: edges, weights and per-node noise scales."""

    d: int
    edges: set[Edge]
    weights: dict[Edge, float]
    noise_scales: np.ndarray

    def __post_init__(self):
        self.noise_scales = np.asarray(self.noise_scales, dtype=float)
        if self.d < 1:
            raise ParameterError(f"node count must be >= 1, got {self.d}")
        if self.noise_scales.shape != (self.d,):
            raise ParameterError("noise_scales must have one entry per node")
        if not np.all(self.noise_scales > 0):
            raise ParameterError("all noise scales must be strictly positive")
        for j, i in self.edges:
            if not (0 <= j < self.d and 0 <= i < self.d) or j == i:
                raise InputError(f"edge ({j}, {i}) out of range for d={self.d}")
        if set(self.weights) != self.edges:
            raise InputError("weights must be keyed exactly by the edge set")
        if self.topological_sort() is None:
            raise InputError("edge set contains a cycle")

    # -- structural queries -------------------------------------------------

    def parents(self, i: int) -> set[int]:
        if not 0 <= i < self.d:
            raise ParameterError(f"node {i} out of range for d={self.d}")
        return {j for (j, k) in self.edges if k == i}

    def children(self, i: int) -> set[int]:
        if not 0 <= i < self.d:
            raise ParameterError(f"node {i} out of range for d={self.d}")
        return {k for (j, k) in self.edges if j == i}

    def leaves(self) -> set[int]:
        has_child = {j for (j, _) in self.edges}
        return set(range(self.d)) - has_child

    def topological_sort(self) -> list[int] | None:
        """Kahn peeling; returns a topological order or None if cyclic."""
        indeg = [0] * self.d
        out = [[] for _ in range(self.d)]
        for j, i in self.edges:
            indeg[i] += 1
            out[j].append(i)
        queue = deque(i for i in range(self.d) if indeg[i] == 0)
        order = []
        while queue:
            v = queue.popleft()
            order.append(v)
            for w in out[v]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    queue.append(w)
        return order if len(order) == self.d else None

    def weight_matrix(self) -> np.ndarray:
        """Dense B with B[child, parent] = weight, so x = B x + eps."""
        B = np.zeros((self.d, self.d))
        for (j, i), w in self.weights.items():
            B[i, j] = w
        return B

    def adjacency(self) -> np.ndarray:
        """Boolean adjacency A with A[parent, child] = True."""
        A = np.zeros((self.d, self.d), dtype=bool)
        for j, i in self.edges:
            A[j, i] = True
        return A

    def delete_node(self, node: int) -> "WeightedDag":
        """Subgraph on the remaining nodes, reindexed to 0..d-2."""
        keep = [i for i in range(self.d) if i != node]
        remap = {old: new for new, old in enumerate(keep)}
        edges = {(remap[j], remap[i]) for (j, i) in self.edges if j != node and i != node}
        weights = {
            (remap[j], remap[i]): w
            for (j, i), w in self.weights.items()
            if j != node and i != node
        }
        return WeightedDag(self.d - 1, edges, weights, self.noise_scales[keep])

    # -- serialization ------------------------------------------------------

    def to_json(self) -> str:
        payload = {
            "d": self.d,
            "edges": [[j, i, self.weights[(j, i)]] for (j, i) in sorted(self.edges)],
            "sigma": self.noise_scales.tolist(),
        }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "WeightedDag":
        payload = json.loads(text)
        try:
            edges = {(int(j), int(i)) for j, i, _ in payload["edges"]}
            weights = {(int(j), int(i)): float(w) for j, i, w in payload["edges"]}
            return cls(int(payload["d"]), edges, weights, np.asarray(payload["sigma"]))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"malformed graph document: {exc}") from exc

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "WeightedDag":
        with open(path) as fh:
            return cls.from_json(fh.read())


@dataclass
class TopoOrder:
    """Extracted order as a list of blocks, most-ancestral block first.

    Each block is an ordered list of node indices; the list order is the
    recorded within-block order used when flattening to a permutation.
    """

    blocks: list[list[int]] = field(default_factory=list)

    def flatten(self) -> list[int]:
        return [i for block in self.blocks for i in block]

    def positions(self) -> dict[int, int]:
        return {node: pos for pos, node in enumerate(self.flatten())}

    def n_nodes(self) -> int:
        return sum(len(b) for b in self.blocks)

    def validate_cover(self, d: int) -> None:
        flat = self.flatten()
        if sorted(flat) != list(range(d)):
            raise InputError("order blocks must partition 0..d-1")

    @classmethod
    def from_permutation(cls, perm) -> "TopoOrder":
        return cls(blocks=[[int(i)] for i in perm])

    def to_json(self) -> str:
        return json.dumps({"blocks": self.blocks})

    @classmethod
    def from_json(cls, text: str) -> "TopoOrder":
        payload = json.loads(text)
        return cls(blocks=[[int(i) for i in b] for b in payload["blocks"]])


def _draw_weights(n: int, rng: np.random.Generator) -> np.ndarray:
    mag = rng.uniform(WEIGHT_LOW, WEIGHT_HIGH, size=n)
    sign = rng.integers(0, 2, size=n) * 2 - 1
    return mag * sign


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def generate_er(d: int, expected_edges: float, rng) -> WeightedDag:
    """Erdos-Renyi DAG: edges over a hidden random permutation.

    Each of the d(d-1)/2 admissible pairs is included independently with
    probability expected_edges / (d(d-1)/2), oriented along a hidden uniform
    node permutation so the result is acyclic by construction.
    """
    if d < 1:
        raise ParameterError(f"d must be >= 1, got {d}")
    rng = _as_rng(rng)
    if d == 1:
        return WeightedDag(1, set(), {}, np.ones(1))
    max_pairs = d * (d - 1) // 2
    if not 0 <= expected_edges <= max_pairs:
        raise ParameterError(
            f"expected_edges must be in [0, {max_pairs}] for d={d}, got {expected_edges}"
        )
    perm = rng.permutation(d)
    p = expected_edges / max_pairs
    pos_a, pos_b = np.triu_indices(d, k=1)
    mask = rng.random(max_pairs) < p
    parents = perm[pos_a[mask]]
    children = perm[pos_b[mask]]
    w = _draw_weights(int(mask.sum()), rng)
    edges = set(zip(parents.tolist(), children.tolist()))
    weights = {
        (int(j), int(i)): float(wk) for j, i, wk in zip(parents, children, w)
    }
    return WeightedDag(d, edges, weights, np.ones(d))


def generate_sf(d: int, attach_m: int, rng) -> WeightedDag:
    """Scale-free DAG by preferential attachment, edges oriented old -> new.

    Node t >= 1 draws min(attach_m, t) distinct parents among nodes 0..t-1,
    sequentially, with probability proportional to (total degree + 1); chosen
    nodes are removed from the pool between draws. Candidate weights are
    evaluated in ascending node-index order, so generation is reproducible.
    """
    if d < 1:
        raise ParameterError(f"d must be >= 1, got {d}")
    if not 1 <= attach_m < d:
        raise ParameterError(f"attach_m must satisfy 1 <= attach_m < d, got {attach_m}")
    rng = _as_rng(rng)
    degree = np.zeros(d)
    edges: list[Edge] = []
    for t in range(1, d):
        k = min(attach_m, t)
        avail = np.ones(t, dtype=bool)
        for _ in range(k):
            w = (degree[:t] + 1.0) * avail
            parent = int(rng.choice(t, p=w / w.sum()))
            avail[parent] = False
            edges.append((parent, t))
            degree[parent] += 1
            degree[t] += 1
    w = _draw_weights(len(edges), rng)
    weights = {e: float(wk) for e, wk in zip(edges, w)}
    return WeightedDag(d, set(edges), weights, np.ones(d))


def chain_graph(d: int, weights=None, sigmas=None) -> WeightedDag:
    """Path 0 -> 1 -> ... -> d-1 with unit (or given) weights."""
    if d < 1:
        raise ParameterError(f"d must be >= 1, got {d}")
    w = np.ones(d - 1) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (max(d - 1, 0),):
        raise ParameterError("need one weight per chain edge")
    edges = {(i, i + 1) for i in range(d - 1)}
    wmap = {(i, i + 1): float(w[i]) for i in range(d - 1)}
    sig = np.ones(d) if sigmas is None else np.asarray(sigmas, dtype=float)
    return WeightedDag(d, edges, wmap, sig)


def collider_graph(weights=(1.0, 1.0), sigmas=None) -> WeightedDag:
    """Three nodes with 0 -> 2 <- 1."""
    w0, w1 = (float(w) for w in weights)
    sig = np.ones(3) if sigmas is None else np.asarray(sigmas, dtype=float)
    return WeightedDag(3, {(0, 2), (1, 2)}, {(0, 2): w0, (1, 2): w1}, sig)


def parents(g: WeightedDag, i: int) -> set[int]:
    return g.parents(i)


def is_valid_topo(g: WeightedDag, order: TopoOrder) -> bool:
    """True iff no true edge is inverted by the flattened order."""
    order.validate_cover(g.d)
    pos = order.positions()
    return all(pos[j] < pos[i] for (j, i) in g.edges)
