"""Network topologies and combination (diffusion) weights.

Convention: ``weights[l, n]`` is the weight node ``n`` gives to neighbour
``l``'s intermediate estimate, so every *column* sums to one. Neighbourhoods
always contain the node itself and the degree counts that self-loop.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

RING4_WEIGHTS = np.array(
    [
        [0.6, 0.2, 0.0, 0.2],
        [0.2, 0.6, 0.2, 0.0],
        [0.0, 0.2, 0.6, 0.2],
        [0.2, 0.0, 0.2, 0.6],
    ]
)

WEIGHT_RULES = ("uniform", "relative_degree_variance", "ring4_preset")


@dataclass(frozen=True)
class Topology:
    """Undirected graph with self-loops, stored as closed neighbourhoods."""

    neighbors: tuple[frozenset[int], ...]

    def __post_init__(self):
        n_nodes = len(self.neighbors)
        for n, nbrs in enumerate(self.neighbors):
            if n not in nbrs:
                raise ValueError(f"node {n} missing from its own neighbourhood")
            for l in nbrs:
                if not 0 <= l < n_nodes:
                    raise ValueError(f"node {n} lists unknown neighbour {l}")
                if n not in self.neighbors[l]:
                    raise ValueError(f"edge {n}-{l} is not symmetric")

    @classmethod
    def from_edges(cls, n_nodes: int, edges: Iterable[tuple[int, int]]) -> "Topology":
        nbrs = [{n} for n in range(n_nodes)]
        for a, b in edges:
            if not (0 <= a < n_nodes and 0 <= b < n_nodes):
                raise ValueError(f"edge ({a}, {b}) references a node outside 0..{n_nodes - 1}")
            nbrs[a].add(b)
            nbrs[b].add(a)
        return cls(tuple(frozenset(s) for s in nbrs))

    @classmethod
    def from_adjacency(cls, adjacency: Sequence[Iterable[int]]) -> "Topology":
        """Build from per-node neighbour lists (self-loops added, symmetrised)."""
        edges = [(n, l) for n, row in enumerate(adjacency) for l in row]
        return cls.from_edges(len(adjacency), edges)

    @classmethod
    def ring(cls, n_nodes: int) -> "Topology":
        if n_nodes < 3:
            return cls.complete(n_nodes)
        return cls.from_edges(n_nodes, [(n, (n + 1) % n_nodes) for n in range(n_nodes)])

    @classmethod
    def path(cls, n_nodes: int) -> "Topology":
        return cls.from_edges(n_nodes, [(n, n + 1) for n in range(n_nodes - 1)])

    @classmethod
    def complete(cls, n_nodes: int) -> "Topology":
        return cls(tuple(frozenset(range(n_nodes)) for _ in range(n_nodes)))

    @classmethod
    def random_connected(cls, n_nodes: int, edge_prob: float, rng: np.random.Generator) -> "Topology":
        """Random spanning tree plus independent extra edges."""
        order = rng.permutation(n_nodes)
        edges = [(int(order[i]), int(order[rng.integers(i)])) for i in range(1, n_nodes)]
        for a in range(n_nodes):
            for b in range(a + 1, n_nodes):
                if rng.random() < edge_prob:
                    edges.append((a, b))
        return cls.from_edges(n_nodes, edges)

    @property
    def n_nodes(self) -> int:
        return len(self.neighbors)

    def degree(self, n: int) -> int:
        return len(self.neighbors[n])

    def degrees(self) -> np.ndarray:
        return np.array([len(s) for s in self.neighbors])

    def adjacency(self) -> list[list[int]]:
        """Sorted neighbour lists without the self-loop."""
        return [sorted(l for l in s if l != n) for n, s in enumerate(self.neighbors)]

    def mask(self) -> np.ndarray:
        m = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        for n, nbrs in enumerate(self.neighbors):
            m[list(nbrs), n] = True
        return m

    def is_connected(self) -> bool:
        if self.n_nodes == 0:
            return True
        seen = {0}
        stack = [0]
        while stack:
            for l in self.neighbors[stack.pop()]:
                if l not in seen:
                    seen.add(l)
                    stack.append(l)
        return len(seen) == self.n_nodes

    def relabel(self, perm: Sequence[int]) -> "Topology":
        """Topology with node ``n`` renamed ``perm[n]``."""
        new = [None] * self.n_nodes
        for n, nbrs in enumerate(self.neighbors):
            new[perm[n]] = frozenset(perm[l] for l in nbrs)
        return Topology(tuple(new))


@dataclass(frozen=True, eq=False)
class CombinationMatrix:
    """Validated, read-only combination matrix. Build with validate_combination."""

    weights: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.weights.shape[0]

    def column(self, n: int) -> np.ndarray:
        return self.weights[:, n]


def validate_combination(A, topo: Topology, tol: float = 1e-12) -> CombinationMatrix:
    """Check nonnegativity, sparsity pattern and unit column sums."""
    A = np.array(A, dtype=np.float64)
    N = topo.n_nodes
    if A.shape != (N, N):
        raise ValueError(f"combination matrix must be {N}x{N}, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("combination matrix has non-finite entries")
    if np.any(A < 0):
        l, n = np.argwhere(A < 0)[0]
        raise ValueError(f"negative weight a[{l},{n}] = {A[l, n]:g}")
    off = (A != 0) & ~topo.mask()
    if np.any(off):
        l, n = np.argwhere(off)[0]
        raise ValueError(f"nonzero weight a[{l},{n}] = {A[l, n]:g} across a non-edge")
    sums = A.sum(axis=0)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size:
        n = bad[0]
        raise ValueError(f"column {n} sums to {sums[n]!r}, not 1")
    A.setflags(write=False)
    return CombinationMatrix(A)


def relative_degree_variance_weights(topo: Topology, sigma2: Sequence[float]) -> CombinationMatrix:
    """``a[l, n] = nu_l s_l / sum_{m in N_n} nu_m s_m`` with ``s = sigma^2``."""
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if sigma2.shape != (topo.n_nodes,):
        raise ValueError(f"need one noise variance per node ({topo.n_nodes}), got {sigma2.shape}")
    if np.any(sigma2 <= 0):
        raise ValueError("noise variances must be positive")
    score = topo.degrees() * sigma2
    A = np.zeros((topo.n_nodes, topo.n_nodes))
    for n, nbrs in enumerate(topo.neighbors):
        idx = sorted(nbrs)
        A[idx, n] = score[idx] / score[idx].sum()
    return validate_combination(A, topo)


def uniform_weights(topo: Topology) -> CombinationMatrix:
    A = np.zeros((topo.n_nodes, topo.n_nodes))
    for n, nbrs in enumerate(topo.neighbors):
        A[sorted(nbrs), n] = 1.0 / len(nbrs)
    return validate_combination(A, topo)


def preset_ring4() -> tuple[Topology, CombinationMatrix]:
    """Four nodes on a cycle, self weight 0.6 and 0.2 per ring neighbour."""
    topo = Topology.ring(4)
    return topo, validate_combination(RING4_WEIGHTS, topo, tol=0.0)


def build_weights(rule: str, topo: Topology, sigma2: Sequence[float] | None = None) -> CombinationMatrix:
    if rule == "uniform":
        return uniform_weights(topo)
    if rule == "relative_degree_variance":
        if sigma2 is None:
            raise ValueError("relative_degree_variance needs per-node noise variances")
        return relative_degree_variance_weights(topo, sigma2)
    if rule == "ring4_preset":
        ring_topo, A = preset_ring4()
        if topo != ring_topo:
            raise ValueError("ring4_preset weights need the 4-node ring topology")
        return A
    raise ValueError(f"unknown weight rule {rule!r}; expected one of {WEIGHT_RULES}")


def disagreement_contraction(A: CombinationMatrix) -> float:
    """Spectral norm of ``x -> A^T x`` restricted to the disagreement subspace.

    Below one means repeated combining drives node estimates to consensus.
    """
    N = A.n_nodes
    P = np.eye(N) - np.full((N, N), 1.0 / N)
    return float(np.linalg.norm(P @ A.weights.T @ P, 2))
