"""Worker communication graphs and their Metropolis-Hastings mixing matrices."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

__all__ = ["TopologySpec", "MixingMatrix", "TopologyError", "build_mixing_matrix", "spectral_gap"]

KINDS = ("ring", "complete", "custom_edge_list")


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class TopologySpec:
    kind: str
    n: int
    edges: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise TopologyError(f"unknown topology {self.kind!r}; expected one of {KINDS}")
        if self.n < 1:
            raise TopologyError("a topology needs at least one worker")
        edges = tuple(tuple(int(x) for x in e) for e in self.edges)
        for e in edges:
            if len(e) != 2:
                raise TopologyError(f"edge {e} must be a pair")
            if e[0] == e[1]:
                raise TopologyError(f"self-loop on worker {e[0]}")
            if not (0 <= e[0] < self.n and 0 <= e[1] < self.n):
                raise TopologyError(f"edge {e} references a worker outside [0, {self.n})")
        object.__setattr__(self, "edges", edges)

    @classmethod
    def ring(cls, n):
        return cls("ring", n)

    @classmethod
    def complete(cls, n):
        return cls("complete", n)

    @classmethod
    def from_edges(cls, n, edges):
        return cls("custom_edge_list", n, tuple(edges))

    def edge_set(self):
        """Undirected edges as sorted pairs."""
        n = self.n
        if self.kind == "ring":
            pairs = [(i, (i + 1) % n) for i in range(n)] if n > 1 else []
        elif self.kind == "complete":
            pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        else:
            pairs = self.edges
        return sorted({(min(a, b), max(a, b)) for a, b in pairs})

    def adjacency(self):
        A = np.zeros((self.n, self.n), dtype=bool)
        for a, b in self.edge_set():
            A[a, b] = A[b, a] = True
        return A


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    W: np.ndarray
    topology: TopologySpec | None = None

    @property
    def n(self):
        return self.W.shape[0]


def _connected(A):
    n = A.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(A[i] & ~seen):
            seen[j] = True
            queue.append(j)
    return bool(seen.all())


def build_mixing_matrix(spec: TopologySpec) -> MixingMatrix:
    """Metropolis-Hastings weights ``1 / (1 + max(deg_i, deg_j))`` on edges.

    The diagonal takes the rest of each row, so W is symmetric and doubly
    stochastic; on the complete graph every entry is ``1/N``.
    """
    A = spec.adjacency()
    if not _connected(A):
        raise TopologyError(f"{spec.kind} topology on {spec.n} workers is not connected")
    deg = A.sum(axis=1)
    n = spec.n
    W = np.zeros((n, n))
    for a, b in spec.edge_set():
        W[a, b] = W[b, a] = 1.0 / (1.0 + max(deg[a], deg[b]))
    W[np.diag_indices(n)] = 1.0 - W.sum(axis=1)
    W.setflags(write=False)
    return MixingMatrix(W, spec)


def spectral_gap(W) -> float:
    """``1 - |lambda_2|`` with ``lambda_2`` the second largest eigenvalue in modulus."""
    W = W.W if isinstance(W, MixingMatrix) else np.asarray(W, dtype=np.float64)
    n = W.shape[0]
    if n == 1 or np.all(W == W[0, 0]):
        # 1 is simple and every other eigenvalue of the uniform average is 0
        return 1.0
    lam = np.sort(np.abs(np.linalg.eigvalsh(W)))[::-1]
    return float(1.0 - lam[1])
