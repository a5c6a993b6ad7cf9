"""Facility-location and graph-cut objectives with cached marginal gains.

Both objectives act on a block ``A`` of one class ground set, given by a
dense symmetric similarity matrix ``S``:

* facility location: ``f(A) = sum_v max_{a in A} S[v, a]``
* graph cut:         ``f(A) = sum_{v not in A} sum_{a in A} S[v, a]``

and ``f(empty) = 0`` for both.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .similarity import SimilarityMatrix

__all__ = [
    "OBJECTIVES",
    "SubmodularObjective",
    "BlockState",
    "VerificationResult",
    "eval_from_scratch",
    "marginal_gain",
    "marginal_gains",
    "commit",
    "verify_diminishing_returns",
]

OBJECTIVES = ("facility_location", "graph_cut")
MAX_VERIFY_SIZE = 10

_ALIASES = {"facility": "facility_location", "graphcut": "graph_cut"}


def canonical_objective(kind: str) -> str:
    kind = _ALIASES.get(kind, kind)
    if kind not in OBJECTIVES:
        raise ValueError(f"unknown objective {kind!r}; expected one of {OBJECTIVES}")
    return kind


class SubmodularObjective:
    """One of the two objectives bound to a class similarity matrix."""

    def __init__(self, kind: str, sim):
        self.kind = canonical_objective(kind)
        S = sim.values if isinstance(sim, SimilarityMatrix) else np.asarray(sim, dtype=np.float64)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValueError("similarity matrix must be square")
        if not np.array_equal(S, S.T):
            raise ValueError("similarity matrix must be symmetric")
        self.sim = sim
        self.S = S
        self.colsum = S.sum(axis=0)

    @property
    def ground_size(self):
        return self.S.shape[0]

    def value(self, members) -> float:
        return eval_from_scratch(self, members)

    def __repr__(self):
        return f"SubmodularObjective({self.kind!r}, m={self.ground_size})"


def _members_array(obj, members):
    idx = np.asarray(sorted(set(int(i) for i in members)), dtype=np.int64)
    if idx.size and (idx[0] < 0 or idx[-1] >= obj.ground_size):
        raise IndexError("member position out of range")
    return idx


def eval_from_scratch(obj: SubmodularObjective, members) -> float:
    """Direct evaluation of ``f(members)``; the reference for the caches."""
    idx = _members_array(obj, members)
    if idx.size == 0:
        return 0.0
    S = obj.S
    if obj.kind == "facility_location":
        return float(S[:, idx].max(axis=1).sum())
    outside = np.ones(obj.ground_size, dtype=bool)
    outside[idx] = False
    return float(S[np.ix_(outside, idx)].sum())


@dataclass
class BlockState:
    """A growing block with its objective value and per-element cache.

    ``cache[v]`` holds ``max_{a in A} S[v, a]`` (facility location, 0 while
    empty) or ``sum_{a in A} S[v, a]`` (graph cut).
    """

    members: list = field(default_factory=list)
    value: float = 0.0
    cache: np.ndarray = None
    _in_block: set = field(default_factory=set, repr=False)

    @classmethod
    def empty(cls, obj: SubmodularObjective):
        return cls([], 0.0, np.zeros(obj.ground_size))

    def __contains__(self, pos):
        return pos in self._in_block


def marginal_gains(state: BlockState, obj: SubmodularObjective, candidates) -> np.ndarray:
    """Vectorised ``f(A + {u}) - f(A)`` for each candidate ``u``."""
    cand = np.asarray(candidates, dtype=np.int64)
    S = obj.S
    if obj.kind == "facility_location":
        if not state.members:
            return obj.colsum[cand].copy()
        return np.maximum(S[:, cand] - state.cache[:, None], 0.0).sum(axis=0)
    return obj.colsum[cand] - S[cand, cand] - 2.0 * state.cache[cand]


def marginal_gain(state: BlockState, obj: SubmodularObjective, candidate: int) -> float:
    """``f(A + {candidate}) - f(A)`` from the cache in O(m)."""
    u = int(candidate)
    if u in state:
        raise ValueError(f"candidate {u} is already in the block")
    if not 0 <= u < obj.ground_size:
        raise IndexError("candidate position out of range")
    S = obj.S
    if obj.kind == "facility_location":
        if not state.members:
            return float(obj.colsum[u])
        return float(np.maximum(S[:, u] - state.cache, 0.0).sum())
    return float(obj.colsum[u] - S[u, u] - 2.0 * state.cache[u])


def commit(state: BlockState, obj: SubmodularObjective, candidate: int, gain: float | None = None) -> BlockState:
    """Add ``candidate`` to the block, updating value and cache in place."""
    u = int(candidate)
    if gain is None:
        gain = marginal_gain(state, obj, u)
    elif u in state:
        raise ValueError(f"candidate {u} is already in the block")
    col = obj.S[:, u]
    if obj.kind == "facility_location":
        if state.members:
            np.maximum(state.cache, col, out=state.cache)
        else:
            state.cache[:] = col
    else:
        state.cache += col
    state.members.append(u)
    state._in_block.add(u)
    state.value += gain
    return state


@dataclass
class VerificationResult:
    submodular: bool
    monotone: bool
    counterexample: tuple | None = None
    monotonicity_violations: list = field(default_factory=list)
    checked_pairs: int = 0

    def __bool__(self):
        return self.submodular


def _subset_table(f, m):
    """f evaluated on every subset of range(m), indexed by bitmask."""
    table = np.empty(1 << m)
    for mask in range(1 << m):
        table[mask] = f([i for i in range(m) if mask >> i & 1])
    return table


def verify_diminishing_returns(obj, max_subset_size: int | None = None, tol: float = 1e-9,
                               max_reported: int = 20) -> VerificationResult:
    """Exhaustively check diminishing returns and monotonicity.

    ``obj`` is anything with ``ground_size`` and ``value(members)``. For every
    ``v`` and every pair ``B ⊂ A`` with ``v ∉ A`` and ``|A| <= max_subset_size``
    the gain of ``v`` at ``B`` must be at least its gain at ``A``; the gain at
    every ``A`` must also be non-negative for monotonicity.

    Subset minima of the gains are propagated bit by bit, so the pairwise
    check costs O(m^2 2^m) instead of O(m 3^m); the first violated pair is then
    located by scanning subsets of the offending superset.
    """
    m = obj.ground_size
    if m > MAX_VERIFY_SIZE:
        raise ValueError(f"ground set of size {m} is too large to enumerate (max {MAX_VERIFY_SIZE})")
    if max_subset_size is None:
        max_subset_size = m - 1
    f = _subset_table(obj.value, m)
    full = 1 << m
    masks = np.arange(full)
    popcount = np.array([bin(x).count("1") for x in range(full)])
    scale = max(1.0, float(np.abs(f).max()))
    atol = tol * scale

    submodular, monotone = True, True
    counterexample = None
    mono = []
    pairs = 0
    for v in range(m):
        bit = 1 << v
        free = ((masks & bit) == 0) & (popcount <= max_subset_size)
        gain = np.full(full, np.inf)
        gain[free] = f[masks[free] | bit] - f[masks[free]]
        pairs += int(((1 << popcount[free]) - 1).sum())

        bad = free & (gain < -atol)
        if bad.any():
            monotone = False
            for a in np.flatnonzero(bad)[: max(0, max_reported - len(mono))]:
                mono.append((_bits(a, m), v, float(gain[a])))

        # submin[A] = min over proper subsets B of A of gain[B]
        best = gain.copy()
        for i in range(m):
            has = np.flatnonzero(masks >> i & 1)
            best[has] = np.minimum(best[has], best[has ^ (1 << i)])
        # best[A] is the minimum over all subsets of A, A included
        submin = np.full(full, np.inf)
        for i in range(m):
            has = np.flatnonzero(masks >> i & 1)
            submin[has] = np.minimum(submin[has], best[has ^ (1 << i)])
        viol = free & (submin < gain - atol)
        if viol.any() and submodular:
            submodular = False
            a = int(np.flatnonzero(viol)[0])
            for b in _proper_subsets(a):
                if gain[b] < gain[a] - atol:
                    counterexample = (_bits(b, m), _bits(a, m), v, float(gain[b]), float(gain[a]))
                    break
    return VerificationResult(submodular, monotone, counterexample, mono, pairs)


def _bits(mask, m):
    return tuple(i for i in range(m) if mask >> i & 1)


def _proper_subsets(mask):
    sub = (mask - 1) & mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask

