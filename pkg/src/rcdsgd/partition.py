"""Ratio-constrained, per-class submodular partitioning and baselines.

Each class is split independently: block capacities follow the worker
ratios (largest-remainder rounding), then blocks take turns greedily, the
block with the smallest objective value picking the remaining sample with
the largest marginal gain. Ties go to the lowest index everywhere.
"""
from __future__ import annotations

import csv
import heapq
import os
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .dataset import Dataset, DatasetError, split_by_class
from .similarity import KernelSpec, build_class_similarity, resolve_kernel
from .submodular import BlockState, SubmodularObjective, canonical_objective, commit, marginal_gain

TIE_RTOL = 1e-12

__all__ = [
    "WorkerRatios",
    "ConstraintTable",
    "PartitionResult",
    "PartitionError",
    "compute_constraints",
    "partition_class",
    "ratio_constrained_partition",
    "label_balanced_partition",
    "random_partition",
    "sorted_partition",
    "class_mean_spread",
    "assignment_csv",
    "load_assignment",
    "shards_from_assignment",
]


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class WorkerRatios:
    """Relative compute speeds ``r_1..r_N`` of the workers."""

    ratios: tuple

    def __post_init__(self):
        r = tuple(float(x) for x in self.ratios)
        if len(r) < 1:
            raise ValueError("need at least one worker ratio")
        if not all(np.isfinite(x) and x > 0 for x in r):
            raise ValueError(f"worker ratios must be positive and finite, got {r}")
        object.__setattr__(self, "ratios", r)

    @classmethod
    def coerce(cls, ratios):
        return ratios if isinstance(ratios, cls) else cls(tuple(ratios))

    @classmethod
    def parse(cls, text: str):
        """Parse ``"1,2,2,4"``."""
        try:
            vals = tuple(float(t) for t in text.split(","))
        except ValueError:
            raise ValueError(f"cannot parse ratios {text!r}; expected e.g. 1,2,2,4") from None
        return cls(vals)

    def __len__(self):
        return len(self.ratios)

    def __iter__(self):
        return iter(self.ratios)


@dataclass(frozen=True, eq=False)
class ConstraintTable:
    """Capacities ``C[l, j]`` (classes x blocks); each row sums to ``|V_l|``."""

    capacities: np.ndarray
    warnings: tuple = ()

    @property
    def num_blocks(self):
        return self.capacities.shape[1]

    def __getitem__(self, key):
        return self.capacities[key]


@dataclass(eq=False)
class PartitionResult:
    """Assignment of every sample id to one of N blocks.

    ``objective_trace[l]`` lists ``(block, sample_id, gain)`` in pick order;
    it is empty for the baselines.
    """

    assignment: dict
    per_class_counts: np.ndarray
    constraints: ConstraintTable
    objective_trace: list = field(default_factory=list)
    kernel_evals: int = 0
    method: str = "submodular"
    objective: str | None = None
    sigma: float | None = None
    seed: int | None = None
    ratios: tuple = ()

    @property
    def num_blocks(self):
        return self.per_class_counts.shape[1]

    def block_of(self, ids):
        return np.array([self.assignment[int(i)] for i in ids], dtype=np.int64)

    def blocks(self, ds: Dataset) -> list[np.ndarray]:
        """Dataset positions held by each block, in dataset order."""
        owner = self.block_of(ds.ids)
        return [np.flatnonzero(owner == j) for j in range(self.num_blocks)]

    def block_sizes(self):
        return self.per_class_counts.sum(axis=0)

    def pick_sequence(self, class_index):
        return [(b, s) for b, s, _ in self.objective_trace[class_index]]


def compute_constraints(class_sizes, ratios) -> ConstraintTable:
    """Largest-remainder apportionment of each class over the blocks.

    Quotas ``|V_l| r_j / sum(r)`` are computed in exact rational arithmetic;
    leftover units go to the largest fractional parts, lower block first.
    """
    ratios = WorkerRatios.coerce(ratios)
    sizes = [int(s) for s in class_sizes]
    if any(s < 1 for s in sizes):
        raise PartitionError("every class must contain at least one sample")
    r = [Fraction(x) for x in ratios]
    total = sum(r)
    N = len(r)
    caps = np.zeros((len(sizes), N), dtype=np.int64)
    notes = []
    for l, m in enumerate(sizes):
        quotas = [m * rj / total for rj in r]
        base = [q.numerator // q.denominator for q in quotas]
        left = m - sum(base)
        order = sorted(range(N), key=lambda j: (-(quotas[j] - base[j]), j))
        for j in order[:left]:
            base[j] += 1
        caps[l] = base
        if m < N:
            notes.append(f"class {l} has {m} samples for {N} blocks; some capacities are zero")
    caps.setflags(write=False)
    for note in notes:
        warnings.warn(note, stacklevel=2)
    return ConstraintTable(caps, tuple(notes))


def tie_tolerance(obj):
    """Gains (and block values) closer than this count as ties.

    Mathematically equal gains are common (two mutually nearest samples
    give each other identical facility-location gains) and rounding in the
    incremental caches would otherwise pick between them arbitrarily.
    """
    return TIE_RTOL * max(1.0, float(obj.colsum.sum()))


def _lowest_near_tie(heap, state, obj, remaining, stamp, tol):
    """Pop the fresh heap top and every candidate within ``tol`` of it; keep the lowest position."""
    neg, u, _ = heapq.heappop(heap)
    top = -neg
    cands = [(u, top)]
    while heap and -heap[0][0] >= top - tol:
        neg, v, seen = heapq.heappop(heap)
        if remaining[v]:
            cands.append((v, -neg if seen == stamp else marginal_gain(state, obj, v)))
    best_u, best_g = min((c for c in cands if c[1] >= top - tol), key=lambda c: c[0])
    for v, g in cands:
        if v != best_u:
            heapq.heappush(heap, (-g, v, stamp))
    return best_u, best_g


def partition_class(sim, capacities, objective="facility_location"):
    """Greedy capacity-constrained split of one class ground set.

    Returns ``(blocks, trace)``: per-block lists of ground positions and the
    ``(block, position, gain)`` pick sequence. Candidates are kept in one
    lazy max-heap per block holding stale upper bounds on their gains; a
    bound is refreshed only when it reaches the top, which by diminishing
    returns leaves the chosen argmax unchanged.
    """
    obj = sim if isinstance(sim, SubmodularObjective) else SubmodularObjective(objective, sim)
    m = obj.ground_size
    caps = [int(c) for c in capacities]
    if any(c < 0 for c in caps):
        raise PartitionError("capacities must be non-negative")
    if sum(caps) != m:
        raise PartitionError(f"capacities sum to {sum(caps)} but the class has {m} samples")
    N = len(caps)
    states = [BlockState.empty(obj) for _ in range(N)]
    remaining = np.ones(m, dtype=bool)
    tol = tie_tolerance(obj)

    # gains of every candidate to an empty block are shared by all blocks
    g0 = [marginal_gain(states[0], obj, u) for u in range(m)]
    seed_heap = [(-g, u, 0) for u, g in enumerate(g0)]
    heapq.heapify(seed_heap)
    heaps = [None] * N

    trace = []
    open_blocks = [j for j in range(N) if caps[j] > 0]
    while open_blocks:
        low = min(states[b].value for b in open_blocks)
        j = min(b for b in open_blocks if states[b].value <= low + tol)
        if heaps[j] is None:
            heaps[j] = list(seed_heap)
        heap, state = heaps[j], states[j]
        stamp = len(state.members)
        while True:
            neg, u, seen = heap[0]
            if not remaining[u]:
                heapq.heappop(heap)
            elif seen == stamp:
                break
            else:
                heapq.heapreplace(heap, (-marginal_gain(state, obj, u), u, stamp))
        u, gain = _lowest_near_tie(heap, state, obj, remaining, stamp, tol)
        commit(state, obj, u, gain)
        remaining[u] = False
        trace.append((j, u, gain))
        if len(state.members) == caps[j]:
            open_blocks.remove(j)
            heaps[j] = None
    return [s.members for s in states], trace


def _assemble(ds, table, per_class_blocks, **meta):
    assignment = {}
    counts = np.zeros_like(np.asarray(table.capacities))
    for l, blocks in enumerate(per_class_blocks):
        for j, positions in enumerate(blocks):
            counts[l, j] = len(positions)
            for p in positions:
                assignment[int(ds.ids[p])] = j
    if len(assignment) != ds.n:
        raise PartitionError("partition does not cover every sample exactly once")
    if not np.array_equal(counts, table.capacities):
        raise PartitionError("realized block counts differ from the constraint table")
    return PartitionResult(assignment, counts, table, **meta)


def ratio_constrained_partition(ds: Dataset, ratios, kernel: KernelSpec | None = None,
                                objective="facility_location") -> PartitionResult:
    """Partition ``ds`` into ``len(ratios)`` blocks class by class."""
    ratios = WorkerRatios.coerce(ratios)
    objective = canonical_objective(objective)
    kernel = resolve_kernel(ds, kernel or KernelSpec())
    classes = split_by_class(ds)
    table = compute_constraints([len(c) for c in classes], ratios)
    per_class, traces, evals = [], [], 0
    for l, positions in enumerate(classes):
        sim = build_class_similarity(ds, l, kernel)
        evals += sim.eval_count
        local_blocks, trace = partition_class(sim, table.capacities[l], objective)
        per_class.append([positions[np.asarray(b, dtype=np.int64)] for b in local_blocks])
        traces.append([(j, int(ds.ids[positions[u]]), float(g)) for j, u, g in trace])
    return _assemble(ds, table, per_class, objective_trace=traces, kernel_evals=evals,
                     method="submodular", objective=objective, sigma=kernel.sigma,
                     seed=kernel.seed, ratios=ratios.ratios)


def label_balanced_partition(ds: Dataset, num_blocks: int, kernel: KernelSpec | None = None,
                             objective="facility_location") -> PartitionResult:
    """Equal-ratio special case: every block gets ``|V_l| / N`` of each class."""
    if num_blocks < 1:
        raise PartitionError("need at least one block")
    return ratio_constrained_partition(ds, (1.0,) * num_blocks, kernel, objective)


def _cut(positions, caps):
    bounds = np.cumsum(caps)[:-1]
    return np.split(positions, bounds)


def random_partition(ds: Dataset, ratios, seed: int = 0) -> PartitionResult:
    """Shuffle each class, then cut it at the constraint boundaries."""
    ratios = WorkerRatios.coerce(ratios)
    classes = split_by_class(ds)
    table = compute_constraints([len(c) for c in classes], ratios)
    rng = np.random.default_rng(seed)
    per_class = [_cut(rng.permutation(pos), table.capacities[l]) for l, pos in enumerate(classes)]
    return _assemble(ds, table, per_class, objective_trace=[[] for _ in classes],
                     method="random", seed=seed, ratios=ratios.ratios)


def sorted_partition(ds: Dataset, ratios) -> PartitionResult:
    """Sort each class by its first feature, then cut: a deliberately non-IID split."""
    ratios = WorkerRatios.coerce(ratios)
    classes = split_by_class(ds)
    table = compute_constraints([len(c) for c in classes], ratios)
    per_class = []
    for l, pos in enumerate(classes):
        order = np.argsort(ds.features[pos, 0], kind="stable")
        per_class.append(_cut(pos[order], table.capacities[l]))
    return _assemble(ds, table, per_class, objective_trace=[[] for _ in classes],
                     method="sorted", ratios=ratios.ratios)


def class_mean_spread(ds: Dataset, result: PartitionResult) -> float:
    """Largest L2 distance between two blocks' means of the same class.

    Blocks holding no sample of a class are skipped for that class.
    """
    owner = result.block_of(ds.ids)
    worst = 0.0
    for l in range(ds.num_classes):
        in_class = ds.labels == l
        means = [ds.features[in_class & (owner == j)].mean(axis=0)
                 for j in range(result.num_blocks) if np.any(in_class & (owner == j))]
        for a in range(len(means)):
            for b in range(a + 1, len(means)):
                worst = max(worst, float(np.linalg.norm(means[a] - means[b])))
    return worst


def assignment_csv(result: PartitionResult, ds: Dataset) -> str:
    """``id,block`` rows in dataset order."""
    lines = ["id,block"]
    lines += [f"{i},{result.assignment[i]}" for i in ds.ids.tolist()]
    return "\n".join(lines) + "\n"


def load_assignment(path) -> dict:
    """Read an ``id,block`` CSV into ``{id: block}``."""
    if not os.path.isfile(path):
        raise DatasetError(f"no such file: {path}")
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["id", "block"]:
            raise DatasetError("malformed header, expected 'id,block'", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DatasetError(f"expected 2 columns, found {len(row)}", line=lineno)
            try:
                sid, block = int(row[0]), int(row[1])
            except ValueError:
                raise DatasetError("id and block must be integers", line=lineno) from None
            if block < 0:
                raise DatasetError(f"negative block {block}", line=lineno)
            if sid in out:
                raise DatasetError(f"duplicate id {sid}", line=lineno)
            out[sid] = block
    return out


def shards_from_assignment(ds: Dataset, assignment: dict, num_blocks: int) -> list[np.ndarray]:
    """Dataset positions of each block; every id must be assigned to a block < ``num_blocks``."""
    owner = np.empty(ds.n, dtype=np.int64)
    for p, i in enumerate(ds.ids.tolist()):
        if i not in assignment:
            raise PartitionError(f"sample id {i} is missing from the assignment")
        owner[p] = assignment[i]
    if len(assignment) != ds.n:
        raise PartitionError("assignment lists ids that are not in the dataset")
    if owner.max() >= num_blocks:
        raise PartitionError(f"assignment uses {owner.max() + 1} blocks but {num_blocks} workers are configured")
    shards = [np.flatnonzero(owner == j) for j in range(num_blocks)]
    empty = [j for j, s in enumerate(shards) if s.size == 0]
    if empty:
        raise PartitionError(f"blocks {empty} are empty; assignment does not match {num_blocks} workers")
    return shards
