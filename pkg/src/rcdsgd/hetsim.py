"""Simulated wall clock for heterogeneous workers behind a sync barrier.

A gradient step on a batch of ``b`` samples takes ``b / r_i`` time units on
worker ``i``. Workers run independently between barriers; at a barrier the
clock jumps by the slowest worker's accumulated busy time plus a fixed
communication cost, and every faster worker is charged the difference as
idle time.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "ClusterSpec",
    "ClockLedger",
    "IdleReport",
    "iteration_time",
    "new_ledger",
    "add_busy",
    "advance_to_barrier",
    "idle_report",
]


@dataclass(frozen=True)
class ClusterSpec:
    """Per-worker speeds and the per-round communication cost.

    ``jitter`` > 0 multiplies each step time by a seeded log-normal factor
    with that log-standard deviation; it is off by default.
    """

    ratios: tuple
    comm_cost: float = 0.0
    jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        r = tuple(float(x) for x in self.ratios)
        if not r or not all(x > 0 for x in r):
            raise ValueError("worker speeds must be positive")
        if not self.comm_cost >= 0:
            raise ValueError("comm_cost must be non-negative")
        if not self.jitter >= 0:
            raise ValueError("jitter must be non-negative")
        object.__setattr__(self, "ratios", r)

    @property
    def n(self):
        return len(self.ratios)

    def rng(self):
        return np.random.default_rng([self.seed, 0xC10C])


def iteration_time(worker: int, batch: int, cluster: ClusterSpec, rng=None) -> float:
    """Time for one gradient step of ``batch`` samples on ``worker``."""
    if batch < 1:
        raise ValueError("batch size must be >= 1")
    t = batch / cluster.ratios[worker]
    if cluster.jitter > 0:
        if rng is None:
            raise ValueError("a random generator is required when jitter is enabled")
        t *= float(rng.lognormal(0.0, cluster.jitter))
    return t


@dataclass(frozen=True, eq=False)
class ClockLedger:
    busy: np.ndarray      # per worker, since the last barrier
    idle: np.ndarray      # per worker, cumulative
    compute: np.ndarray   # per worker, cumulative busy time
    wall: float = 0.0
    comm_time: float = 0.0
    barriers: int = 0

    @property
    def n(self):
        return self.busy.shape[0]

    def now(self):
        """Wall clock if a barrier without communication happened right now."""
        return self.wall + float(self.busy.max())


def new_ledger(n: int) -> ClockLedger:
    z = np.zeros(n)
    return ClockLedger(z.copy(), z.copy(), z.copy())


def add_busy(ledger: ClockLedger, elapsed) -> ClockLedger:
    """Accumulate per-worker compute time without synchronising."""
    elapsed = np.asarray(elapsed, dtype=np.float64)
    if elapsed.shape != ledger.busy.shape:
        raise ValueError("need one elapsed time per worker")
    return replace(ledger, busy=ledger.busy + elapsed, compute=ledger.compute + elapsed)


def advance_to_barrier(ledger: ClockLedger, elapsed=None, comm_cost: float = 0.0) -> ClockLedger:
    """Synchronise all workers.

    ``elapsed`` (one entry per worker) is first added to the busy time
    accumulated since the previous barrier. The clock then advances by the
    largest busy time plus ``comm_cost``.
    """
    if elapsed is not None:
        ledger = add_busy(ledger, elapsed)
    seg = float(ledger.busy.max())
    return replace(
        ledger,
        busy=np.zeros_like(ledger.busy),
        idle=ledger.idle + (seg - ledger.busy),
        wall=ledger.wall + seg + comm_cost,
        comm_time=ledger.comm_time + comm_cost,
        barriers=ledger.barriers + 1,
    )


@dataclass(frozen=True)
class IdleReport:
    wall_clock: float
    comm_time: float
    idle_fraction: tuple          # idle / wall clock
    compute_idle_fraction: tuple  # idle / (wall clock - communication time)

    def lines(self):
        out = [f"wall_clock={self.wall_clock!r}", f"comm_time={self.comm_time!r}"]
        for i, (a, b) in enumerate(zip(self.idle_fraction, self.compute_idle_fraction)):
            out.append(f"worker {i} idle_fraction={a!r} compute_idle_fraction={b!r}")
        return out


def idle_report(ledger: ClockLedger) -> IdleReport:
    """Idle fractions of every worker, over wall clock and over compute segments.

    Time still pending since the last barrier is ignored.
    """
    wall = ledger.wall
    compute_wall = wall - ledger.comm_time
    frac = tuple(float(x) for x in (ledger.idle / wall if wall > 0 else np.zeros(ledger.n)))
    cfrac = tuple(float(x) for x in (ledger.idle / compute_wall if compute_wall > 0 else np.zeros(ledger.n)))
    return IdleReport(float(wall), float(ledger.comm_time), frac, cfrac)
