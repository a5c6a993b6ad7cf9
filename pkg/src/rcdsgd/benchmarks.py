"""Fixed desk-scale benchmarks on overlapping Gaussian mixtures."""
from __future__ import annotations

from dataclasses import dataclass

from .dataset import SyntheticSpec, generate_gaussian_mixture
from .partition import class_mean_spread, random_partition, ratio_constrained_partition, sorted_partition
from .similarity import KernelSpec
from .topology import TopologySpec
from .training import TrainConfig, batch_sizes, iterations_to_target, run_centralized_sgd, run_rcd_sgd

__all__ = ["spread_benchmark", "TrainingBenchmark", "training_benchmark", "run_training_benchmark"]


def spread_benchmark(seed, objective="facility_location", per_class=400, dim=8, sep=1.0):
    """Per-class block-mean spread of the three partitioners on a 2-class mixture, ratios (1, 1)."""
    ds = generate_gaussian_mixture(SyntheticSpec(2, per_class, dim, sep, seed))
    ratios = (1, 1)
    return {
        "submodular": class_mean_spread(ds, ratio_constrained_partition(ds, ratios, KernelSpec(), objective)),
        "random": class_mean_spread(ds, random_partition(ds, ratios, seed)),
        "sorted": class_mean_spread(ds, sorted_partition(ds, ratios)),
    }


@dataclass(frozen=True)
class TrainingBenchmark:
    classes: int = 4
    per_class: int = 200
    dim: int = 8
    sep: float = 1.0
    ratios: tuple = (1, 2, 2, 4)
    batch_ref: int = 32
    lr: float = 0.1
    iters: int = 200
    objective: str = "facility_location"

    def segment(self):
        """Compute time of one iteration; equal on every worker with proportional batches."""
        b = batch_sizes(self.ratios, self.batch_ref)
        return b[0] / self.ratios[0]


def training_benchmark(seed, bench: TrainingBenchmark = TrainingBenchmark()):
    """Dataset, the three partitions and a base config (F=1, ring, comm cost = one segment)."""
    ds = generate_gaussian_mixture(SyntheticSpec(bench.classes, bench.per_class, bench.dim, bench.sep, seed))
    parts = {
        "submodular": ratio_constrained_partition(ds, bench.ratios, KernelSpec(), bench.objective),
        "random": random_partition(ds, bench.ratios, seed),
        "sorted": sorted_partition(ds, bench.ratios),
    }
    cfg = TrainConfig(lr=bench.lr, batch_ref=bench.batch_ref, comm_freq=1, iters=bench.iters,
                      topology=TopologySpec.ring(len(bench.ratios)), ratios=bench.ratios, seed=seed,
                      comm_cost=bench.segment())
    return ds, parts, cfg


def run_training_benchmark(seed, bench: TrainingBenchmark = TrainingBenchmark(), methods=None, freqs=(1, 2)):
    """Iterations and wall clock to reach the centralized loss at ``iters // 2``.

    The target comes from centralized parallel SGD in which every worker
    samples the full dataset, so it does not depend on the partition.
    Returns ``(target, {(method, F): (iterations, wall_clock)})`` with
    ``(None, None)`` for runs that never reach the target.
    """
    ds, parts, cfg = training_benchmark(seed, bench)
    central = run_centralized_sgd(ds, cfg)
    target = central.train_loss[central.k.index(cfg.iters // 2)]
    out = {}
    for name in methods or parts:
        for F in freqs:
            rec = run_rcd_sgd(ds, parts[name], cfg.replace(comm_freq=F))
            out[(name, F)] = iterations_to_target(rec, target)
    return target, out
