"""
Trading gossip rounds for wall clock
====================================

The same submodular partition trained with gossip every iteration (F=1)
and every other iteration (F=2). A communication round costs as much as
one iteration of compute, so halving the rounds saves about a quarter of
the wall clock while the loss curve barely moves.
"""
from rcdsgd.benchmarks import TrainingBenchmark, training_benchmark
from rcdsgd.training import iterations_to_target, run_centralized_sgd, run_rcd_sgd

bench = TrainingBenchmark()
ds, parts, cfg = training_benchmark(seed=0, bench=bench)
central = run_centralized_sgd(ds, cfg)
target = central.train_loss[cfg.iters // 2]
print(f"target loss (centralized at k={cfg.iters // 2}): {target:.4f}")

for name in ("submodular", "random", "sorted"):
    for F in (1, 2):
        rec = run_rcd_sgd(ds, parts[name], cfg.replace(comm_freq=F))
        k, wall = iterations_to_target(rec, target)
        print(f"{name:>10} F={F}: reaches target at k={k}, wall clock {wall}, "
              f"final loss {rec.train_loss[-1]:.4f}, rounds {rec.comm_rounds[-1]}")
