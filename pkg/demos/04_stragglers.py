"""
Where the idle time goes
========================

A step on b samples costs b / r time units on a worker of speed r. With
the same batch everywhere the fast workers wait at every barrier; with
batches proportional to speed everybody arrives together.
"""
from rcdsgd import ClusterSpec, advance_to_barrier, batch_sizes, idle_report, iteration_time, new_ledger

ratios = (1, 2, 2, 4)
cluster = ClusterSpec(ratios, comm_cost=2.0)

for label, batches in [("equal", [32] * 4), ("proportional", batch_sizes(ratios, 32))]:
    ledger = new_ledger(4)
    for _ in range(10):
        ledger = advance_to_barrier(ledger, [iteration_time(i, b, cluster) for i, b in enumerate(batches)],
                                    cluster.comm_cost)
    rep = idle_report(ledger)
    print(f"{label} batches {batches}: wall clock {rep.wall_clock}")
    for i, f in enumerate(rep.compute_idle_fraction):
        print(f"  worker {i} (speed {ratios[i]}) idle {f:.0%} of compute time")
