"""
Gossip averaging on a ring
==========================

Metropolis-Hastings weights give a symmetric, doubly stochastic mixing
matrix for any connected graph. Repeated mixing drives every worker to the
average; the spectral gap sets how fast.
"""
import numpy as np

from rcdsgd import TopologySpec, build_mixing_matrix, spectral_gap

for n in (4, 8, 16):
    ring = build_mixing_matrix(TopologySpec.ring(n)).W
    full = build_mixing_matrix(TopologySpec.complete(n)).W
    print(f"N={n:2d}  ring gap {spectral_gap(ring):.4f}  complete gap {spectral_gap(full):.1f}")

W = build_mixing_matrix(TopologySpec.ring(8)).W
print(np.round(W, 3))

x = np.arange(8, dtype=float)[:, None]
for step in range(31):
    if step % 10 == 0:
        print(f"round {step:2d}: spread {np.ptp(x):.5f}, mean {x.mean():.3f}")
    x = W @ x

# a custom graph: a path with one chord
path = TopologySpec.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 3)])
print("path+chord gap", round(spectral_gap(build_mixing_matrix(path)), 4))
