"""
Checking diminishing returns by enumeration
===========================================

Facility location and graph cut are both submodular. Facility location is
also monotone; graph cut is not, because once a block holds most of the
class there is little complement left to be similar to.
"""
import numpy as np

from rcdsgd import SubmodularObjective, verify_diminishing_returns
from rcdsgd.cli import random_gaussian_similarity

rng = np.random.default_rng(0)
sim = random_gaussian_similarity(7, rng)
print(np.round(sim.values, 2))

for kind in ("facility_location", "graph_cut"):
    res = verify_diminishing_returns(SubmodularObjective(kind, sim))
    print(f"{kind}: submodular={res.submodular} monotone={res.monotone} pairs checked={res.checked_pairs}")
    if res.monotonicity_violations:
        A, v, gain = res.monotonicity_violations[0]
        print(f"  adding {v} to {A} changes f by {gain:.3f}")


# a supermodular function fails, and the verifier says where
class Squared:
    ground_size = 5

    def value(self, members):
        return float(len(members)) ** 2


res = verify_diminishing_returns(Squared())
B, A, v, gB, gA = res.counterexample
print(f"|S|^2: gain of {v} is {gB} on {list(B)} but {gA} on {list(A)}")
