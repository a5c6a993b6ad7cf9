import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import gaussian_matrix, naive_partition_class
from rcdsgd.dataset import Dataset, SyntheticSpec, generate_gaussian_mixture
from rcdsgd.partition import (PartitionError, WorkerRatios, assignment_csv, class_mean_spread,
                              compute_constraints, label_balanced_partition, load_assignment, partition_class,
                              random_partition, ratio_constrained_partition, shards_from_assignment,
                              sorted_partition)
from rcdsgd.similarity import KernelSpec
from rcdsgd.submodular import SubmodularObjective, eval_from_scratch


def caps(m, ratios):
    return compute_constraints([m], ratios).capacities[0].tolist()


def test_constraint_examples():
    assert caps(8, (1, 3)) == [2, 6]
    assert caps(10, (1, 2)) == [3, 7]
    assert caps(4, (1, 1, 1, 1)) == [1, 1, 1, 1]
    assert caps(10, (1, 1)) == [5, 5]
    assert caps(10, (1, 1, 1)) == [4, 3, 3]
    assert caps(90, (1, 2, 2, 4)) == [10, 20, 20, 40]


def test_constraints_warn_when_blocks_outnumber_samples():
    with pytest.warns(UserWarning, match="zero"):
        table = compute_constraints([2], (1, 1, 1))
    assert table.capacities[0].tolist() == [1, 1, 0]
    assert table.warnings


def largest_remainder_oracle(m, ratios):
    """Hamilton apportionment with integer arithmetic on integer ratios."""
    total = sum(ratios)
    floors = [m * r // total for r in ratios]
    rems = [m * r % total for r in ratios]
    left = m - sum(floors)
    for j in sorted(range(len(ratios)), key=lambda j: (-rems[j], j))[:left]:
        floors[j] += 1
    return floors


@settings(max_examples=200)
@given(st.integers(1, 500), st.lists(st.integers(1, 20), min_size=1, max_size=8))
def test_constraints_match_integer_oracle(m, ratios):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        got = caps(m, tuple(ratios))
    assert got == largest_remainder_oracle(m, ratios)
    assert sum(got) == m
    q = [m * r / sum(ratios) for r in ratios]
    assert all(np.floor(qj) <= c <= np.ceil(qj) for qj, c in zip(q, got))


def test_ratio_validation():
    with pytest.raises(ValueError):
        WorkerRatios((1.0, 0.0))
    with pytest.raises(ValueError):
        WorkerRatios.parse("1,a")
    assert WorkerRatios.parse("1,2,2,4").ratios == (1.0, 2.0, 2.0, 4.0)


def test_two_samples_one_each_block_zero_first():
    S = np.array([[1.0, 0.3], [0.3, 1.0]])
    blocks, trace = partition_class(S, [1, 1], "facility_location")
    assert sorted(len(b) for b in blocks) == [1, 1]
    assert trace[0][0] == 0
    assert [t[0] for t in trace] == [0, 1]


def test_degenerate_capacity():
    S = gaussian_matrix(np.random.default_rng(0).standard_normal((4, 2)), 1.0)
    blocks, _ = partition_class(S, [4, 0], "graph_cut")
    assert sorted(blocks[0]) == [0, 1, 2, 3] and blocks[1] == []


def test_capacity_mismatch():
    with pytest.raises(PartitionError, match="sum"):
        partition_class(np.eye(3), [1, 1], "facility_location")


def two_cluster_sim():
    rng = np.random.default_rng(4)
    X = np.vstack([rng.normal(0, 0.3, (6, 2)), rng.normal(8, 0.3, (6, 2))])
    return gaussian_matrix(X, 2.0)


def test_two_clusters_split_evenly():
    S = two_cluster_sim()
    blocks, trace = partition_class(S, [6, 6], "facility_location")
    for b in blocks:
        in_first = sum(1 for u in b if u < 6)
        assert 2 <= in_first <= 4
    _, naive = naive_partition_class(S, [6, 6], "facility_location")
    assert [(j, u) for j, u, _ in trace] == naive


@pytest.mark.parametrize("kind", ["facility_location", "graph_cut"])
@pytest.mark.parametrize("seed", range(4))
def test_lazy_matches_naive(kind, seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(20, 90))
    N = int(rng.integers(2, 5))
    ratios = tuple(int(x) for x in rng.integers(1, 5, N))
    capacities = caps(m, ratios)
    S = gaussian_matrix(rng.standard_normal((m, 3)), 1.5)
    blocks, trace = partition_class(S, capacities, kind)
    nblocks, ntrace = naive_partition_class(S, capacities, kind)
    assert [(j, u) for j, u, _ in trace] == ntrace
    assert blocks == nblocks


def test_mutual_neighbours_tie_goes_to_lower_position():
    # two isolated pairs: each sample's gain is 1 - cache + (s - cache of partner), equal within a pair
    X = np.array([[0.0], [0.3], [10.0], [10.3]])
    S = gaussian_matrix(X, 1.0)
    blocks, trace = partition_class(S, [2, 2], "facility_location")
    # every step is a tie; lowest block, then lowest position wins
    assert [(j, u) for j, u, _ in trace] == [(0, 0), (1, 1), (0, 2), (1, 3)]
    assert blocks == [[0, 2], [1, 3]]


def test_lazy_matches_naive_small_cases():
    S = two_cluster_sim()
    for kind in ("facility_location", "graph_cut"):
        for capacities in ([6, 6], [3, 9], [2, 4, 6]):
            blocks, trace = partition_class(S, capacities, kind)
            nblocks, ntrace = naive_partition_class(S, capacities, kind)
            assert [(j, u) for j, u, _ in trace] == ntrace
            assert blocks == nblocks


def test_trace_gains_sum_to_block_values():
    S = two_cluster_sim()
    for kind in ("facility_location", "graph_cut"):
        blocks, trace = partition_class(S, [5, 7], kind)
        obj = SubmodularObjective(kind, S)
        for j, b in enumerate(blocks):
            total = sum(g for bj, _, g in trace if bj == j)
            assert total == pytest.approx(eval_from_scratch(obj, b), abs=1e-9)


def check_partition(ds, res, ratios):
    table = compute_constraints(ds.class_sizes(), ratios)
    assert sorted(res.assignment) == sorted(ds.ids.tolist())
    assert np.array_equal(res.per_class_counts, table.capacities)
    owner = res.block_of(ds.ids)
    for l in range(ds.num_classes):
        for j in range(len(ratios)):
            assert np.sum((ds.labels == l) & (owner == j)) == table.capacities[l, j]
    blocks = res.blocks(ds)
    assert sorted(np.concatenate(blocks).tolist()) == list(range(ds.n))


def test_four_samples_two_classes():
    ds = Dataset(np.arange(4), np.array([0, 0, 1, 1]), np.array([[0.0], [1.0], [0.5], [2.0]]), 2)
    res = ratio_constrained_partition(ds, (1, 1))
    for j in range(2):
        assert res.per_class_counts[:, j].tolist() == [1, 1]
    check_partition(ds, res, (1, 1))


def test_balanced_kernel_evals():
    ds = generate_gaussian_mixture(SyntheticSpec(10, 100, 4, 1.0, 0))
    res = ratio_constrained_partition(ds, (1, 1, 1, 1))
    assert res.kernel_evals == 50_500
    assert 1000 * 1001 // 2 == 500_500
    check_partition(ds, res, (1, 1, 1, 1))


def test_heterogeneous_block_sizes():
    ds = generate_gaussian_mixture(SyntheticSpec(2, 90, 3, 1.0, 2))
    res = ratio_constrained_partition(ds, (1, 2, 2, 4), objective="graph_cut")
    assert res.per_class_counts.tolist() == [[10, 20, 20, 40]] * 2
    assert res.block_sizes().tolist() == [20, 40, 40, 80]


def test_label_balanced_is_unit_ratio_case():
    ds = generate_gaussian_mixture(SyntheticSpec(3, 10, 2, 1.0, 5))
    a = label_balanced_partition(ds, 3)
    b = ratio_constrained_partition(ds, (1, 1, 1))
    assert a.assignment == b.assignment
    assert a.objective_trace == b.objective_trace
    assert a.per_class_counts.tolist() == [[4, 3, 3]] * 3
    assert label_balanced_partition(ds, 2).per_class_counts.tolist() == [[5, 5]] * 3


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_baselines_share_constraints(seed):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(1, 4))
    sizes = rng.integers(1, 30, L)
    labels = np.repeat(np.arange(L), sizes)
    ds = Dataset(np.arange(labels.size) * 3, labels, rng.standard_normal((labels.size, 2)), L)
    ratios = tuple(float(x) for x in rng.integers(1, 5, rng.integers(1, 5)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for res in (random_partition(ds, ratios, seed), sorted_partition(ds, ratios),
                    ratio_constrained_partition(ds, ratios, KernelSpec(sigma=1.0))):
            check_partition(ds, res, ratios)
            sizes_ = res.block_sizes()
            for a in range(len(ratios)):
                for b in range(len(ratios)):
                    if ratios[a] > ratios[b]:
                        assert sizes_[a] >= sizes_[b]


def test_sorted_partition_separates_clusters():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.normal(-5, 0.5, (6, 2)), rng.normal(5, 0.5, (6, 2))])
    ds = Dataset(np.arange(12), np.zeros(12, dtype=int), X, 1)
    blocks = sorted_partition(ds, (1, 1)).blocks(ds)
    assert sorted(blocks[0].tolist()) == list(range(6))
    assert sorted(blocks[1].tolist()) == list(range(6, 12))


def test_random_partition_reproducible():
    ds = generate_gaussian_mixture(SyntheticSpec(2, 50, 2, 1.0, 0))
    assert random_partition(ds, (1, 3), 5).assignment == random_partition(ds, (1, 3), 5).assignment
    assert random_partition(ds, (1, 3), 5).assignment != random_partition(ds, (1, 3), 6).assignment


def test_submodular_beats_sorted_on_spread():
    ds = generate_gaussian_mixture(SyntheticSpec(2, 200, 4, 1.0, 3))
    sub = class_mean_spread(ds, ratio_constrained_partition(ds, (1, 1)))
    srt = class_mean_spread(ds, sorted_partition(ds, (1, 1)))
    assert sub < srt


def test_assignment_round_trip(tmp_path):
    ds = generate_gaussian_mixture(SyntheticSpec(3, 20, 2, 1.0, 0))
    res = ratio_constrained_partition(ds, (1, 2))
    path = tmp_path / "a.csv"
    path.write_text(assignment_csv(res, ds))
    assert load_assignment(str(path)) == res.assignment
    shards = shards_from_assignment(ds, res.assignment, 2)
    assert [s.tolist() for s in shards] == [b.tolist() for b in res.blocks(ds)]
    with pytest.raises(PartitionError):
        shards_from_assignment(ds, res.assignment, 3)
