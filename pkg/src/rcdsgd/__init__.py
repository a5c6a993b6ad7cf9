"""Ratio-constrained submodular data partitioning for decentralized SGD.

Samples are split class by class across workers in proportion to their
compute speed, with greedy submodular maximisation keeping each worker's
per-class feature distribution close to the whole. A deterministic
simulator then runs decentralized SGD on the shards and accounts for
simulated wall clock and straggler idle time.
"""
__version__ = "0.1.0"

from .dataset import Dataset, DatasetError, SyntheticSpec, generate_gaussian_mixture, load_dataset, save_dataset, split_by_class
from .hetsim import ClusterSpec, advance_to_barrier, idle_report, iteration_time, new_ledger
from .partition import (PartitionResult, WorkerRatios, class_mean_spread, compute_constraints, label_balanced_partition,
                        partition_class, random_partition, ratio_constrained_partition, sorted_partition)
from .similarity import KernelSpec, bandwidth_sigma, build_class_similarity, cosine_similarity, gaussian_similarity
from .submodular import SubmodularObjective, verify_diminishing_returns
from .topology import TopologySpec, build_mixing_matrix, spectral_gap
from .training import TrainConfig, batch_sizes, run_centralized_sgd, run_rcd_sgd
