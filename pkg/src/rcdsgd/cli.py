"""Command-line entry point: ``rcdsgd {gen,partition,train,verify}``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 a
submodularity check found a violation. Output files are written to a
temporary name and renamed only once everything succeeded.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import contextmanager

import numpy as np

from . import __version__
from .dataset import Dataset, DatasetError, SyntheticSpec, generate_gaussian_mixture, load_dataset, save_dataset
from .partition import (PartitionError, WorkerRatios, assignment_csv, load_assignment, random_partition,
                        ratio_constrained_partition, shards_from_assignment, sorted_partition)
from .similarity import KernelSpec, ZeroBandwidthError, bandwidth_sigma, build_class_similarity
from .submodular import MAX_VERIFY_SIZE, SubmodularObjective, verify_diminishing_returns
from .topology import TopologyError
from .training import ConfigError, load_config, run_centralized_sgd, run_rcd_sgd

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VIOLATION = 0, 1, 2, 3

OBJECTIVE_FLAGS = {"facility": "facility_location", "graphcut": "graph_cut"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@contextmanager
def _staged(*paths):
    """Yield temp paths; rename them onto ``paths`` only if the block succeeds."""
    temps = [f"{p}.tmp-{os.getpid()}" for p in paths]
    try:
        yield temps
        for t, p in zip(temps, paths):
            os.replace(t, p)
    finally:
        for t in temps:
            if os.path.exists(t):
                os.remove(t)


def _write(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _provenance(command, flags, **extra):
    doc = {"command": command, "version": __version__, "flags": flags}
    doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _seed(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer seed, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _nonneg_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text!r}")
    return v


def _ratios(text):
    try:
        return WorkerRatios.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _sigma(text):
    if text == "auto":
        return None
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--sigma must be 'auto' or a positive number, got {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("--sigma must be positive")
    return v


def build_parser():
    p = _Parser(prog="rcdsgd", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic Gaussian-mixture features CSV")
    g.add_argument("--classes", type=_positive_int, required=True)
    g.add_argument("--per-class", type=_positive_int, required=True)
    g.add_argument("--dim", type=_positive_int, required=True)
    g.add_argument("--sep", type=_nonneg_float, required=True)
    g.add_argument("--seed", type=_seed, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--test-out")
    g.add_argument("--test-per-class", type=_positive_int)

    q = sub.add_parser("partition", help="split a dataset across workers")
    q.add_argument("--data", required=True)
    q.add_argument("--ratios", type=_ratios, required=True)
    q.add_argument("--objective", choices=sorted(OBJECTIVE_FLAGS), default="facility")
    q.add_argument("--method", choices=["submodular", "random", "sorted"], default="submodular")
    q.add_argument("--seed", type=_seed, default=0)
    q.add_argument("--out", required=True)
    q.add_argument("--sigma", type=_sigma, default=None)

    t = sub.add_parser("train", help="run decentralized SGD on a partitioned dataset")
    t.add_argument("--config", required=True)
    t.add_argument("--comm-freq", type=_positive_int)
    t.add_argument("--iters", type=_positive_int)
    t.add_argument("--seed", type=_seed)
    t.add_argument("--out", default="metrics.csv", help="metrics CSV path (default: metrics.csv)")
    t.add_argument("--centralized", action="store_true",
                   help="run the centralized parallel-SGD baseline on the same config instead")

    v = sub.add_parser("verify", help="brute-force submodularity checks on random similarity matrices")
    v.add_argument("--objective", choices=sorted(OBJECTIVE_FLAGS), required=True)
    v.add_argument("--ground-size", type=_positive_int, required=True)
    v.add_argument("--trials", type=_positive_int, default=100)
    v.add_argument("--seed", type=_seed, default=0)
    return p


def cmd_gen(args):
    if (args.test_out is None) != (args.test_per_class is None):
        raise UsageError("--test-out and --test-per-class must be given together")
    spec = SyntheticSpec(args.classes, args.per_class, args.dim, args.sep, args.seed)
    train = generate_gaussian_mixture(spec)
    outputs = [(args.out, train, spec, 0)]
    if args.test_out:
        tspec = SyntheticSpec(args.classes, args.test_per_class, args.dim, args.sep, args.seed)
        outputs.append((args.test_out, generate_gaussian_mixture(tspec, stream=1), tspec, 1))
    flags = {k: getattr(args, k) for k in ("classes", "per_class", "dim", "sep", "seed", "out",
                                            "test_out", "test_per_class")}
    paths = [p for out in outputs for p in (out[0], out[0] + ".json")]
    with _staged(*paths) as temps:
        for i, (path, ds, sp, stream) in enumerate(outputs):
            save_dataset(ds, temps[2 * i])
            _write(temps[2 * i + 1], _provenance("gen", flags, rows=ds.n, stream=stream,
                                                 spec=sp.__dict__))
    for path, ds, _, _ in outputs:
        print(f"wrote {ds.n} rows ({ds.num_classes} classes, dim {ds.dim}) to {path}")
    return EXIT_OK


def cmd_partition(args):
    ds = load_dataset(args.data)
    objective = OBJECTIVE_FLAGS[args.objective]
    ratios = args.ratios
    if args.method == "submodular":
        result = ratio_constrained_partition(ds, ratios, KernelSpec(sigma=args.sigma, seed=args.seed), objective)
    elif args.method == "random":
        result = random_partition(ds, ratios, args.seed)
    else:
        result = sorted_partition(ds, ratios)
    table = result.constraints.capacities
    flags = {"data": args.data, "ratios": list(ratios.ratios), "objective": args.objective,
             "method": args.method, "seed": args.seed, "out": args.out,
             "sigma": "auto" if args.sigma is None else args.sigma}
    side = _provenance("partition", flags, ratios=list(ratios.ratios), constraint_table=table.tolist(),
                       objective=objective if args.method == "submodular" else None,
                       sigma=result.sigma, seed=args.seed, kernel_evals=result.kernel_evals,
                       method=args.method, warnings=list(result.constraints.warnings))
    with _staged(args.out, args.out + ".json") as (tmp_csv, tmp_json):
        _write(tmp_csv, assignment_csv(result, ds))
        _write(tmp_json, side)
    print(f"method={args.method} objective={objective} blocks={result.num_blocks}")
    if result.sigma is not None:
        print(f"sigma={result.sigma!r}")
    print("constraint table (class: per-block capacities):")
    for l, row in enumerate(table):
        print(f"  class {l}: " + " ".join(str(int(c)) for c in row))
    print(f"kernel_evals={result.kernel_evals}")
    for note in result.constraints.warnings:
        print(f"warning: {note}")
    return EXIT_OK


def cmd_train(args):
    cfg = load_config(args.config)
    overrides = {}
    if args.comm_freq is not None:
        overrides["comm_freq"] = args.comm_freq
    if args.iters is not None:
        overrides["iters"] = args.iters
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        cfg = cfg.replace(**overrides)
    ds = load_dataset(cfg.data_file)
    test = load_dataset(cfg.test_file, num_classes=ds.num_classes) if cfg.test_file else None
    if test is not None and test.dim != ds.dim:
        raise DatasetError(f"test features have dimension {test.dim}, training data {ds.dim}")
    assignment = load_assignment(cfg.partition_file)
    shards = shards_from_assignment(ds, assignment, cfg.n_workers)
    _check_sidecar_ratios(cfg)
    if args.centralized:
        rec = run_centralized_sgd(ds, cfg, shards, test=test)
    else:
        rec = run_rcd_sgd(ds, shards, cfg, test=test)
    flags = {"config": args.config, "comm_freq": cfg.comm_freq, "iters": cfg.iters, "seed": cfg.seed,
             "out": args.out, "centralized": args.centralized}
    side = _provenance("train", flags, batch_sizes=list(rec.batch_sizes),
                       final_params=[float(x) for x in rec.final_params],
                       wall_clock=rec.idle.wall_clock, comm_rounds=rec.comm_rounds[-1],
                       idle_fraction=list(rec.idle.idle_fraction))
    with _staged(args.out, args.out + ".json") as (tmp_csv, tmp_json):
        _write(tmp_csv, rec.metrics_csv())
        _write(tmp_json, side)
    print(f"final train_loss={rec.train_loss[-1]!r}")
    print(f"final test_acc={rec.test_acc[-1]!r}")
    print(f"wall_clock={rec.idle.wall_clock!r}")
    print(f"comm_rounds={rec.comm_rounds[-1]}")
    print("idle_fraction=" + ",".join(f"{f:.6f}" for f in rec.idle.idle_fraction))
    return EXIT_OK


def _check_sidecar_ratios(cfg):
    side = cfg.partition_file + ".json"
    if not os.path.isfile(side):
        return
    with open(side) as fh:
        doc = json.load(fh)
    ratios = doc.get("ratios")
    if ratios is None:
        return
    a = np.asarray(ratios, dtype=float)
    b = np.asarray(cfg.ratios.ratios)
    if a.shape != b.shape or not np.allclose(a / a.sum(), b / b.sum(), rtol=1e-9, atol=0):
        raise PartitionError(f"partition was built for ratios {ratios}, config has {list(cfg.ratios.ratios)}")


def random_gaussian_similarity(m, rng, dim=3):
    """Gaussian-kernel matrix of ``m`` random points with the mean-distance bandwidth."""
    X = rng.standard_normal((m, dim))
    ds = Dataset(np.arange(m), np.zeros(m, dtype=np.int64), X, 1)
    try:
        sigma = bandwidth_sigma(ds)
    except ZeroBandwidthError:
        sigma = 1.0
    return build_class_similarity(ds, 0, KernelSpec(sigma=sigma))


def cmd_verify(args):
    if args.ground_size > MAX_VERIFY_SIZE:
        raise UsageError(f"--ground-size {args.ground_size} exceeds the enumeration bound {MAX_VERIFY_SIZE}")
    objective = OBJECTIVE_FLAGS[args.objective]
    rng = np.random.default_rng(args.seed)
    needs_monotone = objective == "facility_location"
    failures, mono_notes = [], 0
    for trial in range(args.trials):
        sim = random_gaussian_similarity(args.ground_size, rng)
        res = verify_diminishing_returns(SubmodularObjective(objective, sim))
        if not res.submodular:
            failures.append((trial, "diminishing returns", res.counterexample))
        if not res.monotone:
            if needs_monotone:
                failures.append((trial, "monotonicity", res.monotonicity_violations[0]))
            else:
                mono_notes += 1
    print(f"objective={objective} ground_size={args.ground_size} trials={args.trials} seed={args.seed}")
    if mono_notes:
        print(f"info: monotonicity fails on {mono_notes}/{args.trials} matrices "
              "(expected for graph cut on large blocks)")
    if failures:
        for trial, what, cex in failures:
            print(f"VIOLATION trial {trial}: {what}: {cex}")
        return EXIT_VIOLATION
    what = "submodular and monotone" if needs_monotone else "submodular"
    print(f"ok: {what} on all {args.trials} matrices")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "partition": cmd_partition, "train": cmd_train, "verify": cmd_verify}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, TopologyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, PartitionError, ZeroBandwidthError, OSError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
