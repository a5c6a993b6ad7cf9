"""Desk-scale models and the centralized / decentralized SGD loops.

The decentralized loop follows the local-update scheme with communication
frequency ``F``: at every iteration each worker computes its stochastic
gradient at its own current parameters; on iterations ``k % F == 0`` the
workers first mix parameters with their neighbours through ``W``, and the
gradient step is applied to the mixed parameters. ``F = 1`` is plain D-PSGD.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .hetsim import ClusterSpec, ClockLedger, IdleReport, add_busy, advance_to_barrier, idle_report, iteration_time, new_ledger
from .partition import PartitionResult, WorkerRatios
from .topology import MixingMatrix, TopologySpec, build_mixing_matrix

__all__ = [
    "SoftmaxModel",
    "MLPModel",
    "make_model",
    "softmax_loss_grad",
    "TrainConfig",
    "ConfigError",
    "config_from_dict",
    "load_config",
    "batch_sizes",
    "ShardSampler",
    "WorkerState",
    "local_sgd_step",
    "gossip_average",
    "average_models",
    "RunRecord",
    "run_rcd_sgd",
    "run_centralized_sgd",
    "iterations_to_target",
]


class SoftmaxModel:
    """Multinomial logistic regression; params are ``W`` (d x L) then bias (L)."""

    kind = "softmax"

    def __init__(self, dim, num_classes):
        self.dim, self.num_classes = dim, num_classes
        self.size = (dim + 1) * num_classes

    def init_params(self, rng=None):
        return np.zeros(self.size)

    def _unpack(self, x):
        d, L = self.dim, self.num_classes
        return x[: d * L].reshape(d, L), x[d * L:]

    def logits(self, x, X):
        W, b = self._unpack(x)
        return X @ W + b

    def loss_grad(self, x, X, y):
        Z = self.logits(x, X)
        P, loss = _softmax_xent(Z, y)
        B = X.shape[0]
        P[np.arange(B), y] -= 1.0
        gW = X.T @ P / B
        gb = P.sum(axis=0) / B
        return loss, np.concatenate([gW.ravel(), gb])

    def loss(self, x, X, y):
        return _softmax_xent(self.logits(x, X), y)[1]

    def predict(self, x, X):
        return np.argmax(self.logits(x, X), axis=1)


class MLPModel:
    """One tanh hidden layer followed by a softmax output layer."""

    kind = "mlp"

    def __init__(self, dim, num_classes, hidden=32):
        self.dim, self.num_classes, self.hidden = dim, num_classes, hidden
        d, L, h = dim, num_classes, hidden
        self._shapes = [(d, h), (h,), (h, L), (L,)]
        self.size = d * h + h + h * L + L

    def init_params(self, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        d, h = self.dim, self.hidden
        W1 = rng.standard_normal((d, h)) / math.sqrt(d)
        W2 = rng.standard_normal((h, self.num_classes)) / math.sqrt(h)
        return np.concatenate([W1.ravel(), np.zeros(h), W2.ravel(), np.zeros(self.num_classes)])

    def _unpack(self, x):
        out, i = [], 0
        for shape in self._shapes:
            k = int(np.prod(shape))
            out.append(x[i:i + k].reshape(shape))
            i += k
        return out

    def _forward(self, x, X):
        W1, b1, W2, b2 = self._unpack(x)
        H = np.tanh(X @ W1 + b1)
        return H, H @ W2 + b2

    def loss_grad(self, x, X, y):
        W1, b1, W2, b2 = self._unpack(x)
        H, Z = self._forward(x, X)
        P, loss = _softmax_xent(Z, y)
        B = X.shape[0]
        P[np.arange(B), y] -= 1.0
        P /= B
        gW2 = H.T @ P
        gb2 = P.sum(axis=0)
        dH = (P @ W2.T) * (1.0 - H * H)
        gW1 = X.T @ dH
        gb1 = dH.sum(axis=0)
        return loss, np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])

    def loss(self, x, X, y):
        return _softmax_xent(self._forward(x, X)[1], y)[1]

    def predict(self, x, X):
        return np.argmax(self._forward(x, X)[1], axis=1)


def _softmax_xent(Z, y):
    """Row softmax probabilities and mean cross-entropy, via log-sum-exp."""
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    s = E.sum(axis=1)
    lse = np.log(s)
    loss = float(np.mean(lse - Z[np.arange(Z.shape[0]), y]))
    return E / s[:, None], loss


def make_model(desc: str, dim: int, num_classes: int):
    """``"softmax"``, ``"mlp"`` or ``"mlp:<hidden>"``."""
    if desc == "softmax":
        return SoftmaxModel(dim, num_classes)
    if desc == "mlp" or desc.startswith("mlp:"):
        hidden = int(desc.split(":", 1)[1]) if ":" in desc else 32
        if hidden < 1:
            raise ValueError("mlp hidden size must be >= 1")
        return MLPModel(dim, num_classes, hidden)
    raise ValueError(f"unknown model {desc!r}; expected 'softmax' or 'mlp[:hidden]'")


def softmax_loss_grad(x, batch, ds: Dataset):
    """Mean cross-entropy and gradient of the softmax model on ``batch`` positions."""
    batch = np.asarray(batch, dtype=np.int64)
    if batch.size == 0:
        raise ValueError("empty batch")
    model = SoftmaxModel(ds.dim, ds.num_classes)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.size,):
        raise ValueError(f"expected {model.size} parameters, got {x.shape}")
    return model.loss_grad(x, ds.features[batch], ds.labels[batch])


# ---------------------------------------------------------------- config

class ConfigError(ValueError):
    """Schema violation in a training config; ``field`` names the culprit."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


CONFIG_FIELDS = ("model", "lr", "lr_schedule", "batch_ref", "comm_freq", "iters", "topology",
                 "ratios", "seed", "eval_period", "comm_cost", "partition_file", "data_file",
                 "test_file")


@dataclass(frozen=True)
class TrainConfig:
    lr: float
    batch_ref: int
    comm_freq: int
    iters: int
    topology: TopologySpec
    ratios: WorkerRatios
    seed: int = 0
    lr_schedule: tuple = ()
    eval_period: int = 1
    comm_cost: float = 0.0
    model: str = "softmax"
    partition_file: str | None = None
    data_file: str | None = None
    test_file: str | None = None
    # every worker draws the same batch positions (with identical shards this
    # makes the workers exchangeable; used by the centralized-oracle checks)
    shared_batches: bool = False

    def __post_init__(self):
        object.__setattr__(self, "ratios", WorkerRatios.coerce(self.ratios))
        sched = tuple((int(k), float(f)) for k, f in self.lr_schedule)
        object.__setattr__(self, "lr_schedule", sched)
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ConfigError("lr", "must be a positive number")
        if self.batch_ref < 1:
            raise ConfigError("batch_ref", "must be >= 1")
        if self.iters < 1:
            raise ConfigError("iters", "must be >= 1")
        if not 1 <= self.comm_freq <= self.iters:
            raise ConfigError("comm_freq", f"must satisfy 1 <= comm_freq <= iters ({self.iters})")
        if self.eval_period < 1:
            raise ConfigError("eval_period", "must be >= 1")
        if not self.comm_cost >= 0:
            raise ConfigError("comm_cost", "must be non-negative")
        for k, f in sched:
            if k < 0 or not f > 0:
                raise ConfigError("lr_schedule", "entries must be [iteration >= 0, factor > 0]")
        if self.topology.n != len(self.ratios):
            raise ConfigError("topology", f"has {self.topology.n} workers but ratios has {len(self.ratios)}")
        try:
            build_mixing_matrix(self.topology)
        except ValueError as e:
            raise ConfigError("topology", str(e)) from None
        try:
            make_model(self.model, 1, 1)
        except ValueError as e:
            raise ConfigError("model", str(e)) from None

    @property
    def n_workers(self):
        return len(self.ratios)

    def lr_at(self, k):
        lr = self.lr
        for it, factor in self.lr_schedule:
            if k >= it:
                lr *= factor
        return lr

    def replace(self, **changes):
        from dataclasses import replace
        return replace(self, **changes)


def _need(doc, key, kinds, what):
    if key not in doc:
        raise ConfigError(key, "missing required field")
    val = doc[key]
    if isinstance(val, bool) or not isinstance(val, kinds):
        raise ConfigError(key, f"expected {what}, got {type(val).__name__}")
    return val


def _topology_from(doc_value, n):
    if isinstance(doc_value, str):
        if doc_value in ("ring", "complete"):
            return TopologySpec(doc_value, n)
        raise ConfigError("topology", f"unknown topology {doc_value!r}; expected 'ring', 'complete' or an edge list")
    edges = doc_value.get("edges") if isinstance(doc_value, dict) else doc_value
    if not isinstance(edges, list):
        raise ConfigError("topology", "expected 'ring', 'complete', a list of [i, j] edges or {\"edges\": [...]}")
    try:
        return TopologySpec("custom_edge_list", n, tuple(tuple(e) for e in edges))
    except (TypeError, ValueError) as e:
        raise ConfigError("topology", str(e)) from None


def config_from_dict(doc: dict, base_dir=None) -> TrainConfig:
    """Validate a config document; relative file paths resolve against ``base_dir``."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    unknown = sorted(set(doc) - set(CONFIG_FIELDS))
    if unknown:
        raise ConfigError(unknown[0], "unknown field")
    model = _need(doc, "model", str, "a string")
    lr = _need(doc, "lr", (int, float), "a number")
    sched = _need(doc, "lr_schedule", list, "a list of [iteration, factor] pairs")
    for item in sched:
        if not (isinstance(item, list) and len(item) == 2
                and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in item)):
            raise ConfigError("lr_schedule", "entries must be [iteration, factor] pairs")
    batch_ref = _need(doc, "batch_ref", int, "an integer")
    comm_freq = _need(doc, "comm_freq", int, "an integer")
    iters = _need(doc, "iters", int, "an integer")
    ratios_doc = _need(doc, "ratios", list, "a list of positive numbers")
    try:
        ratios = WorkerRatios(tuple(ratios_doc))
    except (TypeError, ValueError) as e:
        raise ConfigError("ratios", str(e)) from None
    if "topology" not in doc:
        raise ConfigError("topology", "missing required field")
    topology = _topology_from(doc["topology"], len(ratios))
    seed = _need(doc, "seed", int, "an integer")
    eval_period = _need(doc, "eval_period", int, "an integer")
    comm_cost = _need(doc, "comm_cost", (int, float), "a number")

    def path(key, required):
        if key not in doc:
            raise ConfigError(key, "missing required field")
        val = doc[key]
        if val is None and not required:
            return None
        if not isinstance(val, str):
            raise ConfigError(key, "expected a file path string")
        if base_dir is not None and not os.path.isabs(val):
            val = os.path.join(base_dir, val)
        return val

    return TrainConfig(
        lr=float(lr), batch_ref=batch_ref, comm_freq=comm_freq, iters=iters, topology=topology,
        ratios=ratios, seed=seed, lr_schedule=tuple(tuple(x) for x in sched),
        eval_period=eval_period, comm_cost=float(comm_cost), model=model,
        partition_file=path("partition_file", True), data_file=path("data_file", True),
        test_file=path("test_file", False),
    )


def load_config(path) -> TrainConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError("<root>", f"invalid JSON: {e}") from None
    return config_from_dict(doc, os.path.dirname(os.path.abspath(path)))


# ---------------------------------------------------------------- workers

def batch_sizes(ratios, batch_ref: int) -> list[int]:
    """Per-worker batch ``max(1, round(B * r_i / max r))``, proportional to speed."""
    r = WorkerRatios.coerce(ratios).ratios
    top = max(r)
    return [max(1, int(math.floor(batch_ref * ri / top + 0.5))) for ri in r]


class ShardSampler:
    """Epoch-wise shuffled mini-batches from a shard, dropping the remainder."""

    def __init__(self, shard, batch_size, rng):
        self.shard = np.asarray(shard, dtype=np.int64)
        if self.shard.size == 0:
            raise ValueError("shard is empty")
        self.batch_size = min(int(batch_size), self.shard.size)
        self.rng = rng
        self.epoch = 0
        self._order = None
        self._cursor = 0

    @property
    def batches_per_epoch(self):
        return self.shard.size // self.batch_size

    def next_batch(self):
        if self._order is None or self._cursor + self.batch_size > self._order.size:
            if self._order is not None:
                self.epoch += 1
            self._order = self.shard[self.rng.permutation(self.shard.size)]
            self._cursor = 0
        out = self._order[self._cursor:self._cursor + self.batch_size]
        self._cursor += self.batch_size
        return out


@dataclass
class WorkerState:
    index: int
    params: np.ndarray
    shard: np.ndarray
    batch_size: int
    sampler: ShardSampler
    last_batch: np.ndarray | None = None
    last_grad: np.ndarray | None = None


def local_sgd_step(w: WorkerState, lr: float, model, ds: Dataset, base=None) -> WorkerState:
    """``x <- base - lr * grad(x)``, the gradient taken at the worker's own params.

    ``base`` is the neighbourhood average on sync iterations and defaults to
    the worker's params otherwise.
    """
    batch = w.sampler.next_batch()
    _, g = model.loss_grad(w.params, ds.features[batch], ds.labels[batch])
    start = w.params if base is None else base
    w.params = start - lr * g
    w.last_batch, w.last_grad = batch, g
    return w


def gossip_average(params, W, i: int) -> np.ndarray:
    """``sum_j W[i, j] x_j``."""
    W = W.W if isinstance(W, MixingMatrix) else np.asarray(W)
    stack = _stack(params)
    if stack.shape[0] != W.shape[0]:
        raise ValueError(f"{stack.shape[0]} parameter vectors for a {W.shape[0]}-worker mixing matrix")
    return W[i] @ stack


def _stack(params):
    vecs = [np.asarray(p, dtype=np.float64) for p in params]
    if not vecs:
        raise ValueError("need at least one parameter vector")
    if any(v.shape != vecs[0].shape for v in vecs):
        raise ValueError("parameter vectors differ in dimension")
    return np.stack(vecs)


def average_models(params) -> np.ndarray:
    """Arithmetic mean of the workers' parameter vectors."""
    stack = _stack(params)
    total = stack[0].copy()
    for row in stack[1:]:
        total += row
    return total / stack.shape[0]


# ---------------------------------------------------------------- runs

@dataclass
class RunRecord:
    """Metrics at each evaluation point and the final averaged model."""

    k: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list)
    comm_rounds: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)
    final_params: np.ndarray | None = None
    idle: IdleReport | None = None
    ledger: ClockLedger | None = None
    batch_sizes: tuple = ()
    params_history: list | None = None

    def rows(self):
        return list(zip(self.k, self.wall_clock, self.comm_rounds, self.train_loss, self.test_acc))

    def metrics_csv(self) -> str:
        lines = ["k,wall_clock,comm_rounds,train_loss,test_acc"]
        for k, w, c, loss, acc in self.rows():
            lines.append(f"{k},{w:.17g},{c},{loss:.17g},{acc:.17g}")
        if self.idle is not None:
            lines += ["# " + line for line in self.idle.lines()]
        return "\n".join(lines) + "\n"


def iterations_to_target(record: RunRecord, target: float):
    """First evaluated iteration whose train loss is <= ``target`` and its wall clock."""
    for k, wall, loss in zip(record.k, record.wall_clock, record.train_loss):
        if loss <= target:
            return k, wall
    return None, None


def _shards(partition, ds, n):
    if partition is None:
        return [np.arange(ds.n)] * n
    if isinstance(partition, PartitionResult):
        shards = partition.blocks(ds)
    else:
        shards = [np.asarray(s, dtype=np.int64) for s in partition]
    if len(shards) != n:
        raise ValueError(f"partition has {len(shards)} blocks but the config has {n} workers")
    for i, s in enumerate(shards):
        if s.size == 0:
            raise ValueError(f"worker {i} has an empty shard")
    return shards


def _check_alignment(partition, cfg):
    if not isinstance(partition, PartitionResult) or not partition.ratios:
        return
    a = np.asarray(partition.ratios) / sum(partition.ratios)
    b = np.asarray(cfg.ratios.ratios) / sum(cfg.ratios.ratios)
    if a.shape != b.shape or not np.allclose(a, b, rtol=1e-9, atol=0):
        raise ValueError(f"partition was built for ratios {partition.ratios}, config has {cfg.ratios.ratios}")


def _samplers(shards, sizes, cfg):
    out = []
    for i, (s, b) in enumerate(zip(shards, sizes)):
        stream = 0 if cfg.shared_batches else i
        out.append(ShardSampler(s, b, np.random.default_rng([cfg.seed, 1, stream])))
    return out


class _Evaluator:
    def __init__(self, model, ds, test):
        self.model, self.ds, self.test = model, ds, test

    def __call__(self, x):
        loss = self.model.loss(x, self.ds.features, self.ds.labels)
        if self.test is None:
            return loss, float("nan")
        acc = float(np.mean(self.model.predict(x, self.test.features) == self.test.labels))
        return loss, acc


def _record(rec, ev, k, wall, rounds, x):
    loss, acc = ev(x)
    rec.k.append(k)
    rec.wall_clock.append(float(wall))
    rec.comm_rounds.append(rounds)
    rec.train_loss.append(loss)
    rec.test_acc.append(acc)


def run_rcd_sgd(ds: Dataset, partition, cfg: TrainConfig, cluster: ClusterSpec | None = None,
                test: Dataset | None = None, record_params: bool = False) -> RunRecord:
    """Decentralized SGD over the partition's shards with gossip every ``F`` iterations.

    ``partition`` is a :class:`PartitionResult` or a list of position arrays,
    one per worker. The simulated clock places a barrier at every gossip
    round; metrics are taken on the uniform average of the worker models.
    """
    N, F, K = cfg.n_workers, cfg.comm_freq, cfg.iters
    _check_alignment(partition, cfg)
    shards = _shards(partition, ds, N)
    cluster = cluster or ClusterSpec(cfg.ratios.ratios, cfg.comm_cost)
    if cluster.n != N:
        raise ValueError("cluster and config disagree on the number of workers")
    model = make_model(cfg.model, ds.dim, ds.num_classes)
    W = build_mixing_matrix(cfg.topology).W
    sizes = batch_sizes(cfg.ratios, cfg.batch_ref)
    samplers = _samplers(shards, sizes, cfg)
    x0 = model.init_params(np.random.default_rng([cfg.seed, 2]))
    workers = [WorkerState(i, x0.copy(), shards[i], samplers[i].batch_size, samplers[i]) for i in range(N)]
    jitter_rng = cluster.rng()

    ev = _Evaluator(model, ds, test)
    rec = RunRecord(batch_sizes=tuple(w.batch_size for w in workers))
    if record_params:
        rec.params_history = [np.stack([w.params for w in workers])]
    ledger = new_ledger(N)
    rounds = 0
    _record(rec, ev, 0, ledger.now(), rounds, average_models([w.params for w in workers]))
    for k in range(K):
        lr = cfg.lr_at(k)
        if k % F == 0:
            # barrier: every x_{k,j} is final before any neighbour reads it
            ledger = advance_to_barrier(ledger, None, cluster.comm_cost)
            rounds += 1
            current = np.stack([w.params for w in workers])
            mixed = W @ current
        else:
            mixed = [None] * N
        for w in workers:
            local_sgd_step(w, lr, model, ds, base=mixed[w.index])
        ledger = add_busy(ledger, [iteration_time(w.index, w.batch_size, cluster, jitter_rng)
                                   for w in workers])
        if record_params:
            rec.params_history.append(np.stack([w.params for w in workers]))
        if (k + 1) % cfg.eval_period == 0 or k + 1 == K:
            _record(rec, ev, k + 1, ledger.now(), rounds, average_models([w.params for w in workers]))
    ledger = advance_to_barrier(ledger, None, 0.0)
    rec.final_params = average_models([w.params for w in workers])
    rec.ledger = ledger
    rec.idle = idle_report(ledger)
    return rec


def run_centralized_sgd(ds: Dataset, cfg: TrainConfig, partition=None, cluster: ClusterSpec | None = None,
                        test: Dataset | None = None, record_params: bool = False) -> RunRecord:
    """Parallel mini-batch SGD on one shared model: ``x <- x - lr * mean_i g_i(x)``.

    Workers draw batches exactly as in :func:`run_rcd_sgd` (same shards, batch
    sizes and seeds); without a partition every worker samples the full set.
    Each iteration ends at a barrier with one communication round.
    """
    N, K = cfg.n_workers, cfg.iters
    shards = _shards(partition, ds, N)
    cluster = cluster or ClusterSpec(cfg.ratios.ratios, cfg.comm_cost)
    model = make_model(cfg.model, ds.dim, ds.num_classes)
    sizes = batch_sizes(cfg.ratios, cfg.batch_ref)
    samplers = _samplers(shards, sizes, cfg)
    x = model.init_params(np.random.default_rng([cfg.seed, 2]))
    jitter_rng = cluster.rng()

    ev = _Evaluator(model, ds, test)
    rec = RunRecord(batch_sizes=tuple(s.batch_size for s in samplers))
    if record_params:
        rec.params_history = [x.copy()]
    ledger = new_ledger(N)
    _record(rec, ev, 0, ledger.now(), 0, x)
    for k in range(K):
        grads = []
        for s in samplers:
            batch = s.next_batch()
            grads.append(model.loss_grad(x, ds.features[batch], ds.labels[batch])[1])
        x = x - cfg.lr_at(k) * average_models(grads)
        ledger = advance_to_barrier(
            ledger, [iteration_time(i, s.batch_size, cluster, jitter_rng) for i, s in enumerate(samplers)],
            cluster.comm_cost)
        if record_params:
            rec.params_history.append(x.copy())
        if (k + 1) % cfg.eval_period == 0 or k + 1 == K:
            _record(rec, ev, k + 1, ledger.now(), k + 1, x)
    rec.final_params = x
    rec.ledger = ledger
    rec.idle = idle_report(ledger)
    return rec
