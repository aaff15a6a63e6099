"""FedAvg rounds: select, broadcast, train locally, aggregate by sample count."""
from __future__ import annotations

import csv
import hashlib
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from spatialfl import rng as rngs
from spatialfl.clustering import ClusterModel, kmeans
from spatialfl.datasets import ClientPool, SourceDataset, bind_points
from spatialfl.learner import (ClientDataset, MlpArchitecture, ModelParams, TrainSpec, evaluate,
                               init_params, local_train)
from spatialfl.selection import ClusterBased, UniformRandom, round_stream, select

log = logging.getLogger(__name__)

POLICIES = ("cluster", "random")
PRECISIONS = {"float64": np.float64, "float32": np.float32}
CSV_HEADER = ["round", "policy", "seed", "selected_count", "distinct_labels", "train_loss",
              "test_accuracy", "wall_time_s"]


class AggregationError(ValueError):
    pass


class EmptyRoundError(RuntimeError):
    pass


@dataclass(frozen=True)
class FederationConfig:
    rounds: int = 500
    train_spec: TrainSpec = field(default_factory=TrainSpec)
    policy: str = "cluster"
    num_selected: int = 5
    eval_every: int = 1
    seed: int = 0
    hidden_dim: int = 200
    precision: str = "float64"
    full_population_loss: bool = False
    record_wall_time: bool = True

    def __post_init__(self):
        if self.rounds < 1 or self.eval_every < 1:
            raise ValueError("rounds and eval_every must be >= 1")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.num_selected < 1:
            raise ValueError("num_selected must be >= 1")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {tuple(PRECISIONS)}")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


@dataclass
class RoundRecord:
    round: int
    policy: str
    seed: int
    selected: np.ndarray
    distinct_labels: int
    train_loss: float | None
    test_accuracy: float | None
    wall_time: float

    def csv_row(self):
        def fmt(v):
            return "" if v is None else repr(float(v))
        return [self.round, self.policy, self.seed, len(self.selected), self.distinct_labels,
                fmt(self.train_loss), fmt(self.test_accuracy), fmt(self.wall_time)]


def effective_weights(sizes):
    sizes = np.asarray(sizes, dtype=np.float64)
    total = sizes.sum()
    if total <= 0:
        raise AggregationError("no effective participants")
    return sizes / total


def aggregate(updates) -> ModelParams:
    """Sample-count weighted mean of ``(params, n_k)`` pairs.

    Sums run in the order given; callers pass updates sorted by client
    index. Rounding is clamped so every coordinate stays inside the
    participants' range.
    """
    live = [(p, n) for p, n in updates if n > 0]
    if not live:
        raise AggregationError("no effective participants")
    arch = live[0][0].arch
    if any(p.arch != arch for p, _ in live):
        raise AggregationError("architecture mismatch between updates")
    if len(live) == 1:
        return live[0][0].copy()
    acc = np.zeros_like(live[0][0].values)
    lo = live[0][0].values.copy()
    hi = lo.copy()
    total = 0
    for p, n in live:
        acc += n * p.values
        np.minimum(lo, p.values, out=lo)
        np.maximum(hi, p.values, out=hi)
        total += n
    acc /= total
    np.clip(acc, lo, hi, out=acc)
    return ModelParams(acc, arch)


def _digest(values):
    return hashlib.blake2b(values.tobytes(), digest_size=16).digest()


def build_policy(config: FederationConfig, partition, cluster_model: ClusterModel | None = None):
    if config.policy == "cluster":
        if cluster_model is None:
            cluster_model = kmeans(partition.ues.positions, config.num_selected,
                                   rngs.stream(config.seed, rngs.CLUSTERING))
        return ClusterBased(cluster_model)
    return UniformRandom(len(partition.ues), config.num_selected)


def _concat(datasets):
    return ClientDataset(np.concatenate([d.features for d in datasets]),
                         np.concatenate([d.labels for d in datasets]))


def run_round(global_params: ModelParams, pool: ClientPool, policy, config: FederationConfig,
              round: int, test: ClientDataset | None = None, workers: int = 1):
    """One broadcast/train/aggregate cycle. Returns ``(new_global, record)``.

    Raises ``EmptyRoundError`` when no selected client holds data.
    """
    t0 = time.perf_counter()
    chosen = select(policy, round, round_stream(config.seed, round, policy.name))
    order = sorted(int(k) for k in chosen.indices)
    datasets = {k: pool[k] for k in order}
    broadcast = _digest(global_params.values)

    def train(k):
        start = global_params.copy()
        assert _digest(start.values) == broadcast, "broadcast mismatch"
        rng = rngs.stream(config.seed, rngs.LOCAL_TRAIN, round, k)
        return local_train(start, datasets[k], config.train_spec, rng)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = dict(zip(order, ex.map(train, order)))
    else:
        results = {k: train(k) for k in order}

    updates = [(results[k].params, len(datasets[k])) for k in order if not results[k].skipped]
    if not updates:
        raise EmptyRoundError(f"round {round}: every selected client is empty")
    new_global = aggregate(updates)

    if config.full_population_loss:
        loss_sets = [pool[k] for k in range(len(pool)) if pool.size(k) > 0]
    else:
        loss_sets = [datasets[k] for k in order if len(datasets[k]) > 0]
    train_loss, _ = evaluate(new_global, _concat(loss_sets))
    accuracy = None
    if test is not None:
        _, accuracy = evaluate(new_global, test)
    labels = np.concatenate([datasets[k].labels for k in order])
    record = RoundRecord(
        round=round,
        policy=policy.name,
        seed=config.seed,
        selected=chosen.indices,
        distinct_labels=len(np.unique(labels)),
        train_loss=train_loss,
        test_accuracy=accuracy,
        wall_time=time.perf_counter() - t0 if config.record_wall_time else 0.0,
    )
    return new_global, record


@dataclass
class TrainingSetup:
    """Everything a run needs besides the round loop; shared across paired policies."""

    pool: ClientPool
    init: ModelParams
    test: ClientDataset


def prepare(partition, source: SourceDataset, config: FederationConfig, binding=None) -> TrainingSetup:
    if binding is None:
        binding = bind_points(partition, source, rngs.stream(config.seed, rngs.BINDING))
    arch = MlpArchitecture(source.input_dim, config.hidden_dim, source.num_classes)
    init = init_params(arch, rngs.stream(config.seed, rngs.INIT), dtype=config.dtype)
    test = ClientDataset(source.test_features.astype(config.dtype, copy=False), source.test_labels)
    return TrainingSetup(ClientPool(partition, source, binding), init, test)


def run_training(partition, source: SourceDataset, config: FederationConfig, *,
                 cluster_model=None, setup: TrainingSetup | None = None, start=None,
                 stop_after=None, on_round=None, workers=1):
    """Run rounds ``1..config.rounds`` and return ``(final_params, records)``.

    ``start=(params, round)`` resumes after ``round``; per-round random
    streams are keyed on the round number, so a resumed run continues
    exactly as an uninterrupted one. ``on_round(params, record)`` is called
    after each round; ``stop_after`` ends the loop early.
    """
    if source.input_dim < 1:
        raise ValueError("source dataset has no features")
    setup = setup or prepare(partition, source, config)
    if setup.init.arch.input_dim != source.input_dim:
        raise ValueError("model input size does not match the dataset")
    policy = build_policy(config, partition, cluster_model)
    params, done = (setup.init.copy(), 0) if start is None else (start[0].copy(), start[1])
    last = config.rounds if stop_after is None else min(config.rounds, stop_after)
    records = []
    for t in range(done + 1, last + 1):
        evaluate_now = t % config.eval_every == 0 or t == config.rounds
        try:
            params, record = run_round(params, setup.pool, policy, config, t,
                                       setup.test if evaluate_now else None, workers)
        except EmptyRoundError as exc:
            log.warning("%s; global model kept", exc)
            chosen = select(policy, t, round_stream(config.seed, t, policy.name))
            acc = evaluate(params, setup.test)[1] if evaluate_now else None
            record = RoundRecord(t, policy.name, config.seed, chosen.indices, 0, None, acc, 0.0)
        records.append(record)
        if on_round is not None:
            on_round(params, record)
    return params, records


def write_metrics(path, records, mode="w"):
    with open(path, mode, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if mode == "w":
            w.writerow(CSV_HEADER)
        for r in records:
            w.writerow(r.csv_row())


def read_metrics(path):
    """Rows of a metrics CSV as dicts with typed values; validates the schema."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        for line in reader:
            if len(line) != len(CSV_HEADER):
                raise ValueError(f"{path}: malformed row {line}")
            rec = dict(zip(CSV_HEADER, line))
            for key in ("round", "seed", "selected_count", "distinct_labels"):
                rec[key] = int(rec[key])
            for key in ("train_loss", "test_accuracy", "wall_time_s"):
                rec[key] = float(rec[key]) if rec[key] != "" else None
            acc = rec["test_accuracy"]
            if acc is not None and not 0.0 <= acc <= 1.0:
                raise ValueError(f"{path}: accuracy {acc} out of range")
            if rec["train_loss"] is not None and not math.isfinite(rec["train_loss"]):
                raise ValueError(f"{path}: non-finite loss")
            rows.append(rec)
    return rows
