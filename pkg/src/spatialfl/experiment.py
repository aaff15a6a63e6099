"""Experiment drivers behind the ``partition``, ``train`` and ``compare`` subcommands."""
from __future__ import annotations

import logging
import math
import os
from pathlib import Path

import numpy as np

from spatialfl import rng as rngs
from spatialfl.clustering import kmeans
from spatialfl.config import ConfigError, ExperimentConfig
from spatialfl.datasets import (DatasetError, SourceDataset, load_cifar10_source, load_fmnist,
                                synthetic_blobs)
from spatialfl.fedavg import (CSV_HEADER, FederationConfig, build_policy, prepare, read_metrics,
                              run_training)
from spatialfl.learner import TrainSpec, load_checkpoint, save_checkpoint
from spatialfl.partition import (SpatialPartition, WorldConfig, generate_partition, load_partition,
                                 save_partition, summarize)
from spatialfl.selection import round_stream, select, write_trace

log = logging.getLogger(__name__)


def world_config(cfg: ExperimentConfig, seed: int) -> WorldConfig:
    w = cfg.world
    try:
        return WorldConfig(w.side_length, w.sensing_radius, w.intensity, w.num_ues, w.num_classes,
                           seed, w.edge_margin)
    except ValueError as exc:
        raise ConfigError(f"world: {exc}") from exc


def federation_config(cfg: ExperimentConfig, policy: str, seed: int) -> FederationConfig:
    f = cfg.federation
    try:
        return FederationConfig(
            rounds=f.rounds,
            train_spec=TrainSpec(f.learning_rate, f.local_epochs, f.batch_size),
            policy=policy,
            num_selected=cfg.clusters,
            eval_every=f.eval_every,
            seed=seed,
            hidden_dim=f.hidden_dim,
            precision=f.precision,
            full_population_loss=f.full_population_loss,
            record_wall_time=f.record_wall_time,
        )
    except ValueError as exc:
        raise ConfigError(f"federation: {exc}") from exc


def load_source(cfg: ExperimentConfig, seed: int) -> SourceDataset:
    d = cfg.dataset
    try:
        if d.kind == "synthetic":
            return synthetic_blobs(cfg.world.num_classes, d.samples_per_class, d.dim, d.separation,
                                   rngs.stream(seed, rngs.DATASET), sigma=d.sigma,
                                   test_per_class=d.test_per_class)
        if d.kind == "fmnist":
            return load_fmnist(d.train_images, d.train_labels, d.test_images, d.test_labels)
        return load_cifar10_source(d.train_batches, d.test_batches)
    except (OSError, DatasetError) as exc:
        raise ConfigError(f"dataset: {exc}") from exc


def _atomic_write(path: Path, writer):
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    os.replace(tmp, path)


def cmd_partition(cfg: ExperimentConfig, out_dir=None) -> SpatialPartition:
    """Write ``partition.json`` and ``partition_summary.txt`` for the base seed."""
    out = Path(out_dir or cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    part = generate_partition(world_config(cfg, cfg.seed), cfg.labeling)
    text = summarize(part)
    if part.counts.max(initial=0) == 0:
        log.warning("every capture list is empty (intensity=%s)", cfg.world.intensity)
        text += "warning: every capture list is empty\n"
    save_partition(part, out / "partition.json")
    (out / "partition_summary.txt").write_text(text)
    return part


def _csv_line(record):
    return ",".join(str(v) for v in record.csv_row())


def _run_arm(part, source, setup, cluster_model, fed: FederationConfig, out: Path, tag: str,
             checkpoint_every: int, resume: bool, stop_after=None):
    metrics = out / f"metrics_{tag}.csv"
    ckpt = out / f"model_{tag}.bin"
    start = None
    lines = [",".join(CSV_HEADER)]
    if resume and ckpt.exists() and metrics.exists():
        params, seed, done = load_checkpoint(ckpt)
        if seed != fed.seed or params.arch != setup.init.arch:
            raise ConfigError(f"{ckpt} does not belong to this configuration")
        if done >= fed.rounds:
            log.info("%s already complete", tag)
            return
        read_metrics(metrics)  # schema check
        kept = metrics.read_text().splitlines()[1:]
        lines += [ln for ln in kept if int(ln.split(",", 1)[0]) <= done]
        start = (params, done)
        log.info("resuming %s after round %d", tag, done)

    def on_round(params, record):
        lines.append(_csv_line(record))
        if record.round % checkpoint_every == 0 or record.round == fed.rounds:
            text = "\n".join(lines) + "\n"
            _atomic_write(metrics, lambda p: p.write_text(text))
            _atomic_write(ckpt, lambda p: save_checkpoint(p, params, seed=fed.seed, round=record.round))

    run_training(part, source, fed, cluster_model=cluster_model, setup=setup, start=start,
                 stop_after=stop_after, on_round=on_round)
    if stop_after is None:
        # selections depend only on (seed, round, policy), so the full trace is rebuilt
        policy = build_policy(fed, part, cluster_model)
        rows = [(t, policy.name, select(policy, t, round_stream(fed.seed, t, policy.name)).indices)
                for t in range(1, fed.rounds + 1)]
        write_trace(out / f"selection_{tag}.csv", rows)


def cmd_train(cfg: ExperimentConfig, out_dir=None, partition_path=None, resume=False,
              stop_after=None):
    """Run every policy for every repeat; returns the list of metrics CSV paths.

    Repeat ``r`` uses seed ``cfg.seed + r``. Within a repeat all policies share
    the world, the point-to-sample binding and the initial model.
    """
    out = Path(out_dir or cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    fixed_part = None
    if partition_path is not None:
        try:
            fixed_part = load_partition(partition_path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"partition: {exc}") from exc
    # resolve everything that can fail on configuration before training starts
    sources = {r: load_source(cfg, cfg.seed + r) for r in range(cfg.repeats)}
    for p in cfg.policies:
        federation_config(cfg, p, cfg.seed)
    if fixed_part is not None and fixed_part.points.labels is None:
        raise ConfigError("partition file has no point labels")

    (out / "config.json").write_text(cfg.dumps())
    paths = []
    for r in range(cfg.repeats):
        seed = cfg.seed + r
        part = fixed_part or generate_partition(world_config(cfg, seed), cfg.labeling)
        source = sources[r]
        if source.num_classes < int(part.points.labels.max(initial=0)) + 1:
            raise ConfigError("dataset has fewer classes than the partition labels")
        shared = prepare(part, source, federation_config(cfg, cfg.policies[0], seed))
        clusters = None
        if "cluster" in cfg.policies:
            clusters = kmeans(part.ues.positions, cfg.clusters, rngs.stream(seed, rngs.CLUSTERING))
            clusters.save(out / f"clusters_rep{r}.json")
        for policy in cfg.policies:
            fed = federation_config(cfg, policy, seed)
            tag = f"{policy}_rep{r}"
            log.info("training %s (seed %d, %d rounds)", tag, seed, fed.rounds)
            _run_arm(part, source, shared, clusters, fed, out, tag,
                     cfg.federation.checkpoint_every, resume, stop_after)
            paths.append(out / f"metrics_{tag}.csv")
    return paths


def _final(rows, key):
    vals = [r[key] for r in rows if r[key] is not None]
    return vals[-1] if vals else math.nan


def compare(csv_paths):
    """Per-policy summary of metrics traces.

    Returns ``{policy: {...}}`` with final accuracy mean/std over traces,
    final loss, and accuracy variance over the last 10% of rounds.
    """
    traces = {}
    grid = None
    for path in csv_paths:
        try:
            rows = read_metrics(path)
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        if not rows:
            raise ConfigError(f"{path}: empty trace")
        rounds = [r["round"] for r in rows]
        if grid is None:
            grid = rounds
        elif rounds != grid:
            raise ConfigError(f"{path}: round grid does not match the other traces")
        policies = {r["policy"] for r in rows}
        if len(policies) != 1:
            raise ConfigError(f"{path}: mixes several policies")
        traces.setdefault(policies.pop(), []).append(rows)
    if len(traces) < 2:
        raise ConfigError("need two policies to compare")

    tail = max(1, math.ceil(0.1 * len(grid)))
    summary = {}
    for policy, runs in traces.items():
        finals = np.array([_final(rows, "test_accuracy") for rows in runs])
        losses = np.array([_final(rows, "train_loss") for rows in runs])
        stab = []
        for rows in runs:
            acc = [r["test_accuracy"] for r in rows[-tail:] if r["test_accuracy"] is not None]
            stab.append(float(np.var(acc)) if acc else math.nan)
        summary[policy] = {
            "repeats": len(runs),
            "final_accuracy_mean": float(finals.mean()),
            "final_accuracy_std": float(finals.std(ddof=1)) if len(finals) > 1 else 0.0,
            "final_loss_mean": float(losses.mean()),
            "tail_accuracy_variance": float(np.mean(stab)),
        }
    return summary


def format_comparison(summary):
    lines = [f"{'policy':<10} {'n':>3} {'final_acc':>20} {'final_loss':>11} {'tail_acc_var':>13}"]
    for policy, s in summary.items():
        acc = f"{100 * s['final_accuracy_mean']:.2f} +- {100 * s['final_accuracy_std']:.2f}"
        lines.append(f"{policy:<10} {s['repeats']:>3} {acc:>20} {s['final_loss_mean']:>11.4f} "
                     f"{s['tail_accuracy_variance']:>13.3e}")
    names = list(summary)
    a, b = ("cluster", "random") if {"cluster", "random"} <= set(names) else names[:2]
    gap = summary[a]["final_accuracy_mean"] - summary[b]["final_accuracy_mean"]
    lines.append(f"accuracy gap {a} - {b}: {100 * gap:+.2f} points")
    return "\n".join(lines) + "\n"
