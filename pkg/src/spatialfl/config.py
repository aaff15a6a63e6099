"""Experiment configuration: strict JSON in, the same JSON out.

Unknown keys are rejected everywhere so a typo in a sweep file fails before
any training starts.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from spatialfl.partition import WorldConfig


class ConfigError(ValueError):
    pass


def _strict(cls, doc, where):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class WorldSpec:
    side_length: float = 10.0
    sensing_radius: float = 2.0
    intensity: float = 500.0
    num_ues: int = 10000
    num_classes: int = 10
    edge_margin: str = "full"

    def __post_init__(self):
        WorldConfig(self.side_length, self.sensing_radius, self.intensity, self.num_ues,
                    self.num_classes, 0, self.edge_margin)


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "synthetic"
    # synthetic
    samples_per_class: int = 600
    test_per_class: int = 100
    dim: int = 32
    separation: float = 0.6
    sigma: float | None = None
    # fmnist
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    # cifar10
    train_batches: list | None = None
    test_batches: list | None = None

    def __post_init__(self):
        if self.kind not in ("synthetic", "fmnist", "cifar10"):
            raise ValueError(f"dataset kind must be synthetic, fmnist or cifar10, got {self.kind!r}")
        if self.kind == "fmnist" and not all(
                (self.train_images, self.train_labels, self.test_images, self.test_labels)):
            raise ValueError("fmnist needs train_images, train_labels, test_images, test_labels")
        if self.kind == "cifar10" and not (self.train_batches and self.test_batches):
            raise ValueError("cifar10 needs train_batches and test_batches")

    def to_dict(self):
        keep = {"kind"}
        if self.kind == "synthetic":
            keep |= {"samples_per_class", "test_per_class", "dim", "separation", "sigma"}
        elif self.kind == "fmnist":
            keep |= {"train_images", "train_labels", "test_images", "test_labels"}
        else:
            keep |= {"train_batches", "test_batches"}
        return {k: v for k, v in asdict(self).items() if k in keep}


@dataclass(frozen=True)
class FederationSpec:
    rounds: int = 500
    learning_rate: float = 0.001
    local_epochs: int = 1
    batch_size: int = 32
    eval_every: int = 1
    hidden_dim: int = 200
    precision: str = "float64"
    full_population_loss: bool = False
    record_wall_time: bool = True
    checkpoint_every: int = 50

    def __post_init__(self):
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldSpec = field(default_factory=WorldSpec)
    labeling: str = "region"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    clusters: int = 5
    federation: FederationSpec = field(default_factory=FederationSpec)
    policies: tuple = ("cluster", "random")
    repeats: int = 3
    seed: int = 0
    output_dir: str = "runs/experiment"

    def __post_init__(self):
        if self.labeling not in ("iid", "region"):
            raise ConfigError(f"labeling must be iid or region, got {self.labeling!r}")
        if not 1 <= self.clusters <= self.world.num_ues:
            raise ConfigError(f"clusters must be in [1, num_ues={self.world.num_ues}]")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        bad = [p for p in self.policies if p not in ("cluster", "random")]
        if bad or not self.policies or len(set(self.policies)) != len(self.policies):
            raise ConfigError(f"policies must be distinct entries of cluster/random, got {self.policies}")

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ConfigError("config: expected an object")
        unknown = sorted(set(doc) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError(f"config: unknown keys {unknown}")
        kw = dict(doc)
        if "world" in kw:
            kw["world"] = _strict(WorldSpec, kw["world"], "world")
        if "dataset" in kw:
            kw["dataset"] = _strict(DatasetSpec, kw["dataset"], "dataset")
        if "federation" in kw:
            kw["federation"] = _strict(FederationSpec, kw["federation"], "federation")
        if "policies" in kw:
            kw["policies"] = tuple(kw["policies"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self):
        return {
            "world": asdict(self.world),
            "labeling": self.labeling,
            "dataset": self.dataset.to_dict(),
            "clusters": self.clusters,
            "federation": asdict(self.federation),
            "policies": list(self.policies),
            "repeats": self.repeats,
            "seed": self.seed,
            "output_dir": self.output_dir,
        }

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(doc)
