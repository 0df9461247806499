"""Run configuration: loading, defaulting and validation.

Configs are YAML (or JSON, which YAML parses too). Every field has a
default; a minimal config only needs a ``dataset`` and a ``cohort``.

Example::

    strategy: competitive
    cohort:
      - {kind: mlp, hidden: [64]}
      - {kind: mlp, hidden: [256]}
    dataset: {kind: blobs, n_samples: 3000, n_classes: 4, input_dim: 16, spread: 0.5}
    epochs: 30
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Optional

import yaml

from .errors import ConfigError
from .losses import LossWeights
from .nn import ArchSpec, OptimConfig
from .perturb import PerturbConfig

STRATEGIES = ("competitive", "dml", "independent")
OUTPUT_DIR_ENV = "COMPDISTILL_OUTPUT_DIR"


@dataclass(frozen=True)
class Seeds:
    init: int = 0
    shuffle: int = 0
    perturb: int = 0


@dataclass(frozen=True)
class StrategySpec:
    """One entry of a comparison run."""

    strategy: str
    use_feature_loss: bool = True
    use_perturbation: bool = True
    name: Optional[str] = None

    @property
    def label(self) -> str:
        return self.name or self.strategy


@dataclass(frozen=True)
class RunConfig:
    cohort: tuple = ()
    dataset: dict = field(default_factory=lambda: {"kind": "blobs"})
    strategy: str = "competitive"
    use_feature_loss: bool = True
    use_perturbation: bool = True
    optimizer: OptimConfig = OptimConfig()
    weights: LossWeights = LossWeights()
    perturbation: PerturbConfig = PerturbConfig()
    temperature: float = 1.0
    epochs: int = 10
    batch_size: int = 128
    seeds: Seeds = Seeds()
    output_dir: Optional[str] = None
    save_checkpoint: bool = True
    strategies: tuple = ()  # used by ``compare``

    def __post_init__(self):
        object.__setattr__(self, "cohort", tuple(self.cohort))
        object.__setattr__(self, "strategies", tuple(self.strategies))
        self.validate()

    def validate(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        n = len(self.cohort)
        minimum = 1 if self.strategy == "independent" and not self.use_perturbation else 2
        if n < minimum:
            raise ConfigError(f"strategy {self.strategy!r} needs at least {minimum} networks, got {n}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")
        for s in self.strategies:
            if s.strategy not in STRATEGIES:
                raise ConfigError(f"unknown strategy {s.strategy!r} in strategies")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def for_strategy(self, spec: StrategySpec) -> "RunConfig":
        return self.replace(strategy=spec.strategy, use_feature_loss=spec.use_feature_loss,
                            use_perturbation=spec.use_perturbation)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["cohort"] = [a.to_dict() if isinstance(a, ArchSpec) else dict(a) for a in self.cohort]
        return d


def _arch_entry(entry):
    if isinstance(entry, ArchSpec):
        return entry
    if not isinstance(entry, dict):
        raise ConfigError(f"cohort entries must be mappings, got {entry!r}")
    return dict(entry)


def _strategy_entry(entry, defaults) -> StrategySpec:
    if isinstance(entry, StrategySpec):
        return entry
    if isinstance(entry, str):
        return StrategySpec(entry, defaults["use_feature_loss"], defaults["use_perturbation"])
    if isinstance(entry, dict):
        merged = {k: defaults[k] for k in ("use_feature_loss", "use_perturbation")} | entry
        try:
            return StrategySpec(**merged)
        except TypeError as exc:
            raise ConfigError(f"bad strategies entry {entry!r}: {exc}") from exc
    raise ConfigError(f"bad strategies entry {entry!r}")


def _sub(cls, raw, what):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{what} must be a mapping")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"invalid {what} section: {exc}") from exc


def config_from_dict(raw: dict, base_dir: str = ".") -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    raw = dict(raw)
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "dataset" not in raw or "cohort" not in raw:
        raise ConfigError("config needs both 'dataset' and 'cohort'")
    dataset = dict(raw["dataset"])
    for key in ("train_images", "train_labels", "test_images", "test_labels"):
        if key in dataset:
            dataset[key] = os.path.join(base_dir, dataset[key])
    for key in ("train", "test"):
        if key in dataset:
            paths = dataset[key] if isinstance(dataset[key], list) else [dataset[key]]
            dataset[key] = [os.path.join(base_dir, p) for p in paths]
    opt = dict(raw.get("optimizer") or {})
    if "lr_schedule" in opt:
        opt["lr_schedule"] = tuple(tuple(p) for p in opt["lr_schedule"])
    defaults = {
        "use_feature_loss": raw.get("use_feature_loss", True),
        "use_perturbation": raw.get("use_perturbation", True),
    }
    pert = dict(raw.get("perturbation") or {})
    for key in ("crop_scale", "mix_lambda", "noise_sigma"):
        if key in pert:
            pert[key] = tuple(pert[key])
    out_dir = os.environ.get(OUTPUT_DIR_ENV) or raw.get("output_dir")
    kwargs = {k: v for k, v in raw.items() if k in ("strategy", "use_feature_loss", "use_perturbation",
                                                     "temperature", "epochs", "batch_size", "save_checkpoint")}
    return RunConfig(
        cohort=tuple(_arch_entry(e) for e in raw["cohort"]),
        dataset=dataset,
        optimizer=_sub(OptimConfig, opt, "optimizer"),
        weights=_sub(LossWeights, raw.get("weights"), "weights"),
        perturbation=_sub(PerturbConfig, pert, "perturbation"),
        seeds=_sub(Seeds, raw.get("seeds"), "seeds"),
        output_dir=None if out_dir is None else os.path.join(base_dir, out_dir),
        strategies=tuple(_strategy_entry(e, defaults) for e in raw.get("strategies") or ()),
        **kwargs,
    )


def load_config(path) -> RunConfig:
    """Parse and validate a config file; referenced data files must exist."""
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    cfg = config_from_dict(raw, base_dir=os.path.dirname(os.path.abspath(path)))
    check_paths(cfg)
    return cfg


def check_paths(cfg: RunConfig):
    ds = cfg.dataset
    paths = [ds[k] for k in ("train_images", "train_labels", "test_images", "test_labels") if k in ds]
    for key in ("train", "test"):
        paths.extend(ds.get(key, []))
    missing = [p for p in paths if not os.path.exists(p)]
    if missing:
        raise ConfigError(f"dataset files not found: {missing}")


def load_datasets(spec: dict):
    """Build ``(train, test)`` datasets from a config ``dataset`` section."""
    from . import data

    kind = spec.get("kind", "blobs")
    if kind == "blobs":
        args = {"n_samples": 3000, "n_classes": 4, "input_dim": 16, "spread": 0.5, "seed": 0,
                "label_noise": 0.0}
        extra = set(spec) - set(args) - {"kind"}
        if extra:
            raise ConfigError(f"unknown blobs options {sorted(extra)}")
        args.update({k: v for k, v in spec.items() if k != "kind"})
        return data.make_blobs(**args)
    if kind == "idx":
        try:
            k = spec.get("num_classes", 10)
            train = data.load_idx(spec["train_images"], spec["train_labels"], k, limit=spec.get("limit"))
            test = data.load_idx(spec["test_images"], spec["test_labels"], k, stats=train.stats,
                                 split="test", limit=spec.get("test_limit"))
        except KeyError as exc:
            raise ConfigError(f"idx dataset needs {exc}") from exc
        return train, test
    if kind == "cifar":
        if "train" not in spec or "test" not in spec:
            raise ConfigError("cifar dataset needs 'train' and 'test' file lists")
        train = data.load_cifar_bin(spec["train"], limit=spec.get("limit"))
        test = data.load_cifar_bin(spec["test"], stats=train.stats, split="test", limit=spec.get("test_limit"))
        return train, test
    raise ConfigError(f"unknown dataset kind {kind!r}")


def resolve_archs(cfg: RunConfig, train) -> list:
    """Turn cohort entries into ``ArchSpec`` objects, filling input shape and class count from data."""
    archs = []
    for entry in cfg.cohort:
        if isinstance(entry, ArchSpec):
            arch = entry
        else:
            e = dict(entry)
            kind = e.get("kind", "mlp")
            e.setdefault("input_shape", train.inputs.shape[1:] if kind == "smallcnn"
                         else (int(train.inputs[0].size),))
            e.setdefault("num_classes", train.num_classes)
            arch = ArchSpec.from_dict(e)
        if arch.num_classes != train.num_classes:
            raise ConfigError(f"arch has {arch.num_classes} classes but dataset has {train.num_classes}")
        if arch.input_size != train.inputs[0].size:
            raise ConfigError(f"arch input {arch.input_shape} does not fit samples of shape {train.inputs.shape[1:]}")
        archs.append(arch)
    return archs
