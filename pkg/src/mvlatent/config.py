"""Experiment configuration: strict YAML schema, resolution and digests."""
from __future__ import annotations

import dataclasses
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .core import MVLatentError, digest
from .evaluation import ProbeConfig
from .losses import LossConfig, MaskSpec
from .synthdata import SynthSpec
from .train import BASELINES, TrainConfig

SCHEMA_VERSION = 1


class ConfigError(MVLatentError, ValueError):
    pass


@dataclass(frozen=True)
class DatasetSection:
    synthetic: dict | None = None
    manifest: str | None = None


@dataclass(frozen=True)
class SplitSection:
    ratios: tuple[float, float, float] = (39, 5, 12)
    train_pairs: int = 2000
    val_pairs: int = 300


@dataclass(frozen=True)
class ModelSection:
    hidden_sizes: tuple[int, ...] | None = None
    activation: str = "gelu"


@dataclass(frozen=True)
class TrainSection:
    method: str = "multiview"
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    seed: int | None = None


@dataclass(frozen=True)
class LossSection:
    use_rec: bool = True
    cos_mode: str = "none"
    cos_level: str = "sample"
    epsilon: float = 1e-7
    mask: dict | None = None


@dataclass(frozen=True)
class ProbeSection:
    hidden_width: int = 128
    epochs: int = 50
    learning_rate: float = 1e-3
    batch_size: int = 32
    weight_decay: float = 0.01


@dataclass(frozen=True)
class Variant:
    name: str
    loss: LossSection = field(default_factory=LossSection)


@dataclass(frozen=True)
class SuiteSection:
    variants: tuple[Variant, ...] = ()
    baselines: tuple[str, ...] = BASELINES


@dataclass(frozen=True)
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    out_dir: str | None = None
    dataset: DatasetSection = field(default_factory=lambda: DatasetSection(synthetic={}))
    split: SplitSection = field(default_factory=SplitSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    loss: LossSection = field(default_factory=LossSection)
    probe: ProbeSection = field(default_factory=ProbeSection)
    suite: SuiteSection = field(default_factory=SuiteSection)

    # -- resolved views ------------------------------------------------------

    def synth_spec(self) -> SynthSpec:
        spec = dict(self.dataset.synthetic or {})
        spec.setdefault("seed", self.seed)
        return SynthSpec(**spec)

    def loss_config(self, section: LossSection | None = None) -> LossConfig:
        s = section or self.loss
        mask = None
        if s.mask is not None:
            m = dict(s.mask)
            m.setdefault("seed", self.train_seed)
            mask = MaskSpec(**m)
        return LossConfig(s.use_rec, s.cos_mode, s.cos_level, mask, s.epsilon)

    def train_config(self, method: str | None = None, loss: LossSection | None = None,
                     seed: int | None = None) -> TrainConfig:
        t = self.train
        return TrainConfig(t.epochs, t.batch_size, t.learning_rate, t.weight_decay,
                           self.loss_config(loss), self.train_seed if seed is None else seed,
                           method or t.method)

    @property
    def train_seed(self) -> int:
        return self.seed if self.train.seed is None else self.train.seed

    def probe_config(self) -> ProbeConfig:
        p = self.probe
        return ProbeConfig(hidden_width=p.hidden_width, epochs=p.epochs,
                           learning_rate=p.learning_rate, batch_size=p.batch_size,
                           weight_decay=p.weight_decay, seed=self.seed)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=seed)

    def with_member(self, method: str, loss: LossSection | None = None,
                    train_seed: int | None = None) -> "ExperimentConfig":
        """Config for one suite member: same data and probes, own method/loss/init seed."""
        train = dataclasses.replace(self.train, method=method, seed=train_seed)
        return dataclasses.replace(self, train=train, loss=loss or self.loss,
                                   suite=SuiteSection())

    # -- serialisation -------------------------------------------------------

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def digest(self) -> str:
        return digest(self.to_dict())

    def model_digest(self) -> str:
        """Digest of everything that determines a trained checkpoint."""
        d = self.to_dict()
        return digest({k: d[k] for k in ("seed", "dataset", "split", "model", "train", "loss")})

    def validate(self) -> "ExperimentConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if (self.dataset.synthetic is None) == (self.dataset.manifest is None):
            raise ConfigError("dataset needs exactly one of 'synthetic' or 'manifest'")
        if len(self.split.ratios) != 3:
            raise ConfigError("split.ratios needs three entries")
        for b in self.suite.baselines:
            if b not in BASELINES:
                raise ConfigError(f"unknown baseline {b!r}")
        names = [v.name for v in self.suite.variants]
        if len(set(names)) != len(names) or set(names) & set(BASELINES):
            raise ConfigError("suite variant names must be unique and distinct from baselines")
        try:
            if self.dataset.synthetic is not None:
                self.synth_spec().validate()
            if self.train.method == "pretrained":
                self.loss_config()
            else:
                self.train_config()
            self.probe_config()
            for v in self.suite.variants:
                self.loss_config(v.loss)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return self


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _SECTIONS.get((cls, name))
        if sub is not None:
            if isinstance(sub, list):
                if not isinstance(value, list):
                    raise ConfigError(f"{where}.{name}: expected a list")
                value = tuple(_build(sub[0], v, f"{where}.{name}[{i}]") for i, v in enumerate(value))
            else:
                value = _build(sub, value, f"{where}.{name}")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


_SECTIONS = {
    (ExperimentConfig, "dataset"): DatasetSection,
    (ExperimentConfig, "split"): SplitSection,
    (ExperimentConfig, "model"): ModelSection,
    (ExperimentConfig, "train"): TrainSection,
    (ExperimentConfig, "loss"): LossSection,
    (ExperimentConfig, "probe"): ProbeSection,
    (ExperimentConfig, "suite"): SuiteSection,
    (SuiteSection, "variants"): [Variant],
    (Variant, "loss"): LossSection,
}


def from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "config").validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = from_dict(data or {})
    if cfg.dataset.manifest is not None and not Path(cfg.dataset.manifest).is_absolute():
        manifest = str((path.parent / cfg.dataset.manifest).resolve())
        cfg = dataclasses.replace(cfg, dataset=DatasetSection(manifest=manifest))
    return cfg
