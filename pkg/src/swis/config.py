"""Run configuration: a flat ``section.key = value`` text file.

Example::

    # comments and blank lines are ignored
    dataset.manifest = "data/hindi.csv"
    model.backbone = "resnet18"
    optimizer.lr = 0.1
    train.batch_size = 32

Strings may be quoted (JSON rules) or bare. Unknown keys and values that do
not convert to the declared type are rejected.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .encoder import BackboneConfig, ModelConfig
from .engine import OptimizerConfig, ScheduleConfig, epochs_for
from .errors import ConfigError
from .evaluate import EvalConfig
from .preprocess import AugmentConfig


@dataclass
class DatasetSection:
    manifest: str = ""
    root: str = ""
    dataset_id: str = "custom"
    n_ref: int = 8
    include_pretrain_forgeries: bool = True


@dataclass
class PreprocessSection:
    brightness_min: float = 0.6
    brightness_max: float = 1.4
    contrast_min: float = 0.6
    contrast_max: float = 1.4
    rotation_deg: float = 10.0
    translate_frac: float = 0.1
    shear_deg: float = 10.0
    crop_scale_min: float = 0.8
    crop_scale_max: float = 1.0


@dataclass
class ModelSection:
    backbone: str = "resnet18"
    in_channels: int = 1
    out_dim: int = 512
    projector_hidden: int = 512
    projector_out: int = 512


@dataclass
class ObjectiveSection:
    name: str = "swis"
    temperature: float = 0.5
    normalization: str = "batch"


@dataclass
class OptimizerSection:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-6
    trust_coefficient: float = 1e-3
    eps: float = 1e-8


@dataclass
class ScheduleSection:
    warmup_epochs: float = 10.0
    horizon_epochs: float = 1000.0


@dataclass
class TrainSection:
    batch_size: int = 32
    epochs: int = 0  # 0 picks 500 for ICDAR and 200 for BHSig260
    checkpoint_every: int = 50


@dataclass
class EvalSection:
    svm_c: float = 1.0
    svm_gamma: str = "scale"
    stage: str = "pooled"
    tsne_perplexity: float = 30.0
    tsne_iterations: int = 1000


@dataclass
class SeedsSection:
    data: int = 0
    augment: int = 1
    init: int = 2
    eval: int = 3


@dataclass
class RunSection:
    name: str = "swis"
    dir: str = "runs"


@dataclass
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    preprocess: PreprocessSection = field(default_factory=PreprocessSection)
    model: ModelSection = field(default_factory=ModelSection)
    objective: ObjectiveSection = field(default_factory=ObjectiveSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seeds: SeedsSection = field(default_factory=SeedsSection)
    run: RunSection = field(default_factory=RunSection)

    def validate(self) -> "RunConfig":
        choices = {
            ("model", "backbone"): ("resnet18", "tiny_cnn"),
            ("model", "in_channels"): (1, 3),
            ("objective", "name"): ("swis", "nt_xent"),
            ("objective", "normalization"): ("batch", "vector"),
            ("eval", "stage"): ("pooled", "projected"),
        }
        for (sec, key), allowed in choices.items():
            value = getattr(getattr(self, sec), key)
            if value not in allowed:
                raise ConfigError(f"{sec}.{key} = {value!r}: expected one of {allowed}")
        if not self.schedule.warmup_epochs < self.schedule.horizon_epochs:
            raise ConfigError("schedule.warmup_epochs must be smaller than schedule.horizon_epochs")
        if self.train.batch_size < 2:
            raise ConfigError("train.batch_size must be at least 2")
        return self

    # builders for the module-level config objects
    def augment_config(self) -> AugmentConfig:
        p = self.preprocess
        return AugmentConfig((p.brightness_min, p.brightness_max), (p.contrast_min, p.contrast_max),
                             p.rotation_deg, p.translate_frac, p.shear_deg,
                             (p.crop_scale_min, p.crop_scale_max))

    def model_config(self) -> ModelConfig:
        m = self.model
        return ModelConfig(BackboneConfig(m.backbone, m.in_channels, m.out_dim),
                           m.projector_hidden, m.projector_out)

    def optimizer_config(self) -> OptimizerConfig:
        o = self.optimizer
        return OptimizerConfig(o.momentum, o.weight_decay, o.trust_coefficient, o.eps)

    def train_epochs(self) -> int:
        return self.train.epochs or epochs_for(self.dataset.dataset_id)

    def schedule_config(self) -> ScheduleConfig:
        return ScheduleConfig(self.optimizer.lr, self.schedule.warmup_epochs,
                              self.schedule.horizon_epochs, self.train_epochs())

    def eval_config(self) -> EvalConfig:
        e = self.eval
        gamma: str | float = e.svm_gamma
        if gamma not in ("scale", "auto"):
            try:
                gamma = float(gamma)
            except ValueError:
                raise ConfigError(f"eval.svm_gamma = {gamma!r}: expected 'scale', 'auto' or a number") from None
        return EvalConfig(e.svm_c, gamma, e.stage, e.tsne_perplexity, e.tsne_iterations, self.seeds.eval)


def _sections(cfg: RunConfig):
    for f in dataclasses.fields(cfg):
        yield f.name, getattr(cfg, f.name)


def _convert(raw: str, typ: type, key: str):
    text = raw.strip()
    if text.startswith('"'):
        try:
            text, end = json.JSONDecoder().raw_decode(text)
        except json.JSONDecodeError:
            raise ConfigError(f"{key}: malformed quoted string {raw!r}") from None
        rest = raw.strip()[end:].strip()
        if rest and not rest.startswith("#"):
            raise ConfigError(f"{key}: trailing text after quoted string: {rest!r}")
        if typ is not str:
            raise ConfigError(f"{key}: expected {typ.__name__}, got a quoted string")
        return text
    if typ is bool:
        if text.lower() in ("true", "false"):
            return text.lower() == "true"
        raise ConfigError(f"{key}: expected bool (true/false), got {text!r}")
    if typ is int:
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key}: expected int, got {text!r}") from None
    if typ is float:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key}: expected float, got {text!r}") from None
    return text


def parse_config_text(text: str) -> RunConfig:
    cfg = RunConfig()
    seen = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {stripped!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if not raw.startswith('"') and " #" in raw:
            raw = raw.split(" #", 1)[0].strip()
        sec_name, _, name = key.partition(".")
        section = getattr(cfg, sec_name, None) if sec_name in cfg.__dataclass_fields__ else None
        if section is None or not name or name not in section.__dataclass_fields__:
            raise ConfigError(f"unknown key: {key} (line {lineno})")
        if key in seen:
            raise ConfigError(f"duplicate key: {key} (line {lineno})")
        seen.add(key)
        typ = typing.get_type_hints(type(section))[name]
        setattr(section, name, _convert(raw, typ, key))
    return cfg.validate()


def parse_config(path: str | Path) -> RunConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return json.dumps(value)
    return repr(value)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for sec_name, section in _sections(cfg):
        for f in dataclasses.fields(section):
            lines.append(f"{sec_name}.{f.name} = {_format(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"


def write_config(cfg: RunConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(cfg), encoding="utf-8")
    return path
