from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from tsae_tool.errors import ConfigError

logger = logging.getLogger(__name__)

DATA_DIR_ENV = "TSAE_DATA_DIR"

MODEL_KINDS = ("tae", "cae")
SCHEMES = ("none", "gan", "wgan")
OPTIMIZER_KINDS = ("adam", "rmsprop")
ACTIVATIONS = ("tanh", "sigmoid", "relu", "linear")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    rmsprop_decay: float = 0.99
    momentum: float = 0.0

    def validate(self) -> "OptimizerConfig":
        if self.kind not in OPTIMIZER_KINDS:
            raise ConfigError(f"must be one of {OPTIMIZER_KINDS}, got {self.kind!r}", "kind")
        if not self.learning_rate > 0:
            raise ConfigError("must be > 0", "learning_rate")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0 <= value < 1:
                raise ConfigError("must be in [0, 1)", name)
        if not 0 <= self.rmsprop_decay < 1:
            raise ConfigError("must be in [0, 1)", "rmsprop_decay")
        if self.epsilon <= 0:
            raise ConfigError("must be > 0", "epsilon")
        if self.momentum < 0:
            raise ConfigError("must be >= 0", "momentum")
        return self


@dataclass(frozen=True)
class TransformerConfig:
    v: int = 24
    slen: int = 52  # includes the SOS row
    d: int = 24
    m: int = 8
    enc_layers: int = 6
    dec_layers: int = 6
    ff_dim: int = 128
    k: int = 60
    sos_value: float = -3.0
    dropout: float = 0.0
    eos_value: float | None = None
    eos_tolerance: float = 1e-3

    @property
    def d_k(self) -> int:
        return self.d // self.m

    def validate(self) -> "TransformerConfig":
        for name in ("v", "slen", "d", "m", "enc_layers", "dec_layers", "ff_dim", "k"):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", name)
        if self.slen < 2:
            raise ConfigError("must hold the SOS row plus at least one step", "slen")
        if self.d % self.m:
            raise ConfigError(f"d={self.d} is not divisible by m={self.m}", "m")
        if not 0 <= self.dropout < 1:
            raise ConfigError("must be in [0, 1)", "dropout")
        if self.eos_tolerance <= 0:
            raise ConfigError("must be > 0", "eos_tolerance")
        if self.k >= self.slen * self.d:
            logger.warning(
                "Bottleneck k=%d does not compress slen*d=%d; the model will not act as an autoencoder.",
                self.k,
                self.slen * self.d,
            )
        return self


@dataclass(frozen=True)
class CaeConfig:
    slen: int = 51
    v: int = 24
    channel_schedule: tuple[int, ...] = (2, 4, 8, 16, 32, 64, 128, 256)
    kernel_sizes: tuple[int, ...] = (21, 18, 15, 13, 11, 8, 5, 3)
    k: int = 60
    aggregation_kernel: int = 1
    activation: str = "relu"

    @property
    def input_len(self) -> int:
        return self.slen * self.v

    @property
    def receptive_field(self) -> int:
        return 1 + sum(s - 1 for s in self.kernel_sizes) + (self.aggregation_kernel - 1)

    def validate(self) -> "CaeConfig":
        if len(self.channel_schedule) != len(self.kernel_sizes):
            raise ConfigError(
                f"{len(self.channel_schedule)} channels vs {len(self.kernel_sizes)} kernel sizes",
                "channel_schedule",
            )
        if not self.kernel_sizes:
            raise ConfigError("at least one convolution layer is required", "kernel_sizes")
        if any(b >= a for a, b in zip(self.kernel_sizes, self.kernel_sizes[1:])):
            raise ConfigError("must be strictly decreasing", "kernel_sizes")
        if any(c < 1 for c in self.channel_schedule) or any(s < 1 for s in self.kernel_sizes):
            raise ConfigError("channels and kernel sizes must be >= 1", "channel_schedule")
        for name in ("slen", "v", "k", "aggregation_kernel"):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", name)
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"must be one of {ACTIVATIONS}", "activation")
        return self


@dataclass(frozen=True)
class GanConfig:
    scheme: str = "none"
    epochs: int = 2000
    batch_size: int = 32
    ae_learning_rate: float | None = None  # 1e-4 for tae, 1e-3 for cae
    gan_learning_rate: float | None = None  # ae rate for gan, 5e-5 for wgan
    critic_steps: int | None = None  # 1 for gan, 5 for wgan
    clip_bound: float = 0.1
    seed: int = 0
    unroll_grad: bool = True

    def resolved(self, model_kind: str = "tae") -> "GanConfig":
        ae_lr = self.ae_learning_rate
        if ae_lr is None:
            ae_lr = 1e-3 if model_kind == "cae" else 1e-4
        gan_lr = self.gan_learning_rate
        if gan_lr is None:
            gan_lr = 5e-5 if self.scheme == "wgan" else ae_lr
        steps = self.critic_steps
        if steps is None:
            steps = 5 if self.scheme == "wgan" else 1
        return dataclasses.replace(
            self, ae_learning_rate=ae_lr, gan_learning_rate=gan_lr, critic_steps=steps
        )

    def ae_optimizer(self, model_kind: str = "tae") -> OptimizerConfig:
        return OptimizerConfig(kind="adam", learning_rate=self.resolved(model_kind).ae_learning_rate)

    def adversarial_optimizer(self, model_kind: str = "tae") -> OptimizerConfig:
        r = self.resolved(model_kind)
        if self.scheme == "wgan":
            return OptimizerConfig(kind="rmsprop", learning_rate=r.gan_learning_rate, momentum=0.0)
        return OptimizerConfig(kind="adam", learning_rate=r.gan_learning_rate)

    def validate(self) -> "GanConfig":
        if self.scheme not in SCHEMES:
            raise ConfigError(f"must be one of {SCHEMES}, got {self.scheme!r}", "scheme")
        if self.epochs < 0:
            raise ConfigError("must be >= 0", "epochs")
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", "batch_size")
        if self.critic_steps is not None and self.critic_steps < 1:
            raise ConfigError("must be >= 1", "critic_steps")
        if self.scheme == "wgan" and not self.clip_bound > 0:
            raise ConfigError("must be > 0 for the wgan scheme", "clip_bound")
        for name in ("ae_learning_rate", "gan_learning_rate"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ConfigError("must be > 0", name)
        return self


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    initial_momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch_iter: int = 250
    adaptive_gains: bool = True
    seed: int = 0

    def validate(self) -> "TsneConfig":
        if self.iterations < 250:
            raise ConfigError("must be >= 250", "iterations")
        if not self.perplexity > 0:
            raise ConfigError("must be > 0", "perplexity")
        if not self.learning_rate > 0:
            raise ConfigError("must be > 0", "learning_rate")
        if self.early_exaggeration < 1:
            raise ConfigError("must be >= 1", "early_exaggeration")
        return self


@dataclass(frozen=True)
class RunConfig:
    model: str = "tae"
    data_dir: str = ""
    out_dir: str = "runs"
    seed: int = 0
    deterministic: bool = True
    checkpoint_every: int = 0
    workers: int = 1
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    cae: CaeConfig = field(default_factory=CaeConfig)
    gan: GanConfig = field(default_factory=GanConfig)
    tsne: TsneConfig = field(default_factory=TsneConfig)

    @property
    def scheme(self) -> str:
        return self.gan.scheme

    @property
    def label(self) -> str:
        base = self.model.upper()
        return base if self.scheme == "none" else f"{base}-{self.scheme.upper()}"

    def validate(self, check_paths: bool = True) -> "RunConfig":
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"must be one of {MODEL_KINDS}, got {self.model!r}", "model")
        if self.checkpoint_every < 0:
            raise ConfigError("must be >= 0", "checkpoint_every")
        if self.workers < 1:
            raise ConfigError("must be >= 1", "workers")
        for section in ("transformer", "cae", "gan", "tsne"):
            try:
                getattr(self, section).validate()
            except ConfigError as e:
                raise ConfigError(str(e), section) from e
        if check_paths:
            if not self.data_dir:
                raise ConfigError(f"no dataset directory given (flag --data or ${DATA_DIR_ENV})", "data_dir")
            if not Path(self.data_dir).is_dir():
                raise ConfigError(f"dataset directory not found: {self.data_dir}", "data_dir")
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


_SECTIONS = {
    "transformer": TransformerConfig,
    "cae": CaeConfig,
    "gan": GanConfig,
    "tsne": TsneConfig,
}


def section_from_dict(cls: type, data: dict[str, Any], section: str = ""):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown keys {unknown}", section or cls.__name__)
    kwargs = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def run_config_from_dict(data: dict[str, Any]) -> RunConfig:
    data = dict(data)
    sections = {name: section_from_dict(cls, data.pop(name, {}) or {}, name) for name, cls in _SECTIONS.items()}
    base = section_from_dict(RunConfig, data)
    return dataclasses.replace(base, **sections)


def load_run_config(path: str) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}", "config")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON ({e})", "config") from e
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", "config")
    return run_config_from_dict(data)


def write_run_config(path: str, run: RunConfig) -> str:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(run.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return str(p)


def preset(name: str) -> RunConfig:
    if name == "natops":
        return RunConfig()
    if name == "smoke":
        return RunConfig(
            transformer=TransformerConfig(d=8, m=2, enc_layers=1, dec_layers=1, ff_dim=16, k=8),
            cae=CaeConfig(channel_schedule=(2, 4, 8), kernel_sizes=(5, 4, 3), k=8),
            gan=GanConfig(epochs=5),
        )
    raise ConfigError(f"unknown preset {name!r} (natops, smoke)", "preset")


def _parse_override_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(run: RunConfig, overrides: list[str]) -> RunConfig:
    """Applies `section.field=value` / `field=value` strings; values are parsed as JSON."""
    data = run.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}", "set")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        target = data
        for part in parts[:-1]:
            if part not in target or not isinstance(target[part], dict):
                raise ConfigError(f"unknown section {part!r}", key)
            target = target[part]
        if parts[-1] not in target:
            raise ConfigError("unknown key", key)
        target[parts[-1]] = _parse_override_value(raw)
    return run_config_from_dict(data)


def default_data_dir() -> str:
    return os.environ.get(DATA_DIR_ENV, "")
