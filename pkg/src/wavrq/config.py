"""Layered run configuration.

Precedence is defaults <- config file <- command-line overrides. Unknown
keys are rejected by name, invariants are checked with the offending key
in the message, and the fully resolved config has one canonical JSON
form whose sha256 identifies the run. That echo is embedded in every
checkpoint and report and reconstructs the config losslessly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .audio import DEFAULT_TARGET_LEN, MixConfig
from .encoder import EncoderConfig
from .features import ConvFeaturizerConfig, LogMelConfig
from .masking import MaskParams

try:
    import tomllib  # py >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


@dataclass
class AudioConfig:
    target_len: int = DEFAULT_TARGET_LEN

    def validate(self):
        if self.target_len <= 0:
            raise ValueError(f"audio.target_len: must be positive, got {self.target_len}")


@dataclass
class QuantizerConfig:
    code_dim: int = 16
    vocab: int = 8192
    normalize: bool = True
    standardize: bool = True
    seed: int = 0

    def validate(self):
        if self.code_dim <= 0 or self.vocab <= 0:
            raise ValueError("quantizer.code_dim/vocab: must be positive")


@dataclass
class TrainConfig:
    warmup_steps: int = 32000
    total_steps: int = 400000
    peak_lr: float = 5e-4
    batch_size: int = 25
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-6
    grad_clip_norm: float = 1.0
    decay: str = "linear"  # "linear" to zero | "constant" after warmup
    checkpoint_every: int = 1000
    log_every: int = 100
    seed: int = 0

    def validate(self):
        if self.warmup_steps > self.total_steps:
            raise ValueError(
                f"train.warmup_steps: {self.warmup_steps} exceeds total_steps {self.total_steps}")
        if self.peak_lr <= 0:
            raise ValueError(f"train.peak_lr: must be > 0, got {self.peak_lr}")
        if self.batch_size <= 0:
            raise ValueError(f"train.batch_size: must be positive, got {self.batch_size}")
        if self.decay not in ("linear", "constant"):
            raise ValueError(f"train.decay: unknown mode {self.decay!r}")
        if self.checkpoint_every <= 0 or self.log_every <= 0:
            raise ValueError("train.checkpoint_every/log_every: must be positive")


@dataclass
class ProbeConfig:
    num_classes: int = 4
    pooling: str = "mean"  # mean over valid frames | "none"
    lr: float = 0.05
    steps: int = 400
    test_fraction: float = 0.25
    seed: int = 0

    def validate(self):
        if self.num_classes < 2:
            raise ValueError(f"probe.num_classes: need >= 2, got {self.num_classes}")
        if self.pooling not in ("mean", "none"):
            raise ValueError(f"probe.pooling: unknown mode {self.pooling!r}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("probe.test_fraction: must be in (0, 1)")


@dataclass
class PathsConfig:
    corpus_manifest: str = "data/manifest.txt"
    out_dir: str = "runs/default"

    def validate(self):
        pass


@dataclass
class RunConfig:
    featurizer: str = "conv"  # "conv" | "logmel"
    dtype: str = "float32"
    audio: AudioConfig = field(default_factory=AudioConfig)
    mix: MixConfig = field(default_factory=MixConfig)
    conv: ConvFeaturizerConfig = field(default_factory=ConvFeaturizerConfig)
    logmel: LogMelConfig = field(default_factory=LogMelConfig)
    quantizer: QuantizerConfig = field(default_factory=QuantizerConfig)
    mask: MaskParams = field(default_factory=MaskParams)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def feature_dim(self) -> int:
        return self.conv.output_dim if self.featurizer == "conv" else self.logmel.n_mels

    def validate(self):
        if self.featurizer not in ("conv", "logmel"):
            raise ValueError(f"featurizer: unknown choice {self.featurizer!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype: unknown choice {self.dtype!r}")
        for name in ("audio", "mix", "conv", "logmel", "quantizer", "mask",
                     "encoder", "train", "probe", "paths"):
            getattr(self, name).validate()
        if self.encoder.input_dim != self.feature_dim():
            raise ValueError(
                f"encoder.input_dim: {self.encoder.input_dim} does not match the "
                f"{self.featurizer} featurizer output dim {self.feature_dim()}")
        if self.encoder.vocab != self.quantizer.vocab:
            raise ValueError(
                f"encoder.vocab: {self.encoder.vocab} does not match quantizer.vocab "
                f"{self.quantizer.vocab}")
        return self


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def config_to_dict(cfg: RunConfig) -> dict:
    return _to_plain(cfg)


def canonical_json(cfg: RunConfig) -> str:
    return json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:12]


def _coerce(value, f: dataclasses.Field, keypath: str):
    name = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if name == "int":
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ValueError(f"{keypath}: expected an integer, got {value!r}")
        return int(value)
    if name == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"{keypath}: expected a number, got {value!r}")
        return float(value)
    if name == "bool":
        if not isinstance(value, bool):
            raise ValueError(f"{keypath}: expected a boolean, got {value!r}")
        return value
    if name == "str":
        if not isinstance(value, str):
            raise ValueError(f"{keypath}: expected a string, got {value!r}")
        return value
    if name == "tuple":
        if not isinstance(value, (list, tuple)):
            raise ValueError(f"{keypath}: expected a list, got {value!r}")
        return tuple(tuple(v) if isinstance(v, (list, tuple)) else v for v in value)
    return value


def _build_section(cls, data: dict, section: str):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{section}.{key}" if section else key
        if key not in known:
            raise ValueError(f"unknown config key: {path}")
        kwargs[key] = _coerce(value, known[key], path)
    return cls(**kwargs)


_SECTIONS = {
    "audio": AudioConfig,
    "mix": MixConfig,
    "conv": ConvFeaturizerConfig,
    "logmel": LogMelConfig,
    "quantizer": QuantizerConfig,
    "mask": MaskParams,
    "encoder": EncoderConfig,
    "train": TrainConfig,
    "probe": ProbeConfig,
    "paths": PathsConfig,
}


def config_from_dict(data: dict) -> RunConfig:
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ValueError(f"{key}: expected a table/object")
            kwargs[key] = _build_section(_SECTIONS[key], value, key)
        elif key in ("featurizer", "dtype"):
            if not isinstance(value, str):
                raise ValueError(f"{key}: expected a string, got {value!r}")
            kwargs[key] = value
        else:
            raise ValueError(f"unknown config key: {key}")
    return RunConfig(**kwargs).validate()


def _parse_override(item: str) -> tuple:
    if "=" not in item:
        raise ValueError(f"override {item!r}: expected dotted.key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _set_dotted(tree: dict, dotted: str, value):
    parts = dotted.split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ValueError(f"override {dotted!r}: {p} is not a section")
    node[parts[-1]] = value


def load_config(path=None, overrides=()) -> RunConfig:
    """Resolve defaults <- file <- overrides into a validated RunConfig."""
    tree: dict = {}
    if path is not None:
        path = Path(path)
        text = path.read_text()
        if path.suffix == ".json":
            tree = json.loads(text) if text.strip() else {}
        elif path.suffix == ".toml":
            tree = tomllib.loads(text)
        else:
            raise ValueError(f"{path}: unsupported config format (use .toml or .json)")
        if not isinstance(tree, dict):
            raise ValueError(f"{path}: config root must be a table/object")
    for item in overrides:
        key, value = _parse_override(item)
        _set_dotted(tree, key, value)
    return config_from_dict(tree)
