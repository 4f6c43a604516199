"""Dataclass configs for every stage of the pipeline, plus INI loading.

The config file is a flat key/value INI file whose sections mirror module
names (``[frontend]``, ``[content_encoder]``, ...). Command-line flags are
applied on top; environment variables are never consulted.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

SAMPLE_RATE = 44100
HOP_LENGTH = 512
WINDOW_LENGTH = 2048
N_MELS = 160
DOWNSAMPLE = 4
FRAME_SAMPLES = HOP_LENGTH * DOWNSAMPLE  # 2048 samples per token / acoustic frame
FRAME_MS = FRAME_SAMPLES / SAMPLE_RATE * 1000.0  # 46.44 ms
MAX_DELAY = 8


class ConfigError(ValueError):
    """Raised for invalid or inconsistent configuration."""


@dataclass
class FrontendConfig:
    sample_rate: int = SAMPLE_RATE
    window_length: int = WINDOW_LENGTH
    hop_length: int = HOP_LENGTH
    n_mels: int = N_MELS
    fmin: float = 0.0
    fmax: float = SAMPLE_RATE / 2
    floor: float = 1e-5


@dataclass
class ContentEncoderConfig:
    n_mels: int = N_MELS
    dim: int = 64
    ffn_dim: int = 192
    n_heads: int = 2
    n_layers: int = 2
    conv_kernel: int = 7
    vocab_size: int = 64
    target_dim: int = 32
    beta: float = 0.25
    dead_code_steps: int = 200
    lr: float = 3e-3


@dataclass
class CodecConfig:
    frame_samples: int = FRAME_SAMPLES
    hidden_dim: int = 256
    latent_dim: int = 64
    n_codebooks: int = 8
    codebook_size: int = 1024
    beta: float = 0.25
    dead_code_steps: int = 200
    quantizer_warmup: int = 150
    lr: float = 2e-3


@dataclass
class SpeakerConfig:
    dim: int = 64
    n_mels: int = N_MELS
    seed: int = 1234
    min_seconds: float = 0.5


@dataclass
class ARVCConfig:
    content_vocab: int = 64
    n_codebooks: int = 8
    codebook_size: int = 1024
    speaker_dim: int = 64
    dim: int = 64
    ffn_dim: int = 192
    n_heads: int = 2
    slow_layers: int = 2
    fast_layers: int = 2
    delay_mode: str = "dynamic"
    delay: int = 2
    max_delay: int = MAX_DELAY
    lr: float = 3e-3
    lr_decay: float = 0.9995
    sampling: bool = False
    top_k: int = 16
    temperature: float = 0.8


@dataclass
class AnonymizerConfig:
    strategy: str = "cross-ds-4rnd"
    alpha: float = 0.9
    fixed_speaker: str = "p225"
    crop_seconds: float = 3.0
    max_total_seconds: float = 12.0


@dataclass
class StreamingConfig:
    chunk_ms: float = 46.0
    delay: int = 2
    seed: int = 0
    warmup_chunks: int = 3


@dataclass
class ModelConfig:
    """Everything needed to rebuild the network stack from a checkpoint."""

    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    content_encoder: ContentEncoderConfig = field(default_factory=ContentEncoderConfig)
    acoustic_codec: CodecConfig = field(default_factory=CodecConfig)
    speaker: SpeakerConfig = field(default_factory=SpeakerConfig)
    arvc: ARVCConfig = field(default_factory=ARVCConfig)

    def to_dict(self) -> dict[str, dict[str, Any]]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, dict[str, Any]]) -> "ModelConfig":
        kwargs = {}
        for f in dataclasses.fields(cls):
            sub = f.default_factory()  # type: ignore[misc]
            kwargs[f.name] = update_dataclass(sub, d.get(f.name, {}))
        return cls(**kwargs)

    def validate(self) -> None:
        ce, codec, arvc = self.content_encoder, self.acoustic_codec, self.arvc
        if self.frontend.sample_rate != SAMPLE_RATE:
            raise ConfigError(f"sample_rate must be {SAMPLE_RATE}")
        if self.frontend.hop_length * DOWNSAMPLE != codec.frame_samples:
            raise ConfigError("codec frame must span exactly 4 mel hops")
        if arvc.content_vocab != ce.vocab_size:
            raise ConfigError("arvc.content_vocab must equal content_encoder.vocab_size")
        if arvc.n_codebooks != codec.n_codebooks or arvc.codebook_size != codec.codebook_size:
            raise ConfigError("arvc codebook layout must match acoustic_codec")
        if arvc.speaker_dim != self.speaker.dim:
            raise ConfigError("arvc.speaker_dim must equal speaker.dim")


def _coerce(value: str, like: Any) -> Any:
    if isinstance(like, bool):
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def update_dataclass(obj: Any, values: dict[str, Any]) -> Any:
    """Return a copy of ``obj`` with ``values`` applied, coercing strings."""
    names = {f.name: f for f in dataclasses.fields(obj)}
    changes = {}
    for key, value in values.items():
        if key not in names:
            raise ConfigError(f"unknown key {key!r} for {type(obj).__name__}")
        current = getattr(obj, key)
        changes[key] = _coerce(value, current) if isinstance(value, str) else value
    return dataclasses.replace(obj, **changes)


def read_ini(path: str | Path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    return {s: dict(parser.items(s)) for s in parser.sections()}
