"""Toy speaker embeddings: statistics pooling over log-mel frames.

The embedding is ``normalize(P @ [mean - mean(mean), std - mean(std)])`` with
a fixed random projection ``P``. Centering each half drops overall level so
the vector describes spectral shape. Externally computed embeddings can be
loaded from a small binary file.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp
from .config import FrontendConfig, SpeakerConfig

_MAGIC = b"SPKE"


@dataclass
class SpeakerEmbedding:
    values: np.ndarray
    source: str = "toy"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0:
        raise ValueError("cannot normalize a zero or non-finite vector")
    return v / n


def cosine(a: SpeakerEmbedding | np.ndarray, b: SpeakerEmbedding | np.ndarray) -> float:
    a = a.values if isinstance(a, SpeakerEmbedding) else np.asarray(a)
    b = b.values if isinstance(b, SpeakerEmbedding) else np.asarray(b)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


class SpeakerEmbedder:
    def __init__(self, cfg: SpeakerConfig | None = None, frontend: FrontendConfig | None = None,
                 projection: np.ndarray | None = None):
        self.cfg = cfg = cfg or SpeakerConfig()
        self.frontend = frontend or FrontendConfig()
        if projection is None:
            rng = np.random.default_rng(cfg.seed)
            projection = rng.standard_normal((cfg.dim, 2 * cfg.n_mels)) / np.sqrt(2 * cfg.n_mels)
        if projection.shape != (cfg.dim, 2 * cfg.n_mels):
            raise ValueError(f"projection must be {(cfg.dim, 2 * cfg.n_mels)}, got {projection.shape}")
        self.projection = np.asarray(projection, dtype=np.float64)
        self.calls = 0

    def stats(self, mel: np.ndarray) -> np.ndarray:
        mu, sd = mel.mean(0), mel.std(0)
        return np.concatenate([mu - mu.mean(), sd - sd.mean()])

    def extract(self, audio: dsp.AudioChunk | np.ndarray) -> SpeakerEmbedding:
        if not isinstance(audio, dsp.AudioChunk):
            audio = dsp.AudioChunk(audio, self.frontend.sample_rate)
        if audio.duration < self.cfg.min_seconds:
            raise ValueError(f"need at least {self.cfg.min_seconds} s of audio, got {audio.duration:.3f} s")
        self.calls += 1
        mel = dsp.logmel(audio.samples, self.frontend)
        return SpeakerEmbedding(normalize(self.projection @ self.stats(mel)), "toy")


def extract_embedding(audio: dsp.AudioChunk | np.ndarray, embedder: SpeakerEmbedder | None = None) -> SpeakerEmbedding:
    return (embedder or SpeakerEmbedder()).extract(audio)


def save_embedding(path: str | Path, emb: SpeakerEmbedding | np.ndarray) -> None:
    """uint32 dim header, then float32 values."""
    v = emb.values if isinstance(emb, SpeakerEmbedding) else np.asarray(emb)
    v = np.asarray(v, dtype="<f4").reshape(-1)
    with open(path, "wb") as f:
        f.write(_MAGIC + struct.pack("<I", v.shape[0]) + v.tobytes())


def load_embedding(path: str | Path, dim: int | None = None) -> SpeakerEmbedding:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC or len(raw) < 8:
        raise ValueError(f"{path}: not an embedding file")
    (n,) = struct.unpack("<I", raw[4:8])
    if len(raw) != 8 + 4 * n:
        raise ValueError(f"{path}: payload has {(len(raw) - 8) // 4} values, header says {n}")
    if dim is not None and n != dim:
        raise ValueError(f"{path}: embedding dim {n} does not match configured dim {dim}")
    v = np.frombuffer(raw[8:], dtype="<f4").astype(np.float64)
    return SpeakerEmbedding(normalize(v), "external")
