"""Causal log-mel frontend and WAV I/O.

Frames are aligned to their right edge: frame ``j`` covers the samples
``[(j + 1) * hop - window, (j + 1) * hop)`` with zeros before the stream
start, so a frame never looks past the last sample it was emitted for.
Each frame is processed on its own, which keeps the streaming and offline
paths bitwise identical regardless of how the input is chunked.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .config import ConfigError, FrontendConfig


@dataclass
class AudioChunk:
    samples: np.ndarray
    sample_rate: int = 44100

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class FrontendState:
    """Carry-over between chunks.

    ``history`` holds the last ``window - hop`` samples already consumed into
    frames, ``pending`` the samples that have not yet completed a hop.
    """

    history: np.ndarray
    pending: np.ndarray = field(default_factory=lambda: np.zeros(0))
    frames_emitted: int = 0

    @classmethod
    def fresh(cls, cfg: FrontendConfig | None = None) -> "FrontendState":
        cfg = cfg or FrontendConfig()
        return cls(history=np.zeros(cfg.window_length - cfg.hop_length))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(cfg: FrontendConfig) -> np.ndarray:
    """``n_mels + 2`` band edges in Hz; filter k peaks at edge k + 1."""
    mels = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    return mel_to_hz(mels)


def mel_centers(cfg: FrontendConfig | None = None) -> np.ndarray:
    cfg = cfg or FrontendConfig()
    return mel_band_edges(cfg)[1:-1]


@lru_cache(maxsize=8)
def _filterbank(sample_rate, window_length, n_mels, fmin, fmax) -> np.ndarray:
    cfg = FrontendConfig(sample_rate=sample_rate, window_length=window_length,
                         n_mels=n_mels, fmin=fmin, fmax=fmax)
    edges = mel_band_edges(cfg)
    freqs = np.fft.rfftfreq(window_length, 1.0 / sample_rate)
    fb = np.zeros((n_mels, freqs.shape[0]))
    for k in range(n_mels):
        lo, mid, hi = edges[k], edges[k + 1], edges[k + 2]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        fb[k] = np.maximum(0.0, np.minimum(up, down)) * (2.0 / (hi - lo))
    fb.setflags(write=False)
    return fb


def mel_filterbank(cfg: FrontendConfig | None = None) -> np.ndarray:
    """Triangular, area-normalized filters of shape ``(n_mels, window // 2 + 1)``."""
    cfg = cfg or FrontendConfig()
    return _filterbank(cfg.sample_rate, cfg.window_length, cfg.n_mels, cfg.fmin, cfg.fmax)


@lru_cache(maxsize=8)
def _hann(n: int) -> np.ndarray:
    w = np.hanning(n + 1)[:-1]  # periodic Hann
    w.setflags(write=False)
    return w


def frame_stream(chunk: AudioChunk, state: FrontendState,
                 cfg: FrontendConfig | None = None) -> tuple[np.ndarray, FrontendState]:
    """Cut a chunk into complete analysis windows.

    Returns an array of shape ``(n_frames, window)`` and the updated state.
    """
    cfg = cfg or FrontendConfig()
    if chunk.sample_rate != cfg.sample_rate:
        raise ConfigError(f"expected {cfg.sample_rate} Hz audio, got {chunk.sample_rate} Hz")
    if len(chunk) == 0:
        raise ValueError("empty audio chunk")
    hop, keep = cfg.hop_length, cfg.window_length - cfg.hop_length
    buf = np.concatenate([state.history, state.pending, chunk.samples])
    n = (buf.shape[0] - keep) // hop
    frames = np.empty((n, cfg.window_length))
    for j in range(n):
        frames[j] = buf[j * hop: j * hop + cfg.window_length]
    consumed = n * hop
    new_state = FrontendState(
        history=buf[consumed: consumed + keep].copy(),
        pending=buf[consumed + keep:].copy(),
        frames_emitted=state.frames_emitted + n,
    )
    return frames, new_state


def logmel_frame(frame: np.ndarray, cfg: FrontendConfig | None = None) -> np.ndarray:
    """Natural-log mel energies of one window, floored at ``cfg.floor``."""
    cfg = cfg or FrontendConfig()
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (cfg.window_length,):
        raise ValueError(f"frame must have {cfg.window_length} samples, got {frame.shape}")
    spec = np.fft.rfft(frame * _hann(cfg.window_length))
    power = spec.real ** 2 + spec.imag ** 2
    energy = mel_filterbank(cfg) @ power
    return np.log(np.maximum(energy, cfg.floor))


def logmel_frames(frames: np.ndarray, cfg: FrontendConfig | None = None) -> np.ndarray:
    out = np.empty((len(frames), (cfg or FrontendConfig()).n_mels))
    for j, fr in enumerate(frames):
        out[j] = logmel_frame(fr, cfg)
    return out


def logmel(samples: np.ndarray, cfg: FrontendConfig | None = None) -> np.ndarray:
    """Offline log-mel of a whole signal (same frames as any chunked run)."""
    cfg = cfg or FrontendConfig()
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    if samples.size == 0:
        return np.zeros((0, cfg.n_mels))
    frames, _ = frame_stream(AudioChunk(samples, cfg.sample_rate), FrontendState.fresh(cfg), cfg)
    return logmel_frames(frames, cfg)


class StreamingFrontend:
    """Stateful wrapper: feed chunks, get log-mel frames."""

    def __init__(self, cfg: FrontendConfig | None = None):
        self.cfg = cfg or FrontendConfig()
        self.state = FrontendState.fresh(self.cfg)

    def __call__(self, chunk: AudioChunk) -> np.ndarray:
        frames, self.state = frame_stream(chunk, self.state, self.cfg)
        return logmel_frames(frames, self.cfg)


def read_wav(path: str | Path) -> AudioChunk:
    """Read a mono WAV (16-bit PCM or 32-bit float) into [-1, 1] floats."""
    sr, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    return AudioChunk(samples, int(sr))


def write_wav(path: str | Path, audio: AudioChunk, pcm16: bool = True) -> None:
    x = np.clip(audio.samples, -1.0, 1.0)
    if pcm16:
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = x.astype(np.float32)
    wavfile.write(str(path), audio.sample_rate, data)


def wav_duration(path: str | Path) -> float:
    return read_wav(path).duration
