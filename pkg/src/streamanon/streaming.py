"""Chunked streaming runtime plus the latency/RTF model.

Per chunk: content encoder (causal, stateful) -> ARVC generation step per
token -> codec decode of every emitted frame. End of stream flushes the
last ``d`` frames and zero-pads the output to the input length.

Latency model: ``chunk_ms + d * frame_ms + inference_ms`` (audio has to
accumulate for a chunk, the converter looks ``d`` frames ahead, then the
chunk is processed). RTF is per-chunk compute time over chunk duration.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

from .anonymizer import AnonContext
from .checkpoint import Models
from .config import FRAME_MS, FRAME_SAMPLES, MAX_DELAY, SAMPLE_RATE, ConfigError
from .dsp import AudioChunk


def chunk_frames(chunk_ms: float, frame_ms: float = FRAME_MS) -> int:
    """Number of codec frames in a chunk; the chunk must be a whole number of
    frames up to 1 ms of rounding per frame (46, 92, 276 ms all qualify)."""
    if not chunk_ms > 0:
        raise ConfigError(f"chunk_ms must be positive, got {chunk_ms}")
    k = max(1, round(chunk_ms / frame_ms))
    if abs(chunk_ms / k - frame_ms) > 1.0:
        raise ConfigError(f"chunk_ms={chunk_ms} is not a multiple of the {frame_ms:.2f} ms frame")
    return k


@dataclass
class SessionConfig:
    chunk_ms: float = 46.0
    delay: int = 2
    strategy: str = "cross-ds-4rnd"
    alpha: float = 0.9
    seed: int = 0
    sampling: bool = False
    warmup_chunks: int = 3

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        chunk_frames(self.chunk_ms)
        if not 1 <= self.delay <= MAX_DELAY:
            raise ConfigError(f"delay must be in [1, {MAX_DELAY}], got {self.delay}")

    @property
    def frames_per_chunk(self) -> int:
        return chunk_frames(self.chunk_ms)

    @property
    def chunk_samples(self) -> int:
        return self.frames_per_chunk * FRAME_SAMPLES


@dataclass
class SessionMetrics:
    chunk_ms: float
    delay: int
    warmup_chunks: int = 3
    inference_ms: list[float] = field(default_factory=list)
    frames_in: int = 0
    frames_out: int = 0
    samples_in: int = 0
    samples_out: int = 0

    def _steady(self) -> list[float]:
        tail = self.inference_ms[self.warmup_chunks:]
        return tail if tail else self.inference_ms

    @property
    def mean_inference_ms(self) -> float:
        s = self._steady()
        return float(np.mean(s)) if s else 0.0

    @property
    def p95_inference_ms(self) -> float:
        s = self._steady()
        return float(np.percentile(s, 95)) if s else 0.0

    @property
    def rtf(self) -> float:
        return measure_rtf(self.mean_inference_ms, self.chunk_ms)

    @property
    def predicted_latency_ms(self) -> float:
        return predict_latency(self.chunk_ms, self.delay, FRAME_MS, self.mean_inference_ms)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(frame_ms=FRAME_MS, chunks=len(self.inference_ms), mean_inference_ms=self.mean_inference_ms,
                 p95_inference_ms=self.p95_inference_ms, rtf=self.rtf, predicted_latency_ms=self.predicted_latency_ms)
        return d


def predict_latency(chunk_ms: float, d: int, frame_ms: float, inference_ms: float) -> float:
    return chunk_ms + d * frame_ms + inference_ms


def measure_rtf(inference_ms: float, chunk_ms: float) -> float:
    if not chunk_ms > 0:
        raise ValueError("chunk_ms must be positive")
    return inference_ms / chunk_ms


def split_chunks(audio: np.ndarray, chunk_samples: int, sr: int = SAMPLE_RATE) -> Iterator[AudioChunk]:
    audio = np.asarray(audio, dtype=np.float64)
    for i in range(0, len(audio), chunk_samples):
        yield AudioChunk(audio[i:i + chunk_samples], sr)


class StreamSession:
    """One anonymization stream. Models are shared and read-only."""

    def __init__(self, models: Models, context: AnonContext, delay: int, sampling: bool = False, seed: int = 0):
        cfg = models.config
        if context.g_anon.dim != cfg.arvc.speaker_dim:
            raise ConfigError(f"context embedding dim {context.g_anon.dim} != model speaker dim {cfg.arvc.speaker_dim}")
        if context.prompt_acoustic and len(context.prompt_acoustic[0]) != cfg.arvc.n_codebooks:
            raise ConfigError("context prompt frames do not match the codec codebook count")
        self.models = models
        self.enc_state = models.content_encoder.init_state()
        self.codec_state = models.codec.init_state()
        self.gen = models.arvc.start_session(context.g_anon.values, delay, context.prompt_content,
                                             context.prompt_acoustic, sampling=sampling, seed=seed)
        self.samples_in = 0
        self.samples_out = 0
        self.frames_in = 0
        self.frames_out = 0
        self.tokens: list[int] = []
        self.frames: list[tuple] = []

    def _decode(self, frames: list[tuple]) -> np.ndarray:
        audio, self.codec_state = self.models.codec.decode_frames(frames, self.codec_state)
        self.frames += frames
        self.frames_out += len(frames)
        self.samples_out += len(audio.samples)
        return audio.samples

    def process(self, chunk: AudioChunk) -> AudioChunk:
        if len(chunk) == 0:
            return AudioChunk(np.zeros(0), chunk.sample_rate)
        self.samples_in += len(chunk)
        tokens, self.enc_state = self.models.content_encoder.encode_chunk(chunk, self.enc_state)
        self.tokens += tokens
        self.frames_in += len(tokens)
        frames = [f for f in (self.gen.step(c) for c in tokens) if f is not None]
        return AudioChunk(self._decode(frames), chunk.sample_rate)

    def finish(self) -> AudioChunk:
        """Flush the last ``d`` frames, then zero-pad to the input length."""
        tail = self._decode(self.gen.flush())
        pad = np.zeros(max(0, self.samples_in - self.samples_out))
        self.samples_out += len(pad)
        return AudioChunk(np.concatenate([tail, pad]))


def run_session(source: Iterable[AudioChunk], config: SessionConfig, context: AnonContext, models: Models,
                clock: Callable[[], float] = time.perf_counter,
                cost_model: Callable[[AudioChunk], float] | None = None) -> tuple[list[AudioChunk], SessionMetrics]:
    """Stream ``source`` through the pipeline.

    ``clock`` is a monotonic clock in seconds; ``cost_model`` (if given)
    replaces the measured per-chunk time with a deterministic one in ms.
    """
    session = StreamSession(models, context, config.delay, config.sampling, config.seed)
    metrics = SessionMetrics(config.chunk_ms, config.delay, config.warmup_chunks)
    out = []
    for chunk in source:
        t0 = clock()
        out.append(session.process(chunk))
        elapsed = (clock() - t0) * 1000.0
        metrics.inference_ms.append(cost_model(chunk) if cost_model else elapsed)
    if session.samples_in:
        out.append(session.finish())
    metrics.frames_in, metrics.frames_out = session.frames_in, session.frames_out
    metrics.samples_in, metrics.samples_out = session.samples_in, session.samples_out
    return out, metrics


def anonymize_audio(audio: np.ndarray, config: SessionConfig, context: AnonContext, models: Models,
                    chunk_samples: int | None = None) -> tuple[np.ndarray, SessionMetrics]:
    """Whole-file convenience wrapper; ``chunk_samples=len(audio)`` gives the
    single-chunk (offline) reference."""
    n = chunk_samples or config.chunk_samples
    chunks, metrics = run_session(split_chunks(audio, max(1, n)), config, context, models)
    return np.concatenate([c.samples for c in chunks]) if chunks else np.zeros(0), metrics


def bench(config: SessionConfig, models: Models, context: AnonContext, duration_s: float = 5.0,
          seed: int = 0, cost_model: Callable[[AudioChunk], float] | None = None) -> dict:
    """Run synthetic speech through the full pipeline; machine-readable report."""
    from .synth import SyntheticSpeaker, utterance

    rng = np.random.default_rng(seed)
    audio, _ = utterance(SyntheticSpeaker.random(rng), rng, duration_s)
    _, metrics = run_session(split_chunks(audio, config.chunk_samples), config, context, models,
                             cost_model=cost_model)
    report = metrics.to_dict()
    report["duration_s"] = duration_s
    return report
