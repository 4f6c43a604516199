"""Synthetic audio so everything can be trained and tested offline.

Speakers differ by pitch and spectral tilt; utterances are sequences of
"phones", each a harmonic tone shaped by a phone-specific formant pair.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import FRAME_SAMPLES, SAMPLE_RATE
from .dsp import AudioChunk, write_wav

N_PHONES = 12
_FORMANTS = np.stack([np.linspace(300, 900, N_PHONES), np.linspace(2400, 900, N_PHONES)], 1)
_FORMANTS = _FORMANTS[np.random.default_rng(7).permutation(N_PHONES)]


@dataclass(frozen=True)
class SyntheticSpeaker:
    f0: float
    tilt_db_per_octave: float

    @classmethod
    def random(cls, rng: np.random.Generator) -> "SyntheticSpeaker":
        return cls(float(rng.uniform(90, 240)), float(rng.uniform(-16, -2)))


def tone(freq: float, seconds: float, amp: float = 0.5, phase: float = 0.0,
         sr: int = SAMPLE_RATE) -> np.ndarray:
    t = np.arange(int(round(seconds * sr))) / sr
    return amp * np.sin(2 * np.pi * freq * t + phase)


def random_tones(rng: np.random.Generator, n: int, frames: int,
                 fmin: float = 200.0, fmax: float = 500.0) -> np.ndarray:
    """``n`` pure tones, each ``frames`` codec frames long, shape [n, frames*2048]."""
    t = np.arange(frames * FRAME_SAMPLES) / SAMPLE_RATE
    f = rng.uniform(fmin, fmax, size=(n, 1))
    a = rng.uniform(0.2, 0.8, size=(n, 1))
    ph = rng.uniform(0, 2 * np.pi, size=(n, 1))
    return a * np.sin(2 * np.pi * f * t[None] + ph)


def utterance(speaker: SyntheticSpeaker, rng: np.random.Generator, seconds: float,
              sr: int = SAMPLE_RATE) -> tuple[np.ndarray, np.ndarray]:
    """Return (audio, phone id per sample)."""
    n = int(round(seconds * sr))
    phones = np.empty(n, dtype=np.int64)
    pos = 0
    while pos < n:
        length = int(rng.uniform(0.06, 0.18) * sr)
        phones[pos:pos + length] = rng.integers(N_PHONES)
        pos += length
    contour = speaker.f0 * (1 + 0.08 * np.sin(2 * np.pi * rng.uniform(0.5, 2) * np.arange(n) / sr))
    phase = 2 * np.pi * np.cumsum(contour) / sr
    audio = np.zeros(n)
    for h in range(1, 40):
        fh = h * contour
        tilt = 10 ** (speaker.tilt_db_per_octave * np.log2(h) / 20)
        f1, f2 = _FORMANTS[phones, 0], _FORMANTS[phones, 1]
        env = 1 + 3 * np.exp(-((fh - f1) / 150) ** 2) + 2 * np.exp(-((fh - f2) / 250) ** 2)
        audio += np.where(fh < sr / 2 - 1000, tilt * env * np.sin(h * phase), 0.0)
    audio += 0.003 * rng.standard_normal(n)
    audio *= 0.5 / max(np.abs(audio).max(), 1e-9)
    return audio, phones


def phone_targets(phones: np.ndarray, dim: int, seed: int = 0) -> np.ndarray:
    """Per-token distillation targets: a fixed random embedding of the
    majority phone inside each 2048-sample frame."""
    table = np.random.default_rng(seed).standard_normal((N_PHONES, dim))
    T = len(phones) // FRAME_SAMPLES
    ids = [np.bincount(phones[t * FRAME_SAMPLES:(t + 1) * FRAME_SAMPLES], minlength=N_PHONES).argmax()
           for t in range(T)]
    return table[np.asarray(ids, dtype=np.int64)].reshape(T, dim)


# ------------------------------------------------------------- prompt pool

DATASETS = ("VCTK", "VoxCeleb1", "CREMA-D", "ESD")
EMOTIONS = ("angry", "neutral", "sad", "happy")


def make_pool(root: str | Path, seed: int = 0, speakers_per_dataset: int = 3,
              utts_per_speaker: int = 4, seconds: tuple[float, float] = (2.0, 6.0)) -> Path:
    """Write a small synthetic pool as ``root/<dataset>/<speaker>[/<emotion>]/<utt>.wav``.

    VCTK speakers are named p225, p226, ...; CREMA-D and ESD utterances carry
    an emotion directory cycling through angry/neutral/sad/happy.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    for ds in DATASETS:
        for s in range(speakers_per_dataset):
            spk_id = f"p{225 + s}" if ds == "VCTK" else f"{ds.lower().replace('-', '')}_{s:02d}"
            spk = SyntheticSpeaker.random(rng)
            for u in range(utts_per_speaker):
                audio, _ = utterance(spk, rng, rng.uniform(*seconds))
                d = root / ds / spk_id
                if ds in ("CREMA-D", "ESD"):
                    d = d / EMOTIONS[u % len(EMOTIONS)]
                d.mkdir(parents=True, exist_ok=True)
                write_wav(d / f"{spk_id}_{u:03d}.wav", AudioChunk(audio))
    return root


def make_toy_data(out: str | Path, seed: int = 0) -> dict:
    """Pool + a 3 s source utterance; returns the paths written."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    make_pool(out / "pool", seed=seed)
    rng = np.random.default_rng(seed + 1)
    audio, _ = utterance(SyntheticSpeaker.random(rng), rng, 3.0)
    write_wav(out / "source.wav", AudioChunk(audio))
    info = {"pool": str(out / "pool"), "source": str(out / "source.wav"), "seed": seed}
    (out / "toy_data.json").write_text(json.dumps(info, indent=2))
    return info


# ------------------------------------------------------------ copy task

def copy_task_table(rng: np.random.Generator, content_vocab: int = 64, n_codebooks: int = 8,
                    codebook_size: int = 1024) -> np.ndarray:
    """[n, content_vocab] table: acoustic code ``k`` of a frame is ``table[k, c]``
    for content token ``c``. Each row is injective."""
    if content_vocab > codebook_size:
        raise ValueError("content vocabulary larger than codebook")
    return np.stack([rng.permutation(codebook_size)[:content_vocab] for _ in range(n_codebooks)])


def copy_task_example(rng: np.random.Generator, table: np.ndarray, min_len: int = 8, max_len: int = 24,
                      speaker_dim: int = 64):
    """One synthetic utterance whose acoustic frames are a fixed function of
    the content tokens (source speaker == target speaker)."""
    from .arvc import ARVCExample

    T = int(rng.integers(min_len, max_len + 1))
    c = rng.integers(0, table.shape[1], T)
    return ARVCExample(rng.standard_normal(speaker_dim), [int(x) for x in c],
                       [tuple(int(v) for v in table[:, x]) for x in c])
