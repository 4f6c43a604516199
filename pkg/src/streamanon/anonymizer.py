"""Pseudo-speaker construction from a prompt pool.

A context is built once, from prompt audio only (never from the source):
select prompts with one of five strategies, shuffle them, crop, extract
content/acoustic tokens and speaker embeddings, and mix the embeddings with
a Gaussian sample::

    g_anon = normalize(alpha * mean(g_i) + (1 - alpha) * g_s)

Contexts are serialized so a streaming session can start without touching
any prompt audio.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dsp
from .checkpoint import Models, read_tensors, write_tensors
from .config import AnonymizerConfig
from .speaker import SpeakerEmbedder, SpeakerEmbedding, load_embedding, normalize, save_embedding

DATASETS = ("VCTK", "VoxCeleb1", "CREMA-D", "ESD")
EMOTIONS = ("angry", "neutral", "sad", "happy")
STRATEGIES = ("vctk-1fix", "vctk-1rnd", "vctk-4rnd", "cross-ds-4rnd", "cremad-emo-4rnd")


class PoolError(ValueError):
    """The pool cannot satisfy a selection strategy."""


@dataclass
class PromptEntry:
    path: str
    dataset: str
    speaker: str
    duration: float
    emotion: str | None = None
    embedding: str | None = None  # optional path to a precomputed embedding file

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ValueError(f"unknown dataset tag {self.dataset!r}; expected one of {DATASETS}")
        if not self.duration > 0:
            raise ValueError(f"{self.path}: duration must be positive")


@dataclass(frozen=True)
class SelectionStrategy:
    name: str = "cross-ds-4rnd"
    fixed_speaker: str = "p225"

    def __post_init__(self):
        if self.name not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.name!r}; expected one of {STRATEGIES}")


# ---------------------------------------------------------------------- pool

def pool_build(root: str | Path, embedder: SpeakerEmbedder | None = None,
               embed_dir: str | Path | None = None) -> list[PromptEntry]:
    """Scan ``root/<dataset>/<speaker>[/<emotion>]/*.wav``.

    With an ``embedder``, each entry's embedding is extracted once and written
    under ``embed_dir`` (default ``root/embeddings``).
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"pool directory {root} does not exist")
    entries = []
    for wav in sorted(root.rglob("*.wav")):
        parts = wav.relative_to(root).parts
        if parts[0] not in DATASETS or len(parts) not in (3, 4):
            continue
        emotion = parts[2] if len(parts) == 4 else None
        entries.append(PromptEntry(str(wav), parts[0], parts[1], dsp.wav_duration(wav), emotion))
    if not entries:
        raise PoolError(f"no prompt audio found under {root}")
    if embedder is not None:
        out = Path(embed_dir) if embed_dir else root / "embeddings"
        out.mkdir(parents=True, exist_ok=True)
        for i, e in enumerate(entries):
            p = out / f"{i:05d}.emb"
            save_embedding(p, embedder.extract(dsp.read_wav(e.path)))
            e.embedding = str(p)
    return entries


def save_manifest(path: str | Path, entries: Sequence[PromptEntry]) -> None:
    with open(path, "w") as f:
        for e in entries:
            f.write(json.dumps(asdict(e), sort_keys=True) + "\n")


def load_manifest(path: str | Path) -> list[PromptEntry]:
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            entries.append(PromptEntry(**json.loads(line)))
        except (TypeError, ValueError) as err:
            raise PoolError(f"{path}:{lineno}: bad manifest record ({err})") from err
    return entries


# ----------------------------------------------------------------- selection

def _pick(rng: np.random.Generator, items: list, k: int, what: str) -> list:
    if len(items) < k:
        raise PoolError(f"need {k} {what}, pool has {len(items)}")
    return [items[i] for i in sorted(rng.choice(len(items), size=k, replace=False))]


def select_prompts(pool: Sequence[PromptEntry], strategy: SelectionStrategy | str,
                   rng: np.random.Generator) -> list[PromptEntry]:
    if isinstance(strategy, str):
        strategy = SelectionStrategy(strategy)
    vctk = [e for e in pool if e.dataset == "VCTK"]
    if strategy.name == "vctk-1fix":
        own = [e for e in vctk if e.speaker == strategy.fixed_speaker]
        return _pick(rng, own, 1, f"utterances of VCTK speaker {strategy.fixed_speaker}")
    if strategy.name == "vctk-1rnd":
        return _pick(rng, vctk, 1, "VCTK utterances")
    if strategy.name == "vctk-4rnd":
        return _pick(rng, vctk, 4, "VCTK utterances")
    if strategy.name == "cross-ds-4rnd":
        return [_pick(rng, [e for e in pool if e.dataset == ds], 1, f"{ds} utterances")[0] for ds in DATASETS]
    crema = [e for e in pool if e.dataset == "CREMA-D"]
    return [_pick(rng, [e for e in crema if e.emotion == emo], 1, f"CREMA-D '{emo}' utterances")[0]
            for emo in EMOTIONS]


def crop_plan(durations: Sequence[float], rng: np.random.Generator,
              crop_seconds: float = 3.0, max_total: float = 12.0) -> list[tuple[float, float]]:
    """(start, length) in seconds per prompt.

    Several prompts: each is cut to at most ``crop_seconds`` at a uniform
    random offset. A single prompt is kept whole unless longer than
    ``max_total``. Either way the total never exceeds ``max_total``.
    """
    limit = crop_seconds if len(durations) > 1 else max_total
    if len(durations) * limit > max_total + 1e-9:
        limit = max_total / len(durations)
    plan = []
    for dur in durations:
        length = min(dur, limit)
        start = float(rng.uniform(0, dur - length)) if dur > length else 0.0
        plan.append((start, length))
    return plan


# -------------------------------------------------------------------- mixing

def mix_embedding(prompt_embs: Sequence[SpeakerEmbedding | np.ndarray], alpha: float,
                  rng: np.random.Generator) -> SpeakerEmbedding:
    """``normalize(alpha * mean + (1 - alpha) * g_s)``.

    ``g_s`` is a standard-normal draw rescaled to the mean prompt-embedding
    norm. It is always drawn, so the random stream does not depend on alpha.
    """
    if len(prompt_embs) == 0:
        raise ValueError("need at least one prompt embedding")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    E = np.stack([e.values if isinstance(e, SpeakerEmbedding) else np.asarray(e, dtype=np.float64)
                  for e in prompt_embs])
    g_s = sample_pseudo_speaker(rng, E.shape[1], float(np.linalg.norm(E, axis=1).mean()))
    return SpeakerEmbedding(normalize(alpha * E.mean(0) + (1 - alpha) * g_s), "anon")


def sample_pseudo_speaker(rng: np.random.Generator, dim: int, scale: float) -> np.ndarray:
    z = rng.standard_normal(dim)
    return z / np.linalg.norm(z) * scale


# ------------------------------------------------------------------- context

@dataclass
class AnonContext:
    g_anon: SpeakerEmbedding
    prompt_content: list[int]
    prompt_acoustic: list[tuple]
    provenance: dict = field(default_factory=dict)

    @property
    def prompt_seconds(self) -> float:
        return sum(c["length"] for c in self.provenance.get("crops", []))


def prepare_context(entries: Sequence[PromptEntry], rng: np.random.Generator, models: Models,
                    alpha: float = 0.9, cfg: AnonymizerConfig | None = None) -> AnonContext:
    """Shuffle, crop, tokenize and embed the prompts; mix the embeddings."""
    if len(entries) == 0:
        raise ValueError("no prompt entries")
    cfg = cfg or AnonymizerConfig()
    order = [entries[i] for i in rng.permutation(len(entries))]
    audios = []
    for e in order:
        try:
            audios.append(dsp.read_wav(e.path))
        except (OSError, ValueError) as err:
            raise ValueError(f"cannot read prompt {e.path}: {err}") from err
    plan = crop_plan([a.duration for a in audios], rng, cfg.crop_seconds, cfg.max_total_seconds)
    sr = models.config.frontend.sample_rate
    content, acoustic, embs, crops = [], [], [], []
    for e, audio, (start, length) in zip(order, audios, plan):
        s0 = int(round(start * sr))
        seg = audio.samples[s0:s0 + int(round(length * sr))]
        toks = models.content_encoder.tokenize(seg)
        codes = [tuple(int(x) for x in row) for row in models.codec.encode(seg)]
        n = min(len(toks), len(codes))
        content += toks[:n]
        acoustic += codes[:n]
        if e.embedding and len(order) == 1 and length >= audio.duration:
            embs.append(load_embedding(e.embedding, models.config.speaker.dim))
        else:
            embs.append(models.embedder.extract(dsp.AudioChunk(seg, sr)))
        crops.append({"path": e.path, "dataset": e.dataset, "speaker": e.speaker, "emotion": e.emotion,
                      "start": start, "length": len(seg) / sr})
    g = mix_embedding(embs, alpha, rng)
    return AnonContext(g, content, acoustic, {"crops": crops, "alpha": alpha})


def build_context(pool: Sequence[PromptEntry], strategy: SelectionStrategy | str, seed: int,
                  models: Models, alpha: float = 0.9, cfg: AnonymizerConfig | None = None) -> AnonContext:
    rng = np.random.default_rng(seed)
    strategy = SelectionStrategy(strategy) if isinstance(strategy, str) else strategy
    ctx = prepare_context(select_prompts(pool, strategy, rng), rng, models, alpha, cfg)
    ctx.provenance.update(seed=seed, strategy=strategy.name)
    return ctx


def save_context(path: str | Path, ctx: AnonContext) -> None:
    n = len(ctx.prompt_acoustic[0]) if ctx.prompt_acoustic else 0
    write_tensors(path, {
        "g_anon": ctx.g_anon.values.astype("<f8"),
        "prompt_content": np.asarray(ctx.prompt_content, dtype="<i8"),
        "prompt_acoustic": np.asarray(ctx.prompt_acoustic, dtype="<i8").reshape(-1, n),
    }, {"provenance": ctx.provenance})


def load_context(path: str | Path) -> AnonContext:
    arrays, meta = read_tensors(path)
    acoustic = [tuple(int(x) for x in row) for row in arrays["prompt_acoustic"]]
    return AnonContext(SpeakerEmbedding(arrays["g_anon"], "anon"),
                       [int(c) for c in arrays["prompt_content"]], acoustic, meta.get("provenance", {}))


def precompute_contexts(pool: Sequence[PromptEntry], strategy: SelectionStrategy | str, count: int,
                        models: Models, out_dir: str | Path, seed: int = 0, alpha: float = 0.9,
                        cfg: AnonymizerConfig | None = None) -> list[Path]:
    """Context ``i`` uses seed ``seed + i``; written as ``context_{i:03d}.ctx``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        p = out / f"context_{i:03d}.ctx"
        save_context(p, build_context(pool, strategy, seed + i, models, alpha, cfg))
        paths.append(p)
    return paths
