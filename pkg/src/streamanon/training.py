"""Toy end-to-end training on synthetic speech.

Stage order follows the dependency chain: content encoder and codec are
trained independently, then frozen and used to featurize utterances for
the converter, which is trained as a copy task (source speaker == target
speaker, conditioned on that speaker's embedding and optionally on a
prompt from the same speaker).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .acoustic_codec import AcousticCodec, CodecTrainer
from .arvc import ARVCExample, ARVCTrainer, DelaySchedule
from .checkpoint import Models
from .config import FRAME_SAMPLES, ModelConfig
from .content_encoder import ContentEncoder, ContentEncoderTrainer, prepare_distill_batch
from .synth import SyntheticSpeaker, phone_targets, random_tones, utterance

log = logging.getLogger(__name__)


@dataclass
class ToyTrainConfig:
    seed: int = 0
    encoder_steps: int = 200
    codec_steps: int = 400
    arvc_steps: int = 300
    batch_size: int = 4
    utterance_seconds: float = 1.5
    arvc_utterances: int = 24
    prompt_probability: float = 0.5


def speech_batch(rng: np.random.Generator, n: int, seconds: float, target_dim: int, target_seed: int = 0):
    audios, targets = [], []
    for _ in range(n):
        audio, phones = utterance(SyntheticSpeaker.random(rng), rng, seconds)
        audios.append(audio)
        targets.append(phone_targets(phones, target_dim, target_seed))
    return audios, targets


def train_content_encoder(model: ContentEncoder, steps: int, seed: int = 0, batch_size: int = 4,
                          seconds: float = 1.5) -> list[float]:
    rng = np.random.default_rng(seed)
    trainer = ContentEncoderTrainer(model, seed)
    losses = []
    for step in range(steps):
        audios, targets = speech_batch(rng, batch_size, seconds, model.cfg.target_dim)
        losses.append(trainer.step(prepare_distill_batch(audios, targets, model.frontend_cfg)))
        if step % 50 == 0:
            log.info("content_encoder step %d loss %.4f", step, losses[-1])
    model.eval()
    return losses


def codec_batch(rng: np.random.Generator, n: int, frames: int) -> torch.Tensor:
    """Half pure tones, half synthetic speech crops."""
    tones = random_tones(rng, n - n // 2, frames)
    speech = [utterance(SyntheticSpeaker.random(rng), rng, frames * FRAME_SAMPLES / 44100 + 0.01)[0][:frames * FRAME_SAMPLES]
              for _ in range(n // 2)]
    return torch.tensor(np.concatenate([tones, np.asarray(speech).reshape(-1, frames * FRAME_SAMPLES)]),
                        dtype=torch.float32)


def train_codec(model: AcousticCodec, steps: int, seed: int = 0, batch_size: int = 8, frames: int = 8) -> list[float]:
    rng = np.random.default_rng(seed)
    trainer = CodecTrainer(model, seed)
    losses = []
    for step in range(steps):
        losses.append(trainer.step(codec_batch(rng, batch_size, frames)))
        if step % 50 == 0:
            log.info("acoustic_codec step %d loss %.4f", step, losses[-1])
    model.eval()
    return losses


def featurize(models: Models, audio: np.ndarray) -> tuple[list[int], list[tuple]]:
    tokens = models.content_encoder.tokenize(audio)
    codes = [tuple(int(x) for x in row) for row in models.codec.encode(audio)]
    n = min(len(tokens), len(codes))
    return tokens[:n], codes[:n]


def arvc_examples(models: Models, rng: np.random.Generator, n: int, seconds: float,
                  prompt_probability: float = 0.5) -> list[ARVCExample]:
    out = []
    for _ in range(n):
        spk = SyntheticSpeaker.random(rng)
        audio, _ = utterance(spk, rng, seconds)
        g = models.embedder.extract(audio).values
        content, acoustic = featurize(models, audio)
        ex = ARVCExample(g, content, acoustic)
        if rng.random() < prompt_probability:
            prompt, _ = utterance(spk, rng, 1.0)
            ex.prompt_content, ex.prompt_acoustic = featurize(models, prompt)
        out.append(ex)
    return out


def train_arvc(models: Models, examples: Sequence[ARVCExample], steps: int, seed: int = 0,
               batch_size: int = 4, schedule: DelaySchedule | None = None) -> list[float]:
    rng = np.random.default_rng(seed)
    trainer = ARVCTrainer(models.arvc, schedule, seed, frozen=[models.content_encoder, models.codec])
    losses = []
    for step in range(steps):
        pick = rng.choice(len(examples), size=min(batch_size, len(examples)), replace=False)
        losses.append(trainer.step([examples[i] for i in pick]))
        if step % 50 == 0:
            log.info("arvc step %d loss/frame %.4f", step, losses[-1])
    models.arvc.eval()
    return losses


def train_toy(cfg: ToyTrainConfig | None = None, model_config: ModelConfig | None = None) -> tuple[Models, dict]:
    cfg = cfg or ToyTrainConfig()
    models = Models.build(model_config, cfg.seed)
    history = {
        "content_encoder": train_content_encoder(models.content_encoder, cfg.encoder_steps, cfg.seed,
                                                 cfg.batch_size, cfg.utterance_seconds),
        "acoustic_codec": train_codec(models.codec, cfg.codec_steps, cfg.seed + 1),
    }
    rng = np.random.default_rng(cfg.seed + 2)
    examples = arvc_examples(models, rng, cfg.arvc_utterances, cfg.utterance_seconds, cfg.prompt_probability)
    history["arvc"] = train_arvc(models, examples, cfg.arvc_steps, cfg.seed + 3, cfg.batch_size)
    models.eval()
    return models, history


# ------------------------------------------------------ learning-evidence runs

def distill_fixed_batch(steps: int = 200, seed: int = 0, model_config: ModelConfig | None = None) -> list[float]:
    """Content-encoder distillation on one fixed batch of synthetic speech;
    returns the loss after every step."""
    torch.manual_seed(seed)
    cfg = (model_config or ModelConfig())
    model = ContentEncoder(cfg.content_encoder, cfg.frontend)
    audios, targets = speech_batch(np.random.default_rng(seed), 4, 1.5, model.cfg.target_dim)
    batch = prepare_distill_batch(audios, targets, model.frontend_cfg)
    trainer = ContentEncoderTrainer(model, seed)
    return [trainer.step(batch) for _ in range(steps)]


def codec_tone_run(steps: int = 500, seed: int = 0, batch_size: int = 8, frames: int = 8,
                   held_out: int = 16, model_config: ModelConfig | None = None) -> dict:
    """Train the codec on random pure tones; report the mean SNR of
    ``decode(encode(x))`` on tones drawn from a separate generator."""
    from .acoustic_codec import snr_db

    torch.manual_seed(seed)
    model = AcousticCodec((model_config or ModelConfig()).acoustic_codec)
    trainer = CodecTrainer(model, seed)
    rng = np.random.default_rng(seed)
    losses = [trainer.step(torch.tensor(random_tones(rng, batch_size, frames), dtype=torch.float32))
              for _ in range(steps)]
    model.eval()
    held = random_tones(np.random.default_rng(seed + 123), held_out, 4)
    snrs = [snr_db(x, model.decode(model.encode(x))) for x in held]
    return {"losses": losses, "snr_db": float(np.mean(snrs)), "model": model}


def copy_task_run(steps: int = 2000, seed: int = 0, batch_size: int = 8, eval_size: int = 16,
                  lr: float = 3e-3, model_config: ModelConfig | None = None, log_every: int = 0) -> dict:
    """Copy task: acoustic frames are a fixed injective function of the
    content tokens. Reports teacher-forced top-1 code accuracy on a fixed
    evaluation set built with the same delay schedule as training."""
    from dataclasses import replace

    from .arvc import ARVC, build_interleaved, sample_delay, teacher_forced_accuracy
    from .synth import copy_task_example, copy_task_table

    cfg = replace((model_config or ModelConfig()).arvc, lr=lr)
    torch.manual_seed(seed)
    model = ARVC(cfg)
    rng = np.random.default_rng(seed)
    table = copy_task_table(rng, cfg.content_vocab, cfg.n_codebooks, cfg.codebook_size)
    trainer = ARVCTrainer(model, seed=seed)
    eval_rng = np.random.default_rng(seed + 1000)
    eval_set = [copy_task_example(eval_rng, table, speaker_dim=cfg.speaker_dim) for _ in range(eval_size)]
    eval_seqs = [build_interleaved(e.g, e.content, e.acoustic, sample_delay(eval_rng, trainer.schedule))
                 for e in eval_set]
    losses, curve = [], []
    for step in range(steps):
        batch = [copy_task_example(rng, table, speaker_dim=cfg.speaker_dim) for _ in range(batch_size)]
        losses.append(trainer.step(batch))
        if log_every and (step + 1) % log_every == 0:
            model.eval()
            curve.append((step + 1, teacher_forced_accuracy(model, eval_seqs)))
            log.info("copy task step %d loss/frame %.3f acc %.3f", step + 1, losses[-1], curve[-1][1])
    model.eval()
    return {"losses": losses, "accuracy": teacher_forced_accuracy(model, eval_seqs), "curve": curve,
            "model": model}
