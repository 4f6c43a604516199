"""Streaming content tokenizer.

log-mel (86.13 Hz) -> causal ConvNeXt stack with two stride-2 causal convs
-> causal transformer -> VQ, giving one content token per 2048 samples
(about 21.53 Hz). Training regresses the pre-VQ states, through a linear
head, onto externally supplied target features.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from . import dsp
from .config import ContentEncoderConfig, FrontendConfig
from .nnet import AttnCache, CausalConv1d, ConvNeXtBlock, ConvState, Transformer
from .vq import Codebook, nearest

MEL_OFFSET = -4.0
MEL_SCALE = 4.0


@dataclass
class ContentEncoderState:
    frontend: dsp.FrontendState
    convs: list[ConvState]
    attn: AttnCache
    tokens_emitted: int = 0
    mel_frames: int = 0


class ContentEncoder(nn.Module):
    def __init__(self, cfg: ContentEncoderConfig | None = None,
                 frontend: FrontendConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or ContentEncoderConfig()
        self.frontend_cfg = frontend or FrontendConfig()
        D = cfg.dim
        self.in_proj = nn.Linear(cfg.n_mels, D)
        # stem -> /2 -> block -> /2 -> block, all causal
        self.block1 = ConvNeXtBlock(D, cfg.conv_kernel, cfg.ffn_dim)
        self.down1 = CausalConv1d(D, D, 4, stride=2)
        self.block2 = ConvNeXtBlock(D, cfg.conv_kernel, cfg.ffn_dim)
        self.down2 = CausalConv1d(D, D, 4, stride=2)
        self.block3 = ConvNeXtBlock(D, cfg.conv_kernel, cfg.ffn_dim)
        self.transformer = Transformer(D, cfg.n_layers, cfg.n_heads, cfg.ffn_dim)
        self.codebook = Codebook(cfg.vocab_size, D, cfg.dead_code_steps)
        self.distill_head = nn.Linear(D, cfg.target_dim)

    def _convs(self):
        return [self.block1, self.down1, self.block2, self.down2, self.block3]

    # --------------------------------------------------------- full sequence
    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        """Pre-VQ states [B, M // 4, D] from log-mel [B, M, n_mels]."""
        h = self.in_proj((mel - MEL_OFFSET) / MEL_SCALE)
        for layer in self._convs():
            h = layer(h)
        return self.transformer(h)

    def tokens_from_mel(self, mel: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return nearest(self(mel), self.codebook.embeddings)

    # -------------------------------------------------------------- streaming
    def init_state(self) -> ContentEncoderState:
        return ContentEncoderState(
            frontend=dsp.FrontendState.fresh(self.frontend_cfg),
            convs=[m.init_state() for m in self._convs()],
            attn=self.transformer.init_cache(),
        )

    @torch.no_grad()
    def step_mel(self, mel_frame: np.ndarray, state: ContentEncoderState) -> tuple[int | None, ContentEncoderState]:
        """Advance by one mel frame; returns a token every fourth frame."""
        dtype = self.in_proj.weight.dtype
        x = torch.as_tensor(mel_frame, dtype=dtype).reshape(1, -1)
        h = self.in_proj((x - MEL_OFFSET) / MEL_SCALE)
        convs = list(state.convs)
        out = None
        for i, layer in enumerate(self._convs()):
            h, convs[i] = layer.step(h, convs[i])
            if h is None:
                break
        attn, emitted = state.attn, state.tokens_emitted
        if h is not None:
            z, attn = self.transformer.step(h, attn)
            out = int(nearest(z, self.codebook.embeddings)[0])
            emitted += 1
        return out, ContentEncoderState(state.frontend, convs, attn, emitted, state.mel_frames + 1)

    def encode_chunk(self, chunk: dsp.AudioChunk, state: ContentEncoderState) -> tuple[list[int], ContentEncoderState]:
        """Tokens whose four-mel-frame groups complete inside ``chunk``."""
        frames, fstate = dsp.frame_stream(chunk, state.frontend, self.frontend_cfg)
        state = ContentEncoderState(fstate, state.convs, state.attn, state.tokens_emitted, state.mel_frames)
        tokens = []
        for fr in frames:
            tok, state = self.step_mel(dsp.logmel_frame(fr, self.frontend_cfg), state)
            if tok is not None:
                tokens.append(tok)
        return tokens, state

    def tokenize(self, samples: np.ndarray) -> list[int]:
        """Whole-utterance tokens via the streaming path (one chunk)."""
        samples = np.asarray(samples, dtype=np.float64)
        if samples.size == 0:
            return []
        tokens, _ = self.encode_chunk(dsp.AudioChunk(samples, self.frontend_cfg.sample_rate), self.init_state())
        return tokens


# ------------------------------------------------------------------ training

@dataclass
class DistillBatch:
    mel: torch.Tensor      # [B, M, n_mels]
    targets: torch.Tensor  # [B, M // 4, target_dim]
    mask: torch.Tensor     # [B, M // 4] bool


class TargetLengthError(ValueError):
    pass


def prepare_distill_batch(audios: Sequence[np.ndarray], targets: Sequence[np.ndarray],
                          frontend: FrontendConfig | None = None) -> DistillBatch:
    """Compute log-mels and pad to a common length (right padding is causal-safe)."""
    mels = [dsp.logmel(a, frontend) for a in audios]
    n_tok = [len(m) // 4 for m in mels]
    for n, t in zip(n_tok, targets):
        if len(t) != n:
            raise TargetLengthError(f"target has {len(t)} frames but audio yields {n} tokens")
    M, T = max(len(m) for m in mels), max(n_tok)
    dim = targets[0].shape[1]
    mel = np.full((len(mels), M, mels[0].shape[1]), np.log((frontend or FrontendConfig()).floor))
    tgt = np.zeros((len(mels), T, dim))
    mask = np.zeros((len(mels), T), dtype=bool)
    for i, (m, t) in enumerate(zip(mels, targets)):
        mel[i, :len(m)] = m
        tgt[i, :len(t)] = t
        mask[i, :len(t)] = True
    return DistillBatch(torch.tensor(mel, dtype=torch.float32), torch.tensor(tgt, dtype=torch.float32),
                        torch.from_numpy(mask))


def distill_loss(model: ContentEncoder, batch: DistillBatch):
    """Return (total, distill, commitment, codebook) losses.

    The distillation term is a per-dimension mean squared error, so the VQ
    terms (summed over the state dimension) are divided by that dimension to
    keep them on the same footing; otherwise the commitment pull collapses
    the states before they learn anything.
    """
    pre = model(batch.mel)
    pred = model.distill_head(pre)
    m = batch.mask.to(pre.dtype)
    distill = ((pred - batch.targets).pow(2).mean(-1) * m).sum() / m.sum()
    sel = pre[batch.mask]
    _, _, commit, cb = model.codebook(sel)
    total = distill + (cb + model.cfg.beta * commit) / pre.shape[-1]
    return total, distill, commit, cb


class ContentEncoderTrainer:
    def __init__(self, model: ContentEncoder, seed: int = 0):
        self.model = model
        self.rng = np.random.default_rng(seed)
        self.opt = torch.optim.AdamW(model.parameters(), lr=model.cfg.lr, weight_decay=0.0)
        self.steps = 0

    def step(self, batch: DistillBatch) -> float:
        model = self.model
        model.train()
        if not bool(model.codebook.initialized):
            with torch.no_grad():
                model.codebook.init_kmeans_pp(model(batch.mel)[batch.mask], self.rng)
        total, _, _, _ = distill_loss(model, batch)
        if not torch.isfinite(total):
            raise FloatingPointError("non-finite content encoder loss")
        self.opt.zero_grad()
        total.backward()
        self.opt.step()
        with torch.no_grad():
            pre = model(batch.mel)[batch.mask]
            model.codebook.track_usage(nearest(pre, model.codebook.embeddings), pre, self.rng)
        self.steps += 1
        return float(total.detach())


def distill_train_step(trainer: ContentEncoderTrainer, batch: DistillBatch) -> float:
    return trainer.step(batch)


# ------------------------------------------------------- target feature files

_FEAT_MAGIC = b"FEAT"


def save_features(path: str | Path, feats: np.ndarray) -> None:
    """Flat float32 matrix behind a (frames, dim) uint32 header."""
    feats = np.asarray(feats, dtype="<f4")
    if feats.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    with open(path, "wb") as f:
        f.write(_FEAT_MAGIC + struct.pack("<II", *feats.shape))
        f.write(feats.tobytes())


def load_features(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != _FEAT_MAGIC or len(raw) < 12:
        raise ValueError(f"{path}: not a feature file")
    n, d = struct.unpack("<II", raw[4:12])
    if len(raw) != 12 + 4 * n * d:
        raise ValueError(f"{path}: payload size does not match header ({n}x{d})")
    return np.frombuffer(raw[12:], dtype="<f4").reshape(n, d).astype(np.float64)
