"""Toy causal residual-VQ codec.

Audio is cut into 2048-sample frames (the content token rate). Each frame
goes through a fixed orthonormal real FFT, a learned projection and a
frame-rate causal convolution, then an 8-stage residual VQ. The decoder
mirrors it: causal frame-rate convolution, projection back to spectral
coefficients, inverse FFT. Frames never overlap, so frame ``t`` of output
depends only on codes up to ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import CodecConfig
from .dsp import AudioChunk
from .nnet import CausalConv1d, ConvState
from .vq import ResidualVQ, nearest, rvq_quantize

AcousticFrame = tuple  # n codebook indices, one per RVQ stage


@dataclass
class CodecState:
    enc: ConvState
    dec: ConvState
    pending: np.ndarray = field(default_factory=lambda: np.zeros(0))
    frames_in: int = 0
    frames_out: int = 0


class AcousticCodec(nn.Module):
    def __init__(self, cfg: CodecConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or CodecConfig()
        H, D = cfg.hidden_dim, cfg.latent_dim
        self.n_coef = 2 * (cfg.frame_samples // 2 + 1)
        self.enc_in = nn.Linear(self.n_coef, H)
        self.enc_conv = CausalConv1d(H, H, 2)
        self.enc_out = nn.Linear(H, D)
        self.rvq = ResidualVQ(cfg.n_codebooks, cfg.codebook_size, D, cfg.dead_code_steps)
        self.dec_conv = CausalConv1d(D, H, 2)
        self.dec_mid = nn.Linear(H, H)
        self.dec_out = nn.Linear(H, self.n_coef)

    # --------------------------------------------------------- full sequence
    def frames(self, audio: torch.Tensor) -> torch.Tensor:
        """[B, N] -> [B, N // frame, frame] (trailing partial frame dropped)."""
        F_ = self.cfg.frame_samples
        T = audio.shape[-1] // F_
        return audio[..., :T * F_].reshape(*audio.shape[:-1], T, F_)

    def analysis(self, frames: torch.Tensor) -> torch.Tensor:
        X = torch.fft.rfft(frames, norm="ortho")
        return torch.cat([X.real, X.imag], -1)

    def synthesis(self, coef: torch.Tensor) -> torch.Tensor:
        half = self.n_coef // 2
        return torch.fft.irfft(torch.complex(coef[..., :half], coef[..., half:]),
                               n=self.cfg.frame_samples, norm="ortho")

    def encode_latent(self, frames: torch.Tensor) -> torch.Tensor:
        h = self.enc_in(self.analysis(frames))
        h = h + F.gelu(self.enc_conv(h))
        return self.enc_out(h)

    def decode_latent(self, q: torch.Tensor) -> torch.Tensor:
        h = self.dec_conv(q)
        h = h + F.gelu(self.dec_mid(h))
        return self.synthesis(self.dec_out(h))

    def forward(self, audio: torch.Tensor):
        """Reconstruct [B, N]; returns (recon [B, T*frame], codes, commit, codebook)."""
        latent = self.encode_latent(self.frames(audio))
        q, codes, commit, cb, _ = self.rvq(latent)
        recon = self.decode_latent(q)
        return recon.flatten(-2), codes, commit, cb

    @torch.no_grad()
    def encode(self, audio: np.ndarray) -> np.ndarray:
        """Offline codes [T, n] for a whole utterance (batched path)."""
        x = torch.as_tensor(np.asarray(audio), dtype=self.enc_in.weight.dtype)[None]
        latent = self.encode_latent(self.frames(x))
        codes, _ = rvq_quantize(latent, [s.embeddings for s in self.rvq.stages])
        return codes[0].numpy()

    @torch.no_grad()
    def decode(self, codes: np.ndarray) -> np.ndarray:
        codes = torch.as_tensor(np.asarray(codes), dtype=torch.long)
        if codes.numel() == 0:
            return np.zeros(0)
        self._check_codes(codes)
        return self.decode_latent(self.rvq.decode(codes[None]))[0].flatten().double().numpy()

    def _check_codes(self, codes: torch.Tensor) -> None:
        if codes.shape[-1] != self.cfg.n_codebooks:
            raise ValueError(f"expected {self.cfg.n_codebooks} codes per frame, got {codes.shape[-1]}")
        if (codes < 0).any() or (codes >= self.cfg.codebook_size).any():
            raise ValueError(f"code index outside [0, {self.cfg.codebook_size})")

    # -------------------------------------------------------------- streaming
    def init_state(self) -> CodecState:
        return CodecState(self.enc_conv.init_state(), self.dec_conv.init_state())

    @torch.no_grad()
    def encode_frames(self, chunk: AudioChunk, state: CodecState) -> tuple[list[AcousticFrame], CodecState]:
        """One AcousticFrame per completed 2048-sample frame."""
        F_ = self.cfg.frame_samples
        buf = np.concatenate([state.pending, chunk.samples])
        n = len(buf) // F_
        enc = state.enc
        stages = [s.embeddings for s in self.rvq.stages]
        dtype = self.enc_in.weight.dtype
        out = []
        for j in range(n):
            x = torch.as_tensor(buf[j * F_:(j + 1) * F_], dtype=dtype)[None]
            h = self.enc_in(self.analysis(x))
            c, enc = self.enc_conv.step(h, enc)
            z = self.enc_out(h + F.gelu(c))
            codes, _ = rvq_quantize(z, stages)
            out.append(tuple(int(c) for c in codes[0]))
        new = CodecState(enc, state.dec, buf[n * F_:].copy(), state.frames_in + n, state.frames_out)
        return out, new

    @torch.no_grad()
    def decode_frames(self, frames: Sequence[AcousticFrame], state: CodecState) -> tuple[AudioChunk, CodecState]:
        """2048 samples per frame, each depending only on frames up to itself."""
        if len(frames) == 0:
            return AudioChunk(np.zeros(0)), state
        codes = torch.as_tensor(np.asarray(frames), dtype=torch.long).reshape(len(frames), -1)
        self._check_codes(codes)
        dec = state.dec
        pieces = []
        for j in range(len(frames)):
            q = self.rvq.decode(codes[j:j + 1])
            h, dec = self.dec_conv.step(q, dec)
            h = h + F.gelu(self.dec_mid(h))
            pieces.append(self.synthesis(self.dec_out(h))[0].double().numpy())
        new = CodecState(state.enc, dec, state.pending, state.frames_in, state.frames_out + len(frames))
        return AudioChunk(np.concatenate(pieces)), new


# ------------------------------------------------------------------ training

def multires_spectral_l1(x: torch.Tensor, y: torch.Tensor, ffts=(256, 512, 1024)) -> torch.Tensor:
    loss = x.new_zeros(())
    for n in ffts:
        win = torch.hann_window(n, dtype=x.dtype)
        X = torch.stft(x, n, hop_length=n // 4, window=win, return_complex=True)
        Y = torch.stft(y, n, hop_length=n // 4, window=win, return_complex=True)
        mx = (X.real.pow(2) + X.imag.pow(2) + 1e-8).sqrt()
        my = (Y.real.pow(2) + Y.imag.pow(2) + 1e-8).sqrt()
        loss = loss + (mx - my).abs().mean()
    return loss / len(ffts)


def codec_loss(model: AcousticCodec, audio: torch.Tensor, quantize: bool = True):
    """Return (total, codes) for a batch [B, N].

    Time-domain L1 and squared error, multi-resolution magnitude L1, and the
    residual-VQ codebook/commitment terms. With ``quantize=False`` the
    quantizer is bypassed (warmup) and ``codes`` is None.
    """
    target = model.frames(audio).flatten(-2)
    if quantize:
        recon, codes, commit, cb = model(audio)
        vq_term = cb + model.cfg.beta * commit
    else:
        recon = model.decode_latent(model.encode_latent(model.frames(audio))).flatten(-2)
        codes, vq_term = None, 0.0
    err = recon - target
    total = err.abs().mean() + 10.0 * err.pow(2).mean() + 0.1 * multires_spectral_l1(recon, target) + vq_term
    return total, codes


class CodecTrainer:
    """Adam on the codec loss.

    The first ``cfg.quantizer_warmup`` steps train the encoder/decoder with
    the quantizer bypassed; the codebooks are then seeded with k-means++
    over the latents of the most recent warmup batches, stage by stage.
    """

    def __init__(self, model: AcousticCodec, seed: int = 0, init_buffer: int = 32):
        self.model = model
        self.rng = np.random.default_rng(seed)
        self.opt = torch.optim.Adam(model.parameters(), lr=model.cfg.lr)
        self.steps = 0
        self._recent: list[torch.Tensor] = []
        self._init_buffer = init_buffer

    @torch.no_grad()
    def init_codebooks(self, audio: torch.Tensor) -> None:
        """Seed each stage with k-means++ over the residuals left by the previous ones."""
        residual = self.model.encode_latent(self.model.frames(audio)).reshape(-1, self.model.cfg.latent_dim)
        for stage in self.model.rvq.stages:
            stage.init_kmeans_pp(residual, self.rng)
            residual = residual - stage.embeddings[nearest(residual, stage.embeddings)]

    def step(self, audio: torch.Tensor) -> float:
        model = self.model
        warm = self.steps < model.cfg.quantizer_warmup
        if warm:
            self._recent = (self._recent + [audio.detach()])[-self._init_buffer:]
        elif not bool(model.rvq.stages[0].initialized):
            self.init_codebooks(torch.cat(self._recent + [audio]))
            self._recent = []
        total, _ = codec_loss(model, audio, quantize=not warm)
        self.opt.zero_grad()
        total.backward()
        self.opt.step()
        if not warm:
            with torch.no_grad():
                residual = model.encode_latent(model.frames(audio)).reshape(-1, model.cfg.latent_dim)
                for stage in model.rvq.stages:
                    idx = nearest(residual, stage.embeddings)
                    residual_next = residual - stage.embeddings[idx]
                    stage.track_usage(idx, residual, self.rng)
                    residual = residual_next
        self.steps += 1
        return float(total.detach())


def codec_train_step(trainer: CodecTrainer, audio: torch.Tensor) -> float:
    return trainer.step(audio)


def snr_db(ref: np.ndarray, est: np.ndarray) -> float:
    ref, est = np.asarray(ref, dtype=np.float64), np.asarray(est, dtype=np.float64)
    n = min(len(ref), len(est))
    err = ref[:n] - est[:n]
    return float(10 * np.log10(np.sum(ref[:n] ** 2) / max(np.sum(err ** 2), 1e-20)))


# ---------------------------------------------------------------- token dumps

def save_token_dump(path: str | Path, frames: Sequence[AcousticFrame]) -> None:
    """One frame per line, whitespace-separated codebook indices."""
    with open(path, "w") as f:
        for fr in frames:
            f.write(" ".join(str(int(c)) for c in fr) + "\n")


def load_token_dump(path: str | Path, n_codebooks: int | None = None) -> list[AcousticFrame]:
    frames = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        fr = tuple(int(v) for v in line.split())
        if n_codebooks is not None and len(fr) != n_codebooks:
            raise ValueError(f"{path}:{lineno}: expected {n_codebooks} indices, got {len(fr)}")
        frames.append(fr)
    return frames
