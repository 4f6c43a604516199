"""Interleaved two-stage autoregressive voice conversion.

Token layout (one Slow-AR position per slot)::

    g, [pc_0, pa_0, pc_1, pa_1, ...], c_0, w4s, ..., c_{d-1}, w4s,
    c_d, a_0, c_{d+1}, a_1, ..., c_{T-1}, a_{T-1-d}, eoc, a_{T-d}, ..., eoc, a_{T-1}

``pc/pa`` are prompt content/acoustic frames (no delay), ``w4s`` the
wait-for-start embedding and ``eoc`` the end-of-content embedding that
drives emission of the last ``d`` frames. The Slow-AR output at the slot
right before ``a_t`` is the frame latent ``z_t``; the Fast-AR then decodes
the codebooks of frame ``t`` one by one from ``[z_t, a_t1, ..., a_t(n-1)]``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ARVCConfig, MAX_DELAY
from .nnet import AttnCache, Transformer, cross_entropy_sum, param_checksum

SPEAKER, CONTENT, WAIT, ACOUSTIC, EOC, PROMPT_CONTENT, PROMPT_ACOUSTIC = range(7)
_KIND_NAMES = {SPEAKER: "g", CONTENT: "c", WAIT: "w4s", ACOUSTIC: "a", EOC: "eoc",
               PROMPT_CONTENT: "pc", PROMPT_ACOUSTIC: "pa"}


class LayoutError(ValueError):
    pass


class SessionClosedError(RuntimeError):
    pass


class FrozenWeightsError(RuntimeError):
    pass


# -------------------------------------------------------------------- layout

@dataclass
class InterleavedSequence:
    g: np.ndarray
    content: list[int]
    acoustic: list[tuple]
    delay: int
    slots: list[tuple[int, int | None]]
    prompt_content: list[int] = field(default_factory=list)
    prompt_acoustic: list[tuple] = field(default_factory=list)

    def layout(self) -> list[str]:
        """Human-readable slot names, e.g. ``['g', 'c0', 'w4s', 'c1', ...]``."""
        out = []
        for kind, i in self.slots:
            name = _KIND_NAMES[kind]
            out.append(name if i is None else f"{name}{i}")
        return out

    def driving_positions(self) -> list[int]:
        """Slow-AR position whose output is ``z_t``, for each frame ``t``."""
        return [p - 1 for p, (kind, _) in enumerate(self.slots) if kind == ACOUSTIC]

    def __len__(self) -> int:
        return len(self.slots)


def interleave_slots(T: int, d: int, n_prompt: int = 0) -> list[tuple[int, int | None]]:
    slots: list[tuple[int, int | None]] = [(SPEAKER, None)]
    for i in range(n_prompt):
        slots += [(PROMPT_CONTENT, i), (PROMPT_ACOUSTIC, i)]
    if T == 0:
        return slots
    # T content slots then d end-of-content slots drive emission; slot i
    # is followed by a wait while i < d, else by acoustic frame i - d.
    for i in range(T + d):
        slots.append((CONTENT, i) if i < T else (EOC, None))
        slots.append((WAIT, None) if i < d else (ACOUSTIC, i - d))
    return slots


def build_interleaved(g, content: Sequence[int], acoustic: Sequence[Sequence[int]], d: int,
                      prompt_content: Sequence[int] = (), prompt_acoustic: Sequence[Sequence[int]] = ()
                      ) -> InterleavedSequence:
    """Lay out one utterance for teacher forcing. ``d = 0`` gives the undelayed order."""
    if len(content) != len(acoustic):
        raise LayoutError(f"{len(content)} content tokens vs {len(acoustic)} acoustic frames")
    if len(prompt_content) != len(prompt_acoustic):
        raise LayoutError("prompt content/acoustic length mismatch")
    if not 0 <= d <= MAX_DELAY:
        raise LayoutError(f"delay {d} outside [0, {MAX_DELAY}]")
    return InterleavedSequence(
        g=np.asarray(g, dtype=np.float64), content=[int(c) for c in content],
        acoustic=[tuple(int(x) for x in a) for a in acoustic], delay=d,
        slots=interleave_slots(len(content), d, len(prompt_content)),
        prompt_content=[int(c) for c in prompt_content],
        prompt_acoustic=[tuple(int(x) for x in a) for a in prompt_acoustic],
    )


def parse_layout(layout: Sequence[str]) -> tuple[int, int, int]:
    """Check a slot-name sequence against the grammar; return (T, d, n_prompt)."""
    if not layout or layout[0] != "g":
        raise LayoutError("sequence must start with exactly one speaker slot")
    rest = list(layout[1:])
    n_prompt = 0
    while rest and rest[0].startswith("pc"):
        if len(rest) < 2 or rest[0] != f"pc{n_prompt}" or rest[1] != f"pa{n_prompt}":
            raise LayoutError(f"malformed prompt prefix near {rest[:2]}")
        n_prompt += 1
        rest = rest[2:]
    if not rest:
        return 0, 0, n_prompt
    d = 0
    while 2 * d + 1 < len(rest) and rest[2 * d + 1] == "w4s":
        d += 1
    if len(rest) % 2:
        raise LayoutError("slots must come in (driver, output) pairs")
    T = sum(1 for s in rest if s.startswith("c"))
    expected = [_KIND_NAMES[k] if i is None else f"{_KIND_NAMES[k]}{i}" for k, i in interleave_slots(T, d)[1:]]
    if rest != expected:
        raise LayoutError(f"layout does not match T={T}, d={d}")
    return T, d, n_prompt


# --------------------------------------------------------------------- delay

@dataclass
class DelaySchedule:
    mode: str = "dynamic"   # "fixed" or "dynamic"
    d: int = 2
    max_delay: int = MAX_DELAY

    def __post_init__(self):
        if self.mode not in ("fixed", "dynamic"):
            raise ValueError(f"unknown delay mode {self.mode!r}")
        if not 1 <= self.d <= self.max_delay <= MAX_DELAY:
            raise ValueError(f"delay must satisfy 1 <= d <= {self.max_delay}")


def sample_delay(rng: np.random.Generator, schedule: DelaySchedule) -> int:
    """Fixed mode: ``schedule.d``. Dynamic mode: uniform over {1..max_delay}."""
    if schedule.mode == "fixed":
        return schedule.d
    return int(rng.integers(1, schedule.max_delay + 1))


# ---------------------------------------------------------------------- loss

def ar_loss(logits: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Sum of cross-entropies over every frame and codebook.

    ``logits`` [..., T, n, V], ``targets`` [..., T, n]; ``mask`` [..., T]
    selects valid frames.
    """
    if logits.shape[:-1] != targets.shape:
        raise ValueError(f"logits {tuple(logits.shape)} do not cover targets {tuple(targets.shape)}")
    if mask is not None:
        logits, targets = logits[mask], targets[mask]
    return cross_entropy_sum(logits, targets)


# --------------------------------------------------------------------- model

@dataclass
class SlotBatch:
    kinds: torch.Tensor     # [B, L]
    content: torch.Tensor   # [B, L]
    codes: torch.Tensor     # [B, L, n]
    g: torch.Tensor         # [B, Dg]
    drive: torch.Tensor     # [B, T]
    targets: torch.Tensor   # [B, T, n]
    mask: torch.Tensor      # [B, T]


def collate(seqs: Sequence[InterleavedSequence], n_codebooks: int) -> SlotBatch:
    B = len(seqs)
    L = max(len(s) for s in seqs)
    T = max(1, max(len(s.content) for s in seqs))
    kinds = torch.full((B, L), WAIT, dtype=torch.long)
    content = torch.zeros(B, L, dtype=torch.long)
    codes = torch.zeros(B, L, n_codebooks, dtype=torch.long)
    drive = torch.zeros(B, T, dtype=torch.long)
    targets = torch.zeros(B, T, n_codebooks, dtype=torch.long)
    mask = torch.zeros(B, T, dtype=torch.bool)
    for b, s in enumerate(seqs):
        for p, (kind, i) in enumerate(s.slots):
            kinds[b, p] = kind
            if kind == CONTENT:
                content[b, p] = s.content[i]
            elif kind == PROMPT_CONTENT:
                content[b, p] = s.prompt_content[i]
            elif kind == ACOUSTIC:
                codes[b, p] = torch.tensor(s.acoustic[i])
            elif kind == PROMPT_ACOUSTIC:
                codes[b, p] = torch.tensor(s.prompt_acoustic[i])
        dp = s.driving_positions()
        drive[b, :len(dp)] = torch.tensor(dp, dtype=torch.long)
        if s.acoustic:
            targets[b, :len(s.acoustic)] = torch.tensor(s.acoustic)
        mask[b, :len(s.acoustic)] = True
    g = torch.tensor(np.stack([s.g for s in seqs]), dtype=torch.float32)
    return SlotBatch(kinds, content, codes, g, drive, targets, mask)


class ARVC(nn.Module):
    def __init__(self, cfg: ARVCConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or ARVCConfig()
        D, n, V = cfg.dim, cfg.n_codebooks, cfg.codebook_size
        self.speaker_proj = nn.Linear(cfg.speaker_dim, D)
        self.content_emb = nn.Embedding(cfg.content_vocab, D)
        self.acoustic_emb = nn.ModuleList(nn.Embedding(V, D) for _ in range(n))
        self.w4s = nn.Parameter(torch.randn(D) * 0.02)
        self.eoc = nn.Parameter(torch.randn(D) * 0.02)
        self.slow = Transformer(D, cfg.slow_layers, cfg.n_heads, cfg.ffn_dim)
        self.z_proj = nn.Linear(D, D)
        self.fast_emb = nn.ModuleList(nn.Embedding(V, D) for _ in range(n - 1))
        self.fast = Transformer(D, cfg.fast_layers, cfg.n_heads, cfg.ffn_dim)
        # one output head per codebook, applied at Fast-AR position k
        self.head_w = nn.Parameter(torch.randn(n, D, V) * (0.1 / np.sqrt(D)))
        self.head_b = nn.Parameter(torch.zeros(n, V))
        for emb in list(self.acoustic_emb) + list(self.fast_emb) + [self.content_emb]:
            nn.init.normal_(emb.weight, std=0.5)

    # ------------------------------------------------------------ embeddings
    def _acoustic_input(self, codes: torch.Tensor) -> torch.Tensor:
        out = self.acoustic_emb[0](codes[..., 0])
        for k in range(1, len(self.acoustic_emb)):
            out = out + self.acoustic_emb[k](codes[..., k])
        return out

    def embed_slots(self, batch: SlotBatch) -> torch.Tensor:
        k = batch.kinds[..., None]
        c = self.content_emb(batch.content)
        a = self._acoustic_input(batch.codes)
        g = self.speaker_proj(batch.g.to(c.dtype))[:, None, :].expand_as(c)
        x = torch.where((k == CONTENT) | (k == PROMPT_CONTENT), c, self.w4s.expand_as(c))
        x = torch.where((k == ACOUSTIC) | (k == PROMPT_ACOUSTIC), a, x)
        x = torch.where(k == EOC, self.eoc.expand_as(c), x)
        return torch.where(k == SPEAKER, g, x)

    def _slot_input(self, kind: int, value=None, g=None) -> torch.Tensor:
        dtype = self.w4s.dtype
        if kind == SPEAKER:
            return self.speaker_proj(torch.as_tensor(g, dtype=dtype).reshape(1, -1))
        if kind in (CONTENT, PROMPT_CONTENT):
            return self.content_emb(torch.tensor([int(value)]))
        if kind in (ACOUSTIC, PROMPT_ACOUSTIC):
            return self._acoustic_input(torch.tensor([list(value)]))
        if kind == WAIT:
            return self.w4s[None]
        return self.eoc[None]

    def _fast_inputs(self, z: torch.Tensor, codes: torch.Tensor) -> torch.Tensor:
        """[..., D], [..., n] -> [..., n, D] Fast-AR inputs (teacher forced)."""
        xs = [self.z_proj(z)]
        for k, emb in enumerate(self.fast_emb):
            xs.append(emb(codes[..., k]))
        return torch.stack(xs, -2)

    def _head(self, h: torch.Tensor, k: int | None = None) -> torch.Tensor:
        if k is None:  # h [..., n, D]
            return torch.einsum("...kd,kdv->...kv", h, self.head_w) + self.head_b
        return h @ self.head_w[k] + self.head_b[k]

    # -------------------------------------------------------- teacher forced
    def forward(self, batch: SlotBatch) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (frame latents z [B, T, D], logits [B, T, n, V])."""
        h = self.slow(self.embed_slots(batch))
        z = torch.gather(h, 1, batch.drive[..., None].expand(-1, -1, h.shape[-1]))
        B, T, D = z.shape
        fast_in = self._fast_inputs(z, batch.targets).reshape(B * T, -1, D)
        logits = self._head(self.fast(fast_in)).reshape(B, T, self.cfg.n_codebooks, -1)
        return z, logits

    def teacher_forced(self, seqs: Sequence[InterleavedSequence]):
        batch = collate(seqs, self.cfg.n_codebooks)
        z, logits = self(batch)
        return z, logits, batch

    # ------------------------------------------------------------ generation
    def start_session(self, g, d: int, prompt_content: Sequence[int] = (),
                      prompt_acoustic: Sequence[Sequence[int]] = (), sampling: bool | None = None,
                      seed: int = 0, record: bool = False) -> "GenSession":
        if not 1 <= d <= self.cfg.max_delay:
            raise ValueError(f"delay {d} outside [1, {self.cfg.max_delay}]")
        if len(prompt_content) != len(prompt_acoustic):
            raise LayoutError("prompt content/acoustic length mismatch")
        s = GenSession(
            model=self, g=np.asarray(g, dtype=np.float64), delay=d, cache=self.slow.init_cache(),
            sampling=self.cfg.sampling if sampling is None else sampling,
            generator=torch.Generator().manual_seed(seed), record=record,
        )
        s._feed(SPEAKER, None)
        for i, (c, a) in enumerate(zip(prompt_content, prompt_acoustic)):
            s._feed(PROMPT_CONTENT, int(c), i)
            s._feed(PROMPT_ACOUSTIC, tuple(int(x) for x in a), i)
        s.prompt_len = len(prompt_content)
        return s

    @torch.no_grad()
    def decode_frame(self, z: torch.Tensor, sampling: bool, generator: torch.Generator):
        """Fast-AR over one frame: returns (codes tuple, logits [n, V])."""
        cache = self.fast.init_cache()
        x = self.z_proj(z)
        codes, all_logits = [], []
        for k in range(self.cfg.n_codebooks):
            h, cache = self.fast.step(x, cache)
            logits = self._head(h, k)[0]
            code = self._choose(logits, sampling, generator)
            codes.append(code)
            all_logits.append(logits)
            if k < self.cfg.n_codebooks - 1:
                x = self.fast_emb[k](torch.tensor([code]))
        return tuple(codes), torch.stack(all_logits)

    def _choose(self, logits: torch.Tensor, sampling: bool, generator: torch.Generator) -> int:
        if not sampling:
            return int(torch.argmax(logits))
        k = min(self.cfg.top_k, logits.shape[-1])
        vals, idx = logits.topk(k)
        probs = F.softmax(vals / self.cfg.temperature, -1)
        return int(idx[torch.multinomial(probs, 1, generator=generator)])


@dataclass
class GenSession:
    """Per-stream generation state. Single owner, strictly sequential."""

    model: ARVC
    g: np.ndarray
    delay: int
    cache: AttnCache
    sampling: bool = False
    generator: torch.Generator | None = None
    record: bool = False
    pending: deque = field(default_factory=deque)
    consumed: int = 0
    emitted: int = 0
    closed: bool = False
    prompt_len: int = 0
    _eoc_fed: int = 0
    slots: list = field(default_factory=list)
    latents: list = field(default_factory=list)
    logits: list = field(default_factory=list)

    @torch.no_grad()
    def _feed(self, kind: int, value=None, index: int | None = None) -> torch.Tensor:
        x = self.model._slot_input(kind, value, self.g)
        h, self.cache = self.model.slow.step(x, self.cache)
        name = _KIND_NAMES[kind]
        self.slots.append(name if index is None else f"{name}{index}")
        return h

    def _drive(self, kind: int, value, index) -> tuple | None:
        h = self._feed(kind, value, index)
        i = self.consumed + (0 if kind == CONTENT else self._eoc_fed)
        if kind == EOC:
            self._eoc_fed += 1
        if i < self.delay:
            self._feed(WAIT)
            return None
        codes, logits = self.model.decode_frame(h, self.sampling, self.generator)
        if self.record:
            self.latents.append(h[0].clone())
            self.logits.append(logits)
        t = self.emitted
        self._feed(ACOUSTIC, codes, t)
        self.emitted += 1
        self.pending.popleft()
        return codes

    def step(self, c_t: int) -> tuple | None:
        if self.closed:
            raise SessionClosedError("session already flushed")
        self.pending.append(self.consumed)
        frame = self._drive(CONTENT, int(c_t), self.consumed)
        self.consumed += 1
        return frame

    def flush(self) -> list[tuple]:
        if self.closed:
            raise SessionClosedError("session already flushed")
        self.closed = True
        if self.consumed == 0:
            return []
        out = []
        for _ in range(self.delay):
            frame = self._drive(EOC, None, None)
            if frame is not None:
                out.append(frame)
        return out


def generate_step(c_t: int, session: GenSession) -> tuple[tuple | None, GenSession]:
    return session.step(c_t), session


def flush(session: GenSession) -> list[tuple]:
    return session.flush()


# ------------------------------------------------------------------ training

@dataclass
class ARVCExample:
    g: np.ndarray
    content: list[int]
    acoustic: list[tuple]
    prompt_content: list[int] = field(default_factory=list)
    prompt_acoustic: list[tuple] = field(default_factory=list)


class ARVCTrainer:
    """AdamW with per-step exponential learning-rate decay on the summed
    cross-entropy, averaged per frame for the optimizer.

    ``frozen`` modules (content encoder, codec) are checksummed at
    construction and re-verified before every step.
    """

    def __init__(self, model: ARVC, schedule: DelaySchedule | None = None, seed: int = 0,
                 frozen: Sequence[nn.Module] = ()):
        self.model = model
        self.schedule = schedule or DelaySchedule(model.cfg.delay_mode, model.cfg.delay, model.cfg.max_delay)
        self.rng = np.random.default_rng(seed)
        self.opt = torch.optim.AdamW(model.parameters(), lr=model.cfg.lr, weight_decay=0.0)
        self.sched = torch.optim.lr_scheduler.ExponentialLR(self.opt, gamma=model.cfg.lr_decay)
        self.frozen = list(frozen)
        for m in self.frozen:
            m.requires_grad_(False)
        self.checksums = [param_checksum(m) for m in self.frozen]
        self.steps = 0

    def verify_frozen(self) -> None:
        for m, ref in zip(self.frozen, self.checksums):
            if param_checksum(m) != ref:
                raise FrozenWeightsError(f"{type(m).__name__} weights changed during ARVC training")

    def build(self, batch: Sequence[ARVCExample]) -> list[InterleavedSequence]:
        return [build_interleaved(ex.g, ex.content, ex.acoustic, sample_delay(self.rng, self.schedule),
                                  ex.prompt_content, ex.prompt_acoustic) for ex in batch]

    def step(self, batch: Sequence[ARVCExample]) -> float:
        """One optimizer step; returns the loss per frame (sum over codebooks)."""
        self.verify_frozen()
        self.model.train()
        _, logits, sb = self.model.teacher_forced(self.build(batch))
        loss = ar_loss(logits, sb.targets, sb.mask) / sb.mask.sum()
        self.opt.zero_grad()
        loss.backward()
        self.opt.step()
        self.sched.step()
        self.steps += 1
        return float(loss.detach())


def arvc_train_step(trainer: ARVCTrainer, batch: Sequence[ARVCExample]) -> float:
    return trainer.step(batch)


@torch.no_grad()
def teacher_forced_accuracy(model: ARVC, seqs: Sequence[InterleavedSequence]) -> float:
    _, logits, sb = model.teacher_forced(seqs)
    pred = logits.argmax(-1)
    return float((pred == sb.targets)[sb.mask].float().mean())
