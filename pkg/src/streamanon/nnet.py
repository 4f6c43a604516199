"""Small causal building blocks with stepwise (streaming) and full-sequence paths.

Every stateful layer exposes ``forward`` for whole sequences ``[B, T, C]``
and ``step`` for a single time step ``[B, C]`` with an explicit state
object. The two paths agree to float rounding; streaming code always uses
``step`` so that chunking never changes results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F


class RMSNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + self.eps) * self.weight


class SwiGLU(nn.Module):
    """Gated feed-forward: ``W2 (silu(W1 x) * W3 x)``."""

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.w1 = nn.Linear(dim, hidden, bias=False)
        self.w3 = nn.Linear(dim, hidden, bias=False)
        self.w2 = nn.Linear(hidden, dim, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.w2(F.silu(self.w1(x)) * self.w3(x))


# ---------------------------------------------------------------- convolution

@dataclass
class ConvState:
    """Last ``kernel_size - 1`` inputs (oldest first) and the input counter."""

    buffer: torch.Tensor  # [B, kernel_size - 1, C]
    count: int = 0


class CausalConv1d(nn.Module):
    """Left-padded 1-D convolution over time, optionally strided / depthwise.

    Output ``j`` reads inputs ``stride*j + stride - kernel_size ... stride*j + stride - 1``
    and therefore becomes available as soon as input ``stride*j + stride - 1``
    arrives. A length-T input yields ``T // stride`` outputs.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel_size: int, stride: int = 1,
                 groups: int = 1, bias: bool = True):
        super().__init__()
        if kernel_size < stride:
            raise ValueError("kernel_size must be >= stride")
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel_size, self.stride, self.groups = kernel_size, stride, groups
        self.conv = nn.Conv1d(in_ch, out_ch, kernel_size, stride=stride, groups=groups, bias=bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """``x``: [B, T, C_in] -> [B, T // stride, C_out]."""
        y = self.conv(F.pad(x.transpose(1, 2), (self.kernel_size - self.stride, 0)))
        return y.transpose(1, 2)

    def init_state(self, batch: int = 1) -> ConvState:
        w = self.conv.weight
        return ConvState(torch.zeros(batch, self.kernel_size - 1, self.in_ch, dtype=w.dtype, device=w.device))

    def step(self, x_t: torch.Tensor, state: ConvState) -> tuple[torch.Tensor | None, ConvState]:
        """Consume one input frame ``[B, C_in]``; emit ``[B, C_out]`` every ``stride`` inputs."""
        if x_t.shape[-1] != self.in_ch:
            raise ValueError(f"expected {self.in_ch} input channels, got {x_t.shape[-1]}")
        window = torch.cat([state.buffer, x_t.unsqueeze(1)], dim=1)  # [B, K, C]
        new_state = ConvState(window[:, 1:], state.count + 1)
        if state.count % self.stride != self.stride - 1:
            return None, new_state
        y = self.conv(window.transpose(1, 2))  # [B, C_out, 1]
        return y[:, :, 0], new_state


# ------------------------------------------------------------------ attention

def rope_angles(positions: torch.Tensor, head_dim: int, base: float = 10000.0,
                dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    inv = 1.0 / (base ** (torch.arange(0, head_dim, 2, dtype=torch.float64) / head_dim))
    ang = positions.to(torch.float64)[:, None] * inv[None, :]
    return ang.cos().to(dtype), ang.sin().to(dtype)


def apply_rope(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    """Rotate adjacent pairs of the last dim; ``cos``/``sin`` broadcast as [T, hd/2]."""
    x1, x2 = x[..., 0::2], x[..., 1::2]
    out = torch.stack([x1 * cos - x2 * sin, x1 * sin + x2 * cos], dim=-1)
    return out.flatten(-2)


@dataclass
class AttnCache:
    """Keys/values for every processed position, one entry per layer."""

    keys: list = field(default_factory=list)    # per layer: [B, H, t, hd]
    values: list = field(default_factory=list)
    pos: int = 0

    @classmethod
    def empty(cls, n_layers: int) -> "AttnCache":
        return cls([None] * n_layers, [None] * n_layers, 0)

    def __len__(self) -> int:
        return self.pos


class CausalSelfAttention(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        if dim % n_heads or (dim // n_heads) % 2:
            raise ValueError("dim must split into heads of even size")
        self.n_heads, self.head_dim = n_heads, dim // n_heads
        self.qkv = nn.Linear(dim, 3 * dim, bias=False)
        self.out = nn.Linear(dim, dim, bias=False)

    def _split(self, x):  # [B, T, D] -> 3 x [B, H, T, hd]
        B, T, _ = x.shape
        q, k, v = self.qkv(x).view(B, T, 3, self.n_heads, self.head_dim).permute(2, 0, 3, 1, 4)
        return q, k, v

    def forward(self, x: torch.Tensor, start_pos: int = 0) -> torch.Tensor:
        B, T, D = x.shape
        q, k, v = self._split(x)
        cos, sin = rope_angles(torch.arange(start_pos, start_pos + T), self.head_dim, dtype=x.dtype)
        q, k = apply_rope(q, cos, sin), apply_rope(k, cos, sin)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        mask = torch.ones(T, T, dtype=torch.bool).triu(1)
        scores = scores.masked_fill(mask, float("-inf"))
        y = scores.softmax(-1) @ v  # [B, H, T, hd]
        return self.out(y.transpose(1, 2).reshape(B, T, D))

    def step(self, x_t: torch.Tensor, keys, values, pos: int):
        """One position: ``x_t`` [B, D]. Returns (y_t, keys, values)."""
        B, D = x_t.shape
        q, k, v = self._split(x_t.unsqueeze(1))
        cos, sin = rope_angles(torch.tensor([pos]), self.head_dim, dtype=x_t.dtype)
        q, k = apply_rope(q, cos, sin), apply_rope(k, cos, sin)
        keys = k if keys is None else torch.cat([keys, k], dim=2)
        values = v if values is None else torch.cat([values, v], dim=2)
        scores = q @ keys.transpose(-1, -2) / math.sqrt(self.head_dim)
        y = scores.softmax(-1) @ values  # [B, H, 1, hd]
        return self.out(y.transpose(1, 2).reshape(B, D)), keys, values


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, n_heads: int, ffn_dim: int):
        super().__init__()
        self.attn_norm = RMSNorm(dim)
        self.attn = CausalSelfAttention(dim, n_heads)
        self.ffn_norm = RMSNorm(dim)
        self.ffn = SwiGLU(dim, ffn_dim)

    def forward(self, x: torch.Tensor, start_pos: int = 0) -> torch.Tensor:
        x = x + self.attn(self.attn_norm(x), start_pos)
        return x + self.ffn(self.ffn_norm(x))

    def step(self, x_t, keys, values, pos):
        a, keys, values = self.attn.step(self.attn_norm(x_t), keys, values, pos)
        x_t = x_t + a
        return x_t + self.ffn(self.ffn_norm(x_t)), keys, values


class Transformer(nn.Module):
    """Pre-norm decoder-only stack with rotary positions and a final norm."""

    def __init__(self, dim: int, n_layers: int, n_heads: int, ffn_dim: int):
        super().__init__()
        self.dim = dim
        self.layers = nn.ModuleList(TransformerBlock(dim, n_heads, ffn_dim) for _ in range(n_layers))
        self.norm = RMSNorm(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            x = layer(x)
        return self.norm(x)

    def init_cache(self) -> AttnCache:
        return AttnCache.empty(len(self.layers))

    def step(self, x_t: torch.Tensor, cache: AttnCache, pos: int | None = None) -> tuple[torch.Tensor, AttnCache]:
        if pos is not None and pos != cache.pos:
            raise ValueError(f"cache holds {cache.pos} positions, step requested position {pos}")
        keys, values = list(cache.keys), list(cache.values)
        for i, layer in enumerate(self.layers):
            x_t, keys[i], values[i] = layer.step(x_t, keys[i], values[i], cache.pos)
        return self.norm(x_t), AttnCache(keys, values, cache.pos + 1)


class ConvNeXtBlock(nn.Module):
    """Depthwise causal conv followed by a pointwise gated MLP, residual."""

    def __init__(self, dim: int, kernel_size: int, ffn_dim: int):
        super().__init__()
        self.dw = CausalConv1d(dim, dim, kernel_size, groups=dim)
        self.norm = RMSNorm(dim)
        self.mlp = SwiGLU(dim, ffn_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.mlp(self.norm(self.dw(x)))

    def init_state(self, batch: int = 1) -> ConvState:
        return self.dw.init_state(batch)

    def step(self, x_t, state):
        h, state = self.dw.step(x_t, state)
        return x_t + self.mlp(self.norm(h)), state


# ----------------------------------------------------------------- utilities

def cross_entropy_sum(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Sum of per-element cross-entropies; ``logits`` [..., V], ``targets`` [...]."""
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), reduction="sum")


def grad_check(fn: Callable[..., torch.Tensor], inputs: Sequence[torch.Tensor],
               eps: float = 1e-6, max_coords: int | None = None,
               generator: torch.Generator | None = None) -> float:
    """Compare autograd against central finite differences.

    ``fn`` maps ``inputs`` to a scalar. Inputs must be float64 leaf tensors
    with ``requires_grad``. Returns the max absolute discrepancy divided by
    the largest gradient magnitude seen (per input tensor, worst case).
    With ``max_coords`` only a random subset of coordinates is probed.
    """
    out = fn(*inputs)
    grads = torch.autograd.grad(out, inputs, allow_unused=True)
    worst = 0.0
    for x, g in zip(inputs, grads):
        g = torch.zeros_like(x) if g is None else g
        flat = x.data.view(-1)
        idx = torch.arange(flat.numel())
        if max_coords is not None and flat.numel() > max_coords:
            idx = torch.randperm(flat.numel(), generator=generator)[:max_coords]
        num = torch.empty(len(idx), dtype=torch.float64)
        with torch.no_grad():
            for n, i in enumerate(idx.tolist()):
                orig = flat[i].item()
                flat[i] = orig + eps
                hi = fn(*inputs).item()
                flat[i] = orig - eps
                lo = fn(*inputs).item()
                flat[i] = orig
                num[n] = (hi - lo) / (2 * eps)
        ana = g.reshape(-1)[idx].to(torch.float64)
        scale = max(ana.abs().max().item(), num.abs().max().item(), 1e-12)
        worst = max(worst, (ana - num).abs().max().item() / scale)
    return worst


def param_checksum(module: nn.Module) -> str:
    import hashlib

    h = hashlib.blake2b(digest_size=16)
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
