"""Vector quantization: nearest-codeword lookup, straight-through gradients,
commitment/codebook losses, k-means++ seeding and dead-code reseeding."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn


class Codebook(nn.Module):
    def __init__(self, size: int, dim: int, dead_code_steps: int = 200):
        super().__init__()
        if size < 1:
            raise ValueError("codebook needs at least one entry")
        self.size, self.dim = size, dim
        self.dead_code_steps = dead_code_steps
        self.embeddings = nn.Parameter(torch.randn(size, dim) / np.sqrt(dim))
        self.register_buffer("idle_steps", torch.zeros(size, dtype=torch.long))
        self.register_buffer("initialized", torch.zeros((), dtype=torch.bool))

    def forward(self, x: torch.Tensor):
        """Quantize ``x`` [..., D] with a straight-through estimator.

        Returns (quantized_st, indices, commitment_loss, codebook_loss).
        """
        idx = nearest(x, self.embeddings)
        q = self.embeddings[idx]
        commit, cb = vq_losses(x, q)
        return straight_through(x, q), idx, commit, cb

    @torch.no_grad()
    def init_kmeans_pp(self, vectors: torch.Tensor, rng: np.random.Generator) -> None:
        self.embeddings.data.copy_(kmeans_pp(vectors.reshape(-1, self.dim), self.size, rng))
        self.idle_steps.zero_()
        self.initialized.fill_(True)

    @torch.no_grad()
    def track_usage(self, idx: torch.Tensor, batch_vectors: torch.Tensor,
                    rng: np.random.Generator) -> int:
        """Advance idle counters; reseed codewords idle for ``dead_code_steps``.

        Returns the number of codewords reseeded.
        """
        used = torch.zeros(self.size, dtype=torch.bool)
        used[idx.reshape(-1)] = True
        self.idle_steps += 1
        self.idle_steps[used] = 0
        dead = (self.idle_steps >= self.dead_code_steps).nonzero().reshape(-1)
        if len(dead) == 0:
            return 0
        pool = batch_vectors.detach().reshape(-1, self.dim)
        pick = torch.from_numpy(rng.integers(0, len(pool), size=len(dead)))
        self.embeddings.data[dead] = pool[pick].to(self.embeddings.dtype)
        self.idle_steps[dead] = 0
        return len(dead)


def nearest(x: torch.Tensor, codebook: torch.Tensor, shortlist: int = 8) -> torch.Tensor:
    """Index of the closest codeword (squared Euclidean); ties go to the lowest index.

    A matmul-based distance picks a shortlist, which is then re-ranked with
    exact ``sum((x - c)**2)`` so rounding in the expanded form cannot flip
    the answer.
    """
    if codebook.shape[0] == 0:
        raise ValueError("empty codebook")
    if x.shape[-1] != codebook.shape[-1]:
        raise ValueError(f"vector dim {x.shape[-1]} != codebook dim {codebook.shape[-1]}")
    flat = x.detach().reshape(-1, x.shape[-1])
    cb = codebook.detach()
    V = cb.shape[0]
    approx = cb.pow(2).sum(-1)[None] - 2 * flat @ cb.T
    k = min(shortlist, V)
    cand = approx.topk(k, dim=-1, largest=False).indices  # [N, k]
    exact = (flat[:, None, :] - cb[cand]).pow(2).sum(-1)
    best = exact.min(-1, keepdim=True).values
    out = torch.where(exact == best, cand, torch.full_like(cand, V)).min(-1).values
    return out.reshape(x.shape[:-1])


def quantize(x: torch.Tensor, codebook: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Return (index, codeword) for ``x`` [..., D]."""
    idx = nearest(x, codebook)
    return idx, codebook[idx]


def straight_through(x: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """Forward value ``q``; gradient flows to ``x`` unchanged."""
    return x + (q - x).detach()


def vq_losses(x: torch.Tensor, q: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """(commitment, codebook) losses: squared distance summed over the last dim,
    averaged over the remaining dims."""
    commit = (x - q.detach()).pow(2).sum(-1).mean()
    cb = (x.detach() - q).pow(2).sum(-1).mean()
    return commit, cb


def kmeans_pp(vectors: torch.Tensor, k: int, rng: np.random.Generator) -> torch.Tensor:
    """k-means++ seeding. With fewer distinct points than ``k`` the remainder
    is filled with jittered copies of random points."""
    pts = vectors.detach().to(torch.float64).numpy()
    n = pts.shape[0]
    centers = [pts[rng.integers(n)]]
    d2 = ((pts - centers[0]) ** 2).sum(1)
    while len(centers) < k:
        total = d2.sum()
        if total <= 0:
            break
        i = rng.choice(n, p=d2 / total)
        centers.append(pts[i])
        d2 = np.minimum(d2, ((pts - pts[i]) ** 2).sum(1))
    out = np.stack(centers)
    if len(out) < k:
        scale = pts.std() * 1e-2 + 1e-6
        extra = pts[rng.integers(0, n, size=k - len(out))]
        extra = extra + rng.normal(0, scale, size=extra.shape)
        out = np.concatenate([out, extra])
    return torch.from_numpy(out).to(vectors.dtype)


class ResidualVQ(nn.Module):
    """Stack of codebooks, each quantizing what the previous ones left over."""

    def __init__(self, n_stages: int, size: int, dim: int, dead_code_steps: int = 200):
        super().__init__()
        if n_stages < 1:
            raise ValueError("residual VQ needs at least one stage")
        self.stages = nn.ModuleList(Codebook(size, dim, dead_code_steps) for _ in range(n_stages))

    def forward(self, x: torch.Tensor):
        """Returns (quantized_st, codes [..., n], commitment, codebook, residuals)."""
        residual = x
        total = torch.zeros_like(x)
        codes, residuals = [], []
        commit = cb = x.new_zeros(())
        for stage in self.stages:
            idx = nearest(residual, stage.embeddings)
            q = stage.embeddings[idx]
            c, b = vq_losses(residual, q)
            commit, cb = commit + c, cb + b
            codes.append(idx)
            residuals.append(residual)
            total = total + q
            residual = residual - q.detach()
        return straight_through(x, total), torch.stack(codes, -1), commit, cb, residuals

    def decode(self, codes: torch.Tensor) -> torch.Tensor:
        out = 0
        for k, stage in enumerate(self.stages):
            out = out + stage.embeddings[codes[..., k]]
        return out


def rvq_quantize(latent: torch.Tensor, stages: list[torch.Tensor]):
    """Greedy residual quantization of ``latent`` [..., D] against a list of
    codebook matrices. Returns (codes [..., n], final_residual)."""
    if not stages:
        raise ValueError("no quantizer stages")
    residual = latent
    codes = []
    for cb in stages:
        idx, q = quantize(residual, cb)
        codes.append(idx)
        residual = residual - q
    return torch.stack(codes, -1), residual
