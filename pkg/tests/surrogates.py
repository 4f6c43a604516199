"""Finite-difference stand-ins for losses that contain stop-gradients.

A central difference perturbs every operand, including the ones a loss
deliberately detaches, so it cannot validate such a loss directly. Each
builder here returns the real loss and a surrogate in which every detached
operand (and every nearest-codeword choice) is frozen at its value at the
base point. At that point the two agree in value and in autograd gradient,
and the surrogate is smooth in the parameters, so the surrogate is what
gets compared against finite differences.
"""

from __future__ import annotations

import numpy as np
import torch

from streamanon import acoustic_codec as ac
from streamanon import content_encoder as ce
from streamanon.config import CodecConfig, ContentEncoderConfig
from streamanon.vq import nearest


def content_encoder_case(seed: int = 0):
    torch.manual_seed(seed)
    m = ce.ContentEncoder(ContentEncoderConfig(dim=8, ffn_dim=16, target_dim=3, vocab_size=4, n_layers=1)).double()
    rng = np.random.default_rng(seed)
    batch = ce.prepare_distill_batch([rng.standard_normal(4096) * 0.2], [rng.standard_normal((2, 3))])
    batch.mel, batch.targets = batch.mel.double(), batch.targets.double()
    with torch.no_grad():
        x0 = m(batch.mel)[batch.mask]
        idx0 = nearest(x0, m.codebook.embeddings)
        q0 = m.codebook.embeddings[idx0].clone()

    def real():
        return ce.distill_loss(m, batch)[0]

    def frozen():
        pre = m(batch.mel)
        pred = m.distill_head(pre)
        mask = batch.mask.double()
        distill = ((pred - batch.targets).pow(2).mean(-1) * mask).sum() / mask.sum()
        commit = (pre[batch.mask] - q0).pow(2).sum(-1).mean()
        cb = (x0 - m.codebook.embeddings[idx0]).pow(2).sum(-1).mean()
        return distill + (cb + m.cfg.beta * commit) / pre.shape[-1]

    return real, frozen, list(m.parameters())


def codec_case(seed: int = 0):
    torch.manual_seed(seed)
    cfg = CodecConfig(frame_samples=64, hidden_dim=8, latent_dim=4, codebook_size=8, n_codebooks=2)
    m = ac.AcousticCodec(cfg).double()
    x = torch.randn(1, 2048, dtype=torch.float64) * 0.3
    with torch.no_grad():
        lat0 = m.encode_latent(m.frames(x))
        res, idxs, qs, res0 = lat0, [], [], []
        for s in m.rvq.stages:
            i = nearest(res, s.embeddings)
            idxs.append(i)
            res0.append(res)
            qs.append(s.embeddings[i].clone())
            res = res - qs[-1]
        total0 = sum(qs)

    def real():
        return ac.codec_loss(m, x)[0]

    def frozen():
        target = m.frames(x).flatten(-2)
        latent = m.encode_latent(m.frames(x))
        commit = cb = 0.0
        residual = latent
        for s, i, q0, r0 in zip(m.rvq.stages, idxs, qs, res0):
            commit = commit + (residual - q0).pow(2).sum(-1).mean()
            cb = cb + (r0 - s.embeddings[i]).pow(2).sum(-1).mean()
            residual = residual - q0
        # straight-through: value total0, gradient to the latent only
        recon = m.decode_latent(latent + (total0 - lat0)).flatten(-2)
        err = recon - target
        return (err.abs().mean() + 10.0 * err.pow(2).mean()
                + 0.1 * ac.multires_spectral_l1(recon, target) + cb + cfg.beta * commit)

    return real, frozen, list(m.parameters())


def check_surrogate(real, frozen, params) -> None:
    """Assert the surrogate matches the real loss in value and gradient."""
    r, f = real(), frozen()
    if abs(r.item() - f.item()) > 1e-12 * max(1.0, abs(r.item())):
        raise AssertionError(f"surrogate value {f.item()} != loss {r.item()}")
    for a, b in zip(torch.autograd.grad(r, params), torch.autograd.grad(f, params)):
        torch.testing.assert_close(a, b, rtol=1e-9, atol=1e-12)
