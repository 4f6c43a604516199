import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from streamanon import vq
from oracles import nearest_exhaustive


def test_nearer_corner_and_tie():
    cb = torch.tensor([[0.0, 0.0], [1.0, 1.0]])
    assert vq.quantize(torch.tensor([0.9, 0.8]), cb)[0].item() == 1
    assert vq.quantize(torch.tensor([0.5, 0.5]), cb)[0].item() == 0


def test_tie_breaks_to_lowest_index_anywhere():
    cb = torch.tensor([[5.0, 5.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    assert vq.nearest(torch.zeros(2), cb).item() == 1


def test_matches_exhaustive_search():
    g = torch.Generator().manual_seed(0)
    x = torch.randn(100, 8, generator=g)
    cb = torch.randn(64, 8, generator=g)
    idx = vq.nearest(x, cb)
    ref = [nearest_exhaustive(v.numpy(), cb.numpy()) for v in x]
    assert idx.tolist() == ref


def test_errors():
    with pytest.raises(ValueError):
        vq.nearest(torch.zeros(3), torch.zeros(0, 3))
    with pytest.raises(ValueError):
        vq.nearest(torch.zeros(3), torch.zeros(4, 2))


@settings(max_examples=50)
@given(cb=hnp.arrays(np.int64, (6, 3), elements=st.integers(-80, 80)))
def test_idempotent_on_codewords(cb):
    # eighths keep every squared distance exact, so only identical codewords tie
    cb = cb / 8.0
    t = torch.from_numpy(cb)
    for i in range(len(cb)):
        j = vq.nearest(t[i], t).item()
        # only the first of several identical codewords can be returned
        assert j == min(k for k in range(len(cb)) if np.array_equal(cb[k], cb[i]))


@settings(max_examples=50)
@given(x=hnp.arrays(np.float64, (4,), elements=st.floats(-5, 5)),
       cb=hnp.arrays(np.float64, (5, 4), elements=st.floats(-5, 5)))
def test_chosen_error_is_minimal(x, cb):
    i, q = vq.quantize(torch.from_numpy(x), torch.from_numpy(cb))
    err = ((x - q.numpy()) ** 2).sum()
    assert all(err <= ((x - c) ** 2).sum() for c in cb)
    np.testing.assert_array_equal(q.numpy(), cb[i.item()])


def test_losses():
    x = torch.tensor([[1.0, 0.0]])
    assert [v.item() for v in vq.vq_losses(x, x)] == [0.0, 0.0]
    c, b = vq.vq_losses(x, torch.zeros(1, 2))
    assert c.item() == 1.0 and b.item() == 1.0


def test_loss_gradients_are_stopped_on_the_right_side():
    x = torch.randn(3, 4, requires_grad=True)
    q = torch.randn(3, 4, requires_grad=True)
    commit, cb = vq.vq_losses(x, q)
    gx, gq = torch.autograd.grad(commit, [x, q], allow_unused=True)
    assert gq is None or torch.all(gq == 0)
    gx2, gq2 = torch.autograd.grad(cb, [x, q], allow_unused=True)
    assert gx2 is None or torch.all(gx2 == 0)


def test_straight_through_passes_gradient_unchanged():
    x = torch.randn(5, 3, dtype=torch.float64, requires_grad=True)
    cb = torch.randn(8, 3, dtype=torch.float64)
    w = torch.randn(5, 3, dtype=torch.float64)
    _, q = vq.quantize(x, cb)
    st_q = vq.straight_through(x, q)
    torch.testing.assert_close(st_q, q, rtol=0, atol=1e-15)
    (gx,) = torch.autograd.grad((st_q * w).sum(), [x])
    # d(downstream)/dq = w; the same must reach x
    torch.testing.assert_close(gx, w)


def test_rvq_single_stage_is_quantize():
    cb = torch.randn(16, 4)
    x = torch.randn(10, 4)
    codes, res = vq.rvq_quantize(x, [cb])
    idx, q = vq.quantize(x, cb)
    assert torch.equal(codes[:, 0], idx)
    torch.testing.assert_close(res, x - q)


def test_rvq_exact_decomposition():
    cb1 = torch.randn(8, 4) * 10
    cb2 = torch.randn(8, 4) * 0.1
    x = cb1[3] + cb2[7]
    codes, res = vq.rvq_quantize(x, [cb1, cb2])
    assert codes.tolist() == [3, 7]
    assert res.abs().max() < 1e-5


def test_rvq_residual_norms_non_increasing():
    # Monotonicity is guaranteed whenever "quantize to nothing" is available,
    # i.e. every stage holds the zero codeword; random codewords elsewhere.
    g = torch.Generator().manual_seed(1)
    stages = []
    for s in (1.0, 0.5, 0.25, 0.1):
        cb = torch.randn(32, 6, generator=g) * s
        cb[17] = 0.0
        stages.append(cb)
    x = torch.randn(1000, 6, generator=g)
    residual, norms = x, [x.norm(dim=-1)]
    for cb in stages:
        _, q = vq.quantize(residual, cb)
        residual = residual - q
        norms.append(residual.norm(dim=-1))
    for a, b in zip(norms, norms[1:]):
        assert torch.all(b <= a)
    _, final = vq.rvq_quantize(x, stages)
    torch.testing.assert_close(final, residual)
    with pytest.raises(ValueError):
        vq.rvq_quantize(x, [])


def test_kmeans_pp_and_dead_code_reseed():
    rng = np.random.default_rng(0)
    book = vq.Codebook(8, 2, dead_code_steps=3)
    pts = torch.randn(200, 2)
    book.init_kmeans_pp(pts, rng)
    assert bool(book.initialized)
    # every centre is one of the data points
    assert all(any(torch.equal(c, p) for p in pts) for c in book.embeddings.data)
    idx = torch.zeros(10, dtype=torch.long)  # only entry 0 used
    reseeded = [book.track_usage(idx, pts, rng) for _ in range(3)]
    assert reseeded == [0, 0, 7]
    assert torch.all(book.idle_steps == 0)


def test_kmeans_pp_with_too_few_distinct_points():
    out = vq.kmeans_pp(torch.ones(5, 3), 4, np.random.default_rng(0))
    assert out.shape == (4, 3) and torch.isfinite(out).all()
