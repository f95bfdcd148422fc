import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from unitad.cls_head import (
    ClassificationHead, DecoderBlock, MiddleLNAttention, MultiHeadAttention, ProposalEncoder, roi_extract,
)

from conftest import tiny_config


def _fd_check(f, x, idxs, rel=1e-4):
    x = x.detach().clone().requires_grad_(True)
    f(x).backward()
    eps = 1e-6
    for idx in idxs:
        xp, xm = x.detach().clone(), x.detach().clone()
        xp[idx] += eps
        xm[idx] -= eps
        fd = (f(xp) - f(xm)).item() / (2 * eps)
        assert x.grad[idx].item() == pytest.approx(fd, rel=rel, abs=1e-9)


def test_roi_constant_features():
    shared = torch.full((1, 4, 20), 3.0)
    out = roi_extract(shared, torch.tensor([[[2.0, 9.5], [0.0, 20.0]]]), 16)
    assert out.shape == (1, 2, 4, 16)
    assert torch.all(out == 3.0)


def test_roi_full_span_hits_columns_exactly():
    L = 16
    shared = torch.randn(1, 3, L, dtype=torch.float64)
    # T sample points over [0, L-1] land on integer columns
    out = roi_extract(shared, torch.tensor([[[0.0, L - 1.0]]], dtype=torch.float64), L)
    assert torch.equal(out[0, 0], shared[0])


def test_encoder_shape_and_zero_path():
    enc = ProposalEncoder(256)
    assert enc(torch.randn(5, 256, 16)).shape == (5, 512)
    small = ProposalEncoder(4)
    for name, p in small.named_parameters():
        if name.endswith("bias"):
            torch.nn.init.zeros_(p)
    assert torch.count_nonzero(small(torch.zeros(3, 4, 16))) == 0


def test_encoder_gradient_finite_difference():
    enc = ProposalEncoder(3).double()
    w = torch.randn(3 * 2, dtype=torch.float64)
    _fd_check(lambda x: (enc(x) * w).sum(), torch.randn(2, 3, 16, dtype=torch.float64), [(0, 0, 0), (1, 2, 7), (0, 1, 15)])


def test_middle_ln_zero_output_projection_passes_query():
    layer = MiddleLNAttention(8, 2)
    torch.nn.init.zeros_(layer.attn.out_proj.weight)
    torch.nn.init.zeros_(layer.attn.out_proj.bias)
    q = torch.randn(1, 3, 8)
    kv = torch.randn(1, 5, 8)
    assert torch.equal(layer(q, kv, kv), q)


def test_attention_weights_are_distributions():
    mha = MultiHeadAttention(8, 2, kdim=6)
    _, w = mha(torch.randn(2, 3, 8), torch.randn(2, 7, 6), torch.randn(2, 7, 6), return_weights=True)
    assert w.shape == (2, 2, 3, 7)
    torch.testing.assert_close(w.sum(-1), torch.ones(2, 2, 3))


def _identity_projections(mha):
    for lin in (mha.q_proj, mha.k_proj, mha.v_proj, mha.out_proj):
        torch.nn.init.eye_(lin.weight)
        torch.nn.init.zeros_(lin.bias)


def test_single_head_hand_case():
    mha = MultiHeadAttention(2, 1).double()
    _identity_projections(mha)
    q = torch.tensor([[[1.0, 0.0]]], dtype=torch.float64)
    k = torch.tensor([[[1.0, 0.0], [0.0, 1.0]]], dtype=torch.float64)
    v = torch.tensor([[[2.0, 4.0], [6.0, 8.0]]], dtype=torch.float64)
    a = math.exp(1 / math.sqrt(2))
    w0 = a / (a + 1)
    expected = [w0 * 2 + (1 - w0) * 6, w0 * 4 + (1 - w0) * 8]
    np.testing.assert_allclose(mha(q, k, v)[0, 0].detach().numpy(), expected, atol=1e-12)


def test_middle_ln_differs_from_post_ln():
    layer = MiddleLNAttention(8, 2)
    q, kv = torch.randn(1, 4, 8), torch.randn(1, 6, 8)
    a = layer.attn(q, kv, kv)
    post = F.layer_norm(a + q, (8,), layer.norm.weight, layer.norm.bias)
    assert (layer(q, kv, kv) - post).abs().max() > 1e-3


def test_decoder_block_shape_and_permutation_equivariance():
    block = DecoderBlock(8, 2, memory_dim=6)
    P, mem = torch.randn(1, 5, 8), torch.randn(1, 11, 6)
    out = block(P, mem)
    assert out.shape == P.shape
    perm = torch.tensor([3, 0, 4, 1, 2])
    torch.testing.assert_close(block(P[:, perm], mem), out[:, perm])


def test_decoder_block_zeroed_cross_attention_reduces_to_self_path():
    block = DecoderBlock(8, 2, memory_dim=6)
    torch.nn.init.zeros_(block.cross_attn.attn.out_proj.weight)
    torch.nn.init.zeros_(block.cross_attn.attn.out_proj.bias)
    torch.nn.init.zeros_(block.cross_attn.norm.bias)
    P, mem = torch.randn(2, 4, 8), torch.randn(2, 9, 6)
    expected = block.ffn(block.self_attn(P, P, P))
    torch.testing.assert_close(block(P, mem), expected)


def test_cross_attention_spans_all_clips():
    block = DecoderBlock(8, 2, memory_dim=6)
    _, w = block.cross_attn(torch.randn(1, 3, 8), torch.randn(1, 13, 6), torch.randn(1, 13, 6), return_weights=True)
    assert w.shape[-1] == 13
    torch.testing.assert_close(w.sum(-1), torch.ones_like(w.sum(-1)))


def test_head_logits_shape_and_softmax():
    cfg = tiny_config()
    head = ClassificationHead(cfg).eval()
    shared = torch.randn(2, cfg.hidden_dim, cfg.seq_len)
    segs = torch.tensor([[[0.0, 4.0], [3.0, 12.0], [1.5, 2.5]]] * 2)
    logits = head(shared, segs)
    assert logits.shape == (2, 3, 2 * cfg.num_classes)
    torch.testing.assert_close(torch.softmax(logits, -1).sum(-1), torch.ones(2, 3))
    assert torch.equal(logits, head(shared, segs))


def test_head_gradient_finite_difference():
    cfg = tiny_config()
    head = ClassificationHead(cfg).double()
    segs = torch.tensor([[[0.0, 4.0], [3.0, 12.0]]], dtype=torch.float64)
    w = torch.randn(2, 2 * cfg.num_classes, dtype=torch.float64)
    _fd_check(lambda x: (head(x, segs) * w).sum(),
              torch.randn(1, cfg.hidden_dim, cfg.seq_len, dtype=torch.float64), [(0, 0, 0), (0, 5, 6), (0, 7, 11)])


def test_ablation_flags_remove_layers():
    head = ClassificationHead(tiny_config(use_cross_attention=False, use_self_attention=False, cross_positional=False))
    assert all(b.cross_attn is None and b.self_attn is None for b in head.blocks)
    assert head.memory_pos is None
