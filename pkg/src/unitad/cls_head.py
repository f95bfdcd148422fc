import math

import torch
from torch import nn
import torch.nn.functional as F

from .ops import sample_linear, segment_grid, sinusoidal_encoding


def roi_extract(shared, segments, num_points, context=0.0):
    """Sample ``num_points`` evenly spaced feature columns over every segment.

    Args:
        shared (Tensor): ``(B, C, L)`` shared features.
        segments (Tensor): ``(B, N, 2)`` segments in clip units.
    Returns:
        Tensor: ``(B, N, C, num_points)``.
    """
    B, N, _ = segments.shape
    pos = segment_grid(segments.to(shared.dtype), num_points, context).reshape(B, N * num_points)
    out = sample_linear(shared, pos).view(B, shared.shape[1], N, num_points)
    return out.permute(0, 2, 1, 3)


class ResidualBlock1d(nn.Module):
    def __init__(self, dim, stride=2):
        super().__init__()
        self.conv1 = nn.Conv1d(dim, dim, kernel_size=3, stride=stride, padding=1)
        self.conv2 = nn.Conv1d(dim, dim, kernel_size=3, padding=1)
        self.shortcut = nn.Conv1d(dim, dim, kernel_size=1, stride=stride)

    def forward(self, x):
        return F.relu(self.conv2(F.relu(self.conv1(x))) + self.shortcut(x))


class ProposalEncoder(nn.Module):
    """Three stride-2 residual blocks (T -> T/8), flattened to ``C * T / 8``."""

    def __init__(self, dim, num_layers=3):
        super().__init__()
        self.layers = nn.Sequential(*[ResidualBlock1d(dim) for _ in range(num_layers)])

    def forward(self, pf):
        lead = pf.shape[:-2]
        x = self.layers(pf.reshape(-1, *pf.shape[-2:]))
        return x.reshape(*lead, -1)


class MultiHeadAttention(nn.Module):
    def __init__(self, dim, num_heads, kdim=None):
        super().__init__()
        kdim = kdim or dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(kdim, dim)
        self.v_proj = nn.Linear(kdim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def _split(self, x):
        B, n, _ = x.shape
        return x.view(B, n, self.num_heads, self.head_dim).transpose(1, 2)

    def forward(self, q, k, v, return_weights=False):
        """Scaled dot-product attention over ``(B, n, dim)`` sequences."""
        Q, K, V = self._split(self.q_proj(q)), self._split(self.k_proj(k)), self._split(self.v_proj(v))
        weights = torch.softmax(Q @ K.transpose(-1, -2) / math.sqrt(self.head_dim), dim=-1)
        out = (weights @ V).transpose(1, 2).reshape(q.shape[0], q.shape[1], -1)
        out = self.out_proj(out)
        return (out, weights) if return_weights else out


class MiddleLNAttention(nn.Module):
    """``LN(MHA(Q, K, V)) + Q``: the norm sits between attention and the residual add."""

    def __init__(self, dim, num_heads, kdim=None):
        super().__init__()
        self.attn = MultiHeadAttention(dim, num_heads, kdim)
        self.norm = nn.LayerNorm(dim)

    def forward(self, q, k, v, return_weights=False):
        out, weights = self.attn(q, k, v, return_weights=True)
        out = self.norm(out) + q
        return (out, weights) if return_weights else out


class DecoderBlock(nn.Module):
    def __init__(self, dim, num_heads, memory_dim, self_attention=True, cross_attention=True):
        super().__init__()
        self.self_attn = MiddleLNAttention(dim, num_heads) if self_attention else None
        self.cross_attn = MiddleLNAttention(dim, num_heads, kdim=memory_dim) if cross_attention else None
        self.ffn = nn.Sequential(nn.Linear(dim, 4 * dim), nn.ReLU(), nn.Linear(4 * dim, dim))

    def forward(self, P, memory, memory_pos=None):
        """
        Args:
            P (Tensor): ``(B, N, d)`` proposal representations.
            memory (Tensor): ``(B, L_s, C_h)`` permuted shared features.
            memory_pos (Tensor, optional): ``(L_s, C_h)`` added to the keys only.
        """
        if self.self_attn is not None:
            P = self.self_attn(P, P, P)
        if self.cross_attn is not None:
            keys = memory if memory_pos is None else memory + memory_pos
            P = self.cross_attn(P, keys, memory)
        return self.ffn(P)


class ClassificationHead(nn.Module):
    """ROI -> residual encoder -> normalised projection -> decoder blocks -> ``2M`` logits."""

    def __init__(self, cfg):
        super().__init__()
        self.roi_size = cfg.roi_size
        self.encoder = ProposalEncoder(cfg.hidden_dim)
        self.proj = nn.Linear(cfg.hidden_dim * cfg.roi_size // 8, cfg.d_model)
        # puts the residual stream on the same scale as the normalised attention
        # output it is added to; without it every token collapses to one vector
        self.token_norm = nn.LayerNorm(cfg.d_model)
        self.blocks = nn.ModuleList(
            DecoderBlock(
                cfg.d_model, cfg.num_heads, cfg.hidden_dim,
                cfg.use_self_attention, cfg.use_cross_attention,
            )
            for _ in range(cfg.num_decoder_blocks)
        )
        self.classifier = nn.Linear(cfg.d_model, 2 * cfg.num_classes)
        if cfg.cross_positional:
            self.register_buffer(
                "memory_pos", sinusoidal_encoding(cfg.seq_len, cfg.hidden_dim), persistent=False
            )
        else:
            self.memory_pos = None

    def encode(self, shared, segments):
        pf = roi_extract(shared, segments, self.roi_size)
        return self.token_norm(self.proj(self.encoder(pf)))

    def decode(self, P, shared):
        memory = shared.transpose(1, 2)
        pos = None if self.memory_pos is None else self.memory_pos.to(memory.dtype)
        for block in self.blocks:
            P = block(P, memory, pos)
        return P

    def forward(self, shared, segments):
        return self.classifier(self.decode(self.encode(shared, segments), shared))
