"""Boundary probabilities, boundary-matching confidence map and proposal decoding."""
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .core import Proposal, Segment
from .ops import sample_linear


@dataclass
class BoundaryProbs:
    p_start: torch.Tensor  # (B, L_s)
    p_end: torch.Tensor


@dataclass
class BMConfidenceMap:
    """Row ``d`` holds proposals of duration ``d + 1`` clips, column ``s`` their start."""

    cls_map: torch.Tensor  # (B, D, L_s)
    reg_map: torch.Tensor
    valid_mask: torch.Tensor  # (D, L_s) bool


def bm_valid_mask(length):
    dur = np.arange(1, length + 1)[:, None]
    start = np.arange(length)[None, :]
    return start + dur <= length


def bm_cell_segments(length):
    """Return ``(rows, cols, segments)`` for every valid map cell in row-major order."""
    rows, cols = np.nonzero(bm_valid_mask(length))
    segs = np.stack([cols, cols + rows + 1], axis=1).astype(np.float64)
    return rows, cols, segs


def _boundary_head(dim):
    return nn.Sequential(
        nn.Conv1d(dim, dim, kernel_size=3, padding=1),
        nn.ReLU(),
        nn.Conv1d(dim, 1, kernel_size=1),
        nn.Sigmoid(),
    )


class TemporalEvaluation(nn.Module):
    """Start/end probability heads on top of the shared context features."""

    def __init__(self, dim):
        super().__init__()
        self.start_head = _boundary_head(dim)
        self.end_head = _boundary_head(dim)

    def forward(self, x):
        return BoundaryProbs(self.start_head(x).squeeze(1), self.end_head(x).squeeze(1))


class ProposalEvaluation(nn.Module):
    """Boundary-matching map: sample every valid (duration, start) cell, reduce to 2 scores."""

    def __init__(self, dim, length, reduced_dim=32, hidden=128, num_samples=32):
        super().__init__()
        self.length = length
        self.num_samples = num_samples
        self.reduce = nn.Sequential(nn.Conv1d(dim, reduced_dim, kernel_size=1), nn.ReLU())
        self.score = nn.Sequential(
            nn.Conv1d(reduced_dim * num_samples, hidden, kernel_size=1),
            nn.ReLU(),
            nn.Conv1d(hidden, hidden, kernel_size=1),
            nn.ReLU(),
            nn.Conv1d(hidden, 2, kernel_size=1),
            nn.Sigmoid(),
        )
        rows, cols, segs = bm_cell_segments(length)
        pos = np.linspace(segs[:, 0], segs[:, 1], num_samples, axis=1)  # (cells, S)
        self.register_buffer("sample_pos", torch.from_numpy(pos.reshape(-1)), persistent=False)
        self.register_buffer("flat_index", torch.from_numpy(rows * length + cols), persistent=False)
        self.register_buffer("valid_mask", torch.from_numpy(bm_valid_mask(length)), persistent=False)

    def forward(self, x):
        B = x.shape[0]
        feat = self.reduce(x)
        pos = self.sample_pos.to(feat.dtype).unsqueeze(0).expand(B, -1)
        sampled = sample_linear(feat, pos)  # (B, C', cells * S)
        n_cells = self.flat_index.numel()
        sampled = sampled.view(B, -1, n_cells, self.num_samples).permute(0, 1, 3, 2)
        scores = self.score(sampled.reshape(B, -1, n_cells))  # (B, 2, cells)
        maps = scores.new_zeros(B, 2, self.length * self.length)
        maps = maps.index_copy(2, self.flat_index, scores).view(B, 2, self.length, self.length)
        return BMConfidenceMap(maps[:, 0], maps[:, 1], self.valid_mask)


class ProposalGenerator(nn.Module):
    """Self-attention over clips feeding both the boundary and the map branches."""

    def __init__(self, cfg):
        super().__init__()
        dim = cfg.hidden_dim
        heads = cfg.num_heads if dim % cfg.num_heads == 0 else 1
        self.attention = nn.TransformerEncoderLayer(
            dim, heads, dim_feedforward=2 * dim, dropout=0.0, batch_first=True
        )
        self.tem = TemporalEvaluation(dim)
        self.pem = ProposalEvaluation(
            dim, cfg.seq_len, cfg.pem_dim, cfg.pem_hidden, cfg.pem_samples
        )

    def context(self, shared):
        return self.attention(shared.transpose(1, 2)).transpose(1, 2)

    def tem_forward(self, shared):
        return self.tem(self.context(shared))

    def pem_forward(self, shared):
        return self.pem(self.context(shared))

    def forward(self, shared):
        ctx = self.context(shared)
        return self.tem(ctx), self.pem(ctx)


def _peaks(p, ratio):
    p = np.asarray(p, dtype=np.float64)
    keep = p > ratio * p.max()
    if len(p) > 1:
        up = np.r_[True, p[1:] > p[:-1]]
        down = np.r_[p[:-1] > p[1:], True]
        keep |= up & down
    return np.nonzero(keep)[0]


def decode_arrays(p_start, p_end, cls_map, reg_map, k, peak_ratio=0.5):
    """Array form of :func:`decode_proposals` for one video.

    Returns:
        (ndarray, ndarray): ``(k, 2)`` segments and ``(k,)`` scores, best first.
    """
    p_start = np.asarray(p_start, dtype=np.float64)
    p_end = np.asarray(p_end, dtype=np.float64)
    fused = np.sqrt(np.clip(np.asarray(cls_map, np.float64) * np.asarray(reg_map, np.float64), 0, None))
    length = len(p_start)

    starts, ends = _peaks(p_start, peak_ratio), _peaks(p_end, peak_ratio)
    s, e = np.meshgrid(starts, ends, indexing="ij")
    ok = e > s
    s, e = s[ok], e[ok]
    cand_score = p_start[s] * p_end[e] * fused[e - s - 1, s]
    order = np.lexsort((e, s, -cand_score))[:k]
    segs = np.stack([s[order], e[order]], axis=1).astype(np.float64)
    scores = cand_score[order]

    if len(scores) < k:
        rows, cols = np.nonzero(bm_valid_mask(length))
        gs, ge = cols, cols + rows + 1
        taken = np.zeros((length, length + 1), dtype=bool)
        taken[s, e] = True
        free = ~taken[gs, ge]
        gs, ge, rows = gs[free], ge[free], rows[free]
        g_score = p_start[gs] * p_end[np.minimum(ge, length - 1)] * fused[rows, gs]
        g_order = np.lexsort((ge, gs, -g_score))[: k - len(scores)]
        segs = np.concatenate([segs, np.stack([gs[g_order], ge[g_order]], 1).astype(np.float64)])
        scores = np.concatenate([scores, g_score[g_order]])
    return segs, scores


def decode_proposals(bp, bm, cfg, index=0):
    """Turn boundary probabilities and the confidence map into ``cfg.num_proposals`` proposals."""
    segs, scores = decode_arrays(
        bp.p_start[index].detach().cpu().numpy(),
        bp.p_end[index].detach().cpu().numpy(),
        bm.cls_map[index].detach().cpu().numpy(),
        bm.reg_map[index].detach().cpu().numpy(),
        cfg.num_proposals,
        cfg.peak_ratio,
    )
    return [Proposal(Segment(float(a), float(b)), float(c)) for (a, b), c in zip(segs, scores)]
