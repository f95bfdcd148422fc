import math

import torch


def sample_linear(feat, pos):
    """Linearly interpolate ``feat`` (B, C, L) at clip coordinates ``pos`` (B, P).

    Coordinates outside ``[0, L-1]`` are clamped to the edge columns.
    Returns a ``(B, C, P)`` tensor, differentiable w.r.t. ``feat``.
    """
    B, C, L = feat.shape
    u = pos.clamp(0, L - 1)
    i0 = u.floor().long().clamp(max=max(L - 2, 0))
    i1 = (i0 + 1).clamp(max=L - 1)
    w = (u - i0.to(u.dtype)).unsqueeze(1)
    g0 = torch.gather(feat, 2, i0.unsqueeze(1).expand(B, C, -1))
    g1 = torch.gather(feat, 2, i1.unsqueeze(1).expand(B, C, -1))
    return g0 * (1 - w) + g1 * w


def segment_grid(segments, num_points, context=0.0):
    """Evenly spaced sample positions over each segment (optionally widened).

    Args:
        segments (Tensor): ``(..., 2)`` start/end in clip units.
        num_points (int): samples per segment, endpoints included.
        context (float): widen each side by ``context * duration``.
    Returns:
        Tensor: ``(..., num_points)`` positions.
    """
    start, end = segments[..., 0], segments[..., 1]
    if context:
        w = end - start
        start, end = start - context * w, end + context * w
    steps = torch.linspace(0, 1, num_points, dtype=segments.dtype, device=segments.device)
    return start.unsqueeze(-1) + (end - start).unsqueeze(-1) * steps


def sinusoidal_encoding(length, dim, dtype=torch.float32):
    """Standard sine/cosine position table of shape ``(length, dim)``."""
    pos = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    half = (dim + 1) // 2
    freq = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) * 2 / dim)
    table = torch.zeros(length, 2 * half, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * freq)
    table[:, 1::2] = torch.cos(pos * freq)
    return table[:, :dim].to(dtype)
