import torch
from torch import nn
import torch.nn.functional as F

from .core import ConfigError


class DilatedContextBlock(nn.Module):
    """Residual local-context block: two parallel temporal convs (dilation 1 and 2).

    Stands in for a graph-based context block; anything mapping
    ``(B, C, L) -> (B, C, L)`` can replace it.
    """

    def __init__(self, dim):
        super().__init__()
        self.local = nn.Conv1d(dim, dim, kernel_size=3, padding=1, dilation=1)
        self.wide = nn.Conv1d(dim, dim, kernel_size=3, padding=2, dilation=2)

    def forward(self, x):
        return F.relu(x + self.local(x) + self.wide(x))


class BaseModule(nn.Module):
    """Conv -> ReLU -> context block, temporal length preserved."""

    def __init__(self, in_dim, hidden_dim, context_block=None):
        super().__init__()
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.conv = nn.Conv1d(in_dim, hidden_dim, kernel_size=3, padding=1)
        self.context = context_block if context_block is not None else DilatedContextBlock(hidden_dim)

    def forward(self, x):
        """
        Args:
            x (Tensor): features of shape ``(B, C, L)`` or ``(C, L)``.
        Returns:
            Tensor: shared features ``(B, hidden_dim, L)``.
        """
        if x.dim() == 2:
            x = x.unsqueeze(0)
        if x.shape[1] != self.in_dim:
            raise ConfigError(f"expected {self.in_dim} input channels, got {x.shape[1]}")
        return self.context(F.relu(self.conv(x)))


class AuxiliaryCombiner(nn.Module):
    """Two independent base modules whose outputs are joined along time (length 2L)."""

    def __init__(self, main: BaseModule, aux: BaseModule):
        super().__init__()
        if main.hidden_dim != aux.hidden_dim:
            raise ConfigError("main and auxiliary base modules must share the hidden dim")
        self.main = main
        self.aux = aux

    def forward(self, main_x, aux_x):
        a, b = self.main(main_x), self.aux(aux_x)
        if a.shape[-1] != b.shape[-1]:
            raise ConfigError("both streams must be resized to the same length")
        return torch.cat([a, b], dim=-1)


def build_backbone(cfg):
    main = BaseModule(cfg.in_dim, cfg.hidden_dim)
    if cfg.aux_dim:
        return AuxiliaryCombiner(main, BaseModule(cfg.aux_dim, cfg.hidden_dim))
    return main
