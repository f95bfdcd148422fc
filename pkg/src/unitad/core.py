"""Domain types and temporal geometry shared by the whole detector.

All positions are continuous clip coordinates.  Feature column ``t`` of a
sequence of length ``L`` sits at coordinate ``t``; a video spans ``[0, L]``
and seconds map to coordinates by ``x = t_sec / duration * L``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import interp1d


class ConfigError(ValueError):
    """Raised for invalid or mutually inconsistent configuration values."""


@dataclass(frozen=True, order=True)
class Segment:
    start: float
    end: float

    def __post_init__(self):
        if not (0.0 <= self.start < self.end):
            raise ValueError(f"invalid segment ({self.start}, {self.end})")

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def center(self) -> float:
        return 0.5 * (self.start + self.end)

    def clamp(self, length: float) -> Optional["Segment"]:
        """Clip to ``[0, length]``; ``None`` if nothing of positive length is left."""
        s, e = max(0.0, self.start), min(float(length), self.end)
        return Segment(s, e) if e > s else None

    def as_tuple(self):
        return (self.start, self.end)


@dataclass(frozen=True)
class GroundTruth:
    segment: Segment
    label_index: int

    def check(self, num_classes: int):
        if not 0 <= self.label_index < num_classes:
            raise ValueError(f"label index {self.label_index} outside [0, {num_classes})")


@dataclass
class FeatureSequence:
    """Clip features of one video, shape ``(C, L)``."""

    data: np.ndarray
    clip_stride: int = 32

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2 or min(self.data.shape) < 1:
            raise ValueError(f"feature matrix must be 2-D and non-empty, got {self.data.shape}")

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def length(self) -> int:
        return self.data.shape[1]


@dataclass
class Proposal:
    segment: Segment
    confidence: float
    soft_label: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.soft_label is not None:
            lab = np.asarray(self.soft_label, dtype=np.float64)
            if np.any(lab < 0) or abs(lab.sum() - 1.0) > 1e-6:
                raise ValueError("soft label must be a non-negative distribution")
            self.soft_label = lab


@dataclass
class ModelConfig:
    """Network and training-objective hyper-parameters.

    Naming: ``num_proposals`` is the coarse proposal count K,
    ``num_sampled`` the classification batch N, ``num_real`` the real
    proposals kept for refinement, ``roi_size`` the ROI resolution and
    ``num_clips`` the resized sequence length.
    """

    num_classes: int = 10
    in_dim: int = 64
    aux_dim: int = 0  # 0 disables the auxiliary stream
    hidden_dim: int = 256
    d_model: int = 256
    num_heads: int = 8
    num_decoder_blocks: int = 2
    pem_dim: int = 32
    pem_hidden: int = 128
    pem_samples: int = 32
    refine_dim: int = 64

    num_clips: int = 100
    num_proposals: int = 120
    num_sampled: int = 32
    num_real: int = 90
    roi_size: int = 16
    top_detections: int = 120

    iou_high: float = 0.7
    iou_low: float = 0.3
    pc_alpha: float = 1.0
    peak_ratio: float = 0.5
    refine_context: float = 0.5
    boundary_radius_ratio: float = 0.1

    reg_weight: float = 1e-4
    pem_cls_weight: float = 1.0
    pem_loc_weight: float = 10.0
    cls_weight: float = 0.5
    focal_gamma: float = 2.0
    pem_pos_iou: float = 0.9
    pem_high_iou: float = 0.6
    pem_low_iou: float = 0.2

    soft_nms_sigma: float = 0.4
    score_floor: float = 1e-4
    score_fusion: str = "product"

    use_pc_labels: bool = True
    use_self_attention: bool = True
    use_cross_attention: bool = True
    use_fake_proposals: bool = True
    cross_positional: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0.0 <= self.iou_low < self.iou_high <= 1.0:
            raise ConfigError("need 0 <= iou_low < iou_high <= 1")
        if not self.num_real < self.num_proposals:
            raise ConfigError("num_real must be smaller than num_proposals")
        if self.roi_size % 8 != 0:
            raise ConfigError("roi_size must be divisible by 8")
        if self.d_model % self.num_heads != 0:
            raise ConfigError("d_model must be divisible by num_heads")
        if self.num_clips < 2:
            raise ConfigError("num_clips must be at least 2")
        if self.score_fusion not in ("product", "proposal", "classification"):
            raise ConfigError(f"unknown score fusion {self.score_fusion!r}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")

    @property
    def seq_len(self) -> int:
        """Temporal length of the shared features (doubled with an auxiliary stream)."""
        return 2 * self.num_clips if self.aux_dim else self.num_clips

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def iou(a: Segment, b: Segment) -> float:
    inter = max(0.0, min(a.end, b.end) - max(a.start, b.start))
    union = a.duration + b.duration - inter
    return inter / union


def center_distance(a: Segment, b: Segment) -> float:
    return abs(a.center - b.center)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise tIoU between ``(n, 2)`` and ``(m, 2)`` interval arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    inter = np.clip(
        np.minimum(a[:, None, 1], b[None, :, 1]) - np.maximum(a[:, None, 0], b[None, :, 0]),
        0.0, None,
    )
    union = (a[:, 1] - a[:, 0])[:, None] + (b[:, 1] - b[:, 0])[None, :] - inter
    return inter / np.maximum(union, 1e-12)


def resize_features(x: FeatureSequence, target_len: int) -> FeatureSequence:
    """Linearly interpolate every channel onto ``target_len`` evenly spaced points.

    The first and last columns are kept in place (align-corners sampling).
    """
    if target_len < 2:
        raise ValueError("target length must be at least 2")
    if x.length < 2:
        raise ValueError("cannot interpolate a single-clip sequence")
    if x.length == target_len:
        return FeatureSequence(x.data.copy(), x.clip_stride)
    src = np.arange(x.length, dtype=np.float64)
    dst = np.linspace(0.0, x.length - 1, target_len)
    out = interp1d(src, x.data.astype(np.float64), axis=1, assume_sorted=True)(dst)
    return FeatureSequence(out.astype(x.data.dtype), x.clip_stride)


def seconds_to_clips(t: float, duration: float, length: int) -> float:
    return t / duration * length


def clips_to_seconds(x: float, duration: float, length: int) -> float:
    return x * duration / length


def segments_array(items: Sequence) -> np.ndarray:
    """Stack ``Segment``/``GroundTruth``/``Proposal`` objects into an ``(n, 2)`` array."""
    rows = []
    for it in items:
        seg = getattr(it, "segment", it)
        rows.append((seg.start, seg.end))
    return np.asarray(rows, dtype=np.float64).reshape(-1, 2)
