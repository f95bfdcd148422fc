"""Boundary refinement: ground-truth-derived fake proposals and the offset head."""
from dataclasses import dataclass, field
from itertools import product
from typing import List
import warnings

import numpy as np
from torch import nn
import torch.nn.functional as F

from .cls_head import roi_extract
from .core import Proposal, Segment, iou_matrix, segments_array

# (0,0) first, then growing magnitude, + before -; start offset is the outer loop
OFFSETS = (0.0, 1 / 8, -1 / 8, 1 / 6, -1 / 6, 1 / 4, -1 / 4)
MODES = tuple(product(OFFSETS, OFFSETS))


@dataclass
class RefinementBatch:
    proposals: List[Proposal]
    targets: np.ndarray = None  # (n, 2) normalised offsets
    target_mask: np.ndarray = None  # (n,) bool, proposals that contribute to the loss
    is_fake: List[bool] = field(default_factory=list)


def fake_segment_arrays(gt_segs, count, length):
    """Fake proposal segments as an ``(count, 2)`` array; see :func:`generate_fake_proposals`."""
    gt = np.asarray(gt_segs, dtype=np.float64).reshape(-1, 2)
    if count <= 0:
        return np.zeros((0, 2))
    if len(gt) == 0:
        raise ValueError("fake proposals need at least one ground truth")
    gt = gt[np.lexsort((gt[:, 1], gt[:, 0]))]
    width = gt[:, 1] - gt[:, 0]
    cycle = []
    for ds, de in MODES:
        s = np.clip(gt[:, 0] + ds * width, 0.0, length)
        e = np.clip(gt[:, 1] + de * width, 0.0, length)
        ok = e > s
        cycle.extend(zip(s[ok], e[ok]))
    if not cycle:
        warnings.warn("all fake proposal modes degenerate; using jittered ground-truth copies")
        for s, w in zip(gt[:, 0], width):
            s = min(max(s, 0.0), length - 1e-3)
            cycle.append((s, min(s + max(w, 1e-3), length)))
    reps = -(-count // len(cycle))
    return np.asarray((cycle * reps)[:count], dtype=np.float64)


def generate_fake_proposals(gts, count, length):
    """Offset each ground-truth boundary by 0, ±1/8, ±1/6 or ±1/4 of its duration.

    Ground truths are visited round-robin for every mode in ``MODES`` order;
    offsets that leave a degenerate segment are skipped.  The 49-mode cycle
    repeats if ``count`` exceeds what the ground truths can supply.
    """
    segs = fake_segment_arrays(segments_array(gts), count, length)
    return [Proposal(Segment(float(s), float(e)), 1.0) for s, e in segs]


def refinement_targets(segs, gt_segs, iou_low):
    """Normalised offsets to the best-IoU ground truth; mask marks IoU >= ``iou_low``."""
    segs = np.asarray(segs, dtype=np.float64).reshape(-1, 2)
    gt = np.asarray(gt_segs, dtype=np.float64).reshape(-1, 2)
    ious = iou_matrix(segs, gt)
    match = ious.argmax(axis=1)
    best = ious[np.arange(len(segs)), match]
    w = segs[:, 1] - segs[:, 0]
    targets = (gt[match] - segs) / w[:, None]
    return targets, best >= iou_low


def apply_refinement_arrays(segs, deltas, length):
    segs = np.asarray(segs, dtype=np.float64).reshape(-1, 2)
    deltas = np.asarray(deltas, dtype=np.float64).reshape(-1, 2)
    w = segs[:, 1] - segs[:, 0]
    out = np.clip(segs + deltas * w[:, None], 0.0, length)
    bad = out[:, 1] <= out[:, 0]
    out[bad] = segs[bad]
    return out


def apply_refinement(p, deltas, length):
    seg = p.segment if isinstance(p, Proposal) else p
    (s, e), = apply_refinement_arrays([seg.as_tuple()], [deltas], length)
    return Segment(float(s), float(e))


class RefinementHead(nn.Module):
    """Predict ``(d_start, d_end) / width`` from context-widened ROI features."""

    def __init__(self, cfg):
        super().__init__()
        self.roi_size = cfg.roi_size
        self.context = cfg.refine_context
        dim, hid = cfg.hidden_dim, cfg.refine_dim
        self.conv1 = nn.Conv1d(dim, hid, kernel_size=3, padding=1)
        self.conv2 = nn.Conv1d(hid, hid, kernel_size=3, stride=2, padding=1)
        self.fc = nn.Linear(hid * cfg.roi_size // 2, 2)

    def forward(self, shared, segments):
        """``(B, K, 2)`` segments -> ``(B, K, 2)`` normalised boundary offsets."""
        B, K, _ = segments.shape
        pf = roi_extract(shared, segments, self.roi_size, self.context)
        x = pf.reshape(B * K, *pf.shape[-2:])
        x = F.relu(self.conv2(F.relu(self.conv1(x))))
        return self.fc(x.flatten(1)).view(B, K, 2)
