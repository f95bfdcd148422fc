"""Soft labels over original + proximity categories, and the classification sampler.

A proposal overlapping a ground truth well keeps that class; a middling
overlap splits its mass between the class and its proximity twin
(``label + M``); a poor overlap becomes the proximity twin of the
ground truth whose centre is closest.
"""
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .core import Proposal, iou_matrix, segments_array

POSITIVE, PROXIMITY, PADDED = "positive", "pc", "padded"


@dataclass
class LabeledProposalBatch:
    proposals: List[Proposal]
    origin_flags: List[str] = field(default_factory=list)

    @property
    def soft_labels(self):
        return np.stack([p.soft_label for p in self.proposals])


def _first_min(keys, values):
    """Index of the minimum of ``values`` per row, ties resolved by smallest ``keys``."""
    order = np.argsort(keys, kind="stable")
    return order[np.argmin(values[:, order], axis=1)]


def soft_label_arrays(segs, gt_segs, gt_labels, num_classes, iou_high, iou_low, alpha=1.0):
    """Vectorised labeling for ``n`` proposals against ``m`` ground truths.

    Returns:
        (ndarray, ndarray, ndarray): ``(n, 2M)`` soft labels, ``(n,)`` best IoU
        and ``(n,)`` index of the best-IoU ground truth.
    """
    segs = np.asarray(segs, dtype=np.float64).reshape(-1, 2)
    gt_segs = np.asarray(gt_segs, dtype=np.float64).reshape(-1, 2)
    gt_labels = np.asarray(gt_labels, dtype=np.int64)
    if len(gt_segs) == 0:
        raise ValueError("videos without ground truth cannot be labeled")
    ious = iou_matrix(segs, gt_segs)
    # ties go to the earliest-starting ground truth
    match = _first_min(gt_segs[:, 0], -ious)
    best = ious[np.arange(len(segs)), match]
    centers = segs.mean(axis=1)[:, None]
    dists = np.abs(centers - gt_segs.mean(axis=1)[None, :])
    nearest = _first_min(gt_segs[:, 0], dists)

    rows = np.arange(len(segs))
    labels = np.zeros((len(segs), 2 * num_classes))
    idx = gt_labels[match]
    idy = gt_labels[nearest]
    high = best >= iou_high
    mid = (best >= iou_low) & ~high
    low = best < iou_low
    labels[rows[high], idx[high]] = 1.0
    # entry is clamped so the pair stays a distribution for alpha > 1 / iou_high
    share = np.clip(alpha * best[mid], 0.0, 1.0)
    labels[rows[mid], idx[mid]] = share
    labels[rows[mid], idx[mid] + num_classes] = 1.0 - share
    labels[rows[low], idy[low] + num_classes] = 1.0
    return labels, best, match


def assign_soft_label(proposal, gts, cfg):
    labels, _, _ = soft_label_arrays(
        segments_array([proposal]),
        segments_array(gts),
        [g.label_index for g in gts],
        cfg.num_classes, cfg.iou_high, cfg.iou_low, cfg.pc_alpha,
    )
    return labels[0]


def sample_indices(best_iou, confidence, num_sampled, iou_high):
    """Positives first (by confidence), then the most confident non-positives, then repeats.

    Returns:
        (ndarray, list): chosen proposal indices and their origin flags.
    """
    best_iou = np.asarray(best_iou)
    confidence = np.asarray(confidence, dtype=np.float64)
    by_conf = np.lexsort((np.arange(len(confidence)), -confidence))
    pos = [i for i in by_conf if best_iou[i] >= iou_high][:num_sampled]
    rest = [i for i in by_conf if best_iou[i] < iou_high][: num_sampled - len(pos)]
    chosen = pos + rest
    flags = [POSITIVE] * len(pos) + [PROXIMITY] * len(rest)
    if chosen and len(chosen) < num_sampled:
        ranked = sorted(chosen, key=lambda i: (-confidence[i], i))
        extra = [ranked[j % len(ranked)] for j in range(num_sampled - len(chosen))]
        chosen += extra
        flags += [PADDED] * len(extra)
    return np.asarray(chosen, dtype=np.int64), flags


def sample_for_classification(proposals, gts, cfg):
    labels, best, _ = soft_label_arrays(
        segments_array(proposals),
        segments_array(gts),
        [g.label_index for g in gts],
        cfg.num_classes, cfg.iou_high, cfg.iou_low, cfg.pc_alpha,
    )
    idx, flags = sample_indices(best, [p.confidence for p in proposals], cfg.num_sampled, cfg.iou_high)
    chosen = [
        Proposal(proposals[i].segment, proposals[i].confidence, labels[i]) for i in idx
    ]
    return LabeledProposalBatch(chosen, flags)
