"""Multi-task objective: boundary, map, refinement, classification and L2 terms."""
from dataclasses import dataclass, fields

import numpy as np
import torch
import torch.nn.functional as F

from .core import iou_matrix
from .proposal_gen import bm_cell_segments

_EPS = 1e-6


@dataclass
class LossReport:
    total: torch.Tensor
    tem_bcls: torch.Tensor
    pem_bcls: torch.Tensor
    pem_loc: torch.Tensor
    r_loc: torch.Tensor
    r_cls: torch.Tensor
    l2_reg: torch.Tensor

    def as_dict(self):
        return {f.name: float(torch.as_tensor(getattr(self, f.name)).detach()) for f in fields(self)}


def boundary_targets(gt_segs, length, radius_ratio=0.1):
    """Binary start/end targets: locations within ``max(ratio * duration, 1)`` of a boundary."""
    gt = np.asarray(gt_segs, dtype=np.float64).reshape(-1, 2)
    t = np.arange(length, dtype=np.float64)[:, None]
    radius = np.maximum(radius_ratio * (gt[:, 1] - gt[:, 0]), 1.0)[None, :]
    start = (np.abs(t - gt[None, :, 0]) <= radius).any(axis=1)
    end = (np.abs(t - gt[None, :, 1]) <= radius).any(axis=1)
    return start.astype(np.float32), end.astype(np.float32)


def iou_map_targets(gt_segs, length):
    """Best ground-truth IoU for every valid boundary-matching cell, zero elsewhere."""
    rows, cols, segs = bm_cell_segments(length)
    out = np.zeros((length, length), dtype=np.float32)
    if len(np.asarray(gt_segs).reshape(-1, 2)):
        out[rows, cols] = iou_matrix(segs, gt_segs).max(axis=1)
    return out


def weighted_binary_logistic(pred, target, mask=None):
    """Class-balanced binary log loss.

    Positives and negatives each contribute half of the loss, averaged
    within their own group, so duplicating one group leaves it unchanged.
    Falls back to plain binary cross-entropy when a group is empty.
    """
    pred = pred.reshape(-1)
    target = target.reshape(-1).to(pred.dtype)
    if mask is not None:
        keep = mask.reshape(-1).bool()
        pred, target = pred[keep], target[keep]
    p = pred.clamp(_EPS, 1 - _EPS)
    pos_log = target * torch.log(p)
    neg_log = (1 - target) * torch.log(1 - p)
    n_pos = target.sum()
    n_neg = (1 - target).sum()
    if n_pos < 0.5 or n_neg < 0.5:
        return -(pos_log + neg_log).mean()
    return -0.5 * (pos_log.sum() / n_pos + neg_log.sum() / n_neg)


def pem_loc_weights(iou_targets, valid_mask, high=0.6, low=0.2, generator=None):
    """Keep every high-IoU cell and subsample mid/low cells to roughly match their count."""
    t = iou_targets
    valid = valid_mask.expand_as(t).bool()
    h = (t > high) & valid
    m = (t <= high) & (t > low) & valid
    lo = (t <= low) & valid
    n_h = h.sum()
    if n_h == 0:
        return valid.to(t.dtype)
    r_m = torch.clamp(n_h / m.sum().clamp(min=1), max=1.0)
    r_l = torch.clamp(n_h / lo.sum().clamp(min=1), max=1.0)
    u = torch.rand(t.shape, generator=generator, dtype=torch.float64).to(t.device)
    w = h | (m & (u < r_m)) | (lo & (u < r_l))
    return w.to(t.dtype)


def pem_loc_loss(reg_map, iou_targets, valid_mask, high=0.6, low=0.2, generator=None, weights=None):
    """Weighted mean squared error between the regression map and the IoU targets."""
    if weights is None:
        weights = pem_loc_weights(iou_targets, valid_mask, high, low, generator)
    sq = (reg_map - iou_targets.to(reg_map.dtype)) ** 2
    return (sq * weights).sum() / weights.sum().clamp(min=1)


def focal_cls_loss(logits, soft_labels, focusing=2.0, row_mask=None):
    """Softmax focal loss over ``2M`` classes, scaled by ``1 / 2M`` and averaged over rows."""
    logits = logits.reshape(-1, logits.shape[-1])
    y = soft_labels.reshape(-1, logits.shape[-1]).to(logits.dtype)
    if row_mask is not None:
        keep = row_mask.reshape(-1).bool()
        logits, y = logits[keep], y[keep]
    if logits.shape[0] == 0:
        return logits.sum() * 0.0
    logp = F.log_softmax(logits, dim=-1)
    mod = (1 - logp.exp()) ** focusing if focusing else 1.0
    per_row = (y * mod * -logp).sum(dim=-1) / logits.shape[-1]
    return per_row.mean()


def smooth_l1(x):
    a = x.abs()
    return torch.where(a < 1.0, 0.5 * a * a, a - 0.5)


def refinement_loc_loss(pred_deltas, target_deltas, mask=None):
    """Smooth-L1 on normalised offsets, averaged over contributing proposals and both ends."""
    pred = pred_deltas.reshape(-1, 2)
    target = target_deltas.reshape(-1, 2).to(pred.dtype)
    if mask is not None:
        keep = mask.reshape(-1).bool()
        pred, target = pred[keep], target[keep]
    if pred.shape[0] == 0:
        return pred_deltas.sum() * 0.0
    return smooth_l1(pred - target).mean()


def l2_regularization(module):
    """Sum of squared weights; 1-D parameters (biases, norm gains) are skipped."""
    terms = [(p ** 2).sum() for p in module.parameters() if p.requires_grad and p.dim() > 1]
    return torch.stack(terms).sum() if terms else torch.zeros(())


def total_loss(tem_bcls, pem_bcls, pem_loc, r_loc, r_cls, l2_reg, cfg):
    total = (
        tem_bcls
        + cfg.pem_cls_weight * pem_bcls
        + cfg.pem_loc_weight * pem_loc
        + r_loc
        + cfg.cls_weight * r_cls
        + cfg.reg_weight * l2_reg
    )
    return LossReport(total, tem_bcls, pem_bcls, pem_loc, r_loc, r_cls, l2_reg)
