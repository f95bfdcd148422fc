"""End-to-end detector: shared features, proposals, classification and refinement."""
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import torch
from torch import nn

from .backbone import build_backbone
from .cls_head import ClassificationHead
from .infer_eval import class_posteriors, fuse_and_emit
from .losses import (
    boundary_targets,
    focal_cls_loss,
    iou_map_targets,
    l2_regularization,
    pem_loc_loss,
    pem_loc_weights,
    refinement_loc_loss,
    total_loss,
    weighted_binary_logistic,
)
from .pc_sampler import POSITIVE, sample_indices, soft_label_arrays
from .proposal_gen import ProposalGenerator, decode_arrays
from .refine import RefinementHead, apply_refinement_arrays, fake_segment_arrays, refinement_targets


@dataclass
class VideoBatch:
    features: torch.Tensor  # (B, C, L)
    gt_segments: List[np.ndarray]  # clip units on the main timeline
    gt_labels: List[np.ndarray]
    aux_features: Optional[torch.Tensor] = None
    video_ids: Optional[List[str]] = None
    durations: Optional[List[float]] = None


@dataclass
class TrainingPlan:
    """Everything non-differentiable a training step needs, fixed once per step."""

    start_target: torch.Tensor
    end_target: torch.Tensor
    iou_target: torch.Tensor
    pem_weights: torch.Tensor
    cls_segments: torch.Tensor  # (B, N, 2)
    cls_labels: torch.Tensor  # (B, N, 2M)
    cls_mask: torch.Tensor  # (B, N) rows that enter the classification loss
    ref_segments: torch.Tensor  # (B, K, 2)
    ref_targets: torch.Tensor
    ref_mask: torch.Tensor
    num_positive: int = 0


class Detector(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.backbone = build_backbone(cfg)
        self.proposals = ProposalGenerator(cfg)
        self.cls_head = ClassificationHead(cfg)
        self.refine_head = RefinementHead(cfg)

    def shared_features(self, features, aux_features=None):
        if self.cfg.aux_dim:
            return self.backbone(features, aux_features)
        return self.backbone(features)

    def forward(self, features, aux_features=None):
        shared = self.shared_features(features, aux_features)
        bp, bm = self.proposals(shared)
        return shared, bp, bm

    def _timeline_gts(self, segs):
        """Ground truths on the shared timeline; mirrored onto the auxiliary half."""
        segs = np.asarray(segs, dtype=np.float64).reshape(-1, 2)
        if self.cfg.aux_dim:
            return np.concatenate([segs, segs + self.cfg.num_clips])
        return segs

    def _decode(self, bp, bm, b):
        return decode_arrays(
            bp.p_start[b].detach().cpu().double().numpy(),
            bp.p_end[b].detach().cpu().double().numpy(),
            bm.cls_map[b].detach().cpu().double().numpy(),
            bm.reg_map[b].detach().cpu().double().numpy(),
            self.cfg.num_proposals,
            self.cfg.peak_ratio,
        )

    @torch.no_grad()
    def plan(self, batch, bp, bm, generator=None):
        cfg = self.cfg
        L_s = cfg.seq_len
        dtype = bp.p_start.dtype
        starts, ends, ious = [], [], []
        cls_segs, cls_labels, cls_mask = [], [], []
        ref_segs, ref_targets, ref_mask = [], [], []
        n_pos = 0
        for b, (segs, labels) in enumerate(zip(batch.gt_segments, batch.gt_labels)):
            gt = self._timeline_gts(segs)
            lab = np.tile(np.asarray(labels), len(gt) // max(len(segs), 1))
            s_t, e_t = boundary_targets(gt, L_s, cfg.boundary_radius_ratio)
            starts.append(s_t)
            ends.append(e_t)
            ious.append(iou_map_targets(gt, L_s))

            props, conf = self._decode(bp, bm, b)
            soft, best, _ = soft_label_arrays(
                props, gt, lab, cfg.num_classes, cfg.iou_high, cfg.iou_low, cfg.pc_alpha
            )
            idx, flags = sample_indices(best, conf, cfg.num_sampled, cfg.iou_high)
            cls_segs.append(props[idx])
            cls_labels.append(soft[idx])
            pos = best[idx] >= cfg.iou_high
            n_pos += int(sum(f == POSITIVE for f in flags))
            cls_mask.append(np.ones(len(idx), bool) if cfg.use_pc_labels else pos)

            if cfg.use_fake_proposals:
                n_fake = cfg.num_proposals - cfg.num_real
                rsegs = np.concatenate([props[: cfg.num_real], fake_segment_arrays(gt, n_fake, L_s)])
            else:
                rsegs = props
            tgt, msk = refinement_targets(rsegs, gt, cfg.iou_low)
            ref_segs.append(rsegs)
            ref_targets.append(tgt)
            ref_mask.append(msk)

        iou_target = torch.from_numpy(np.stack(ious)).to(dtype)
        valid = bm.valid_mask
        t = lambda a, dt=dtype: torch.from_numpy(np.stack(a)).to(dt)
        return TrainingPlan(
            start_target=t(starts),
            end_target=t(ends),
            iou_target=iou_target,
            pem_weights=pem_loc_weights(iou_target, valid, cfg.pem_high_iou, cfg.pem_low_iou, generator),
            cls_segments=t(cls_segs),
            cls_labels=t(cls_labels),
            cls_mask=t(cls_mask, torch.bool),
            ref_segments=t(ref_segs),
            ref_targets=t(ref_targets),
            ref_mask=t(ref_mask, torch.bool),
            num_positive=n_pos,
        )

    def losses(self, batch, plan=None, generator=None):
        """Run a full training forward pass.

        Returns:
            (LossReport, TrainingPlan): the plan can be passed back in to
            re-evaluate the same objective (used by gradient checks).
        """
        cfg = self.cfg
        shared, bp, bm = self(batch.features, batch.aux_features)
        if plan is None:
            plan = self.plan(batch, bp, bm, generator)
        valid = bm.valid_mask.unsqueeze(0).expand_as(bm.cls_map)

        tem = weighted_binary_logistic(bp.p_start, plan.start_target) + weighted_binary_logistic(
            bp.p_end, plan.end_target
        )
        pem_cls = weighted_binary_logistic(bm.cls_map, plan.iou_target > cfg.pem_pos_iou, valid)
        pem_loc = pem_loc_loss(bm.reg_map, plan.iou_target, valid, weights=plan.pem_weights)

        logits = self.cls_head(shared, plan.cls_segments)
        r_cls = focal_cls_loss(logits, plan.cls_labels, cfg.focal_gamma, plan.cls_mask)
        deltas = self.refine_head(shared, plan.ref_segments)
        r_loc = refinement_loc_loss(deltas, plan.ref_targets, plan.ref_mask)
        report = total_loss(tem, pem_cls, pem_loc, r_loc, r_cls, l2_regularization(self), cfg)
        return report, plan

    @torch.no_grad()
    def predict(self, features, aux_features=None):
        """Raw per-video outputs: refined segments, confidences and class posteriors (clip units)."""
        cfg = self.cfg
        shared, bp, bm = self(features, aux_features)
        props, confs = [], []
        for b in range(shared.shape[0]):
            p, c = self._decode(bp, bm, b)
            props.append(p)
            confs.append(c)
        segs = torch.from_numpy(np.stack(props)).to(shared.dtype)
        logits = self.cls_head(shared, segs).double().numpy()
        deltas = self.refine_head(shared, segs).double().numpy()
        out = []
        for b in range(shared.shape[0]):
            refined = apply_refinement_arrays(props[b], deltas[b], cfg.seq_len)
            refined = self._fold(refined)
            out.append((refined, confs[b], class_posteriors(logits[b], cfg.num_classes)))
        return out

    def _fold(self, segs):
        """Map auxiliary-half segments back onto the main timeline."""
        if not self.cfg.aux_dim:
            return segs
        L = self.cfg.num_clips
        segs = segs.copy()
        second = segs[:, 0] >= L
        segs[second] -= L
        segs[~second, 1] = np.minimum(segs[~second, 1], L)
        return segs

    def detect(self, features, durations, aux_features=None):
        """Final detections (seconds) for every video in the batch."""
        results = []
        for (segs, conf, post), dur in zip(self.predict(features, aux_features), durations):
            results.append(fuse_and_emit(segs, conf, post, self.cfg, dur, self.cfg.num_clips))
        return results
