"""Soft-NMS, score fusion into final detections, and tIoU mean average precision."""
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .core import Segment, iou, iou_matrix

DEFAULT_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2))


@dataclass
class Detection:
    segment: Segment
    class_index: int
    score: float


@dataclass
class EvalResult:
    thresholds: np.ndarray
    classes: List[int]
    ap: np.ndarray  # (thresholds, classes)
    mean_ap: np.ndarray  # per threshold
    average_map: float
    curves: Dict = field(default_factory=dict, repr=False)

    def as_dict(self, include_curves=False):
        key = lambda c: c if isinstance(c, str) else int(c)
        out = {
            "thresholds": [round(float(t), 4) for t in self.thresholds],
            "classes": [key(c) for c in self.classes],
            "ap": [[float(v) for v in row] for row in self.ap],
            "mAP": [float(v) for v in self.mean_ap],
            "average_mAP": float(self.average_map),
        }
        if include_curves:
            out["pr_curves"] = {
                str(key(c)): {"precision": [float(v) for v in p], "recall": [float(v) for v in r]}
                for c, (p, r) in self.curves.items()
            }
        return out


def _det_key(d):
    return (-d.score, d.segment.start, d.segment.end)


def soft_nms(dets, sigma=0.4, score_floor=1e-4):
    """Class-agnostic Gaussian Soft-NMS.

    Repeatedly keeps the best remaining detection and multiplies every other
    remaining score by ``exp(-iou^2 / sigma)``; scores under ``score_floor``
    are dropped.  Output is in selection order.
    """
    remaining = sorted(dets, key=_det_key)
    remaining = [Detection(d.segment, d.class_index, float(d.score)) for d in remaining]
    kept = []
    while remaining:
        best = min(remaining, key=_det_key)
        remaining.remove(best)
        kept.append(best)
        for d in remaining:
            d.score *= float(np.exp(-iou(best.segment, d.segment) ** 2 / sigma))
        remaining = [d for d in remaining if d.score >= score_floor]
    return kept


def class_posteriors(logits, num_classes):
    """Softmax over all ``2M`` logits, restricted to the original classes and renormalised."""
    logits = np.asarray(logits, dtype=np.float64)
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    p = z[..., :num_classes]
    return p / p.sum(axis=-1, keepdims=True)


def fuse_and_emit(segments, confidences, posteriors, cfg, duration, length):
    """Build at most ``cfg.top_detections`` detections for one video.

    Args:
        segments: ``(K, 2)`` refined segments in clip units.
        confidences: ``(K,)`` proposal confidences.
        posteriors: ``(K, M)`` class posteriors over the original classes.
        duration: video length in seconds; ``length`` the clip count it maps to.
    """
    segments = np.asarray(segments, dtype=np.float64).reshape(-1, 2)
    confidences = np.asarray(confidences, dtype=np.float64)
    posteriors = np.asarray(posteriors, dtype=np.float64).reshape(len(segments), -1)
    cls = posteriors.argmax(axis=1)
    cls_score = posteriors.max(axis=1)
    if cfg.score_fusion == "product":
        fused = confidences * cls_score
    elif cfg.score_fusion == "proposal":
        fused = confidences
    else:
        fused = cls_score
    dets = [
        Detection(Segment(float(s), float(e)), int(c), float(np.clip(p, 0.0, 1.0)))
        for (s, e), c, p in zip(segments, cls, fused)
        if e > s
    ]
    dets = soft_nms(dets, cfg.soft_nms_sigma, cfg.score_floor)[: cfg.top_detections]
    scale = duration / length
    return [
        Detection(Segment(d.segment.start * scale, d.segment.end * scale), d.class_index, d.score)
        for d in dets
    ]


def interpolated_ap(tp, num_gt):
    """Area under the monotone precision envelope of a ranked TP/FP sequence."""
    tp = np.asarray(tp, dtype=np.float64)
    if num_gt == 0 or len(tp) == 0:
        return 0.0
    ctp = np.cumsum(tp)
    prec = ctp / np.arange(1, len(tp) + 1)
    rec = ctp / num_gt
    mprec = np.concatenate([[0.0], prec, [0.0]])
    mrec = np.concatenate([[0.0], rec, [1.0]])
    mprec = np.maximum.accumulate(mprec[::-1])[::-1]
    idx = np.nonzero(mrec[1:] != mrec[:-1])[0] + 1
    return float(np.sum((mrec[idx] - mrec[idx - 1]) * mprec[idx]))


def _as_tuple(d):
    if isinstance(d, Detection):
        return d.segment.start, d.segment.end, d.class_index, d.score
    seg, label, score = d["segment"], d["label"], d.get("score", 1.0)
    return float(seg[0]), float(seg[1]), label, float(score)


def match_class(preds, gts, threshold):
    """Greedy one-to-one matching of score-ranked predictions for one class.

    Args:
        preds: list of ``(video, start, end, score)`` already in rank order.
        gts: dict video -> ``(n, 2)`` array of ground-truth segments.
    Returns:
        ndarray: 1 for true positives, 0 for false positives, in rank order.
    """
    used = {v: np.zeros(len(g), dtype=bool) for v, g in gts.items()}
    tp = np.zeros(len(preds))
    for i, (vid, s, e, _) in enumerate(preds):
        g = gts.get(vid)
        if g is None or len(g) == 0:
            continue
        ious = iou_matrix([[s, e]], g)[0]
        for j in np.argsort(-ious, kind="stable"):
            if ious[j] < threshold:
                break
            if not used[vid][j]:
                used[vid][j] = True
                tp[i] = 1
                break
    return tp


def evaluate_map(preds, gts, thresholds=DEFAULT_THRESHOLDS, curve_threshold=0.5):
    """ActivityNet-style detection mAP.

    Args:
        preds: dict video -> list of :class:`Detection` (or dicts with
            ``segment``, ``label``, ``score``).
        gts: dict video -> list of ``(start, end, label)`` or dicts with
            ``segment`` and ``label``.
        thresholds: tIoU thresholds; the average over them is reported.
    Returns:
        EvalResult: mAP is averaged over classes that have ground truth.
    """
    thresholds = np.asarray(thresholds, dtype=np.float64)
    gt_by_class = {}
    for vid, items in gts.items():
        for it in items:
            if isinstance(it, dict):
                (s, e), c = it["segment"], it["label"]
            else:
                s, e, c = it
            gt_by_class.setdefault(c, {}).setdefault(vid, []).append((float(s), float(e)))
    classes = sorted(gt_by_class, key=str)
    pred_by_class = {c: [] for c in classes}
    for vid, items in preds.items():
        for it in items:
            s, e, c, score = _as_tuple(it)
            if c in pred_by_class:
                pred_by_class[c].append((vid, s, e, score))

    ap = np.zeros((len(thresholds), len(classes)))
    curves = {}
    for k, c in enumerate(classes):
        g = {v: np.asarray(segs) for v, segs in gt_by_class[c].items()}
        n_gt = sum(len(x) for x in g.values())
        ranked = sorted(pred_by_class[c], key=lambda p: (-p[3], str(p[0]), p[1], p[2]))
        for t, thr in enumerate(thresholds):
            tp = match_class(ranked, g, thr)
            ap[t, k] = interpolated_ap(tp, n_gt)
            if np.isclose(thr, curve_threshold) and len(tp):
                ctp = np.cumsum(tp)
                curves[c] = (ctp / np.arange(1, len(tp) + 1), ctp / n_gt)
    mean_ap = ap.mean(axis=1) if classes else np.zeros(len(thresholds))
    return EvalResult(thresholds, classes, ap, mean_ap, float(mean_ap.mean()), curves)


def detections_to_json(dets_by_video, label_names):
    """Prediction dump: video id -> list of ``{segment, label, score}`` (seconds)."""
    return {
        vid: [
            {
                "segment": [round(d.segment.start, 6), round(d.segment.end, 6)],
                "label": label_names[d.class_index],
                "score": round(d.score, 8),
            }
            for d in dets
        ]
        for vid, dets in sorted(dets_by_video.items())
    }
