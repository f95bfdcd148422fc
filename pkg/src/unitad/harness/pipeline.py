"""File-level operations behind the CLI: synth, infer, evaluate."""
from __future__ import annotations

import json
import logging
from pathlib import Path

import torch

from ..infer_eval import DEFAULT_THRESHOLDS, detections_to_json, evaluate_map
from .data import DataError, collate, load_annotations, load_split, write_features, write_json_atomic
from .synthetic import make_dataset
from .train import build_model, load_checkpoint

log = logging.getLogger(__name__)


def synth(cfg):
    """Write the synthetic benchmark described by ``cfg.synth`` to the configured paths."""
    data = make_dataset(cfg.synth)
    for vid, x in data["features"].items():
        write_features(cfg.data.feature_dir, vid, x)
    if data["aux_features"]:
        if not cfg.data.aux_feature_dir:
            raise DataError("synth.aux_dim is set but data.aux_feature_dir is empty")
        for vid, x in data["aux_features"].items():
            write_features(cfg.data.aux_feature_dir, vid, x)
    write_json_atomic(cfg.data.annotations, data["annotations"])
    return data["annotations"]


def predict_records(model, records, labels, batch_size=8):
    """Detections for in-memory records, in the prediction-dump format."""
    model.eval()
    dets = {}
    for i in range(0, len(records), batch_size):
        chunk = records[i : i + batch_size]
        batch = collate(chunk)
        out = model.detect(batch.features, batch.durations, batch.aux_features)
        for rec, d in zip(chunk, out):
            dets[rec.video_id] = d
    return detections_to_json(dets, labels)


def infer(cfg, checkpoint, split=None, out_path=None):
    """Run the full detector over a split.

    Returns:
        (dict, list[str]): the prediction dump and the ids skipped for
        missing or unreadable features.
    """
    split = split or cfg.data.eval_split
    state = load_checkpoint(checkpoint, cfg)
    model = build_model(cfg.model, cfg.train.seed)
    model.load_state_dict(state["model"])
    labels = load_annotations(cfg.data.annotations)["labels"]
    records, skipped = load_split(cfg, split)
    for vid in skipped:
        log.warning("no features for %s; skipped", vid)
    preds = predict_records(model, records, labels) if records else {}
    if out_path:
        write_json_atomic(out_path, preds)
    return preds, skipped


def ground_truth_for(doc, split):
    return {
        vid: [{"segment": a["segment"], "label": a["label"]} for a in entry.get("annotations", [])]
        for vid, entry in doc["database"].items()
        if entry.get("subset") == split
    }


def evaluate(predictions_path, annotations_path, thresholds=None, split="validation"):
    """Score a prediction dump against one subset of an annotation file."""
    doc = load_annotations(annotations_path)
    try:
        preds = json.loads(Path(predictions_path).read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read predictions {predictions_path}: {exc}") from exc
    return evaluate_predictions(preds, doc, thresholds, split)


def evaluate_predictions(preds, doc, thresholds=None, split="validation"):
    known = set(doc["labels"])
    for vid, items in preds.items():
        for it in items:
            if it["label"] not in known:
                raise DataError(f"{vid}: predicted label {it['label']!r} is not declared")
    gts = ground_truth_for(doc, split)
    preds = {vid: items for vid, items in preds.items() if vid in gts}
    return evaluate_map(preds, gts, thresholds or DEFAULT_THRESHOLDS)


def format_table(result):
    head = " ".join(f"{t:>6.2f}" for t in result.thresholds)
    vals = " ".join(f"{100 * v:6.2f}" for v in result.mean_ap)
    return f"tIoU  {head}   avg\nmAP%  {vals} {100 * result.average_map:6.2f}"
