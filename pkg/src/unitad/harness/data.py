"""Feature files, annotation documents and batching.

Feature file layout: ``<dir>/<video>.bin`` holds little-endian float32
values in row-major ``L x C`` order; ``<dir>/<video>.json`` carries
``{"L": ..., "C": ..., "clip_stride": ...}``.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

from ..core import FeatureSequence, resize_features, seconds_to_clips
from ..model import VideoBatch

log = logging.getLogger(__name__)


class DataError(RuntimeError):
    """Raised for unreadable, missing or inconsistent input data."""


def write_features(directory, video_id, data, clip_stride=32):
    """Write a ``(C, L)`` matrix to the binary + sidecar pair."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data = np.asarray(data)
    C, L = data.shape
    data.T.astype("<f4").tofile(directory / f"{video_id}.bin")
    (directory / f"{video_id}.json").write_text(json.dumps({"L": L, "C": C, "clip_stride": clip_stride}))


def read_features(directory, video_id) -> FeatureSequence:
    directory = Path(directory)
    try:
        meta = json.loads((directory / f"{video_id}.json").read_text())
        raw = np.fromfile(directory / f"{video_id}.bin", dtype="<f4")
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read features for {video_id}: {exc}") from exc
    L, C = int(meta["L"]), int(meta["C"])
    if raw.size != L * C:
        raise DataError(f"{video_id}: expected {L}x{C} values, found {raw.size}")
    return FeatureSequence(raw.reshape(L, C).T.astype(np.float32), int(meta.get("clip_stride", 32)))


def write_json_atomic(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=1, sort_keys=True))
    os.replace(tmp, path)


def load_annotations(path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read annotations {path}: {exc}") from exc
    if "labels" not in doc or "database" not in doc:
        raise DataError(f"{path}: annotation file needs 'labels' and 'database'")
    labels = list(doc["labels"])
    known = set(labels)
    for vid, entry in doc["database"].items():
        for a in entry.get("annotations", []):
            if a["label"] not in known:
                raise DataError(f"{vid}: label {a['label']!r} is not declared")
    return doc


def clip_ground_truth(entry, labels, length, video_id=""):
    """Convert second-based annotations to clip units, dropping degenerate segments."""
    index = {name: i for i, name in enumerate(labels)}
    dur = float(entry["duration_seconds"])
    segs, labs = [], []
    for a in entry.get("annotations", []):
        s, e = (seconds_to_clips(float(t), dur, length) for t in a["segment"])
        s, e = max(0.0, s), min(float(length), e)
        if e <= s:
            log.warning("%s: dropping degenerate segment %s", video_id, a["segment"])
            continue
        segs.append((s, e))
        labs.append(index[a["label"]])
    return np.asarray(segs, dtype=np.float64).reshape(-1, 2), np.asarray(labs, dtype=np.int64)


@dataclass
class VideoRecord:
    video_id: str
    features: np.ndarray  # (C, L) resized
    gt_segments: np.ndarray
    gt_labels: np.ndarray
    duration: float
    aux_features: Optional[np.ndarray] = None


def load_split(cfg, split, require_actions=False):
    """Load every video of ``split``.

    Returns:
        (list[VideoRecord], list[str]): records and the ids skipped for
        missing features (or, when ``require_actions``, for having no actions).
    """
    doc = load_annotations(cfg.data.annotations)
    labels = doc["labels"]
    if len(labels) != cfg.model.num_classes:
        raise DataError(f"{len(labels)} declared labels but model.num_classes={cfg.model.num_classes}")
    L = cfg.model.num_clips
    records, skipped = [], []
    for vid in sorted(doc["database"]):
        entry = doc["database"][vid]
        if entry.get("subset") != split:
            continue
        segs, labs = clip_ground_truth(entry, labels, L, vid)
        if require_actions and len(segs) == 0:
            skipped.append(vid)
            continue
        try:
            x = _prepare(read_features(cfg.data.feature_dir, vid), cfg.model.in_dim, L)
            aux = None
            if cfg.model.aux_dim:
                aux = _prepare(read_features(cfg.data.aux_feature_dir, vid), cfg.model.aux_dim, L)
        except DataError as exc:
            log.warning("skipping %s: %s", vid, exc)
            skipped.append(vid)
            continue
        records.append(VideoRecord(vid, x, segs, labs, float(entry["duration_seconds"]), aux))
    return records, skipped


def _prepare(seq, dim, length):
    if seq.dim != dim:
        raise DataError(f"feature dim {seq.dim} does not match configured {dim}")
    if seq.length != length:
        seq = resize_features(seq, length)
    return seq.data.astype(np.float32)


def collate(records: List[VideoRecord], dtype=torch.float32) -> VideoBatch:
    feats = torch.from_numpy(np.stack([r.features for r in records])).to(dtype)
    aux = None
    if records[0].aux_features is not None:
        aux = torch.from_numpy(np.stack([r.aux_features for r in records])).to(dtype)
    return VideoBatch(
        features=feats,
        gt_segments=[r.gt_segments for r in records],
        gt_labels=[r.gt_labels for r in records],
        aux_features=aux,
        video_ids=[r.video_id for r in records],
        durations=[r.duration for r in records],
    )
