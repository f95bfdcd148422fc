"""Seeded synthetic detection benchmark.

Each video is Gaussian background noise.  Every planted action adds a
fixed per-class template over its clips, faded in and out over
``ramp`` clips at each end.  An action covering clips ``s .. e-1`` is
annotated as the segment ``(s, e)``; actions are separated by at least
one background clip.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..core import ConfigError


@dataclass
class SyntheticSpec:
    num_videos: int = 250
    val_fraction: float = 0.2
    dim: int = 64
    aux_dim: int = 0
    length: int = 100
    num_classes: int = 10
    actions_per_video: Tuple[int, int] = (1, 3)
    min_duration: float = 0.05
    max_duration: float = 0.4
    noise: float = 0.1
    ramp: int = 2
    seed: int = 0

    def __post_init__(self):
        self.actions_per_video = tuple(int(a) for a in self.actions_per_video)
        lo, hi = self.actions_per_video
        if not 0 <= lo <= hi:
            raise ConfigError("actions_per_video must be an increasing (min, max) pair")
        if not 0 < self.min_duration <= self.max_duration <= 1:
            raise ConfigError("durations are fractions with 0 < min <= max <= 1")
        if self.min_clips < 1:
            raise ConfigError("minimum action duration rounds to zero clips")
        # every action needs its clips plus one separating background clip
        if hi * (self.min_clips + 1) > self.length:
            raise ConfigError("actions cannot be packed into the video")
        if self.noise < 0 or self.length < 2 or self.dim < 1:
            raise ConfigError("invalid noise, length or dim")

    @property
    def min_clips(self):
        return int(round(self.min_duration * self.length))

    @property
    def max_clips(self):
        return max(self.min_clips, int(round(self.max_duration * self.length)))


def class_names(num_classes):
    return [f"action_{i:02d}" for i in range(num_classes)]


def _place_actions(rng, spec, count):
    """Random non-overlapping integer intervals with at least one free clip between them."""
    L = spec.length
    for _ in range(100):
        durs = rng.integers(spec.min_clips, spec.max_clips + 1, size=count)
        free = L - durs.sum() - max(count - 1, 0)
        if free >= 0:
            break
    else:
        durs = np.full(count, spec.min_clips)
        free = L - durs.sum() - max(count - 1, 0)
    cuts = np.sort(rng.integers(0, free + 1, size=count))
    gaps = np.diff(np.r_[0, cuts])
    starts, pos = [], 0
    for d, g in zip(durs, gaps):
        pos += g
        starts.append(pos)
        pos += d + 1
    return [(int(s), int(s + d)) for s, d in zip(starts, durs)]


def ramp_weights(start, end, ramp, length):
    t = np.arange(length)
    w = np.minimum.reduce([np.ones(length), (t - start + 1) / (ramp + 1), (end - t) / (ramp + 1)])
    return np.where((t >= start) & (t < end), w, 0.0)


def make_dataset(spec: SyntheticSpec):
    """Build the benchmark in memory.

    Returns:
        dict with ``features`` (video -> (C, L) float32), ``aux_features``,
        ``annotations`` (ActivityNet-style document), ``templates`` and
        ``clip_segments`` (video -> list of (start, end, class) in clips).
    """
    rng = np.random.default_rng(spec.seed)
    templates = rng.standard_normal((spec.num_classes, spec.dim))
    aux_templates = rng.standard_normal((spec.num_classes, spec.aux_dim)) if spec.aux_dim else None
    names = class_names(spec.num_classes)
    n_val = int(round(spec.num_videos * spec.val_fraction))
    lo, hi = spec.actions_per_video

    features, aux_features, database, clip_segments = {}, {}, {}, {}
    for v in range(spec.num_videos):
        vid = f"v_{v:05d}"
        duration = float(np.round(rng.uniform(0.5, 2.0) * spec.length, 3))
        count = int(rng.integers(lo, hi + 1))
        actions = [(s, e, int(rng.integers(spec.num_classes))) for s, e in _place_actions(rng, spec, count)]
        x = spec.noise * rng.standard_normal((spec.dim, spec.length))
        xa = spec.noise * rng.standard_normal((spec.aux_dim, spec.length)) if spec.aux_dim else None
        for s, e, c in actions:
            w = ramp_weights(s, e, spec.ramp, spec.length)
            x += templates[c][:, None] * w[None, :]
            if xa is not None:
                xa += aux_templates[c][:, None] * w[None, :]
        features[vid] = x.astype(np.float32)
        if xa is not None:
            aux_features[vid] = xa.astype(np.float32)
        clip_segments[vid] = actions
        scale = duration / spec.length
        database[vid] = {
            "duration_seconds": duration,
            "subset": "validation" if v >= spec.num_videos - n_val else "training",
            "annotations": [
                {"segment": [round(s * scale, 6), round(e * scale, 6)], "label": names[c]}
                for s, e, c in actions
            ],
        }
    return {
        "features": features,
        "aux_features": aux_features,
        "annotations": {"labels": names, "database": database},
        "templates": templates,
        "clip_segments": clip_segments,
    }


def oracle_detect(x, templates, ramp=2):
    """Template-correlation detector used to check that a dataset is solvable.

    Correlates every clip with every class template, keeps clips whose best
    correlation clears half the weakest ramp weight and returns runs of
    equal class as ``(start, end, class, score)`` in clip units.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(templates, dtype=np.float64)
    corr = t @ x / np.sum(t * t, axis=1, keepdims=True)
    cls = corr.argmax(axis=0)
    best = corr.max(axis=0)
    active = best > 0.5 / (ramp + 1)
    out = []
    t0 = None
    for i in range(len(best) + 1):
        edge = i == len(best) or not active[i] or (t0 is not None and cls[i] != cls[t0])
        if t0 is not None and edge:
            out.append((t0, i, int(cls[t0]), float(np.clip(best[t0:i].mean(), 0, 1))))
            t0 = None
        if i < len(best) and active[i] and t0 is None:
            t0 = i
    return out
