"""Training loop: step-decayed Adam, per-step loss log, atomic checkpoints."""
from __future__ import annotations

import dataclasses
import json
import logging
import os
from pathlib import Path

import numpy as np
import torch

from ..core import ConfigError, ModelConfig
from ..model import Detector
from .data import DataError, collate, load_split, write_json_atomic

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


def step_generator(seed, step):
    return torch.Generator().manual_seed(int(seed) * 1_000_003 + int(step))


def save_checkpoint(path, model, optimizer, epoch, step, cfg):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    torch.save(
        {
            "model": model.state_dict(),
            "optimizer": optimizer.state_dict() if optimizer is not None else None,
            "epoch": epoch,
            "step": step,
            "model_config": dataclasses.asdict(cfg.model),
            "config_hash": cfg.digest(),
        },
        tmp,
    )
    os.replace(tmp, path)


def load_checkpoint(path, cfg=None):
    """Load a checkpoint; with ``cfg`` given, refuse one built for another architecture."""
    try:
        state = torch.load(path, map_location="cpu", weights_only=False)
    except (OSError, RuntimeError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if cfg is not None and state["model_config"] != dataclasses.asdict(cfg.model):
        raise ConfigError(f"checkpoint {path} was trained with a different model config")
    return state


def build_model(model_cfg: ModelConfig, seed: int):
    torch.manual_seed(seed)
    return Detector(model_cfg)


def _nan_dump(out_dir, epoch, step, batch, report):
    dump = {
        "epoch": epoch,
        "step": step,
        "video_ids": batch.video_ids,
        "losses": {k: repr(v) for k, v in report.as_dict().items()},
    }
    write_json_atomic(Path(out_dir) / "nan_dump.json", dump)
    return dump


def train(cfg, resume=None, records=None, max_epochs=None):
    """Train on ``cfg.data.train_split``.

    Args:
        resume: checkpoint path to continue from (epoch granularity).
        records: pre-loaded training records, bypassing the file loader.
        max_epochs: stop after this many epochs in total (schedule unchanged).
    Returns:
        (Detector, list[dict]): trained model and the per-step log.
    """
    sched = cfg.train
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if records is None:
        records, skipped = load_split(cfg, cfg.data.train_split, require_actions=True)
        if skipped:
            log.info("skipped %d videos without actions or features", len(skipped))
    records = [r for r in records if len(r.gt_segments)]
    if not records:
        raise DataError("no training videos with actions")

    model = build_model(cfg.model, sched.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=sched.base_lr)
    start_epoch, step = 0, 0
    if resume:
        state = load_checkpoint(resume, cfg)
        model.load_state_dict(state["model"])
        optimizer.load_state_dict(state["optimizer"])
        start_epoch, step = state["epoch"], state["step"]

    log_path = out / "metrics.jsonl"
    history = []
    end_epoch = sched.epochs if max_epochs is None else min(sched.epochs, max_epochs)
    with open(log_path, "a" if resume else "w") as fh:
        for epoch in range(start_epoch, end_epoch):
            lr = sched.lr_at(epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            order = np.random.default_rng([sched.seed, epoch]).permutation(len(records))
            model.train()
            for i in range(0, len(order), sched.batch_size):
                batch = collate([records[j] for j in order[i : i + sched.batch_size]])
                report, plan = model.losses(batch, generator=step_generator(sched.seed, step))
                if not torch.isfinite(report.total):
                    dump = _nan_dump(out, epoch, step, batch, report)
                    raise TrainingError(f"non-finite loss at epoch {epoch} step {step}: {dump}")
                optimizer.zero_grad()
                report.total.backward()
                if sched.grad_clip:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), sched.grad_clip)
                optimizer.step()
                entry = {"epoch": epoch, "step": step, "lr": lr, **report.as_dict(),
                         "num_positive": plan.num_positive}
                history.append(entry)
                fh.write(json.dumps(entry) + "\n")
                step += 1
            fh.flush()
            log.info("epoch %d done: last total loss %.4f", epoch, history[-1]["total"])
            if (epoch + 1) % sched.checkpoint_every == 0 or epoch + 1 == end_epoch:
                ckpt = out / "checkpoints" / f"epoch_{epoch + 1:03d}.pt"
                save_checkpoint(ckpt, model, optimizer, epoch + 1, step, cfg)
                save_checkpoint(out / "checkpoints" / "last.pt", model, optimizer, epoch + 1, step, cfg)
    return model, history
