import numpy as np
import pytest
import torch

from unitad.model import Detector, VideoBatch

from conftest import tiny_config


def _batch(cfg, B=2, seed=0, aux=False):
    g = torch.Generator().manual_seed(seed)
    return VideoBatch(
        features=torch.randn(B, cfg.in_dim, cfg.num_clips, generator=g),
        gt_segments=[np.array([[1.0, 5.0], [7.0, 10.0]]), np.array([[3.0, 9.0]])][:B],
        gt_labels=[np.array([0, 2]), np.array([1])][:B],
        aux_features=torch.randn(B, cfg.aux_dim, cfg.num_clips, generator=g) if aux else None,
        video_ids=[f"v{i}" for i in range(B)],
        durations=[24.0, 12.0][:B],
    )


def test_plan_shapes_and_counts():
    cfg = tiny_config()
    model = Detector(cfg)
    batch = _batch(cfg)
    report, plan = model.losses(batch, generator=torch.Generator().manual_seed(0))
    K, N, M = cfg.num_proposals, cfg.num_sampled, cfg.num_classes
    assert plan.cls_segments.shape == (2, N, 2)
    assert plan.cls_labels.shape == (2, N, 2 * M)
    torch.testing.assert_close(plan.cls_labels.sum(-1), torch.ones(2, N))
    assert plan.ref_segments.shape == (2, K, 2)
    # fake proposals fill the tail; the first of them is the earliest ground truth itself
    torch.testing.assert_close(plan.ref_segments[0, cfg.num_real], torch.tensor([1.0, 5.0]))
    assert bool(plan.ref_mask[:, cfg.num_real:].all())
    assert torch.isfinite(report.total)
    for v in report.as_dict().values():
        assert v >= 0


def test_same_plan_same_loss():
    cfg = tiny_config()
    model = Detector(cfg)
    batch = _batch(cfg)
    r1, plan = model.losses(batch, generator=torch.Generator().manual_seed(0))
    r2, _ = model.losses(batch, plan=plan)
    assert r1.total.item() == r2.total.item()


def test_ablation_flags_change_plan():
    batch_cfg = tiny_config()
    no_pc = Detector(tiny_config(use_pc_labels=False))
    _, plan = no_pc.losses(_batch(batch_cfg), generator=torch.Generator().manual_seed(0))
    pos = plan.cls_labels[..., : batch_cfg.num_classes].max(-1).values >= 1.0
    assert torch.equal(plan.cls_mask, pos)
    no_fake = Detector(tiny_config(use_fake_proposals=False))
    _, plan = no_fake.losses(_batch(batch_cfg), generator=torch.Generator().manual_seed(0))
    shared, bp, bm = no_fake(_batch(batch_cfg).features)
    segs, _ = no_fake._decode(bp, bm, 0)
    np.testing.assert_array_equal(plan.ref_segments[0].numpy(), segs.astype(np.float32))


def test_every_parameter_receives_gradient():
    cfg = tiny_config()
    model = Detector(cfg)
    report, _ = model.losses(_batch(cfg), generator=torch.Generator().manual_seed(0))
    report.total.backward()
    dead = [n for n, p in model.named_parameters() if p.grad is None or torch.count_nonzero(p.grad) == 0]
    assert dead == []


def test_predict_and_detect_contract():
    cfg = tiny_config()
    model = Detector(cfg).eval()
    batch = _batch(cfg)
    with torch.no_grad():
        out = model.predict(batch.features)
        dets = model.detect(batch.features, batch.durations)
    assert len(out) == 2
    segs, conf, post = out[0]
    assert segs.shape == (cfg.num_proposals, 2) and post.shape == (cfg.num_proposals, cfg.num_classes)
    np.testing.assert_allclose(post.sum(1), 1.0)
    for d, dur in zip(dets, batch.durations):
        assert len(d) <= cfg.top_detections
        assert all(0 <= x.segment.start < x.segment.end <= dur + 1e-9 for x in d)
    with torch.no_grad():
        again = model.detect(batch.features, batch.durations)
    assert [[(x.segment, x.class_index, x.score) for x in d] for d in again] == \
        [[(x.segment, x.class_index, x.score) for x in d] for d in dets]


def test_auxiliary_mode_mirrors_and_folds():
    cfg = tiny_config(aux_dim=3)
    model = Detector(cfg)
    batch = _batch(cfg, aux=True)
    shared, bp, bm = model(batch.features, batch.aux_features)
    assert shared.shape[-1] == 2 * cfg.num_clips
    assert bm.cls_map.shape[-1] == 2 * cfg.num_clips
    gts = model._timeline_gts(np.array([[1.0, 5.0]]))
    np.testing.assert_array_equal(gts, [[1.0, 5.0], [13.0, 17.0]])
    folded = model._fold(np.array([[13.0, 17.0], [2.0, 4.0], [10.0, 15.0]]))
    np.testing.assert_array_equal(folded, [[1.0, 5.0], [2.0, 4.0], [10.0, 12.0]])
    report, _ = model.losses(batch, generator=torch.Generator().manual_seed(0))
    assert torch.isfinite(report.total)
    with torch.no_grad():
        dets = model.detect(batch.features, batch.durations, batch.aux_features)
    assert all(x.segment.end <= dur + 1e-9 for d, dur in zip(dets, batch.durations) for x in d)
