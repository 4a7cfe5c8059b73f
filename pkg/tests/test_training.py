import json

import pytest
import torch

from assign_hoi.data import split_leave_one_subject_out
from assign_hoi.errors import ConfigError, TrainingDivergedError
from assign_hoi.losses import LossConfig
from assign_hoi.model import collate
from assign_hoi.training import (TrainSchedule, build_model, cross_validate, loss_parts, predict, summarize,
                                 train, validation_loss)

TINY = dict(frame_hidden=4, segment_hidden=4, boundary_mlp_widths=[6], label_mlp_widths=[6])


def _model(ds, kind="assign", seed=0, **kw):
    if kind == "assign":
        cfg = dict(feature_dim=ds.feature_dim, num_labels=ds.num_labels, **TINY, **kw)
    else:
        cfg = dict(feature_dim=ds.feature_dim, num_labels=ds.num_labels, hidden=4, mlp_widths=[6], **kw)
    return build_model(kind, cfg, seed)


def test_one_epoch_reduces_loss_on_a_single_video(small_dataset):
    video = [small_dataset[0]]
    model = _model(small_dataset)
    before, _ = validation_loss(model, video, LossConfig(), stage=1)
    sched = TrainSchedule(stage1_epochs=1, stage2_epochs=0, learning_rate=1e-2, batch_size=1)
    train(model, video, video, sched)
    after, _ = validation_loss(model, video, LossConfig(), stage=1)
    assert after < before


def test_logs_are_bit_identical_across_runs(small_dataset, tmp_path):
    sched = TrainSchedule(stage1_epochs=1, stage2_epochs=2, batch_size=3, seed=4)
    fit, val = list(small_dataset)[:5], list(small_dataset)[5:7]
    for name in ("a", "b"):
        train(_model(small_dataset, seed=2), fit, val, sched, log_path=tmp_path / f"{name}.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    records = [json.loads(l) for l in (tmp_path / "a.jsonl").read_text().splitlines()]
    assert [(r["stage"], r["epoch"]) for r in records] == [(1, 0), (2, 0), (2, 1)]


def test_stage_one_updates_every_frame(small_dataset):
    model = _model(small_dataset)
    batch = collate(list(small_dataset)[:3])
    parts, out = loss_parts(model, batch, LossConfig(), stage=1)
    expect = torch.tensor([v.num_frames * v.num_entities for v in list(small_dataset)[:3]])
    assert torch.equal(out.segment.update_count.long(), expect)
    parts2, out2 = loss_parts(model, batch, LossConfig(), stage=2)
    assert (out2.segment.update_count.long() <= expect).all()
    assert set(parts2) == {"label", "seg", "anticipation"}


def test_skipping_stage_one(small_dataset):
    sched = TrainSchedule(stage1_epochs=3, stage2_epochs=1, skip_stage1=True)
    res = train(_model(small_dataset), list(small_dataset)[:3], list(small_dataset)[3:4], sched)
    assert [r["stage"] for r in res.log] == [2]
    assert res.best_stage == 2


def test_baseline_runs_a_single_frame_wise_stage(small_dataset):
    sched = TrainSchedule(stage1_epochs=1, stage2_epochs=1)
    res = train(_model(small_dataset, "independent_birnn"), list(small_dataset)[:3],
                list(small_dataset)[3:4], sched)
    assert [r["stage"] for r in res.log] == [1, 1]
    assert set(res.log[0]["train"]) == {"label", "total"}


def test_best_checkpoint_is_restored(small_dataset):
    fit, val = list(small_dataset)[:4], list(small_dataset)[4:6]
    res = train(_model(small_dataset), fit, val, TrainSchedule(stage1_epochs=1, stage2_epochs=3))
    stage2 = [r["val_loss"] for r in res.log if r["stage"] == 2]
    assert res.best_val_loss == min(stage2)
    assert res.best_epoch == stage2.index(min(stage2))
    again, _ = validation_loss(res.model, val, LossConfig(), stage=2)
    assert again == pytest.approx(res.best_val_loss)


def test_non_finite_loss_aborts(small_dataset):
    model = _model(small_dataset)
    with torch.no_grad():
        next(model.parameters()).fill_(float("nan"))
    with pytest.raises(TrainingDivergedError, match="stage 1"):
        train(model, list(small_dataset)[:2], list(small_dataset)[2:3], TrainSchedule(1, 1))


def test_empty_split_rejected(small_dataset):
    with pytest.raises(ValueError):
        train(_model(small_dataset), [], list(small_dataset)[:1], TrainSchedule())


def test_unknown_kind(small_dataset):
    with pytest.raises(ConfigError):
        build_model("mystery", {})


def test_known_segmentation_needs_boundary_input(small_dataset):
    with pytest.raises(ConfigError):
        predict(_model(small_dataset, "independent_birnn"), list(small_dataset)[:1], known_segmentation=True)


def test_known_segmentation_follows_ground_truth(small_dataset):
    videos = list(small_dataset)[:3]
    preds = predict(_model(small_dataset), videos, known_segmentation=True)
    for v in videos:
        for eid, seg in preds[v.id].items():
            assert [(a, b) for a, b, _ in seg] == [(a, b) for a, b, _ in v.ground_truth[eid]]


def test_cross_validation_folds(small_dataset):
    sched = TrainSchedule(stage1_epochs=1, stage2_epochs=1)
    res = cross_validate(small_dataset, "assign", dict(feature_dim=small_dataset.feature_dim,
                                                       num_labels=small_dataset.num_labels, **TINY), sched)
    assert [f.subject for f in res["folds"]] == small_dataset.subjects()
    for fold in res["folds"]:
        _, test = split_leave_one_subject_out(small_dataset, fold.subject)
        assert fold.num_test == len(test)
        assert fold.num_fit + fold.num_val + fold.num_test == len(small_dataset)
    assert "human/f1@0.10" in res["summary"]


def test_summary_of_identical_folds_has_zero_spread():
    out = summarize([{"a": 2.0}, {"a": 2.0}, {"a": 2.0}])
    assert out["a"] == {"mean": 2.0, "std": 0.0}
    assert summarize([{"a": 1.0}, {"a": 3.0}])["a"]["std"] == pytest.approx(2 ** 0.5)


@pytest.mark.parametrize("kw", [dict(stage1_epochs=-1), dict(learning_rate=0), dict(batch_size=0),
                                dict(validation_fraction=1.0)])
def test_schedule_validation(kw):
    with pytest.raises(ValueError):
        TrainSchedule(**kw)
