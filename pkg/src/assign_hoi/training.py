"""Two-stage training, prediction and leave-one-subject-out cross-validation."""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from . import metrics
from .baselines import BASELINES, BaselineConfig
from .data import split_leave_one_subject_out, split_validation
from .errors import ConfigError, TrainingDivergedError
from .losses import LossConfig, anticipation_loss, labeling_loss, segmentation_loss, total_loss
from .model import Assign, ModelConfig, collate

log = logging.getLogger(__name__)

MODEL_KINDS = ("assign", *BASELINES)


@dataclass
class TrainSchedule:
    stage1_epochs: int = 30
    stage2_epochs: int = 70
    learning_rate: float = 1e-3
    batch_size: int = 4
    skip_stage1: bool = False
    seed: int = 0
    validation_fraction: float = 0.10
    # optional global gradient-norm cap; None leaves gradients untouched
    grad_clip: float | None = None

    def __post_init__(self):
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class TrainResult:
    model: torch.nn.Module
    log: list
    best_stage: int
    best_epoch: int
    best_val_loss: float
    last_state: dict = field(repr=False, default=None)


# --------------------------------------------------------------------------
# models
# --------------------------------------------------------------------------


def build_model(kind: str, config, seed: int = 0):
    """Instantiate a model of ``kind`` with parameters initialised from ``seed``."""
    torch.manual_seed(seed)
    if kind == "assign":
        cfg = config if isinstance(config, ModelConfig) else ModelConfig.from_dict(config)
        return Assign(cfg)
    if kind in BASELINES:
        cfg = config if isinstance(config, BaselineConfig) else BaselineConfig.from_dict(config)
        return BASELINES[kind](cfg)
    raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def loss_parts(model, batch, loss_config: LossConfig, mode="train", stage=2, generator=None,
               temperature=None):
    """Per-video loss terms ``{name: [B]}`` and the raw model output."""
    fm = batch.frame_mask.to(batch.features.dtype)
    if model.kind != "assign":
        out = model(batch)
        return {"label": labeling_loss(out.label_logp, batch.labels, fm, cls=batch.cls)}, out
    dense = True if stage == 1 else None
    out = model(batch, mode=mode, dense=dense, generator=generator, temperature=temperature)
    parts = {
        "label": labeling_loss(out.segment.label_bcast, batch.labels, fm, cls=batch.cls),
        "seg": segmentation_loss(out.frame.u_soft, batch.smoothed, fm),
    }
    if model.config.anticipation_head:
        parts["anticipation"] = anticipation_loss(out.segment.next_bcast, batch.next_labels, fm,
                                                  cls=batch.cls)
    return parts, out


def _stage_loss_config(model, loss_config, stage):
    # stage 1 and the frame-wise baselines have no segmentation objective
    if stage == 1 or model.kind != "assign":
        return replace(loss_config, enable_seg_loss=False)
    return loss_config


def _batches(videos, size, order=None):
    idx = range(len(videos)) if order is None else order
    idx = list(idx)
    for i in range(0, len(idx), size):
        yield [videos[j] for j in idx[i:i + size]]


def _temperature(cfg, epoch, epochs):
    final = getattr(cfg, "gumbel_temperature_final", None)
    start = getattr(cfg, "gumbel_temperature", 1.0)
    if final is None or epochs <= 1:
        return start
    return start + (final - start) * epoch / (epochs - 1)


def _boundary_rate(out, batch):
    if not hasattr(out, "frame"):
        return None
    fm = batch.frame_mask
    return float(out.frame.u_hard[fm].mean())


@torch.no_grad()
def validation_parts(model, videos, loss_config, stage=2, batch_size=8) -> dict:
    """Per-video mean of every loss term and the total, in eval mode.

    Also reports ``boundary_rate`` (None for models without boundaries).
    """
    model.eval()
    cfg = _stage_loss_config(model, loss_config, stage)
    sums, rates, count = {}, [], 0
    for vids in _batches(videos, batch_size):
        batch = collate(vids, sigma=loss_config.gaussian_sigma)
        parts, out = loss_parts(model, batch, cfg, mode="eval", stage=stage)
        parts["total"] = total_loss(parts, cfg)
        for k, v in parts.items():
            sums[k] = sums.get(k, 0.0) + float(v.sum())
        count += len(vids)
        rate = _boundary_rate(out, batch)
        if rate is not None:
            rates.append(rate)
    out = {k: v / count for k, v in sums.items()}
    out["boundary_rate"] = float(np.mean(rates)) if rates else None
    return out


def validation_loss(model, videos, loss_config, stage=2, batch_size=8):
    """Mean total loss per video in eval mode, plus the boundary rate."""
    parts = validation_parts(model, videos, loss_config, stage, batch_size)
    return parts["total"], parts["boundary_rate"]


def _check_finite(value, stage, epoch, vids, parts):
    if math.isfinite(value):
        return
    detail = {k: v.detach().tolist() for k, v in parts.items()}
    raise TrainingDivergedError(
        f"non-finite loss in stage {stage}, epoch {epoch}, videos {[v.id for v in vids]}: {detail}"
    )


def train(model, fit_videos, val_videos, schedule: TrainSchedule, loss_config: LossConfig | None = None,
          log_path=None) -> TrainResult:
    """Two-stage training with best-by-validation model selection.

    Stage 1 forces an update at every frame and drops the segmentation
    loss; stage 2 trains the full objective from the stage-1 parameters.
    Baselines run their epochs as a single frame-wise stage. The returned
    model carries the parameters with the lowest validation loss, taken
    over stage 2 when it runs and over stage 1 otherwise.
    """
    loss_config = loss_config or LossConfig()
    if not fit_videos or not val_videos:
        raise ValueError("fit and validation splits must be nonempty")
    torch.manual_seed(schedule.seed)
    rng = np.random.default_rng(schedule.seed)
    generator = torch.Generator().manual_seed(schedule.seed)
    optim = torch.optim.Adam(model.parameters(), lr=schedule.learning_rate)
    is_assign = model.kind == "assign"

    stage1 = 0 if schedule.skip_stage1 else schedule.stage1_epochs
    if is_assign:
        stages = [(1, stage1), (2, schedule.stage2_epochs)]
    else:
        stages = [(1, stage1 + schedule.stage2_epochs)]
    select_stage = max((s for s, n in stages if n > 0), default=None)

    records = []
    best = (math.inf, None, 0, 0)
    sink = open(log_path, "w") if log_path is not None else None
    try:
        for stage, epochs in stages:
            cfg = _stage_loss_config(model, loss_config, stage)
            for epoch in range(epochs):
                tau = _temperature(model.config, epoch, epochs) if stage == 2 else None
                model.train()
                order = rng.permutation(len(fit_videos))
                sums, rates = {}, []
                for vids in _batches(fit_videos, schedule.batch_size, order):
                    batch = collate(vids, sigma=loss_config.gaussian_sigma)
                    parts, out = loss_parts(model, batch, cfg, mode="train", stage=stage,
                                            generator=generator, temperature=tau)
                    loss = total_loss(parts, cfg).sum()
                    _check_finite(loss.item(), stage, epoch, vids, parts)
                    optim.zero_grad()
                    loss.backward()
                    if schedule.grad_clip is not None:
                        torch.nn.utils.clip_grad_norm_(model.parameters(), schedule.grad_clip)
                    optim.step()
                    for k, v in parts.items():
                        sums[k] = sums.get(k, 0.0) + float(v.detach().sum())
                    sums["total"] = sums.get("total", 0.0) + float(loss.detach())
                    rate = _boundary_rate(out, batch)
                    if rate is not None:
                        rates.append(rate)
                val_parts = validation_parts(model, val_videos, loss_config, stage)
                val, val_rate = val_parts.pop("total"), val_parts.pop("boundary_rate")
                if not math.isfinite(val):
                    raise TrainingDivergedError(f"non-finite validation loss in stage {stage}, epoch {epoch}")
                rec = {
                    "stage": stage,
                    "epoch": epoch,
                    "train": {k: v / len(fit_videos) for k, v in sums.items()},
                    "val_loss": val,
                    "val": val_parts,
                    "boundary_rate": float(np.mean(rates)) if rates else None,
                    "val_boundary_rate": val_rate,
                }
                if tau is not None:
                    rec["temperature"] = tau
                records.append(rec)
                if sink is not None:
                    sink.write(json.dumps(rec, sort_keys=True) + "\n")
                    sink.flush()
                log.info("stage %d epoch %d train %.4f val %.4f", stage, epoch, rec["train"]["total"], val)
                if stage == select_stage and val < best[0]:
                    best = (val, copy.deepcopy(model.state_dict()), stage, epoch)
    finally:
        if sink is not None:
            sink.close()

    last = copy.deepcopy(model.state_dict())
    if best[1] is not None:
        model.load_state_dict(best[1])
    model.eval()
    return TrainResult(model, records, best[2], best[3], best[0], last)


# --------------------------------------------------------------------------
# inference
# --------------------------------------------------------------------------


@torch.no_grad()
def predict(model, videos, known_segmentation=False, batch_size=8, merge=None, return_outputs=False):
    """Predicted ``{video_id: {entity_id: Segmentation}}`` in eval mode.

    With ``known_segmentation`` the ground-truth closing frames replace the
    detected boundaries and each ground-truth segment receives one label.
    Joint-task predictions are merged so adjacent equal labels form one
    segment; known-segmentation predictions keep the given segments.
    """
    model.eval()
    if merge is None:
        merge = not known_segmentation
    if known_segmentation and model.kind != "assign":
        raise ConfigError("known-segmentation mode needs a model with a boundary input")
    preds, outputs = {}, []
    for vids in _batches(list(videos), batch_size):
        batch = collate(vids)
        if known_segmentation:
            if not batch.has_labels:
                raise ValueError("known-segmentation mode needs ground-truth segmentations")
            out = model(batch, mode="eval", boundary_override=batch.pulse)
        else:
            out = model(batch, mode="eval")
        part = model.decode(out)
        if merge:
            part = {v: {e: s.merged() for e, s in ents.items()} for v, ents in part.items()}
        preds.update(part)
        if return_outputs:
            outputs.append(out)
    return (preds, outputs) if return_outputs else preds


def evaluate(model, videos, known_segmentation=False, batch_size=8) -> dict:
    preds = predict(model, videos, known_segmentation, batch_size)
    return metrics.evaluate_dataset(preds, list(videos))


# --------------------------------------------------------------------------
# cross-validation
# --------------------------------------------------------------------------


def flatten_report(reports: dict) -> dict:
    """``{"human/f1@0.10": x, ...}`` from per-class :class:`MetricReport` objects."""
    flat = {}
    for name, rep in reports.items():
        for k, v in rep.f1_at_k.items():
            flat[f"{name}/f1@{k:.2f}"] = v
        flat[f"{name}/micro_f1"] = rep.micro_f1
        flat[f"{name}/macro_f1"] = rep.macro_f1
    return flat


def summarize(fold_metrics: list) -> dict:
    """Mean and sample standard deviation of every metric across folds."""
    keys = fold_metrics[0].keys()
    out = {}
    for k in keys:
        vals = np.array([m[k] for m in fold_metrics], dtype=np.float64)
        std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out[k] = {"mean": float(vals.mean()), "std": std}
    return out


@dataclass
class FoldResult:
    subject: str
    num_fit: int
    num_val: int
    num_test: int
    best_stage: int
    best_epoch: int
    metrics: dict
    reports: dict = field(repr=False)
    train_result: TrainResult = field(repr=False, default=None)


def run_fold(dataset, subject, kind, model_config, schedule, loss_config, known_segmentation=False,
             log_dir=None, keep_model=False) -> FoldResult:
    train_videos, test_videos = split_leave_one_subject_out(dataset, subject)
    fit, val = split_validation(train_videos, schedule.validation_fraction, schedule.seed)
    model = build_model(kind, model_config, schedule.seed)
    log_path = None
    if log_dir is not None:
        Path(log_dir).mkdir(parents=True, exist_ok=True)
        log_path = Path(log_dir) / f"train_{subject}.jsonl"
    res = train(model, fit, val, schedule, loss_config, log_path)
    reports = evaluate(res.model, test_videos, known_segmentation and kind == "assign")
    return FoldResult(subject, len(fit), len(val), len(test_videos), res.best_stage, res.best_epoch,
                      flatten_report(reports), reports, res if keep_model else None)


def cross_validate(dataset, kind, model_config, schedule: TrainSchedule,
                   loss_config: LossConfig | None = None, subjects=None, log_dir=None,
                   keep_models=False) -> dict:
    """Leave-one-subject-out training and evaluation.

    Returns ``{"folds": [FoldResult], "summary": {metric: {"mean", "std"}}}``.
    """
    loss_config = loss_config or LossConfig()
    subjects = list(subjects) if subjects is not None else dataset.subjects()
    if len(dataset.subjects()) < 2:
        raise ValueError("cross-validation needs at least two subjects")
    folds = [
        run_fold(dataset, s, kind, model_config, schedule, loss_config, log_dir=log_dir,
                 keep_model=keep_models)
        for s in subjects
    ]
    return {"folds": folds, "summary": summarize([f.metrics for f in folds])}
