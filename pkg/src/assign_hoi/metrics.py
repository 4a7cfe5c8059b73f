"""Segment-level F1@k and frame-level micro/macro F1.

F1@k pools true positives, false positives and false negatives over every
entity of every video in the evaluated set before forming the score.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import EntityClass, Segmentation

DEFAULT_KS = (0.10, 0.25, 0.50)


def segment_iou(a, b) -> float:
    """IoU of two half-open frame intervals ``(start, end[, label])``."""
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union if union > 0 else 0.0


def _check_tiling(seg: Segmentation, name: str, num_frames=None):
    try:
        seg.validate(seg.num_frames if num_frames is None else num_frames)
    except Exception as exc:
        raise ValueError(f"{name} segmentation does not tile the timeline: {exc}") from exc


def segment_counts(pred: Segmentation, gt: Segmentation, k: float, backend=None):
    """``(tp, fp, fn)`` for one entity under greedy temporal-order matching."""
    if not 0 < k <= 1:
        raise ValueError("k must lie in (0, 1]")
    _check_tiling(gt, "ground-truth")
    _check_tiling(pred, "predicted", gt.num_frames)
    return kernels.greedy_match(pred.arrays(), gt.arrays(), k, backend=backend)


def f1_from_counts(tp, fp, fn) -> float:
    denom = 2 * tp + fp + fn
    return 100.0 * 2 * tp / denom if denom else 100.0


def f1_at_k(pred: Segmentation, gt: Segmentation, k: float, backend=None):
    """Returns ``(f1_percent, matched, fp, fn)``."""
    tp, fp, fn = segment_counts(pred, gt, k, backend=backend)
    return f1_from_counts(tp, fp, fn), tp, fp, fn


def per_class_prf(pred, gt, num_classes=None):
    """Per-class precision/recall/F1 (fractions) from frame labels.

    Only classes present in ``gt`` or ``pred`` are returned.
    """
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth differ in length")
    n = int(max(pred.max(initial=-1), gt.max(initial=-1)) + 1) if num_classes is None else num_classes
    cm = kernels.confusion(pred, gt, max(n, 1))
    tp = np.diag(cm).astype(float)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    out = {}
    for c in range(cm.shape[0]):
        if support[c] == 0 and predicted[c] == 0:
            continue
        p = tp[c] / predicted[c] if predicted[c] else 0.0
        r = tp[c] / support[c] if support[c] else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        out[c] = (p, r, f)
    return out, support


def micro_macro_f1(pred, gt):
    """Frame-level ``(micro, macro)`` F1 in percent.

    Micro-F1 equals accuracy for single-label multi-class data; macro-F1
    averages per-class F1 over the classes present in ``gt``.
    """
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth differ in length")
    if gt.size == 0:
        return 100.0, 100.0
    micro = 100.0 * float(np.mean(pred == gt))
    prf, support = per_class_prf(pred, gt)
    present = [c for c in prf if c < len(support) and support[c] > 0]
    macro = 100.0 * float(np.mean([prf[c][2] for c in present]))
    return micro, macro


@dataclass
class MetricReport:
    f1_at_k: dict = field(default_factory=dict)
    micro_f1: float = 0.0
    macro_f1: float = 0.0
    per_class: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    num_entities: int = 0
    num_frames: int = 0

    def to_dict(self) -> dict:
        r2 = lambda x: round(float(x), 2)  # noqa: E731
        return {
            "f1_at_k": {f"{k:.2f}": r2(v) for k, v in sorted(self.f1_at_k.items())},
            "micro_f1": r2(self.micro_f1),
            "macro_f1": r2(self.macro_f1),
            "per_class": {
                str(c): {"precision": r2(100 * p), "recall": r2(100 * r), "f1": r2(100 * f)}
                for c, (p, r, f) in sorted(self.per_class.items())
            },
            "counts": {f"{k:.2f}": dict(v) for k, v in sorted(self.counts.items())},
            "num_entities": self.num_entities,
            "num_frames": self.num_frames,
        }


def _report(pairs, ks, backend=None) -> MetricReport:
    tot = {k: [0, 0, 0] for k in ks}
    pred_frames, gt_frames = [], []
    for pred, gt in pairs:
        for k in ks:
            tp, fp, fn = segment_counts(pred, gt, k, backend=backend)
            tot[k][0] += tp
            tot[k][1] += fp
            tot[k][2] += fn
        pred_frames.append(pred.frame_labels())
        gt_frames.append(gt.frame_labels())
    report = MetricReport(num_entities=len(pairs))
    if not pairs:
        return report
    pf = np.concatenate(pred_frames)
    gf = np.concatenate(gt_frames)
    report.num_frames = int(gf.size)
    for k in ks:
        tp, fp, fn = tot[k]
        report.f1_at_k[k] = f1_from_counts(tp, fp, fn)
        report.counts[k] = {"matched": tp, "false_positive": fp, "false_negative": fn}
    report.micro_f1, report.macro_f1 = micro_macro_f1(pf, gf)
    report.per_class, _ = per_class_prf(pf, gf)
    return report


def evaluate_dataset(predictions: dict, ground_truths, ks=DEFAULT_KS, backend=None) -> dict:
    """Pooled metrics per entity class.

    ``predictions`` maps ``video_id -> {entity_id: Segmentation}``;
    ``ground_truths`` is an iterable of labelled ``VideoSample``.
    Returns ``{"human": MetricReport, "object": MetricReport, "all": MetricReport}``.
    """
    pairs = {"human": [], "object": []}
    for video in ground_truths:
        if video.id not in predictions:
            raise ValueError(f"no predictions for video {video.id}")
        vp = predictions[video.id]
        for ent in video.entities:
            if ent.id not in vp:
                raise ValueError(f"no prediction for entity {ent.id} of video {video.id}")
            pairs[ent.cls.value].append((vp[ent.id], video.ground_truth[ent.id]))
    out = {cls.value: _report(pairs[cls.value], ks, backend) for cls in EntityClass}
    # label ids are class-specific, so frame metrics of the pooled report are
    # computed on (class, label) pairs
    offset = 1 + max((l for p, g in pairs["human"] for seg in (p, g) for _, _, l in seg), default=-1)
    pooled = list(pairs["human"])
    pooled += [(_shift(p, offset), _shift(g, offset)) for p, g in pairs["object"]]
    out["all"] = _report(pooled, ks, backend)
    return out


def _shift(seg: Segmentation, offset: int) -> Segmentation:
    return Segmentation(tuple((s, e, l + offset) for s, e, l in seg), seg.label_space)


def report_to_json(reports: dict, meta: dict | None = None) -> str:
    payload = {
        "meta": {"f1_pooling": "tp/fp/fn pooled over all entities of the evaluated set"}
        | (meta or {}),
        "reports": {name: reports[name].to_dict() for name in sorted(reports)},
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def report_to_csv(rows: dict, ks=DEFAULT_KS) -> str:
    """Table with one row per model: F1@k for sub-activity then affordance.

    ``rows`` maps a model name to its ``evaluate_dataset`` output.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["model"]
    for space in ("sub_activity", "affordance"):
        header += [f"{space}_f1@{k:.2f}" for k in ks]
        header += [f"{space}_micro", f"{space}_macro"]
    writer.writerow(header)
    for name, reports in rows.items():
        line = [name]
        for cls in ("human", "object"):
            rep = reports[cls]
            line += [f"{rep.f1_at_k.get(k, 0.0):.2f}" for k in ks]
            line += [f"{rep.micro_f1:.2f}", f"{rep.macro_f1:.2f}"]
        writer.writerow(line)
    return buf.getvalue()
