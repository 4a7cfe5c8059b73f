"""Prediction dumps and static figures: label ribbons and attention heatmaps.

A dump is JSON-lines with one record per entity and frame::

    {"method", "video", "entity", "class", "frame", "label", "gt_label",
     "u_soft", "u_hard", "attn_inter": {neighbour: w}, "attn_intra": {...}}

Fields a model does not produce are null.
"""
from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import DataFormatError  # noqa: E402

REQUIRED = ("method", "video", "entity", "class", "frame", "label")
ROW_HEIGHT = 12


def dump_records(method: str, videos, predictions: dict, outputs=None):
    """Yield dump records for ``predictions`` (and raw model outputs when given)."""
    extra = {}
    for out in outputs or ():
        frame = getattr(out, "frame", None)
        for b, video in enumerate(out.batch.videos):
            extra[video.id] = (b, out, frame)
    for video in videos:
        ids = [e.id for e in video.entities]
        b, out, frame = extra.get(video.id, (None, None, None))
        for n, ent in enumerate(video.entities):
            labels = predictions[video.id][ent.id].frame_labels()
            gt = video.ground_truth[ent.id].frame_labels() if video.ground_truth else None
            for t in range(video.num_frames):
                rec = {
                    "method": method, "video": video.id, "entity": ent.id, "class": ent.cls.value,
                    "frame": t, "label": int(labels[t]),
                    "gt_label": None if gt is None else int(gt[t]),
                    "u_soft": None, "u_hard": None, "attn_inter": None, "attn_intra": None,
                }
                if frame is not None:
                    rec["u_soft"] = float(frame.u_soft[b, n, t])
                    rec["u_hard"] = int(frame.u_hard[b, n, t])
                    for key, w in (("attn_inter", frame.attn_inter), ("attn_intra", frame.attn_intra)):
                        row = w[b, t, n, :len(ids)].tolist()
                        rec[key] = {ids[k]: row[k] for k in range(len(ids)) if k != n and row[k] > 0}
                yield rec


def write_dump(path, records) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def read_dump(path) -> list:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: not JSON ({exc})") from exc
            missing = [k for k in REQUIRED if k not in rec]
            if missing:
                raise DataFormatError(f"{path}:{lineno}: missing fields {missing}")
            records.append(rec)
    return records


def group_tracks(records) -> dict:
    """``{(video, entity): {"class", "gt", methods: {name: labels}, "records": {...}}}``."""
    tracks = defaultdict(lambda: {"methods": defaultdict(dict), "gt": {}, "records": defaultdict(dict)})
    for rec in records:
        tr = tracks[(rec["video"], rec["entity"])]
        tr["class"] = rec["class"]
        tr["methods"][rec["method"]][rec["frame"]] = rec["label"]
        tr["records"][rec["method"]][rec["frame"]] = rec
        if rec.get("gt_label") is not None:
            tr["gt"][rec["frame"]] = rec["gt_label"]
    out = {}
    for key, tr in tracks.items():
        T = 1 + max(max(m) for m in tr["methods"].values())
        methods = {}
        for name, frames in sorted(tr["methods"].items()):
            if sorted(frames) != list(range(T)):
                raise DataFormatError(f"{key}: method {name!r} does not cover frames 0..{T - 1}")
            methods[name] = np.array([frames[t] for t in range(T)])
        gt = np.array([tr["gt"][t] for t in range(T)]) if len(tr["gt"]) == T else None
        out[key] = {"class": tr["class"], "gt": gt, "methods": methods,
                    "records": {m: dict(r) for m, r in tr["records"].items()}}
    return out


def ribbon_raster(rows, num_labels=None, row_height=ROW_HEIGHT) -> np.ndarray:
    """RGB image ``[len(rows) * row_height, T, 3]``, one pixel column per frame."""
    rows = [np.asarray(r, dtype=np.int64) for r in rows]
    T = len(rows[0])
    if any(len(r) != T for r in rows):
        raise ValueError("all ribbon rows need the same length")
    n = num_labels or (1 + max(int(r.max()) for r in rows))
    cmap = plt.get_cmap("tab20", max(n, 2))
    colours = (np.array([cmap(i)[:3] for i in range(max(n, 2))]) * 255).astype(np.uint8)
    img = np.concatenate([np.repeat(colours[r][None], row_height, axis=0) for r in rows], axis=0)
    return img


def save_ribbon(path, rows, num_labels=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    plt.imsave(path, ribbon_raster(rows, num_labels))
    return path


def attention_matrix(records_by_frame: dict, key="attn_inter"):
    """``(neighbours, weights[T, K])`` from one entity's per-frame records."""
    T = len(records_by_frame)
    names = sorted({k for r in records_by_frame.values() for k in (r.get(key) or {})})
    mat = np.zeros((T, len(names)))
    for t, rec in records_by_frame.items():
        for j, name in enumerate(names):
            mat[t, j] = (rec.get(key) or {}).get(name, 0.0)
    return names, mat


def save_heatmap(path, names, weights, title="") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(8, 1 + 0.4 * max(1, len(names))))
    ax.imshow(weights.T, aspect="auto", interpolation="nearest", vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("frame")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def render(records, out_dir) -> list:
    """Write one ribbon per entity and attention heatmaps where present."""
    out_dir = Path(out_dir)
    written = []
    for (video, entity), tr in sorted(group_tracks(records).items()):
        rows = ([tr["gt"]] if tr["gt"] is not None else []) + list(tr["methods"].values())
        written.append(save_ribbon(out_dir / f"{video}__{entity}__ribbon.png", rows))
        for method, by_frame in tr["records"].items():
            for key in ("attn_inter", "attn_intra"):
                names, mat = attention_matrix(by_frame, key)
                if names:
                    p = out_dir / f"{video}__{entity}__{method}__{key}.png"
                    written.append(save_heatmap(p, names, mat, f"{video} {entity} {key}"))
    return written
