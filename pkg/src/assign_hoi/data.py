"""Dataset model, on-disk format, resampling, boundary targets and splits.

On disk a dataset is a directory::

    manifest.json
    <video-id>/meta.json
    <video-id>/entity_000.f32   # T x D little-endian float32, row-major
    ...

``manifest.json`` holds the dataset name, fps, feature dimension, the label
vocabulary of each entity class, and the video list with subject ids and
per-entity SHA-256 checksums of the float payloads.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DataFormatError, IntegrityError

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
META = "meta.json"
FEATURE_DTYPE = np.dtype("<f4")


class EntityClass(str, enum.Enum):
    HUMAN = "human"
    OBJECT = "object"

    @property
    def label_space(self) -> str:
        return "sub_activity" if self is EntityClass.HUMAN else "affordance"


CLASSES = (EntityClass.HUMAN, EntityClass.OBJECT)


@dataclass(frozen=True)
class Segmentation:
    """Ordered half-open segments ``(start, end, label)`` tiling ``[0, T)``."""

    segments: tuple
    label_space: str = "sub_activity"

    def __post_init__(self):
        object.__setattr__(
            self, "segments", tuple((int(s), int(e), int(l)) for s, e, l in self.segments)
        )

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    @property
    def num_frames(self) -> int:
        return self.segments[-1][1] if self.segments else 0

    def validate(self, num_frames: int, num_labels: int | None = None) -> None:
        if not self.segments:
            raise IntegrityError("segmentation is empty")
        prev_end = 0
        for start, end, label in self.segments:
            if start != prev_end:
                raise IntegrityError(
                    f"segments do not tile: expected start {prev_end}, got {start}"
                )
            if end <= start:
                raise IntegrityError(f"empty or reversed segment [{start}, {end})")
            if label < 0 or (num_labels is not None and label >= num_labels):
                raise IntegrityError(f"label {label} outside [0, {num_labels})")
            prev_end = end
        if prev_end != num_frames:
            raise IntegrityError(f"segments end at {prev_end}, expected {num_frames}")

    def arrays(self):
        seg = np.asarray(self.segments, dtype=np.int64).reshape(-1, 3)
        return seg[:, 0], seg[:, 1], seg[:, 2]

    def frame_labels(self) -> np.ndarray:
        starts, ends, labels = self.arrays()
        return np.repeat(labels, ends - starts)

    def pulse(self) -> np.ndarray:
        out = np.zeros(self.num_frames, dtype=np.int8)
        _, ends, _ = self.arrays()
        out[ends - 1] = 1
        return out

    def merged(self) -> "Segmentation":
        """Same frame labelling with adjacent equal-label segments fused."""
        return Segmentation.from_frame_labels(self.frame_labels(), self.label_space)

    @classmethod
    def from_frame_labels(cls, labels, label_space="sub_activity", backend=None):
        starts, ends, values = kernels.run_lengths(labels, backend=backend)
        return cls(tuple(zip(starts.tolist(), ends.tolist(), values.tolist())), label_space)

    @classmethod
    def from_boundaries(cls, pulse, segment_labels, label_space="sub_activity"):
        """Build from a 0/1 closing-frame pulse (last frame forced) and one label per segment."""
        pulse = np.asarray(pulse).astype(bool).copy()
        pulse[-1] = True
        ends = np.flatnonzero(pulse) + 1
        starts = np.concatenate(([0], ends[:-1]))
        if len(segment_labels) != len(ends):
            raise ValueError("need exactly one label per segment")
        return cls(tuple(zip(starts.tolist(), ends.tolist(), list(segment_labels))), label_space)


@dataclass
class Entity:
    id: str
    cls: EntityClass
    features: np.ndarray
    subject: str = ""

    def __post_init__(self):
        self.cls = EntityClass(self.cls)

    @property
    def num_frames(self) -> int:
        return int(self.features.shape[0])


@dataclass
class VideoSample:
    id: str
    fps: float
    entities: list
    ground_truth: dict | None = None
    subject: str = ""

    @property
    def num_frames(self) -> int:
        return self.entities[0].num_frames if self.entities else 0

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def feature_dim(self) -> int:
        return int(self.entities[0].features.shape[1])

    def validate(self, num_labels: dict | None = None) -> None:
        if not self.entities:
            raise IntegrityError(f"video {self.id}: no entities")
        T = self.num_frames
        D = self.feature_dim
        for ent in self.entities:
            if ent.features.ndim != 2 or ent.features.shape != (T, D):
                raise IntegrityError(
                    f"video {self.id}: entity {ent.id} features {ent.features.shape}, expected {(T, D)}"
                )
        if self.ground_truth is not None:
            for ent in self.entities:
                if ent.id not in self.ground_truth:
                    raise IntegrityError(f"video {self.id}: no segmentation for entity {ent.id}")
                n = None if num_labels is None else num_labels[ent.cls.value]
                self.ground_truth[ent.id].validate(T, n)

    def frame_labels(self) -> np.ndarray:
        """``[N, T]`` ground-truth label per entity and frame."""
        return np.stack([self.ground_truth[e.id].frame_labels() for e in self.entities])


@dataclass
class Dataset:
    """A list of videos plus the vocabulary they are labelled with."""

    videos: list
    vocab: dict = field(default_factory=lambda: {"human": [], "object": []})
    name: str = "dataset"
    fps: float = 10.0
    null_label: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.videos)

    def __iter__(self):
        return iter(self.videos)

    def __getitem__(self, i):
        return self.videos[i]

    @property
    def feature_dim(self) -> int:
        return self.videos[0].feature_dim if self.videos else 0

    @property
    def num_labels(self) -> dict:
        return {c: len(v) for c, v in self.vocab.items()}

    def subjects(self) -> list:
        return sorted({v.subject for v in self.videos})

    def vocab_hash(self) -> str:
        return vocab_hash(self.vocab)

    def with_videos(self, videos) -> "Dataset":
        return replace(self, videos=list(videos))


def vocab_hash(vocab: dict) -> str:
    blob = json.dumps({k: list(vocab[k]) for k in sorted(vocab)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def feature_checksum(features: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(features, dtype=FEATURE_DTYPE).tobytes()).hexdigest()


# --------------------------------------------------------------------------
# IO
# --------------------------------------------------------------------------


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_dataset(dataset: Dataset, path) -> dict:
    """Write ``dataset`` in the directory format; returns the manifest dict."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for video in sorted(dataset.videos, key=lambda v: v.id):
        vdir = root / video.id
        vdir.mkdir(exist_ok=True)
        ents, checks = [], {}
        for i, ent in enumerate(video.entities):
            fname = f"entity_{i:03d}.f32"
            payload = np.ascontiguousarray(ent.features, dtype=FEATURE_DTYPE)
            (vdir / fname).write_bytes(payload.tobytes())
            checks[ent.id] = feature_checksum(payload)
            ents.append({"id": ent.id, "class": ent.cls.value, "file": fname, "subject": ent.subject})
        meta = {
            "id": video.id,
            "fps": video.fps,
            "num_frames": video.num_frames,
            "entities": ents,
        }
        if video.ground_truth is not None:
            meta["segments"] = {eid: [list(s) for s in seg] for eid, seg in video.ground_truth.items()}
        _dump_json(meta, vdir / META)
        entries.append({"id": video.id, "subject": video.subject, "checksums": checks})
    manifest = {
        "format_version": FORMAT_VERSION,
        "name": dataset.name,
        "fps": dataset.fps,
        "feature_dim": dataset.feature_dim,
        "label_vocab": dataset.vocab,
        "null_label": dataset.null_label,
        "videos": entries,
    }
    _dump_json(manifest, root / MANIFEST)
    return manifest


def read_manifest(path) -> dict:
    mpath = Path(path) / MANIFEST
    if not mpath.is_file():
        raise DataFormatError(f"no {MANIFEST} in {path}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"unreadable manifest: {exc}") from exc
    for key in ("fps", "feature_dim", "label_vocab", "videos"):
        if key not in manifest:
            raise DataFormatError(f"manifest lacks {key!r}")
    return manifest


def _load_video(root: Path, entry: dict, manifest: dict, verify: bool) -> VideoSample:
    vdir = root / entry["id"]
    try:
        meta = json.loads((vdir / META).read_text())
    except FileNotFoundError as exc:
        raise DataFormatError(f"video {entry['id']}: missing {META}") from exc
    T = int(meta["num_frames"])
    D = int(manifest["feature_dim"])
    entities = []
    for ent in meta["entities"]:
        fpath = vdir / ent["file"]
        if not fpath.is_file():
            raise DataFormatError(f"video {entry['id']}: missing {ent['file']}")
        raw = np.fromfile(fpath, dtype=FEATURE_DTYPE)
        if raw.size != T * D:
            raise IntegrityError(
                f"video {entry['id']}: entity {ent['id']} has {raw.size} floats, expected {T}x{D}"
            )
        if verify and ent["id"] in entry.get("checksums", {}):
            if feature_checksum(raw) != entry["checksums"][ent["id"]]:
                raise IntegrityError(f"video {entry['id']}: checksum mismatch for {ent['id']}")
        entities.append(
            Entity(ent["id"], EntityClass(ent["class"]), raw.reshape(T, D),
                   ent.get("subject", entry.get("subject", "")))
        )
    gt = None
    if "segments" in meta:
        gt = {}
        for ent in entities:
            gt[ent.id] = Segmentation(
                tuple(tuple(s) for s in meta["segments"][ent.id]), ent.cls.label_space
            )
    video = VideoSample(entry["id"], float(meta.get("fps", manifest["fps"])), entities, gt,
                        entry.get("subject", ""))
    video.validate({c: len(v) for c, v in manifest["label_vocab"].items()})
    return video


def load_dataset(path, verify_checksums: bool = True, jobs: int = 1) -> Dataset:
    """Read and validate a dataset directory; videos come back sorted by id."""
    root = Path(path)
    manifest = read_manifest(root)
    entries = sorted(manifest["videos"], key=lambda e: e["id"])
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            videos = list(pool.map(lambda e: _load_video(root, e, manifest, verify_checksums), entries))
    else:
        videos = [_load_video(root, e, manifest, verify_checksums) for e in entries]
    return Dataset(
        videos=videos,
        vocab={k: list(v) for k, v in manifest["label_vocab"].items()},
        name=manifest.get("name", root.name),
        fps=float(manifest["fps"]),
        null_label=manifest.get("null_label", {}),
    )


# --------------------------------------------------------------------------
# preprocessing
# --------------------------------------------------------------------------


def resample_indices(num_frames: int, fps: float, target_fps: float) -> np.ndarray:
    """Source frame for every output frame under nearest-neighbour selection."""
    if fps <= 0 or target_fps <= 0:
        raise ValueError("frame rates must be positive")
    new_T = max(1, math.floor(num_frames * target_fps / fps + 1e-9))
    ratio = fps / target_fps
    # round half up, not numpy's half-to-even
    src = np.floor(np.arange(new_T) * ratio + 0.5).astype(np.int64)
    return np.minimum(src, num_frames - 1)


def resample_video(sample: VideoSample, target_fps: float = 10.0) -> VideoSample:
    src = resample_indices(sample.num_frames, sample.fps, target_fps)
    entities = [replace(e, features=e.features[src]) for e in sample.entities]
    gt = None
    if sample.ground_truth is not None:
        gt = {}
        for eid, seg in sample.ground_truth.items():
            starts, ends, labels = seg.arrays()
            # src is monotone, so each source segment maps to a contiguous range
            new_starts = np.searchsorted(src, starts, side="left")
            new_ends = np.searchsorted(src, ends, side="left")
            kept = [(int(a), int(b), int(l)) for a, b, l in zip(new_starts, new_ends, labels) if b > a]
            gt[eid] = Segmentation(tuple(kept), seg.label_space)
    return replace(sample, fps=float(target_fps), entities=entities, ground_truth=gt)


@dataclass
class BoundaryTarget:
    pulse: np.ndarray
    smoothed: np.ndarray


def make_boundary_target(seg: Segmentation, num_frames: int, sigma: float = 4.0,
                         backend=None) -> BoundaryTarget:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    seg.validate(num_frames)
    pulse = seg.pulse()
    return BoundaryTarget(pulse, kernels.boundary_target(pulse, sigma, backend=backend))


# --------------------------------------------------------------------------
# splits
# --------------------------------------------------------------------------


def split_leave_one_subject_out(dataset, held_out_subject: str):
    videos = list(dataset)
    if not any(v.subject == held_out_subject for v in videos):
        raise ValueError(f"subject {held_out_subject!r} does not appear in the dataset")
    train = [v for v in videos if v.subject != held_out_subject]
    test = [v for v in videos if v.subject == held_out_subject]
    return train, test


def split_validation(train, fraction: float = 0.10, seed: int = 0):
    train = list(train)
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    if len(train) < 2:
        raise ValueError("need at least two videos to carve out a validation set")
    n_val = max(1, math.floor(fraction * len(train) + 0.5))
    n_val = min(n_val, len(train) - 1)
    order = np.random.default_rng(seed).permutation(len(train))
    val_idx = set(order[:n_val].tolist())
    fit = [v for i, v in enumerate(train) if i not in val_idx]
    val = [v for i, v in enumerate(train) if i in val_idx]
    return fit, val


def default_output_root() -> Path:
    return Path(os.environ.get("ASSIGN_HOI_OUTPUT_ROOT", "runs"))
