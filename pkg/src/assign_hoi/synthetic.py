"""Synthetic human/object interaction traces.

Each video has one or more humans and a sampled number of objects. Every
entity follows its own label script (a renewal process over segment
lengths); object scripts are coupled to the humans: with probability
``coupling`` each human segment change triggers an object change ``lag``
frames later, and the triggered affordance is the one paired with the
human's new sub-activity. Features are a fixed per-seed codebook of
unit-norm class means plus isotropic Gaussian noise.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .data import Dataset, Entity, EntityClass, Segmentation, VideoSample


@dataclass
class SyntheticConfig:
    num_videos: int = 40
    num_subjects: int = 4
    num_humans_range: tuple = (1, 1)
    num_objects_range: tuple = (1, 5)
    num_frames_range: tuple = (112, 144)
    num_labels: dict = field(default_factory=lambda: {"human": 10, "object": 12})
    mean_segment_length: float = 16.0
    segment_length_std: float = 4.0
    min_segment_length: int = 3
    coupling: float = 0.7
    max_lag: int = 5
    feature_dim: int = 32
    noise_scale: float = 0.0
    fps: float = 10.0
    seed: int = 0

    def __post_init__(self):
        for name in ("num_humans_range", "num_objects_range", "num_frames_range"):
            lo, hi = getattr(self, name)
            setattr(self, name, (int(lo), int(hi)))
            if lo > hi:
                raise ValueError(f"{name} is empty: {lo} > {hi}")
        if self.num_humans_range[0] < 1:
            raise ValueError("every video needs at least one human")
        if self.num_objects_range[0] < 0:
            raise ValueError("object count cannot be negative")
        if not 0.0 <= self.coupling <= 1.0:
            raise ValueError("coupling must lie in [0, 1]")
        if self.num_videos < 1 or self.num_subjects < 1:
            raise ValueError("need at least one video and one subject")
        if self.mean_segment_length <= 0 or self.segment_length_std < 0:
            raise ValueError("segment length statistics must be positive")
        if min(self.num_labels.values()) < 2:
            raise ValueError("each class needs at least two labels")
        if self.num_frames_range[0] < self.min_segment_length:
            raise ValueError("videos shorter than the minimum segment length")

    def to_dict(self) -> dict:
        return asdict(self)


def _renewal_ends(rng, T, mean, std, min_len):
    """Segment end positions of a renewal process on ``[0, T)`` (excludes T)."""
    ends = []
    pos = 0
    while True:
        step = max(min_len, int(round(rng.normal(mean, std))))
        pos += step
        if pos >= T:
            break
        ends.append(pos)
    return ends


def _thin(ends, T, min_len):
    """Drop ends that would create segments shorter than ``min_len``."""
    kept = []
    last = 0
    for e in sorted(set(ends)):
        if e - last >= min_len and T - e >= min_len:
            kept.append(e)
            last = e
    return kept


def _other_label(rng, n, prev):
    lab = int(rng.integers(n - 1))
    return lab + (lab >= prev)


def _human_script(rng, T, cfg):
    ends = _thin(_renewal_ends(rng, T, cfg.mean_segment_length, cfg.segment_length_std,
                               cfg.min_segment_length), T, cfg.min_segment_length)
    n = cfg.num_labels["human"]
    labels = [int(rng.integers(n))]
    for _ in ends:
        labels.append(_other_label(rng, n, labels[-1]))
    return ends, labels


def _label_at(ends, labels, t):
    return labels[int(np.searchsorted(ends, t, side="right"))]


def _object_script(rng, T, cfg, humans, pairing):
    n = cfg.num_labels["object"]
    triggers = {}
    for h_ends, h_labels in humans:
        for e in h_ends:
            if rng.random() < cfg.coupling:
                b = e + int(rng.integers(cfg.max_lag + 1))
                if b < T:
                    triggers.setdefault(b, pairing[_label_at(h_ends, h_labels, e)])
    spontaneous = []
    if cfg.coupling < 1.0:
        spontaneous = _renewal_ends(rng, T, cfg.mean_segment_length / (1.0 - cfg.coupling),
                                    cfg.segment_length_std, cfg.min_segment_length)
    ends = _thin(list(triggers) + spontaneous, T, cfg.min_segment_length)
    labels = [int(rng.integers(n))]
    for e in ends:
        want = triggers.get(e)
        if want is None or want == labels[-1]:
            want = _other_label(rng, n, labels[-1])
        labels.append(int(want))
    return ends, labels


def _to_segmentation(ends, labels, T, label_space):
    bounds = [0] + list(ends) + [T]
    return Segmentation(tuple(zip(bounds[:-1], bounds[1:], labels)), label_space)


def make_codebook(cfg: SyntheticConfig) -> dict:
    rng = np.random.default_rng([cfg.seed, 1])
    book = {}
    for cls in ("human", "object"):
        means = rng.normal(size=(cfg.num_labels[cls], cfg.feature_dim))
        book[cls] = means / np.linalg.norm(means, axis=1, keepdims=True)
    return book


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Deterministic synthetic dataset for ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    book = make_codebook(cfg)
    pairing = rng.integers(cfg.num_labels["object"], size=cfg.num_labels["human"])
    width = len(str(cfg.num_videos - 1))
    videos = []
    for i in range(cfg.num_videos):
        subject = f"s{i % cfg.num_subjects + 1}"
        T = int(rng.integers(cfg.num_frames_range[0], cfg.num_frames_range[1] + 1))
        n_h = int(rng.integers(cfg.num_humans_range[0], cfg.num_humans_range[1] + 1))
        n_o = int(rng.integers(cfg.num_objects_range[0], cfg.num_objects_range[1] + 1))
        humans = [_human_script(rng, T, cfg) for _ in range(n_h)]
        objects = [_object_script(rng, T, cfg, humans, pairing) for _ in range(n_o)]
        entities, gt = [], {}
        scripts = [("human", j, s) for j, s in enumerate(humans)] + \
                  [("object", j, s) for j, s in enumerate(objects)]
        for cls, j, (ends, labels) in scripts:
            ecls = EntityClass(cls)
            seg = _to_segmentation(ends, labels, T, ecls.label_space)
            frame_lab = seg.frame_labels()
            feats = book[cls][frame_lab]
            if cfg.noise_scale > 0:
                feats = feats + cfg.noise_scale * rng.normal(size=feats.shape)
            eid = f"{cls}_{j}"
            entities.append(Entity(eid, ecls, feats.astype(np.float32), subject))
            gt[eid] = seg
        videos.append(VideoSample(f"video_{i:0{width}d}", cfg.fps, entities, gt, subject))
    vocab = {
        "human": [f"sub_activity_{k}" for k in range(cfg.num_labels["human"])],
        "object": [f"affordance_{k}" for k in range(cfg.num_labels["object"])],
    }
    return Dataset(videos, vocab, name=f"synthetic_seed{cfg.seed}", fps=cfg.fps)


def boundary_coincidence(videos, window: int = 5, margin: int = 1):
    """Object boundaries falling within ``window`` frames after a human boundary.

    Returns ``(observed, expected, variance)`` where the expectation treats
    every object boundary as an independent uniform draw over the positions
    ``[margin, T - margin]`` (the independence baseline). Pass the generator's
    ``min_segment_length`` as ``margin`` for its exact support.
    """
    observed = 0
    expected = 0.0
    variance = 0.0
    for video in videos:
        T = video.num_frames
        human_ends = []
        for ent in video.entities:
            if ent.cls is EntityClass.HUMAN:
                _, ends, _ = video.ground_truth[ent.id].arrays()
                human_ends.extend(ends[:-1].tolist())
        human_ends = np.asarray(sorted(set(human_ends)), dtype=np.int64)
        covered = np.zeros(T, dtype=bool)
        for h in human_ends:
            covered[h:h + window + 1] = True
        support = covered[margin:T - margin + 1]
        p = support.mean() if support.size else 0.0
        for ent in video.entities:
            if ent.cls is not EntityClass.OBJECT:
                continue
            _, ends, _ = video.ground_truth[ent.id].arrays()
            obj_ends = ends[:-1]
            observed += kernels.proximity_count(human_ends, obj_ends, window)
            expected += p * len(obj_ends)
            variance += p * (1 - p) * len(obj_ends)
    return observed, expected, variance
