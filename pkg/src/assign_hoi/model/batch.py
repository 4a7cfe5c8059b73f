"""Padding a list of videos into one masked tensor batch.

Videos differ in frame count ``T`` and entity count ``N``. A batch pads both
to the maximum; padded frames and entities are masked so that every model
computes exactly what it would on each video alone.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .. import kernels
from ..data import EntityClass

CLASS_INDEX = {EntityClass.HUMAN: 0, EntityClass.OBJECT: 1}
CLASS_NAMES = ("human", "object")


@dataclass
class Batch:
    videos: list
    features: torch.Tensor       # [B, N, T, D]
    cls: torch.Tensor            # [B, N] long, -1 for padding
    entity_mask: torch.Tensor    # [B, N] bool
    lengths: torch.Tensor        # [B] long
    labels: torch.Tensor | None = None        # [B, N, T] long, -1 outside
    next_labels: torch.Tensor | None = None   # [B, N, T] long, -1 = no next segment
    pulse: torch.Tensor | None = None         # [B, N, T] float 0/1
    smoothed: torch.Tensor | None = None      # [B, N, T] float

    @property
    def shape(self):
        B, N, T, _ = self.features.shape
        return B, N, T

    @property
    def frame_mask(self) -> torch.Tensor:
        """``[B, N, T]`` true for real frames of real entities."""
        B, N, T = self.shape
        t = torch.arange(T)
        return (t[None, None, :] < self.lengths[:, None, None]) & self.entity_mask[:, :, None]

    @property
    def last_frame(self) -> torch.Tensor:
        B, N, T = self.shape
        t = torch.arange(T)
        return (t[None, None, :] == (self.lengths - 1)[:, None, None]) & self.entity_mask[:, :, None]

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def to(self, dtype) -> "Batch":
        def conv(x):
            return x.to(dtype) if x is not None and x.is_floating_point() else x
        return Batch(self.videos, conv(self.features), self.cls, self.entity_mask, self.lengths,
                     self.labels, self.next_labels, conv(self.pulse), conv(self.smoothed))


def _next_segment_labels(seg, T):
    starts, ends, labels = seg.arrays()
    nxt = np.full(T, -1, dtype=np.int64)
    for k in range(len(labels) - 1):
        nxt[starts[k]:ends[k]] = labels[k + 1]
    return nxt


def collate(videos, sigma: float = 4.0, dtype=torch.float32) -> Batch:
    """Pad ``videos`` into a :class:`Batch`; targets are built when labelled."""
    B = len(videos)
    N = max(v.num_entities for v in videos)
    T = max(v.num_frames for v in videos)
    D = videos[0].feature_dim
    feats = np.zeros((B, N, T, D), dtype=np.float32)
    cls = np.full((B, N), -1, dtype=np.int64)
    labelled = all(v.ground_truth is not None for v in videos)
    if labelled:
        labels = np.full((B, N, T), -1, dtype=np.int64)
        nxt = np.full((B, N, T), -1, dtype=np.int64)
        pulse = np.zeros((B, N, T), dtype=np.float64)
        smooth = np.zeros((B, N, T), dtype=np.float64)
    for b, v in enumerate(videos):
        Tb = v.num_frames
        for n, ent in enumerate(v.entities):
            feats[b, n, :Tb] = ent.features
            cls[b, n] = CLASS_INDEX[ent.cls]
            if labelled:
                seg = v.ground_truth[ent.id]
                labels[b, n, :Tb] = seg.frame_labels()
                nxt[b, n, :Tb] = _next_segment_labels(seg, Tb)
                p = seg.pulse()
                pulse[b, n, :Tb] = p
                smooth[b, n, :Tb] = kernels.boundary_target(p, sigma)
    out = Batch(
        videos=list(videos),
        features=torch.from_numpy(feats).to(dtype),
        cls=torch.from_numpy(cls),
        entity_mask=torch.from_numpy(cls >= 0),
        lengths=torch.tensor([v.num_frames for v in videos], dtype=torch.long),
    )
    if labelled:
        out.labels = torch.from_numpy(labels)
        out.next_labels = torch.from_numpy(nxt)
        out.pulse = torch.from_numpy(pulse).to(dtype)
        out.smoothed = torch.from_numpy(smooth).to(dtype)
    return out


def class_masks(batch: Batch):
    """``(inter, intra)`` neighbour masks ``[B, 1, N, N]``, broadcastable over time."""
    valid = batch.entity_mask
    pair = valid[:, :, None] & valid[:, None, :]
    same = batch.cls[:, :, None] == batch.cls[:, None, :]
    eye = torch.eye(batch.cls.shape[1], dtype=torch.bool)[None]
    inter = pair & ~same
    intra = pair & same & ~eye
    return inter[:, None], intra[:, None]


def select_by_class(per_class: dict, cls: torch.Tensor):
    """Gather a per-row quantity from ``{"human": x_h, "object": x_o}``.

    Both tensors are ``[B, N, ...]`` with the same shape; padded rows get the
    human entry (they are masked downstream).
    """
    h, o = per_class["human"], per_class["object"]
    is_obj = (cls == 1).view(cls.shape + (1,) * (h.ndim - cls.ndim))
    return torch.where(is_obj, o, h)
