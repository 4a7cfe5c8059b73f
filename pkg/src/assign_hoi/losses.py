"""Segmentation, labelling and anticipation losses.

All per-frame losses average over frames and entities of a video, so a
video contributes ``(1/T) sum_t (1/N) sum_e loss[e, t]``. Batched inputs
``[B, N, T]`` return one value per video; un-batched ``[N, T]`` return a
scalar.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import torch

EPS = 1e-7


@dataclass
class LossConfig:
    lambda_seg: float = 1.0
    anticipation_weight: float = 1.0
    gaussian_sigma: float = 4.0
    enable_seg_loss: bool = True
    enable_anticipation: bool = True

    def __post_init__(self):
        for name in ("lambda_seg", "anticipation_weight"):
            v = float(getattr(self, name))
            if not v >= 0 or v == float("inf"):
                raise ValueError(f"{name} must be finite and non-negative")
        if self.gaussian_sigma <= 0:
            raise ValueError("gaussian_sigma must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def _batched(*tensors):
    single = tensors[0].ndim == 2
    if single:
        tensors = tuple(t.unsqueeze(0) if t is not None else None for t in tensors)
    return single, tensors


def _video_mean(values, mask):
    num = (values * mask).sum(dim=(1, 2))
    den = mask.sum(dim=(1, 2))
    return torch.where(den > 0, num / den.clamp_min(1), torch.zeros_like(num))


def segmentation_loss(u_soft, target, mask=None):
    """Binary cross-entropy between soft boundary outputs and smoothed targets."""
    u_soft = torch.as_tensor(u_soft, dtype=torch.float64 if not torch.is_tensor(u_soft) else None)
    target = torch.as_tensor(target, dtype=u_soft.dtype)
    if u_soft.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(u_soft.shape)} vs {tuple(target.shape)}")
    if mask is None:
        mask = torch.ones_like(u_soft)
    single, (u_soft, target, mask) = _batched(u_soft, target, mask.to(u_soft.dtype))
    p = u_soft.clamp(EPS, 1 - EPS)
    bce = -(target * torch.log(p) + (1 - target) * torch.log1p(-p))
    out = _video_mean(bce, mask)
    return out[0] if single else out


def frame_nll(logp, labels):
    """NLL of ``labels`` under log-probabilities ``logp [..., n]``; 0 where label < 0."""
    idx = labels.clamp(0, logp.shape[-1] - 1)
    nll = -logp.gather(-1, idx[..., None]).squeeze(-1)
    return torch.where(labels >= 0, nll, torch.zeros_like(nll))


def class_frame_nll(logp_by_class: dict, labels, cls):
    """Per-frame NLL where each entity row uses its own class's head."""
    h = frame_nll(logp_by_class["human"], labels)
    o = frame_nll(logp_by_class["object"], labels)
    return torch.where((cls == 1)[..., None], o, h)


def _nll(logp, labels, cls):
    if isinstance(logp, dict):
        if cls is None:
            raise ValueError("per-class log-probabilities need entity classes")
        parts = logp.values()
    else:
        parts = (logp,)
    for lp in parts:
        if labels.shape != lp.shape[:-1]:
            raise ValueError("labels must match the leading dimensions of logp")
    if isinstance(logp, dict):
        return class_frame_nll(logp, labels, cls)
    return frame_nll(logp, labels)


def labeling_loss(logp, labels, mask=None, cls=None):
    """Per-frame NLL of the true label under broadcast label log-probabilities.

    ``logp`` is ``[N, T, n]`` (or ``[B, N, T, n]``) of log-probabilities, or a
    ``{"human", "object"}`` dict of those together with entity classes ``cls``.
    """
    labels = torch.as_tensor(labels)
    nll = _nll(logp, labels, cls)
    if mask is None:
        mask = (labels >= 0).to(nll.dtype)
    if (mask.bool() & (labels < 0)).any():
        raise AssertionError("a counted frame has no label")
    single, (nll, mask) = _batched(nll, mask.to(nll.dtype))
    out = _video_mean(nll, mask)
    return out[0] if single else out


def anticipation_loss(next_logp, next_labels, mask=None, cls=None):
    """NLL of the next segment's label, averaged over frames that have one.

    Frames in an entity's last segment carry ``next_labels == -1`` and are
    left out; a video with no such frames contributes 0.
    """
    next_labels = torch.as_tensor(next_labels)
    nll = _nll(next_logp, next_labels, cls)
    counted = (next_labels >= 0).to(nll.dtype)
    if mask is not None:
        counted = counted * mask.to(nll.dtype)
    single, (nll, counted) = _batched(nll, counted)
    out = _video_mean(nll, counted)
    return out[0] if single else out


def total_loss(parts: dict, config: LossConfig):
    """``L_label + lambda * L_seg + w_ant * L_ant``, each term gated by its switch."""
    total = parts["label"]
    if config.enable_seg_loss and "seg" in parts:
        total = total + config.lambda_seg * parts["seg"]
    if config.enable_anticipation and "anticipation" in parts:
        total = total + config.anticipation_weight * parts["anticipation"]
    return total
