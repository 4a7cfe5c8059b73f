"""The two-layer asynchronous-sparse interaction graph network.

The frame layer runs a bidirectional GRU per entity over its features,
exchanges attention messages between entities at every frame and decides,
per entity and frame, whether the frame closes a segment. The segment layer
advances an entity's recurrent state only at those closing frames and copies
it otherwise; its label head names the segment that just closed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .. import kernels
from ..data import Segmentation
from .batch import CLASS_NAMES, Batch, class_masks, select_by_class
from .config import ModelConfig
from .layers import (MLP, ClassGRU, class_birnn, gumbel_softmax_binary, masked_attention,
                     sample_gumbel)


@dataclass
class FrameLayerState:
    h_frame: torch.Tensor        # [B, N, T, 2*Hf]
    m_inter: torch.Tensor        # [B, N, T, D + 2*Hf]
    m_intra: torch.Tensor
    logits: torch.Tensor         # [B, N, T, 2], boundary logit first
    u_soft: torch.Tensor         # [B, N, T]
    u_hard: torch.Tensor         # [B, N, T] 0/1 schedule actually used
    gate: torch.Tensor           # [B, N, T] differentiable update weight
    attn_inter: torch.Tensor     # [B, T, N, N]
    attn_intra: torch.Tensor
    noise: torch.Tensor | None = None


@dataclass
class SegmentLayerState:
    h_segment: torch.Tensor      # [B, N, T, 2*Hs]
    h_forward: torch.Tensor      # [B, N, T, Hs]
    z_inputs: torch.Tensor       # [B, N, T, Z]; meaningful at update frames
    label_logp: dict             # class -> [B, N, T, n_c]; read at update frames
    label_bcast: dict            # class -> [B, N, T, n_c]; per-frame broadcast
    next_logp: dict | None
    next_bcast: dict | None
    closing: torch.Tensor        # [B, N, T] long, closing frame of each frame's segment
    attn_inter: torch.Tensor     # [B, T, N, N]
    attn_intra: torch.Tensor
    update_count: torch.Tensor   # [B]


@dataclass
class AssignOutput:
    batch: Batch
    frame: FrameLayerState
    segment: SegmentLayerState


def _broadcast(logp: dict, closing: torch.Tensor) -> dict:
    idx = closing.clamp_min(0)
    return {c: lp.gather(2, idx[..., None].expand(lp.shape)) for c, lp in logp.items()}


class Assign(nn.Module):
    kind = "assign"

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        D, Hf, Hs = config.feature_dim, config.frame_hidden, config.segment_hidden
        self.key_dim = D + 2 * Hf
        self.frame_rnn = nn.ModuleDict(
            {c: nn.GRU(D, Hf, batch_first=True, bidirectional=True) for c in CLASS_NAMES}
        )
        if config.attention_projections:
            self.frame_query = nn.Linear(self.key_dim, self.key_dim, bias=False)
            self.frame_key = nn.Linear(self.key_dim, self.key_dim, bias=False)
            self.seg_query = nn.Linear(Hs, Hs, bias=False)
            self.seg_key = nn.Linear(Hs, Hs, bias=False)
        self.boundary = nn.ModuleDict(
            {c: MLP(D + 2 * Hf + 2 * self.key_dim, config.boundary_mlp_widths, 2) for c in CLASS_NAMES}
        )
        self.frame_z_dim = 2 * Hf + 2 * self.key_dim
        self.z_dim = self.frame_z_dim + 2 * Hs
        self.seg_fwd = ClassGRU(self.z_dim, Hs)
        self.seg_bwd = ClassGRU(self.z_dim, Hs)
        self.label_head = nn.ModuleDict(
            {c: MLP(2 * Hs, config.label_mlp_widths, config.num_labels[c]) for c in CLASS_NAMES}
        )
        if config.anticipation_head:
            self.next_head = nn.ModuleDict(
                {c: MLP(2 * Hs, config.label_mlp_widths, config.num_labels[c]) for c in CLASS_NAMES}
            )

    # ------------------------------------------------------------------
    # frame layer
    # ------------------------------------------------------------------

    def _frame_rnn(self, batch: Batch) -> torch.Tensor:
        rnns = [self.frame_rnn[c] for c in CLASS_NAMES]
        return class_birnn(rnns, batch.features, batch.cls, batch.lengths, self.config.frame_hidden)

    def _attend(self, states, masks, query_proj=None, key_proj=None):
        """Inter/intra attention of every entity over its neighbours, per frame.

        ``states`` is ``[B, ..., N, d]``; returns contexts and weights for both
        neighbour sets.
        """
        q = query_proj(states) if query_proj is not None else states
        k = key_proj(states) if key_proj is not None else states
        d = states.shape[-1]
        inter_ctx, inter_w = masked_attention(q, k, states, masks[0], d)
        intra_ctx, intra_w = masked_attention(q, k, states, masks[1], d)
        return inter_ctx, intra_ctx, inter_w, intra_w

    def frame_layer(self, batch: Batch, mode="eval", dense=None, boundary_override=None,
                    noise=None, generator=None, temperature=None) -> FrameLayerState:
        cfg = self.config
        B, N, T = batch.shape
        if T == 0:
            raise ValueError("videos must have at least one frame")
        dense = cfg.dense_update_mode if dense is None else dense
        x = batch.features
        h_frame = self._frame_rnn(batch)
        keys = torch.cat([x, h_frame], dim=-1).transpose(1, 2)          # [B, T, N, Dk]
        masks = class_masks(batch)
        if cfg.message_passing_enabled:
            proj = (self.frame_query, self.frame_key) if cfg.attention_projections else (None, None)
            m_inter, m_intra, a_inter, a_intra = self._attend(keys, masks, *proj)
            m_inter, m_intra = m_inter.transpose(1, 2), m_intra.transpose(1, 2)
        else:
            m_inter = m_intra = x.new_zeros(B, N, T, self.key_dim)
            a_inter = a_intra = x.new_zeros(B, T, N, N)

        detector_in = torch.cat([x, h_frame, m_intra, m_inter], dim=-1)
        logits = select_by_class({c: self.boundary[c](detector_in) for c in CLASS_NAMES}, batch.cls)

        tau = cfg.gumbel_temperature if temperature is None else temperature
        if mode == "train" and noise is None:
            noise = sample_gumbel(logits.shape, generator, logits.dtype)
        u_dec, u_soft = gumbel_softmax_binary(logits, tau, cfg.hard_sampling, mode, noise=noise)
        if mode == "train" and not cfg.hard_sampling:
            gate = u_soft
        else:
            gate = u_dec
        if dense:
            gate = torch.ones_like(gate)
        elif boundary_override is not None:
            gate = boundary_override.to(gate.dtype)
        gate = torch.where(batch.last_frame, torch.ones_like(gate), gate)
        gate = gate * batch.frame_mask
        u_hard = (gate.detach() > 0.5).to(gate.dtype)
        return FrameLayerState(h_frame, m_inter, m_intra, logits, u_soft, u_hard, gate,
                               a_inter, a_intra, noise if mode == "train" else None)

    # ------------------------------------------------------------------
    # segment layer
    # ------------------------------------------------------------------

    def segment_layer(self, batch: Batch, frame: FrameLayerState) -> SegmentLayerState:
        cfg = self.config
        B, N, T = batch.shape
        R = B * N
        Hs = cfg.segment_hidden
        cls = batch.cls.reshape(R)
        zf = torch.cat([frame.h_frame, frame.m_inter, frame.m_intra], dim=-1).reshape(R, T, -1)
        gate = frame.gate.reshape(R, T, 1)
        masks = class_masks(batch)
        masks = (masks[0][:, 0], masks[1][:, 0])                       # [B, N, N]
        proj = (self.seg_query, self.seg_key) if cfg.attention_projections else (None, None)
        tail = slice(self.frame_z_dim, None)

        gi_frame = self.seg_fwd.project(zf, cls, slice(0, self.frame_z_dim))   # [R, T, 3Hs]
        h = zf.new_zeros(R, Hs)
        fwd, msgs, w_inter, w_intra = [], [], [], []
        zero_msg = zf.new_zeros(R, 2 * Hs)
        zero_w = zf.new_zeros(B, N, N)
        for t in range(T):
            if cfg.message_passing_enabled:
                mi, ma, wi, wa = self._attend(h.view(B, N, Hs), masks, *proj)
                m = torch.cat([mi, ma], dim=-1).reshape(R, 2 * Hs)
            else:
                m, wi, wa = zero_msg, zero_w, zero_w
            gi = gi_frame[:, t] + self.seg_fwd.project(m, cls, tail, bias=False)
            cand = self.seg_fwd.step(gi, h, cls)
            u = gate[:, t]
            h = u * cand + (1 - u) * h
            fwd.append(h)
            msgs.append(m)
            w_inter.append(wi)
            w_intra.append(wa)
        h_fwd = torch.stack(fwd, dim=1)                                 # [R, T, Hs]
        z = torch.cat([zf, torch.stack(msgs, dim=1)], dim=-1)           # [R, T, Z]

        gi_back = self.seg_bwd.project(z, cls)
        hb = zf.new_zeros(R, Hs)
        bwd = [None] * T
        for t in range(T - 1, -1, -1):
            cand = self.seg_bwd.step(gi_back[:, t], hb, cls)
            u = gate[:, t]
            hb = u * cand + (1 - u) * hb
            bwd[t] = hb
        h_bwd = torch.stack(bwd, dim=1)

        h_seg = torch.cat([h_fwd, h_bwd], dim=-1).view(B, N, T, 2 * Hs)
        closing = torch.from_numpy(kernels.closing_frames(frame.u_hard.reshape(R, T).numpy() > 0.5))
        closing = closing.view(B, N, T)
        label_logp = {c: torch.log_softmax(self.label_head[c](h_seg), dim=-1) for c in CLASS_NAMES}
        next_logp = next_bcast = None
        if cfg.anticipation_head:
            next_logp = {c: torch.log_softmax(self.next_head[c](h_seg), dim=-1) for c in CLASS_NAMES}
            next_bcast = _broadcast(next_logp, closing)
        return SegmentLayerState(
            h_segment=h_seg,
            h_forward=h_fwd.view(B, N, T, Hs),
            z_inputs=z.view(B, N, T, -1),
            label_logp=label_logp,
            label_bcast=_broadcast(label_logp, closing),
            next_logp=next_logp,
            next_bcast=next_bcast,
            closing=closing,
            attn_inter=torch.stack(w_inter, dim=1),
            attn_intra=torch.stack(w_intra, dim=1),
            update_count=frame.u_hard.sum(dim=(1, 2)).long(),
        )

    def forward(self, batch: Batch, mode="eval", dense=None, boundary_override=None, noise=None,
                generator=None, temperature=None) -> AssignOutput:
        frame = self.frame_layer(batch, mode, dense, boundary_override, noise, generator, temperature)
        return AssignOutput(batch, frame, self.segment_layer(batch, frame))

    # ------------------------------------------------------------------
    # decoding
    # ------------------------------------------------------------------

    @staticmethod
    def decode(out: AssignOutput) -> dict:
        """Per-video ``{entity_id: Segmentation}`` read off the update schedule.

        One segment per update frame, labelled with the argmax of the label
        distribution emitted there; adjacent equal labels are not merged.
        """
        batch = out.batch
        u = out.frame.u_hard.detach().numpy() > 0.5
        preds = {}
        for b, video in enumerate(batch.videos):
            Tb = video.num_frames
            per = {}
            for n, ent in enumerate(video.entities):
                lp = out.segment.label_logp[ent.cls.value][b, n, :Tb].detach()
                closes = np.flatnonzero(u[b, n, :Tb])
                labels = lp[torch.from_numpy(closes)].argmax(dim=-1).tolist()
                per[ent.id] = Segmentation.from_boundaries(u[b, n, :Tb], labels, ent.cls.label_space)
            preds[video.id] = per
        return preds


def assign_forward(model: Assign, batch: Batch, mode="eval", **kwargs):
    """Run both layers; returns ``(frame_state, segment_state, predictions)``."""
    out = model(batch, mode=mode, **kwargs)
    return out.frame, out.segment, Assign.decode(out)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())

