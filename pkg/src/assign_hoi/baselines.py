"""Frame-wise recurrent baselines without a segmentation mechanism.

Both run a bidirectional GRU per entity and classify every frame. The
relational variant additionally appends the mean hidden state of all
entities of the other class.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch
import torch.nn as nn

from .data import Segmentation
from .model.batch import CLASS_NAMES, Batch, class_masks
from .model.layers import MLP, class_birnn


@dataclass
class BaselineConfig:
    feature_dim: int = 2048
    num_labels: dict = field(default_factory=lambda: {"human": 10, "object": 12})
    hidden: int = 64
    mlp_widths: tuple = (128,)
    include_human_to_object_message: bool = True

    def __post_init__(self):
        self.mlp_widths = tuple(int(w) for w in self.mlp_widths)
        if min((self.feature_dim, self.hidden, *self.mlp_widths)) < 1:
            raise ValueError("all dimensions and widths must be >= 1")
        if set(self.num_labels) != {"human", "object"} or min(self.num_labels.values()) < 1:
            raise ValueError("num_labels needs positive counts for 'human' and 'object'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mlp_widths"] = list(self.mlp_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BaselineConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class BaselineOutput:
    batch: Batch
    h_frame: torch.Tensor          # [B, N, T, 2H]
    message: torch.Tensor | None   # [B, N, T, 2H]
    label_logp: dict               # class -> [B, N, T, n_c]


def inter_class_mean(h, batch: Batch, include_human_to_object=True):
    """Mean of the other class's states per frame; zero when there are none.

    ``h`` is ``[B, N, T, d]``.
    """
    inter = class_masks(batch)[0][:, 0].to(h.dtype)           # [B, N, N]
    if not include_human_to_object:
        inter = inter * (batch.cls != 1)[:, :, None]
    count = inter.sum(dim=-1, keepdim=True)
    weights = inter / count.clamp_min(1)
    return torch.einsum("bij,bjtd->bitd", weights, h)


class IndependentBiRNN(nn.Module):
    kind = "independent_birnn"
    relational = False

    def __init__(self, config: BaselineConfig):
        super().__init__()
        self.config = config
        H = config.hidden
        self.rnn = nn.ModuleDict(
            {c: nn.GRU(config.feature_dim, H, batch_first=True, bidirectional=True) for c in CLASS_NAMES}
        )
        head_in = 4 * H if self.relational else 2 * H
        self.head = nn.ModuleDict(
            {c: MLP(head_in, config.mlp_widths, config.num_labels[c]) for c in CLASS_NAMES}
        )

    def _message(self, h, batch):
        return None

    def forward(self, batch: Batch, mode="eval", **_) -> BaselineOutput:
        h = class_birnn([self.rnn[c] for c in CLASS_NAMES], batch.features, batch.cls,
                        batch.lengths, self.config.hidden)
        msg = self._message(h, batch)
        inp = h if msg is None else torch.cat([h, msg], dim=-1)
        logp = {c: torch.log_softmax(self.head[c](inp), dim=-1) for c in CLASS_NAMES}
        return BaselineOutput(batch, h, msg, logp)

    @staticmethod
    def decode(out: BaselineOutput) -> dict:
        preds = {}
        for b, video in enumerate(out.batch.videos):
            Tb = video.num_frames
            preds[video.id] = {
                ent.id: frames_to_prediction(out.label_logp[ent.cls.value][b, n, :Tb].detach(),
                                             ent.cls.label_space)
                for n, ent in enumerate(video.entities)
            }
        return preds


class RelationalBiRNN(IndependentBiRNN):
    kind = "relational_birnn"
    relational = True

    def _message(self, h, batch):
        return inter_class_mean(h, batch, self.config.include_human_to_object_message)


def independent_birnn_forward(model: IndependentBiRNN, batch: Batch) -> dict:
    """Per-frame label probabilities ``{class: [B, N, T, n_c]}``."""
    return {c: lp.exp() for c, lp in model(batch).label_logp.items()}


def relational_birnn_forward(model: RelationalBiRNN, batch: Batch) -> dict:
    return {c: lp.exp() for c, lp in model(batch).label_logp.items()}


def frames_to_prediction(dist, label_space="sub_activity") -> Segmentation:
    """Argmax each frame of ``dist [T, n]`` and merge equal runs into segments."""
    if torch.is_tensor(dist):
        dist = dist.detach().cpu().numpy()
    labels = np.asarray(dist).argmax(axis=-1)
    return Segmentation.from_frame_labels(labels, label_space)


BASELINES = {IndependentBiRNN.kind: IndependentBiRNN, RelationalBiRNN.kind: RelationalBiRNN}
