from .assign import Assign, AssignOutput, FrameLayerState, SegmentLayerState, assign_forward
from .batch import Batch, collate
from .config import ModelConfig
from .layers import gumbel_softmax_binary, masked_attention, scaled_dot_attention

__all__ = [
    "Assign",
    "AssignOutput",
    "Batch",
    "FrameLayerState",
    "ModelConfig",
    "SegmentLayerState",
    "assign_forward",
    "collate",
    "gumbel_softmax_binary",
    "masked_attention",
    "scaled_dot_attention",
]
