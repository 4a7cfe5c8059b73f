from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields


@dataclass
class ModelConfig:
    feature_dim: int = 2048
    num_labels: dict = field(default_factory=lambda: {"human": 10, "object": 12})
    frame_hidden: int = 64
    segment_hidden: int = 64
    boundary_mlp_widths: tuple = (128,)
    label_mlp_widths: tuple = (128,)
    gumbel_temperature: float = 1.0
    # linear annealing target over stage 2; None keeps the temperature fixed
    gumbel_temperature_final: float | None = None
    hard_sampling: bool = True
    message_passing_enabled: bool = True
    dense_update_mode: bool = False
    attention_projections: bool = False
    anticipation_head: bool = True

    def __post_init__(self):
        self.boundary_mlp_widths = tuple(int(w) for w in self.boundary_mlp_widths)
        self.label_mlp_widths = tuple(int(w) for w in self.label_mlp_widths)
        widths = (self.feature_dim, self.frame_hidden, self.segment_hidden,
                  *self.boundary_mlp_widths, *self.label_mlp_widths)
        if min(widths) < 1:
            raise ValueError("all dimensions and widths must be >= 1")
        if self.gumbel_temperature <= 0:
            raise ValueError("gumbel_temperature must be positive")
        if self.gumbel_temperature_final is not None and self.gumbel_temperature_final <= 0:
            raise ValueError("gumbel_temperature_final must be positive")
        if set(self.num_labels) != {"human", "object"} or min(self.num_labels.values()) < 1:
            raise ValueError("num_labels needs positive counts for 'human' and 'object'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["boundary_mlp_widths"] = list(self.boundary_mlp_widths)
        d["label_mlp_widths"] = list(self.label_mlp_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})
