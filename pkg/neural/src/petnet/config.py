"""Model and training configuration."""

from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class ModelConfig:
    """Desk-scale promptable 3D segmenter. Edge 32 by default; 128 works with
    the same weights-per-token budget but is out of desk compute."""

    input_edge: int = 32
    patch_edge: int = 4
    embed_dim: int = 96
    encoder_depth: int = 4
    num_heads: int = 4
    two_way_blocks: int = 2
    mlp_ratio: int = 4
    intensity_scale: float = 0.25  # raw SUV -> network input units

    def __post_init__(self):
        if self.input_edge % self.patch_edge != 0:
            raise ValueError("input edge must be divisible by the token patch edge")
        if self.embed_dim % self.num_heads != 0:
            raise ValueError("embed dim must be divisible by num_heads")
        # two transposed-conv stages, x2 each, must restore input resolution
        if self.patch_edge != 4:
            raise ValueError("upsampling path is built for a token patch edge of 4")

    @property
    def grid_edge(self) -> int:
        return self.input_edge // self.patch_edge

    @property
    def n_tokens(self) -> int:
        return self.grid_edge**3

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainConfig:
    """Interactive training protocol.

    Learning-rate ratio is fixed at 10:1 (image encoder vs prompt encoder +
    mask decoder); the step-decay milestones are the 120/500 and 180/500
    epoch marks scaled proportionally to the configured step budget.
    """

    steps: int = 500
    lr_encoder: float = 8e-5
    weight_decay: float = 0.1
    milestone_fracs: tuple[float, float] = (0.24, 0.36)
    gamma: float = 0.1
    clicks_min: int = 1
    clicks_max: int = 20
    flip_axes: tuple[int, int, int] = (0, 1, 2)
    dice_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.clicks_min <= self.clicks_max <= 20:
            raise ValueError("click budget must stay within [1, 20]")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    @property
    def lr_prompt_decoder(self) -> float:
        return self.lr_encoder / 10.0

    @property
    def milestones(self) -> tuple[int, ...]:
        return tuple(max(1, int(f * self.steps)) for f in self.milestone_fracs)

    def to_dict(self) -> dict:
        return asdict(self)
