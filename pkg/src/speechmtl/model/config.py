"""Model hyperparameters with full-scale and desk-scale presets."""

from __future__ import annotations

from dataclasses import dataclass, field, fields


@dataclass
class ModelConfig:
    d_model: int = 256
    d_ff: int = 1024
    heads: int = 4
    unit_heads: int = 2          # the unit token encoder uses fewer heads
    conv_kernel: int = 15
    dropout: float = 0.1
    duration_dropout: float = 0.5
    downsample_rate: int = 4
    sampler_blocks: int = 2      # stride-2 conv blocks; their product is the rate
    content_enc_layers: int = 6
    speaker_enc_layers: int = 3
    content_dec_layers: int = 3
    merge_dec_layers: int = 3
    unit_enc_layers: int = 4
    s2s_dec_layers: int = 4
    prosody_enc_layers: int = 3
    prosody_pred_layers: int = 3
    use_positions: bool = True

    LAYER_FIELDS = (
        "content_enc_layers", "speaker_enc_layers", "content_dec_layers",
        "merge_dec_layers", "unit_enc_layers", "s2s_dec_layers",
        "prosody_enc_layers", "prosody_pred_layers",
    )

    def __post_init__(self):
        for name in self.LAYER_FIELDS:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_model % self.heads or self.d_model % self.unit_heads:
            raise ValueError("d_model must be divisible by the head counts")
        stride_product = 2 ** self.sampler_blocks
        if stride_product % self.downsample_rate:
            raise ValueError("downsample_rate must divide the sampler stride product")
        if self.conv_kernel % 2 == 0:
            raise ValueError("conv_kernel must be odd for same-length convolution")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def paper_config() -> ModelConfig:
    """Full-scale configuration (the published hyperparameters)."""
    return ModelConfig()


def toy_config() -> ModelConfig:
    """Desk-scale configuration: small enough to overfit on a CPU in minutes."""
    return ModelConfig(
        d_model=128,
        d_ff=256,
        heads=2,
        unit_heads=2,
        conv_kernel=7,
        content_enc_layers=2,
        speaker_enc_layers=1,
        content_dec_layers=1,
        merge_dec_layers=1,
        unit_enc_layers=1,
        s2s_dec_layers=1,
        prosody_enc_layers=1,
        prosody_pred_layers=1,
    )
