from typing import Annotated, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from bgdepth.models.bgunet import DEFAULT_DEPTH_NORM, BGUNetConfig
from bgdepth.models.fusion import FusionConfig

ModelConfig = Annotated[Union[BGUNetConfig, FusionConfig], Field(discriminator="kind")]


class AdamConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    # 0 is allowed and freezes the parameters
    lr: float = Field(1e-4, ge=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)


class SynthSpec(BaseModel):
    """Synthetic scene set used when no dataset directory is given."""
    model_config = ConfigDict(frozen=True)

    count: int = Field(32, ge=1)
    test_count: int = Field(8, ge=0)
    width: int = Field(64, ge=16)
    height: int = Field(64, ge=16)
    n_objects: int = Field(3, ge=1, le=200)
    min_gap: float = Field(0.5, gt=0.0)
    seed: int = 0


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    model: ModelConfig = Field(default_factory=BGUNetConfig)
    optimizer: AdamConfig = Field(default_factory=AdamConfig)
    epochs: int = Field(150, ge=1)
    max_steps: Optional[int] = Field(200, ge=1)
    batch_size: int = Field(4, ge=1)
    seed: int = 0
    depth_norm: float = Field(DEFAULT_DEPTH_NORM, gt=0.0)
    checkpoint_every: int = Field(0, ge=0)
    dataset: Optional[str] = None
    synth: SynthSpec = Field(default_factory=SynthSpec)

    @model_validator(mode="before")
    @classmethod
    def _default_model_kind(cls, values):
        model = values.get("model") if isinstance(values, dict) else None
        if isinstance(model, dict) and "kind" not in model:
            values = {**values, "model": {**model, "kind": "bgunet"}}
        return values
