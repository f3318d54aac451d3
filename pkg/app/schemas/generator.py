from typing import Tuple

from pydantic import BaseModel, ConfigDict, Field

from app.schemas.condition import ConditioningMode


class GeneratorSpec(BaseModel):
    latent_dim: int = Field(default=128, ge=1)
    base_channels: int = Field(default=64, ge=1)
    dropout_rate: float = Field(default=0.3, ge=0.0, lt=1.0)
    mode: ConditioningMode = ConditioningMode.VECTOR_MATRIX
    num_classes: int = Field(ge=2)
    out_shape: Tuple[int, int, int] = Field(description="(channels, height, width)")

    model_config = ConfigDict(frozen=True)


class GeneratorManifest(BaseModel):
    spec: GeneratorSpec
    objective: str = Field(description="invert | reconstruct")
    steps: int
    seed: int
    weights_file: str = "generator.pt"
