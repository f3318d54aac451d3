from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


class ConvBlockSpec(BaseModel):
    out_channels: int = Field(ge=1)
    kernel: int = Field(default=3, ge=1)
    stride: int = Field(default=1, ge=1)

    model_config = ConfigDict(frozen=True)


DEFAULT_CONV_BLOCKS = [
    ConvBlockSpec(out_channels=32),
    ConvBlockSpec(out_channels=64),
    ConvBlockSpec(out_channels=128),
]


class ClassifierSpec(BaseModel):
    """Архитектура классификатора: conv-блоки, затем полносвязные слои."""

    conv_blocks: List[ConvBlockSpec] = Field(min_length=1)
    fc_widths: List[int] = Field(min_length=1)
    dropout_rate: float = Field(default=0.3, ge=0.0, lt=1.0)
    leaky_slope: float = Field(default=0.01, gt=0.0)
    num_classes: int = Field(ge=2)
    input_shape: Tuple[int, int, int]

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_head(self) -> "ClassifierSpec":
        if self.fc_widths[-1] != self.num_classes:
            raise ValueError(
                f"final FC width {self.fc_widths[-1]} must equal class count {self.num_classes}"
            )
        if any(width < 1 for width in self.fc_widths):
            raise ValueError("FC widths must be positive")
        return self

    @classmethod
    def default(
        cls, num_classes: int, input_shape: Tuple[int, int, int]
    ) -> "ClassifierSpec":
        return cls(
            conv_blocks=DEFAULT_CONV_BLOCKS,
            fc_widths=[256, num_classes],
            num_classes=num_classes,
            input_shape=input_shape,
        )

    @property
    def feature_dim(self) -> Optional[int]:
        """Ширина предпоследнего FC-слоя (None, если скрытых FC-слоёв нет)."""
        return self.fc_widths[-2] if len(self.fc_widths) > 1 else None


class TrainingHyper(BaseModel):
    lr: float = Field(default=1e-3, gt=0.0)
    batch_size: int = Field(default=64, ge=1)
    max_epochs: int = Field(default=50, ge=1)
    patience: int = Field(default=3, ge=1)
    min_delta: float = Field(default=1e-3, ge=0.0)

    model_config = ConfigDict(extra="forbid")


class ClassifierMetrics(BaseModel):
    train_accuracy: float = Field(ge=0.0, le=1.0)
    test_accuracy: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    epochs: int = Field(ge=0)
    final_loss: Optional[float] = None


class ClassifierManifest(BaseModel):
    """JSON-манифест рядом с весами классификатора."""

    spec: ClassifierSpec
    dataset: str
    subset_size: int
    seed: int
    data_seed: int = 0
    metrics: ClassifierMetrics
    weights_file: str = "classifier.pt"
    checksum: str
