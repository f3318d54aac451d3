from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.schemas.classifier import (
    DEFAULT_CONV_BLOCKS,
    ClassifierSpec,
    ConvBlockSpec,
    TrainingHyper,
)
from app.schemas.condition import ConditioningMode
from app.schemas.dataset import DatasetName
from app.schemas.generator import GeneratorSpec
from app.schemas.losses import LossWeights, PerturbationConfig


class RunMode(str, Enum):
    INVERT = "invert"
    RECONSTRUCT = "reconstruct"


class DataConfig(BaseModel):
    root: Optional[str] = None

    model_config = ConfigDict(extra="forbid")


class ClassifierConfig(BaseModel):
    """Архитектура без привязки к датасету: число классов и форма входа берутся из данных."""

    conv_blocks: List[ConvBlockSpec] = Field(
        default_factory=lambda: list(DEFAULT_CONV_BLOCKS), min_length=1
    )
    fc_hidden: List[int] = Field(default_factory=lambda: [256])
    dropout_rate: float = Field(default=0.3, ge=0.0, lt=1.0)
    leaky_slope: float = Field(default=0.01, gt=0.0)
    hyper: TrainingHyper = Field(default_factory=TrainingHyper)

    model_config = ConfigDict(extra="forbid")

    def build_spec(
        self, num_classes: int, input_shape: Tuple[int, int, int]
    ) -> ClassifierSpec:
        return ClassifierSpec(
            conv_blocks=self.conv_blocks,
            fc_widths=[*self.fc_hidden, num_classes],
            dropout_rate=self.dropout_rate,
            leaky_slope=self.leaky_slope,
            num_classes=num_classes,
            input_shape=input_shape,
        )


class GeneratorConfig(BaseModel):
    latent_dim: int = Field(default=128, ge=1)
    base_channels: int = Field(default=64, ge=1)
    dropout_rate: float = Field(default=0.3, ge=0.0, lt=1.0)
    mode: ConditioningMode = ConditioningMode.VECTOR_MATRIX

    model_config = ConfigDict(extra="forbid")

    def build_spec(
        self, num_classes: int, out_shape: Tuple[int, int, int]
    ) -> GeneratorSpec:
        return GeneratorSpec(
            latent_dim=self.latent_dim,
            base_channels=self.base_channels,
            dropout_rate=self.dropout_rate,
            mode=self.mode,
            num_classes=num_classes,
            out_shape=out_shape,
        )


class Schedule(BaseModel):
    steps: int = Field(default=20000, ge=1)
    batch_size: int = Field(default=64, ge=2)
    lr: float = Field(default=2e-4, gt=0.0)
    beta1: float = Field(default=0.5, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eval_interval: int = Field(default=1000, ge=1)
    eval_count: int = Field(default=1024, ge=1)

    model_config = ConfigDict(extra="forbid")


class Seeds(BaseModel):
    data: int = 0
    classifier: int = 0
    generator: int = 0
    conditions: int = 0

    model_config = ConfigDict(extra="forbid")


class EvalConfig(BaseModel):
    samples_per_class: int = Field(default=512, ge=1)
    grid_columns: int = Field(default=8, ge=1)
    noise_count: int = Field(default=1024, ge=1)
    seed: int = 0

    model_config = ConfigDict(extra="forbid")


class RunConfig(BaseModel):
    """Полная конфигурация одного прогона; каждый стохастический компонент имеет свой seed."""

    dataset: DatasetName = DatasetName.MNIST
    subset_size: int = Field(default=1000, ge=1)
    mode: RunMode = RunMode.INVERT
    classifier_ref: Optional[str] = None
    data: DataConfig = Field(default_factory=DataConfig)
    classifier: ClassifierConfig = Field(default_factory=ClassifierConfig)
    generator: GeneratorConfig = Field(default_factory=GeneratorConfig)
    weights: LossWeights = Field(default_factory=LossWeights)
    perturbation: PerturbationConfig = Field(default_factory=PerturbationConfig)
    schedule: Schedule = Field(default_factory=Schedule)
    seeds: Seeds = Field(default_factory=Seeds)
    evaluation: EvalConfig = Field(default_factory=EvalConfig)

    model_config = ConfigDict(extra="forbid")

    @model_validator(mode="before")
    @classmethod
    def fill_mode_weights(cls, data: Any) -> Any:
        # Незаданные веса берутся из значений по умолчанию для режима.
        if not isinstance(data, dict):
            return data
        mode = data.get("mode", RunMode.INVERT)
        if isinstance(mode, RunMode):
            mode = mode.value
        defaults = (
            LossWeights.for_reconstruction()
            if mode == RunMode.RECONSTRUCT.value
            else LossWeights()
        )
        weights = data.get("weights")
        if isinstance(weights, LossWeights):
            return data
        merged = defaults.model_dump()
        merged.update(weights or {})
        return {**data, "weights": merged}

    @model_validator(mode="after")
    def check_weights(self) -> "RunConfig":
        if self.mode == RunMode.INVERT:
            self.weights.require_inversion()
        return self


class NNStats(BaseModel):
    mean: float = Field(ge=0.0)
    median: float = Field(ge=0.0)
    min: float = Field(ge=0.0)


class EvalReport(BaseModel):
    label_agreement: float = Field(ge=0.0, le=1.0)
    mean_confidence: float = Field(ge=0.0, le=1.0)
    nn_l2: NNStats
    diversity: float
    grad_gap: float = Field(ge=0.0)
    input_grad_gap: float = Field(ge=0.0)
    sample_count: int


class PremiseReport(BaseModel):
    """Отношения > 1 означают, что соответствующая посылка выполняется."""

    confidence_gap: float = Field(ge=0.0)
    input_grad_gap: float = Field(ge=0.0)
    weight_grad_gap: float = Field(ge=0.0)
    train_confidence: float
    noise_confidence: float
    train_input_grad: float
    noise_input_grad: float
    train_weight_grad: float
    noise_weight_grad: float


class RunArtifacts(BaseModel):
    run_id: str
    run_dir: Path
    config_file: Path
    classifier_dir: Path
    generator_file: Optional[Path] = None
    metrics_file: Optional[Path] = None
    report_file: Optional[Path] = None
    grid_file: Optional[Path] = None
    report: Optional[EvalReport] = None


class SweepEntry(BaseModel):
    subset_size: int
    generator_seed: int
    run_id: str
    run_dir: Path
    report: Optional[EvalReport] = None


class SweepResult(BaseModel):
    """Итог серии прогонов: по одному классификатору на размер, несколько генераторов на каждый."""

    sweep_dir: Path
    entries: List[SweepEntry] = Field(default_factory=list)
    grids: Dict[int, Path] = Field(default_factory=dict)
