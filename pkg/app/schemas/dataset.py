from enum import Enum
from typing import Optional, Tuple

import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator


class DatasetName(str, Enum):
    MNIST = "mnist"
    FASHIONMNIST = "fashionmnist"
    SVHN = "svhn"
    CIFAR10 = "cifar10"


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"


class DatasetInfo(BaseModel):
    name: DatasetName
    image_shape: Tuple[int, int, int] = Field(description="(channels, height, width)")
    num_classes: int
    class_names: Tuple[str, ...]


class LabeledImageSet(BaseModel):
    """
    Набор изображений с метками.
    images: float32 (count, channels, height, width) в диапазоне [0, 1];
    labels: int64 (count,) в диапазоне [0, num_classes).
    indices: позиции в исходном сплите, если набор является подвыборкой.
    """

    images: torch.Tensor
    labels: torch.Tensor
    name: str
    num_classes: int = Field(ge=2)
    indices: Optional[torch.Tensor] = None

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="after")
    def check_contract(self) -> "LabeledImageSet":
        if self.images.dim() != 4:
            raise ValueError(
                f"images must have shape (count, channels, height, width), got {tuple(self.images.shape)}"
            )
        if self.images.shape[1] not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.images.shape[1]}")
        if self.labels.dim() != 1 or self.labels.shape[0] != self.images.shape[0]:
            raise ValueError(
                f"labels length {self.labels.shape[0]} does not match image count {self.images.shape[0]}"
            )
        if self.images.numel() and (
            self.images.min().item() < 0.0 or self.images.max().item() > 1.0
        ):
            raise ValueError("pixel values must lie in [0, 1]")
        if self.labels.numel() and (
            self.labels.min().item() < 0
            or self.labels.max().item() >= self.num_classes
        ):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if self.indices is not None and self.indices.shape != self.labels.shape:
            raise ValueError("indices must have one entry per sample")
        return self

    @property
    def count(self) -> int:
        return int(self.images.shape[0])

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        _, c, h, w = self.images.shape
        return int(c), int(h), int(w)

    def __len__(self) -> int:
        return self.count

    def class_counts(self) -> torch.Tensor:
        return torch.bincount(self.labels, minlength=self.num_classes)

    def images_of_class(self, label: int) -> torch.Tensor:
        return self.images[self.labels == label]

    def select(self, positions: torch.Tensor) -> "LabeledImageSet":
        """Подвыборка по позициям; indices указывают на исходный сплит."""
        source = self.indices if self.indices is not None else torch.arange(self.count)
        return LabeledImageSet(
            images=self.images[positions],
            labels=self.labels[positions],
            name=self.name,
            num_classes=self.num_classes,
            indices=source[positions],
        )
