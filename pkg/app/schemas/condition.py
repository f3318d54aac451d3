from enum import Enum
from typing import Dict, List, Optional

import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator


class ConditioningMode(str, Enum):
    LABEL = "label"
    VECTOR = "vector"
    MATRIX = "matrix"
    VECTOR_MATRIX = "vector_matrix"

    @property
    def uses_vector(self) -> bool:
        return self in (ConditioningMode.VECTOR, ConditioningMode.VECTOR_MATRIX)

    @property
    def uses_matrix(self) -> bool:
        return self in (ConditioningMode.MATRIX, ConditioningMode.VECTOR_MATRIX)


DIST_TOLERANCE = 1e-6


class Condition(BaseModel):
    """
    Один образец обусловливания.
    dist - целевое распределение для KL, label - фактическая метка для CE
    (argmax(dist), при равенстве берётся меньший индекс).
    """

    mode: ConditioningMode
    raw: Optional[torch.Tensor] = None
    dist: torch.Tensor
    label: int = Field(ge=0)
    matrix: Optional[torch.Tensor] = None

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="after")
    def check_condition(self) -> "Condition":
        n = self.dist.shape[-1]
        if self.dist.dim() != 1:
            raise ValueError("dist must be a vector")
        if self.label >= n:
            raise ValueError(f"label {self.label} out of range for {n} classes")
        if (self.dist < 0).any() or abs(self.dist.sum().item() - 1.0) > DIST_TOLERANCE:
            raise ValueError("dist must be a probability distribution")
        if int(torch.argmax(self.dist).item()) != self.label:
            raise ValueError("label must equal argmax(dist)")
        if self.raw is not None and self.raw.shape != self.dist.shape:
            raise ValueError("raw and dist must have the same length")
        if self.matrix is not None:
            if self.matrix.shape != (n, n):
                raise ValueError(f"matrix must be {n}x{n}")
            if int(self.matrix.sum().item()) != 2 * n - 1:
                raise ValueError("hot matrix must contain exactly 2N - 1 ones")
        if self.mode.uses_matrix and self.matrix is None:
            raise ValueError(f"mode {self.mode.value} requires a matrix")
        return self

    @property
    def num_classes(self) -> int:
        return int(self.dist.shape[-1])


class ConditionBatch(BaseModel):
    """Пачка условий в виде тензоров - то, что реально едет в генератор и в лоссы."""

    mode: ConditioningMode
    raw: Optional[torch.Tensor] = None
    dist: torch.Tensor
    labels: torch.Tensor
    matrix: Optional[torch.Tensor] = None

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])

    @property
    def num_classes(self) -> int:
        return int(self.dist.shape[-1])

    def to(self, device: torch.device) -> "ConditionBatch":
        return ConditionBatch(
            mode=self.mode,
            raw=None if self.raw is None else self.raw.to(device),
            dist=self.dist.to(device),
            labels=self.labels.to(device),
            matrix=None if self.matrix is None else self.matrix.to(device),
        )

    def generator_payload(self) -> Dict[str, torch.Tensor]:
        """
        Входы генератора для данного режима.
        В режимах vector/vector_matrix метка не передаётся явно - только dist.
        """
        payload: Dict[str, torch.Tensor] = {}
        if self.mode == ConditioningMode.LABEL:
            payload["label"] = self.labels
        if self.mode.uses_vector:
            payload["vector"] = self.dist
        if self.mode.uses_matrix:
            payload["matrix"] = self.matrix
        return payload

    def unbind(self) -> List[Condition]:
        return [
            Condition(
                mode=self.mode,
                raw=None if self.raw is None else self.raw[i],
                dist=self.dist[i],
                label=int(self.labels[i].item()),
                matrix=None if self.matrix is None else self.matrix[i],
            )
            for i in range(self.size)
        ]
