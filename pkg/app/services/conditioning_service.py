import logging
from typing import List, Optional

import torch
import torch.nn.functional as F

from app.core.errors import ArgumentError
from app.schemas.condition import Condition, ConditionBatch, ConditioningMode

logger = logging.getLogger(__name__)


def _check_classes(num_classes: int) -> None:
    if num_classes < 2:
        raise ArgumentError(f"Need at least 2 classes, got {num_classes}")


def _check_label(label: int, num_classes: int) -> None:
    _check_classes(num_classes)
    if not 0 <= label < num_classes:
        raise ArgumentError(f"Label {label} out of range [0, {num_classes})")


def hot_matrix(label: int, num_classes: int) -> torch.Tensor:
    """NxN матрица: строка и столбец с индексом label заполнены единицами, остальное - нули."""
    _check_label(label, num_classes)
    matrix = torch.zeros(num_classes, num_classes)
    matrix[label, :] = 1.0
    matrix[:, label] = 1.0
    return matrix


def hot_matrices(labels: torch.Tensor, num_classes: int) -> torch.Tensor:
    """Пачка горячих матриц для вектора меток, shape (B, N, N)."""
    if labels.numel() and (labels.min().item() < 0 or labels.max().item() >= num_classes):
        raise ArgumentError(f"Labels must lie in [0, {num_classes})")
    one_hot = F.one_hot(labels.long(), num_classes).to(torch.float32)
    rows = one_hot.unsqueeze(2).expand(-1, -1, num_classes)
    cols = one_hot.unsqueeze(1).expand(-1, num_classes, -1)
    return torch.maximum(rows, cols)


def label_from_matrix(matrix: torch.Tensor) -> int:
    """Индекс единственной строки, целиком состоящей из единиц."""
    full_rows = torch.nonzero((matrix == 1).all(dim=1), as_tuple=True)[0]
    if full_rows.numel() != 1:
        raise ArgumentError("Matrix does not encode exactly one label")
    return int(full_rows.item())


def _batch_from_raw(
    raw: torch.Tensor, mode: ConditioningMode, keep_raw: bool = True
) -> ConditionBatch:
    num_classes = raw.shape[1]
    dist = F.softmax(raw, dim=1)
    labels = torch.argmax(dist, dim=1)
    if mode == ConditioningMode.LABEL:
        # Базовый режим: генератор получает только метку, цель KL - one-hot.
        dist = F.one_hot(labels, num_classes).to(raw.dtype)
        keep_raw = False
    matrix = hot_matrices(labels, num_classes) if mode.uses_matrix else None
    return ConditionBatch(
        mode=mode,
        raw=raw if keep_raw else None,
        dist=dist,
        labels=labels,
        matrix=matrix,
    )


def sample_condition_batch(
    count: int,
    num_classes: int,
    generator: torch.Generator,
    mode: ConditioningMode = ConditioningMode.VECTOR,
) -> ConditionBatch:
    """raw ~ N(0, 1), dist = softmax(raw), label = argmax(dist)."""
    if count < 1:
        raise ArgumentError(f"Condition count must be positive, got {count}")
    _check_classes(num_classes)
    raw = torch.randn(count, num_classes, generator=generator)
    return _batch_from_raw(raw, mode)


def sample_soft_conditions(
    count: int,
    num_classes: int,
    seed: int,
    mode: ConditioningMode = ConditioningMode.VECTOR,
) -> List[Condition]:
    generator = torch.Generator().manual_seed(seed)
    return sample_condition_batch(count, num_classes, generator, mode).unbind()


def condition_from_raw(
    raw: torch.Tensor, mode: ConditioningMode = ConditioningMode.VECTOR
) -> Condition:
    if raw.dim() != 1:
        raise ArgumentError("raw must be a vector")
    _check_classes(raw.shape[0])
    return _batch_from_raw(raw.unsqueeze(0).to(torch.float32), mode).unbind()[0]


def soft_conditions_for_labels(
    labels: torch.Tensor,
    num_classes: int,
    generator: torch.Generator,
    mode: ConditioningMode = ConditioningMode.VECTOR,
) -> ConditionBatch:
    """
    Мягкие условия с заданной фактической меткой: нормальный вектор, у которого
    максимальный элемент переставлен на позицию нужной метки.
    """
    _check_classes(num_classes)
    labels = labels.long()
    raw = torch.randn(labels.shape[0], num_classes, generator=generator)
    current = raw.argmax(dim=1)
    rows = torch.arange(labels.shape[0])
    top = raw[rows, current].clone()
    raw[rows, current] = raw[rows, labels]
    raw[rows, labels] = top
    return _batch_from_raw(raw, mode)


def hot_condition(
    label: int,
    num_classes: int,
    mode: ConditioningMode = ConditioningMode.VECTOR,
) -> Condition:
    """One-hot условие для реконструкции (требуем максимальную уверенность)."""
    _check_label(label, num_classes)
    return hot_condition_batch(torch.tensor([label]), num_classes, mode).unbind()[0]


def hot_condition_batch(
    labels: torch.Tensor,
    num_classes: int,
    mode: ConditioningMode = ConditioningMode.VECTOR,
) -> ConditionBatch:
    _check_classes(num_classes)
    labels = labels.long()
    if labels.numel() and (labels.min().item() < 0 or labels.max().item() >= num_classes):
        raise ArgumentError(f"Labels must lie in [0, {num_classes})")
    dist = F.one_hot(labels, num_classes).to(torch.float32)
    matrix = hot_matrices(labels, num_classes) if mode.uses_matrix else None
    return ConditionBatch(mode=mode, raw=None, dist=dist, labels=labels, matrix=matrix)


def sample_hot_batch(
    count: int,
    num_classes: int,
    generator: torch.Generator,
    mode: ConditioningMode = ConditioningMode.VECTOR,
) -> ConditionBatch:
    if count < 1:
        raise ArgumentError(f"Condition count must be positive, got {count}")
    _check_classes(num_classes)
    labels = torch.randint(0, num_classes, (count,), generator=generator)
    return hot_condition_batch(labels, num_classes, mode)


def collate_conditions(conditions: List[Condition]) -> ConditionBatch:
    if not conditions:
        raise ArgumentError("Cannot collate an empty list of conditions")
    modes = {c.mode for c in conditions}
    sizes = {c.num_classes for c in conditions}
    if len(modes) != 1 or len(sizes) != 1:
        raise ArgumentError(
            f"Conditions must share mode and class count, got modes={sorted(m.value for m in modes)}, classes={sorted(sizes)}"
        )
    first = conditions[0]
    has_raw = all(c.raw is not None for c in conditions)
    return ConditionBatch(
        mode=first.mode,
        raw=torch.stack([c.raw for c in conditions]) if has_raw else None,
        dist=torch.stack([c.dist for c in conditions]),
        labels=torch.tensor([c.label for c in conditions], dtype=torch.long),
        matrix=(
            torch.stack([c.matrix for c in conditions])
            if first.matrix is not None
            else None
        ),
    )


def balanced_labels(count: int, num_classes: int, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Метки 0..N-1 по кругу (разница между классами не больше 1), опционально перемешанные."""
    labels = torch.arange(count) % num_classes
    if generator is not None:
        labels = labels[torch.randperm(count, generator=generator)]
    return labels
