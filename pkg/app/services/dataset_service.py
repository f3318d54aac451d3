import logging
import os
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import torch
from torchvision import datasets

from app.core.config import get_settings
from app.core.errors import ArgumentError, ConfigurationError, IngestionError
from app.schemas.dataset import DatasetInfo, DatasetName, LabeledImageSet, Split

logger = logging.getLogger(__name__)

DIGITS = tuple(str(i) for i in range(10))

DATASETS: Dict[DatasetName, DatasetInfo] = {
    DatasetName.MNIST: DatasetInfo(
        name=DatasetName.MNIST,
        image_shape=(1, 28, 28),
        num_classes=10,
        class_names=DIGITS,
    ),
    DatasetName.FASHIONMNIST: DatasetInfo(
        name=DatasetName.FASHIONMNIST,
        image_shape=(1, 28, 28),
        num_classes=10,
        class_names=(
            "t-shirt",
            "trouser",
            "pullover",
            "dress",
            "coat",
            "sandal",
            "shirt",
            "sneaker",
            "bag",
            "ankle-boot",
        ),
    ),
    # Стандартный вариант cropped digits (по одной цифре в центре кадра).
    DatasetName.SVHN: DatasetInfo(
        name=DatasetName.SVHN,
        image_shape=(3, 32, 32),
        num_classes=10,
        class_names=DIGITS,
    ),
    DatasetName.CIFAR10: DatasetInfo(
        name=DatasetName.CIFAR10,
        image_shape=(3, 32, 32),
        num_classes=10,
        class_names=(
            "airplane",
            "automobile",
            "bird",
            "cat",
            "deer",
            "dog",
            "frog",
            "horse",
            "ship",
            "truck",
        ),
    ),
}


def dataset_info(name: str) -> DatasetInfo:
    try:
        return DATASETS[DatasetName(name)]
    except ValueError as e:
        known = ", ".join(d.value for d in DatasetName)
        raise ConfigurationError(
            f"Unknown dataset '{name}'. Known datasets: {known}"
        ) from e


def resolve_data_root(root: Optional[str] = None) -> str:
    return root or get_settings().DATA_ROOT


def _expected_path(name: DatasetName, root: str, split: Split) -> str:
    if name == DatasetName.MNIST:
        return os.path.join(root, "MNIST", "raw")
    if name == DatasetName.FASHIONMNIST:
        return os.path.join(root, "FashionMNIST", "raw")
    if name == DatasetName.SVHN:
        return os.path.join(root, f"{split.value}_32x32.mat")
    return os.path.join(root, "cifar-10-batches-py")


def _read_mnist_like(
    factory: Callable[..., datasets.MNIST], root: str, split: Split, download: bool
) -> Tuple[torch.Tensor, torch.Tensor]:
    ds = factory(root=root, train=split == Split.TRAIN, download=download)
    return ds.data.unsqueeze(1), torch.as_tensor(ds.targets, dtype=torch.long)


def _read_svhn(root: str, split: Split, download: bool) -> Tuple[torch.Tensor, torch.Tensor]:
    ds = datasets.SVHN(root=root, split=split.value, download=download)
    return torch.from_numpy(ds.data), torch.from_numpy(ds.labels.astype(np.int64))


def _read_cifar10(
    root: str, split: Split, download: bool
) -> Tuple[torch.Tensor, torch.Tensor]:
    ds = datasets.CIFAR10(root=root, train=split == Split.TRAIN, download=download)
    images = torch.from_numpy(ds.data).permute(0, 3, 1, 2).contiguous()
    return images, torch.as_tensor(ds.targets, dtype=torch.long)


def load_dataset(
    name: str, split: str = "train", root: Optional[str] = None
) -> LabeledImageSet:
    """
    Загружает полный сплит датасета и масштабирует пиксели в [0, 1].

    Args:
        name: mnist | fashionmnist | svhn | cifar10
        split: train | test
        root: каталог с файлами датасета (по умолчанию TLDR_DATA_ROOT)
    """
    info = dataset_info(name)
    try:
        split_value = Split(split)
    except ValueError as e:
        raise ConfigurationError(f"Unknown split '{split}', expected train or test") from e

    data_root = resolve_data_root(root)
    download = get_settings().DATA_DOWNLOAD
    expected = _expected_path(info.name, data_root, split_value)
    logger.info(
        f"Loading dataset {info.name.value}/{split_value.value} from {data_root} (download={download})"
    )

    try:
        if info.name == DatasetName.MNIST:
            raw_images, labels = _read_mnist_like(
                datasets.MNIST, data_root, split_value, download
            )
        elif info.name == DatasetName.FASHIONMNIST:
            raw_images, labels = _read_mnist_like(
                datasets.FashionMNIST, data_root, split_value, download
            )
        elif info.name == DatasetName.SVHN:
            raw_images, labels = _read_svhn(data_root, split_value, download)
        else:
            raw_images, labels = _read_cifar10(data_root, split_value, download)
    except (RuntimeError, OSError, ValueError, EOFError) as e:
        logger.error(f"Failed to read {info.name.value} at {expected}: {e}")
        raise IngestionError(
            f"Could not read dataset {info.name.value} ({split_value.value}) at {expected}: {e}"
        ) from e

    if tuple(raw_images.shape[1:]) != info.image_shape:
        raise IngestionError(
            f"Unexpected image shape {tuple(raw_images.shape[1:])} in {expected}"
        )

    images = raw_images.to(torch.float32) / 255.0
    image_set = LabeledImageSet(
        images=images,
        labels=labels,
        name=info.name.value,
        num_classes=info.num_classes,
    )
    logger.info(
        f"Loaded {image_set.count} images of shape {image_set.image_shape} from {info.name.value}/{split_value.value}"
    )
    return image_set


def class_balanced_subset(
    image_set: LabeledImageSet, total: int, seed: int
) -> LabeledImageSet:
    """
    Стратифицированная выборка без повторений: по floor/ceil(total / N) на класс.
    Классы, получающие +1, и элементы внутри класса выбираются перемешиванием с seed.
    При total == count возвращается перестановка всего набора без проверки квот:
    полный сплит (60000 для MNIST) неравномерен по классам.
    """
    if total < 1:
        raise ArgumentError(f"Subset size must be positive, got {total}")
    if total > image_set.count:
        raise ArgumentError(
            f"Subset size {total} exceeds set size {image_set.count} of {image_set.name}"
        )

    generator = torch.Generator().manual_seed(seed)
    n = image_set.num_classes

    if total == image_set.count:
        positions = torch.randperm(image_set.count, generator=generator)
        return image_set.select(positions)

    base, remainder = divmod(total, n)
    extra_classes = set(torch.randperm(n, generator=generator)[:remainder].tolist())

    counts = image_set.class_counts()
    quotas = {c: base + (1 if c in extra_classes else 0) for c in range(n)}
    short = [c for c in range(n) if counts[c].item() < quotas[c]]
    if short:
        details = ", ".join(
            f"class {c}: has {counts[c].item()}, needs {quotas[c]}" for c in short
        )
        raise IngestionError(
            f"Not enough samples in {image_set.name} for a balanced subset of {total}: {details}"
        )

    chosen = []
    for c in range(n):
        members = torch.nonzero(image_set.labels == c, as_tuple=True)[0]
        order = torch.randperm(members.shape[0], generator=generator)
        chosen.append(members[order[: quotas[c]]])
    positions = torch.sort(torch.cat(chosen)).values

    subset = image_set.select(positions)
    logger.debug(
        f"Balanced subset of {image_set.name}: total={total}, seed={seed}, per-class={subset.class_counts().tolist()}"
    )
    return subset


def load_training_subset(
    name: str, total: int, seed: int, root: Optional[str] = None
) -> LabeledImageSet:
    return class_balanced_subset(load_dataset(name, "train", root), total, seed)
