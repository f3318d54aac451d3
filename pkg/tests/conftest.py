import os
from typing import Callable

import pytest
import torch

from app.core.config import get_settings
from app.models.classifier import ConvClassifier
from app.schemas.classifier import ClassifierSpec, ConvBlockSpec, TrainingHyper
from app.schemas.condition import ConditioningMode
from app.schemas.dataset import LabeledImageSet
from app.schemas.generator import GeneratorSpec
from app.services.classifier_service import FrozenClassifier, train_classifier
from app.services.generator_service import GeneratorState, build_generator

NUM_CLASSES = 4
IMAGE_SHAPE = (1, 12, 12)

# Корень настоящих датасетов для медленных тестов (до подмены окружения фикстурами).
REAL_DATA_ROOT = os.environ.get("TLDR_DATA_ROOT")


def make_image_set(
    per_class: int = 12,
    num_classes: int = NUM_CLASSES,
    shape=IMAGE_SHAPE,
    seed: int = 0,
    name: str = "synthetic",
) -> LabeledImageSet:
    """Синтетический набор: у каждого класса яркий квадрат в своём месте поверх слабого шума."""
    generator = torch.Generator().manual_seed(seed)
    channels, height, width = shape
    count = per_class * num_classes
    labels = torch.arange(count) % num_classes
    images = 0.1 * torch.rand(count, channels, height, width, generator=generator)
    patch = max(height // 3, 1)
    for label in range(num_classes):
        row = (label * patch) % (height - patch + 1)
        col = (label * 2 * patch) % (width - patch + 1)
        images[labels == label, :, row : row + patch, col : col + patch] = 0.9
    return LabeledImageSet(images=images, labels=labels, name=name, num_classes=num_classes)


@pytest.fixture(autouse=True)
def isolated_settings(monkeypatch, tmp_path):
    monkeypatch.setenv("TLDR_DEVICE", "cpu")
    monkeypatch.setenv("TLDR_DATA_ROOT", str(tmp_path / "data"))
    monkeypatch.setenv("TLDR_RUNS_ROOT", str(tmp_path / "runs"))
    monkeypatch.setenv("TLDR_DATA_DOWNLOAD", "false")
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def image_set() -> LabeledImageSet:
    return make_image_set()


@pytest.fixture
def classifier_spec() -> ClassifierSpec:
    return ClassifierSpec(
        conv_blocks=[ConvBlockSpec(out_channels=4), ConvBlockSpec(out_channels=8)],
        fc_widths=[16, NUM_CLASSES],
        dropout_rate=0.3,
        num_classes=NUM_CLASSES,
        input_shape=IMAGE_SHAPE,
    )


@pytest.fixture
def fast_hyper() -> TrainingHyper:
    return TrainingHyper(lr=1e-2, batch_size=16, max_epochs=40, patience=5)


@pytest.fixture
def untrained_classifier(classifier_spec) -> FrozenClassifier:
    torch.manual_seed(0)
    return FrozenClassifier(ConvClassifier(classifier_spec))


@pytest.fixture
def trained_classifier(classifier_spec, image_set, fast_hyper) -> FrozenClassifier:
    return train_classifier(
        classifier_spec, image_set, fast_hyper, seed=0, device=torch.device("cpu")
    )


@pytest.fixture
def generator_spec() -> Callable[..., GeneratorSpec]:
    def factory(mode: ConditioningMode = ConditioningMode.VECTOR_MATRIX) -> GeneratorSpec:
        return GeneratorSpec(
            latent_dim=8,
            base_channels=4,
            mode=mode,
            num_classes=NUM_CLASSES,
            out_shape=IMAGE_SHAPE,
        )

    return factory


@pytest.fixture
def make_generator(generator_spec) -> Callable[..., GeneratorState]:
    def factory(
        mode: ConditioningMode = ConditioningMode.VECTOR_MATRIX, seed: int = 0
    ) -> GeneratorState:
        return build_generator(generator_spec(mode), seed, device=torch.device("cpu"))

    return factory
