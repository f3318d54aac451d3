import logging
from typing import List, Optional, Tuple

import torch

from app.core.errors import ArgumentError
from app.schemas.condition import ConditionBatch
from app.schemas.dataset import LabeledImageSet
from app.schemas.run import EvalReport, NNStats, PremiseReport
from app.services.classifier_service import FrozenClassifier
from app.services.conditioning_service import (
    balanced_labels,
    hot_condition_batch,
    sample_condition_batch,
    sample_hot_batch,
    soft_conditions_for_labels,
)
from app.services.generator_service import GeneratorState, generate, sample_latents
from app.services.losses import cosine_diversity_loss

logger = logging.getLogger(__name__)

GENERATION_CHUNK = 256
PROBE_BATCH = 64
NN_CHUNK = 256


def _generate_in_chunks(
    gen: GeneratorState, conds: ConditionBatch, stream: torch.Generator
) -> torch.Tensor:
    latents = sample_latents(conds.size, gen.spec.latent_dim, stream)
    chunks = []
    with torch.no_grad():
        for start in range(0, conds.size, GENERATION_CHUNK):
            end = start + GENERATION_CHUNK
            part = ConditionBatch(
                mode=conds.mode,
                raw=None if conds.raw is None else conds.raw[start:end],
                dist=conds.dist[start:end],
                labels=conds.labels[start:end],
                matrix=None if conds.matrix is None else conds.matrix[start:end],
            )
            chunks.append(generate(gen, latents[start:end], part, train_mode=False))
    return torch.cat(chunks)


def _argmax_in_chunks(clf: FrozenClassifier, images: torch.Tensor) -> torch.Tensor:
    with torch.no_grad():
        return torch.cat(
            [
                clf.logits(images[start : start + GENERATION_CHUNK]).argmax(dim=1)
                for start in range(0, images.shape[0], GENERATION_CHUNK)
            ]
        )


def label_agreement(
    clf: FrozenClassifier,
    gen: GeneratorState,
    count: int,
    seed: int,
    hot: bool = False,
) -> float:
    """Доля свежих генераций, для которых argmax классификатора совпадает с меткой условия."""
    if count < 1:
        raise ArgumentError(f"Agreement needs at least one sample, got {count}")
    stream = torch.Generator().manual_seed(seed)
    n = gen.spec.num_classes
    if hot:
        conds = sample_hot_batch(count, n, stream, gen.spec.mode)
    else:
        conds = sample_condition_batch(count, n, stream, gen.spec.mode)
    images = _generate_in_chunks(gen, conds, stream)
    predicted = _argmax_in_chunks(clf, images)
    return (predicted == conds.labels.to(predicted.device)).float().mean().item()


def generate_class_balanced(
    gen: GeneratorState,
    per_class: int,
    seed: int,
    hot: bool = False,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """per_class изображений на каждый класс; возвращает (images, labels), метки по порядку классов."""
    n = gen.spec.num_classes
    stream = torch.Generator().manual_seed(seed)
    labels = torch.sort(balanced_labels(per_class * n, n)).values
    if hot:
        conds = hot_condition_batch(labels, n, gen.spec.mode)
    else:
        conds = soft_conditions_for_labels(labels, n, stream, gen.spec.mode)
    return _generate_in_chunks(gen, conds, stream), labels


def _nearest(queries: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
    # прямой перебор без матричной формулы ||a||^2 + ||b||^2 - 2ab
    distances = []
    for start in range(0, queries.shape[0], NN_CHUNK):
        chunk = queries[start : start + NN_CHUNK]
        pairwise = torch.cdist(chunk, reference, compute_mode="donot_use_mm_for_euclid_dist")
        distances.append(pairwise.min(dim=1).values)
    return torch.cat(distances)


def nn_distance(
    generated: torch.Tensor,
    train: LabeledImageSet,
    same_class_only: bool = False,
    labels: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """
    Для каждого сгенерированного изображения - минимальное L2-расстояние до
    обучающих изображений (только своего класса, если same_class_only).
    """
    if train.count == 0:
        raise ArgumentError("Nearest-neighbour search needs a non-empty training set")
    if tuple(generated.shape[1:]) != train.image_shape:
        raise ArgumentError(
            f"Generated shape {tuple(generated.shape[1:])} does not match {train.image_shape}"
        )

    queries = generated.detach().cpu().flatten(start_dim=1).to(torch.float32)
    reference = train.images.flatten(start_dim=1)

    if not same_class_only:
        return _nearest(queries, reference)

    if labels is None or labels.shape[0] != generated.shape[0]:
        raise ArgumentError("same_class_only requires one label per generated image")
    labels = labels.cpu()
    distances = torch.empty(queries.shape[0])
    for label in torch.unique(labels).tolist():
        members = train.labels == label
        if not members.any():
            raise ArgumentError(f"Class {label} is absent from {train.name}")
        selected = labels == label
        distances[selected] = _nearest(queries[selected], reference[members])
    return distances


def nn_stats(distances: torch.Tensor) -> NNStats:
    return NNStats(
        mean=distances.mean().item(),
        median=distances.median().item(),
        min=distances.min().item(),
    )


def _mean_confidence(clf: FrozenClassifier, images: torch.Tensor) -> float:
    with torch.no_grad():
        maxima = [
            clf.predict_proba(images[start : start + GENERATION_CHUNK]).max(dim=1).values
            for start in range(0, images.shape[0], GENERATION_CHUNK)
        ]
    return torch.cat(maxima).mean().item()


def _mean_weight_grad(
    clf: FrozenClassifier, images: torch.Tensor, labels: torch.Tensor
) -> float:
    norms: List[float] = []
    for start in range(0, images.shape[0], PROBE_BATCH):
        norms.append(
            clf.weight_grad_norm(
                images[start : start + PROBE_BATCH], labels[start : start + PROBE_BATCH]
            )
        )
    return sum(norms) / len(norms)


def _mean_input_grad(clf: FrozenClassifier, images: torch.Tensor) -> float:
    norms = [
        clf.input_gradient_norms(images[start : start + PROBE_BATCH])
        for start in range(0, images.shape[0], PROBE_BATCH)
    ]
    return torch.cat(norms).mean().item()


def mean_pairwise_cosine(clf: FrozenClassifier, images: torch.Tensor) -> float:
    """Средний попарный косинус признаков по пачкам из PROBE_BATCH изображений."""
    values = []
    with torch.no_grad():
        for start in range(0, images.shape[0], PROBE_BATCH):
            chunk = images[start : start + PROBE_BATCH]
            if chunk.shape[0] < 2:
                continue
            values.append(cosine_diversity_loss(clf.penultimate_features(chunk)).item())
    if not values:
        raise ArgumentError("Diversity needs at least two images")
    return sum(values) / len(values)


def _ratio(numerator: float, denominator: float) -> float:
    if denominator <= 0.0:
        return float("inf") if numerator > 0.0 else 1.0
    return numerator / denominator


def premise_report(
    clf: FrozenClassifier,
    train: LabeledImageSet,
    noise_count: int,
    seed: int = 0,
) -> PremiseReport:
    """
    Сравнивает обучающие данные с равномерным шумом в [0, 1] по трём статистикам:
    уверенность (train / шум), норма входного градиента и норма градиента по весам
    (шум / train). Все средние считаются по пачкам, не по отдельным примерам.
    """
    if train.count == 0 or noise_count < 1:
        raise ArgumentError("Premise report needs training images and noise_count >= 1")
    stream = torch.Generator().manual_seed(seed)
    noise = torch.rand(noise_count, *train.image_shape, generator=stream)
    noise_labels = torch.randint(0, train.num_classes, (noise_count,), generator=stream)

    train_confidence = _mean_confidence(clf, train.images)
    noise_confidence = _mean_confidence(clf, noise)
    train_input = _mean_input_grad(clf, train.images)
    noise_input = _mean_input_grad(clf, noise)
    train_weight = _mean_weight_grad(clf, train.images, train.labels)
    noise_weight = _mean_weight_grad(clf, noise, noise_labels)

    report = PremiseReport(
        confidence_gap=_ratio(train_confidence, noise_confidence),
        input_grad_gap=_ratio(noise_input, train_input),
        weight_grad_gap=_ratio(noise_weight, train_weight),
        train_confidence=train_confidence,
        noise_confidence=noise_confidence,
        train_input_grad=train_input,
        noise_input_grad=noise_input,
        train_weight_grad=train_weight,
        noise_weight_grad=noise_weight,
    )
    logger.info(
        f"Premise report: confidence gap={report.confidence_gap:.3f}, "
        f"input-grad gap={report.input_grad_gap:.3f}, weight-grad gap={report.weight_grad_gap:.3f}"
    )
    return report


def evaluate_generator(
    clf: FrozenClassifier,
    gen: GeneratorState,
    train: LabeledImageSet,
    samples_per_class: int,
    seed: int,
    hot: bool = False,
) -> Tuple[EvalReport, torch.Tensor, torch.Tensor]:
    """Полный отчёт по сбалансированной по классам пачке генераций."""
    images, labels = generate_class_balanced(gen, samples_per_class, seed, hot=hot)
    predicted = _argmax_in_chunks(clf, images)
    agreement = (predicted.cpu() == labels).float().mean().item()

    distances = nn_distance(images, train, same_class_only=True, labels=labels)
    images_cpu = images.cpu()
    # Пачки для diversity смешивают классы, как при обучении
    shuffled = torch.randperm(
        images.shape[0], generator=torch.Generator().manual_seed(seed)
    )

    report = EvalReport(
        label_agreement=agreement,
        mean_confidence=_mean_confidence(clf, images),
        nn_l2=nn_stats(distances),
        diversity=mean_pairwise_cosine(clf, images_cpu[shuffled]),
        grad_gap=_ratio(
            _mean_weight_grad(clf, images_cpu, labels),
            _mean_weight_grad(clf, train.images, train.labels),
        ),
        input_grad_gap=_ratio(
            _mean_input_grad(clf, images_cpu), _mean_input_grad(clf, train.images)
        ),
        sample_count=images.shape[0],
    )
    logger.info(
        f"Evaluation: agreement={report.label_agreement:.4f}, confidence={report.mean_confidence:.4f}, "
        f"nn_l2 mean={report.nn_l2.mean:.4f}, diversity={report.diversity:.4f}, "
        f"grad gap={report.grad_gap:.3f}, input-grad gap={report.input_grad_gap:.3f}"
    )
    return report, images_cpu, labels
