import logging
from typing import List, Optional

import torch

from app.core.errors import ArgumentError, CapabilityError
from app.schemas.dataset import LabeledImageSet
from app.schemas.generator import GeneratorSpec
from app.schemas.losses import LossBreakdown, LossWeights, MetricRecord, PerturbationConfig
from app.schemas.run import Schedule
from app.services.classifier_service import FrozenClassifier
from app.services.conditioning_service import sample_hot_batch
from app.services.evaluation_service import (
    generate_class_balanced,
    label_agreement,
    nn_distance,
)
from app.services.generator_service import (
    GeneratorState,
    build_generator,
    generate,
    sample_latents,
)
from app.services.inversion_service import (
    Batch,
    RecordCallback,
    TrainingResult,
    apply_update,
    condition_stream,
    inversion_terms,
)
from app.services.losses import ce_loss, kl_loss, pixel_loss, variational_loss

logger = logging.getLogger(__name__)

MAX_EPSILON = 0.5
NN_PROBE_PER_CLASS = 16


def linf_perturb(
    images: torch.Tensor,
    cfg: PerturbationConfig,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Равномерный шум в [-eps, eps] на каждый пиксель, затем clamp в [0, 1]."""
    if not 0.0 <= cfg.epsilon <= MAX_EPSILON:
        raise ArgumentError(f"epsilon must lie in [0, {MAX_EPSILON}], got {cfg.epsilon}")
    if cfg.epsilon == 0.0:
        return images.clamp(0.0, 1.0)
    noise = torch.rand(
        images.shape, generator=generator, device=images.device, dtype=images.dtype
    )
    return (images + (2.0 * noise - 1.0) * cfg.epsilon).clamp(0.0, 1.0)


def gradient_norm_loss(
    clf: FrozenClassifier, images: torch.Tensor, labels: torch.Tensor
) -> torch.Tensor:
    """||grad_theta CE(f(images), labels)||, дифференцируемая по images."""
    return clf.weight_grad_norm_tensor(images, labels, create_graph=True)


def ensure_second_order_support(clf: FrozenClassifier) -> None:
    """Проверка двойного обратного прохода до начала обучения."""
    probe = torch.rand(2, *clf.spec.input_shape, device=clf.device, requires_grad=True)
    labels = torch.zeros(2, dtype=torch.long, device=clf.device)
    try:
        norm = gradient_norm_loss(clf, probe, labels)
        (grad,) = torch.autograd.grad(norm, probe)
    except RuntimeError as e:
        raise CapabilityError(
            f"Backend does not support second-order gradients through the classifier: {e}"
        ) from e
    if grad is None:
        raise CapabilityError("Second-order gradient did not reach the classifier input")


def reconstruction_step(
    clf: FrozenClassifier,
    gen: GeneratorState,
    batch: Batch,
    weights: LossWeights,
    pert: PerturbationConfig,
    noise: Optional[torch.Generator] = None,
) -> LossBreakdown:
    """
    Все девять слагаемых: KL/CE на чистых и возмущённых изображениях,
    косинус/ортогональность/вариационный/пиксельный/градиентный - на чистых.
    """
    latents, conds = batch
    images = generate(gen, latents, conds, train_mode=True)
    conds = conds.to(clf.device)
    terms = inversion_terms(clf, images, conds)

    perturbed = linf_perturb(images, pert, generator=noise)
    perturbed_probs = clf.predict_proba(perturbed)
    terms["kl_pert"] = kl_loss(conds.dist, perturbed_probs)
    terms["ce_pert"] = ce_loss(conds.labels, perturbed_probs)
    terms["var"] = variational_loss(images)
    terms["pix"] = pixel_loss(images)
    if weights.eta3 != 0.0:
        terms["grad"] = gradient_norm_loss(clf, images, conds.labels)
    else:
        terms["grad"] = clf.weight_grad_norm_tensor(images.detach(), conds.labels)

    breakdown = apply_update(gen, terms, weights)
    logger.debug(f"Reconstruction step {gen.step}: {breakdown.model_dump()}")
    return breakdown


def _nn_probe(gen: GeneratorState, reference: LabeledImageSet, seed: int) -> float:
    images, labels = generate_class_balanced(gen, NN_PROBE_PER_CLASS, seed, hot=True)
    return nn_distance(images, reference, same_class_only=True, labels=labels).mean().item()


def train_reconstruction(
    clf: FrozenClassifier,
    gen_spec: GeneratorSpec,
    weights: LossWeights,
    pert: PerturbationConfig,
    schedule: Schedule,
    seed: int,
    condition_seed: Optional[int] = None,
    reference: Optional[LabeledImageSet] = None,
    on_record: Optional[RecordCallback] = None,
) -> TrainingResult:
    """
    Инверсия с горячими условиями и добавочными слагаемыми, подталкивающими
    генератор к изображениям, похожим на обучающие.
    reference (обучающая подвыборка) включает NN-метрику на интервалах оценки.
    """
    ensure_second_order_support(clf)

    gen = build_generator(
        gen_spec,
        seed,
        lr=schedule.lr,
        betas=(schedule.beta1, schedule.beta2),
        device=clf.device,
    )
    stream = condition_stream(seed if condition_seed is None else condition_seed)
    noise = torch.Generator(device=clf.device).manual_seed(pert.seed)

    logger.info(
        f"Reconstruction: {schedule.steps} steps, batch={schedule.batch_size}, epsilon={pert.epsilon}, "
        f"weights={weights.model_dump()}"
    )

    records: List[MetricRecord] = []
    for step in range(1, schedule.steps + 1):
        conds = sample_hot_batch(
            schedule.batch_size, gen_spec.num_classes, stream, gen_spec.mode
        )
        latents = sample_latents(schedule.batch_size, gen_spec.latent_dim, stream)
        breakdown = reconstruction_step(clf, gen, (latents, conds), weights, pert, noise)
        record = MetricRecord(step=step, objective="reconstruct", breakdown=breakdown)

        if step % schedule.eval_interval == 0 or step == schedule.steps:
            record.label_agreement = label_agreement(
                clf, gen, schedule.eval_count, seed=seed, hot=True
            )
            if reference is not None:
                record.nn_l2_mean = _nn_probe(gen, reference, seed)
            logger.info(
                f"Step {step}/{schedule.steps}: total={breakdown.total:.4f}, kl={breakdown.kl:.4f}, "
                f"kl_pert={breakdown.kl_pert:.4f}, ce={breakdown.ce:.4f}, var={breakdown.var:.4f}, "
                f"pix={breakdown.pix:.4f}, grad={breakdown.grad:.4f}, "
                f"label agreement={record.label_agreement:.4f}, nn_l2={record.nn_l2_mean}"
            )
        if on_record:
            on_record(record)
        records.append(record)

    return TrainingResult(gen, records)
