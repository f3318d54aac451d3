import logging
import math
from typing import Callable, Dict, List, Optional, Tuple

import torch

from app.core.errors import TrainingError
from app.schemas.condition import ConditionBatch
from app.schemas.generator import GeneratorSpec
from app.schemas.losses import TERM_ORDER, LossBreakdown, LossWeights, MetricRecord
from app.schemas.run import Schedule
from app.services.classifier_service import FrozenClassifier
from app.services.conditioning_service import sample_condition_batch
from app.services.evaluation_service import label_agreement
from app.services.generator_service import (
    GeneratorState,
    build_generator,
    generate,
    sample_latents,
)
from app.services.losses import (
    ce_loss,
    cosine_diversity_loss,
    kl_loss,
    orthogonality_loss,
)

logger = logging.getLogger(__name__)

Batch = Tuple[torch.Tensor, ConditionBatch]
RecordCallback = Callable[[MetricRecord], None]


class TrainingResult:
    def __init__(self, gen: GeneratorState, records: List[MetricRecord]):
        self.gen = gen
        self.records = records

    @property
    def final(self) -> MetricRecord:
        return self.records[-1]


def inversion_terms(
    clf: FrozenClassifier, images: torch.Tensor, conds: ConditionBatch
) -> Dict[str, torch.Tensor]:
    """KL к распределению условия, CE к фактической метке, косинус и ортогональность признаков."""
    probs = clf.predict_proba(images)
    features = clf.penultimate_features(images)
    return {
        "kl": kl_loss(conds.dist.to(probs.device), probs),
        "ce": ce_loss(conds.labels, probs),
        "cosine": cosine_diversity_loss(features),
        "ortho": orthogonality_loss(features),
    }


def apply_update(
    gen: GeneratorState,
    terms: Dict[str, torch.Tensor],
    weights: LossWeights,
) -> LossBreakdown:
    """
    Складывает взвешенные слагаемые, делает один шаг оптимизатора генератора.
    Градиент накапливается только в параметрах генератора.
    """
    breakdown = LossBreakdown(
        **{name: float(value.detach().item()) for name, value in terms.items()}
    )
    breakdown.total = breakdown.recompose(weights)

    if not math.isfinite(breakdown.total):
        raise TrainingError(
            f"Non-finite loss at generator step {gen.step + 1}: {breakdown.terms()}",
            step=gen.step + 1,
            breakdown=breakdown,
        )

    weighted = [
        weights.weight_of(name) * terms[name]
        for name in TERM_ORDER
        if name in terms and weights.weight_of(name) != 0.0
    ]
    gen.optimizer.zero_grad(set_to_none=True)
    if weighted:
        objective = torch.stack(weighted).sum()
        if objective.requires_grad:
            objective.backward(inputs=gen.parameters)
            gen.optimizer.step()
    gen.step += 1
    return breakdown


def inversion_step(
    clf: FrozenClassifier,
    gen: GeneratorState,
    batch: Batch,
    weights: LossWeights,
) -> LossBreakdown:
    weights.require_inversion()
    latents, conds = batch
    images = generate(gen, latents, conds, train_mode=True)
    terms = inversion_terms(clf, images, conds.to(clf.device))
    breakdown = apply_update(gen, terms, weights)
    logger.debug(f"Inversion step {gen.step}: {breakdown.model_dump()}")
    return breakdown


def condition_stream(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(seed)


def train_inversion(
    clf: FrozenClassifier,
    gen_spec: GeneratorSpec,
    weights: LossWeights,
    schedule: Schedule,
    seed: int,
    condition_seed: Optional[int] = None,
    on_record: Optional[RecordCallback] = None,
) -> TrainingResult:
    """
    Обучает генератор так, чтобы классификатор выдавал на сгенерированных
    изображениях метку (и распределение) условия.
    """
    weights.require_inversion()
    gen = build_generator(
        gen_spec,
        seed,
        lr=schedule.lr,
        betas=(schedule.beta1, schedule.beta2),
        device=clf.device,
    )
    stream = condition_stream(seed if condition_seed is None else condition_seed)

    logger.info(
        f"Inversion: {schedule.steps} steps, batch={schedule.batch_size}, weights={weights.model_dump()}"
    )

    records: List[MetricRecord] = []
    for step in range(1, schedule.steps + 1):
        conds = sample_condition_batch(
            schedule.batch_size, gen_spec.num_classes, stream, gen_spec.mode
        )
        latents = sample_latents(schedule.batch_size, gen_spec.latent_dim, stream)
        breakdown = inversion_step(clf, gen, (latents, conds), weights)
        record = MetricRecord(step=step, objective="invert", breakdown=breakdown)

        if step % schedule.eval_interval == 0 or step == schedule.steps:
            record.label_agreement = label_agreement(
                clf, gen, schedule.eval_count, seed=seed
            )
            logger.info(
                f"Step {step}/{schedule.steps}: total={breakdown.total:.4f}, kl={breakdown.kl:.4f}, "
                f"ce={breakdown.ce:.4f}, cosine={breakdown.cosine:.4f}, ortho={breakdown.ortho:.4f}, "
                f"label agreement={record.label_agreement:.4f}"
            )
        if on_record:
            on_record(record)
        records.append(record)

    return TrainingResult(gen, records)
