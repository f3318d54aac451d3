import logging
from typing import List, Optional, Union

import torch

from app.core.config import resolve_device
from app.core.errors import ArgumentError
from app.models.generator import ConditionedGenerator
from app.schemas.condition import Condition, ConditionBatch
from app.schemas.generator import GeneratorSpec
from app.services.conditioning_service import collate_conditions

logger = logging.getLogger(__name__)


class GeneratorState:
    """Генератор, его оптимизатор и счётчик шагов. Единственный писатель - цикл обучения."""

    def __init__(
        self,
        model: ConditionedGenerator,
        optimizer: Optional[torch.optim.Optimizer] = None,
        step: int = 0,
    ):
        self.model = model
        self.spec: GeneratorSpec = model.spec
        self.optimizer = optimizer
        self.step = step

    @property
    def device(self) -> torch.device:
        return next(self.model.parameters()).device

    @property
    def parameters(self) -> List[torch.nn.Parameter]:
        return list(self.model.parameters())


def build_generator(
    spec: GeneratorSpec,
    seed: int,
    lr: float = 2e-4,
    betas: tuple = (0.5, 0.999),
    device: Optional[torch.device] = None,
) -> GeneratorState:
    torch.manual_seed(seed)
    model = ConditionedGenerator(spec).to(device or resolve_device())
    optimizer = torch.optim.Adam(model.parameters(), lr=lr, betas=betas)
    logger.info(
        f"Built {spec.mode.value} generator: latent_dim={spec.latent_dim}, out_shape={spec.out_shape}, "
        f"parameters={sum(p.numel() for p in model.parameters())}"
    )
    return GeneratorState(model, optimizer)


def sample_latents(
    count: int, latent_dim: int, generator: torch.Generator
) -> torch.Tensor:
    return torch.randn(count, latent_dim, generator=generator)


def generate(
    gen: GeneratorState,
    latents: torch.Tensor,
    conds: Union[ConditionBatch, List[Condition]],
    train_mode: bool,
) -> torch.Tensor:
    """
    Изображения формы out_shape для пачки (латент, условие).
    train_mode=True включает dropout и batch-статистику batch-norm.
    """
    batch = conds if isinstance(conds, ConditionBatch) else collate_conditions(conds)
    if batch.mode != gen.spec.mode:
        raise ArgumentError(
            f"Generator expects {gen.spec.mode.value} conditions, got {batch.mode.value}"
        )
    if batch.num_classes != gen.spec.num_classes:
        raise ArgumentError(
            f"Generator expects {gen.spec.num_classes} classes, got {batch.num_classes}"
        )
    if latents.dim() != 2 or latents.shape[1] != gen.spec.latent_dim:
        raise ArgumentError(
            f"Expected latents of shape (B, {gen.spec.latent_dim}), got {tuple(latents.shape)}"
        )
    if latents.shape[0] != batch.size:
        raise ArgumentError(
            f"Got {latents.shape[0]} latents for {batch.size} conditions"
        )

    device = gen.device
    gen.model.train(train_mode)
    payload = {key: value.to(device) for key, value in batch.generator_payload().items()}
    return gen.model(latents.to(device), payload)
