from typing import Dict

import torch
import torch.nn as nn
import torch.nn.functional as F

from app.schemas.condition import ConditioningMode
from app.schemas.generator import GeneratorSpec

SEED_SIZE = 4


def up_block(in_channels: int, out_channels: int, dropout_rate: float) -> nn.Sequential:
    return nn.Sequential(
        nn.ConvTranspose2d(in_channels, out_channels, 4, 2, 1, bias=False),
        nn.BatchNorm2d(out_channels),
        nn.LeakyReLU(0.2),
        nn.Dropout(dropout_rate),
    )


class ConditionedGenerator(nn.Module):
    """
    Латент (+ вектор условия) -> линейная проекция 4x4 -> транспонированные свёртки.
    На масштабе NxN к признакам добавляется канал горячей матрицы (режимы matrix,
    vector_matrix), дальше генерация продолжается до размера изображения классификатора.
    """

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        n = spec.num_classes
        c = spec.base_channels

        in_dim = spec.latent_dim
        if spec.mode == ConditioningMode.LABEL:
            self.label_embedding = nn.Embedding(n, n)
            in_dim += n
        elif spec.mode.uses_vector:
            in_dim += n

        self.project = nn.Linear(in_dim, 4 * c * SEED_SIZE * SEED_SIZE, bias=False)
        # нормировка по 4x4 карте: batch-статистика определена и для пачки из одного образца
        self.seed_norm = nn.Sequential(nn.BatchNorm2d(4 * c), nn.LeakyReLU(0.2))
        self.early = up_block(4 * c, 2 * c, spec.dropout_rate)
        matrix_channels = 1 if spec.mode.uses_matrix else 0
        self.late = up_block(2 * c + matrix_channels, c, spec.dropout_rate)
        self.refine = nn.Sequential(
            nn.Conv2d(c, c, 3, padding=1, bias=False),
            nn.BatchNorm2d(c),
            nn.LeakyReLU(0.2),
            nn.Dropout(spec.dropout_rate),
        )
        self.to_image = nn.Sequential(
            nn.Conv2d(c, spec.out_shape[0], 3, padding=1),
            nn.Sigmoid(),
        )

    def forward(self, z: torch.Tensor, payload: Dict[str, torch.Tensor]) -> torch.Tensor:
        n = self.spec.num_classes
        _, height, width = self.spec.out_shape

        parts = [z]
        if self.spec.mode == ConditioningMode.LABEL:
            parts.append(self.label_embedding(payload["label"]))
        elif self.spec.mode.uses_vector:
            parts.append(payload["vector"].to(z.dtype))

        x = self.project(torch.cat(parts, dim=1))
        x = x.view(z.shape[0], 4 * self.spec.base_channels, SEED_SIZE, SEED_SIZE)
        x = self.seed_norm(x)
        x = self.early(x)
        x = F.interpolate(x, size=(n, n), mode="bilinear", align_corners=False)

        if self.spec.mode.uses_matrix:
            matrix = payload["matrix"].to(x.dtype).unsqueeze(1)
            x = torch.cat([x, matrix], dim=1)

        x = self.late(x)
        x = F.interpolate(x, size=(height, width), mode="bilinear", align_corners=False)
        x = self.refine(x)
        return self.to_image(x)
