import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torchvision.utils import make_grid

from app.core.errors import ArgumentError

logger = logging.getLogger(__name__)

PADDING = 2
FRAME_VALUE = 0.5


def group_by_class(images: torch.Tensor, labels: torch.Tensor) -> Dict[int, torch.Tensor]:
    labels = labels.cpu()
    images = images.detach().cpu()
    return {int(label): images[labels == label] for label in torch.unique(labels).tolist()}


def grid_tensor(
    images_by_class: Mapping[int, torch.Tensor],
    columns: int,
    num_classes: Optional[int] = None,
) -> torch.Tensor:
    """Строки - классы по порядку меток, столбцы - образцы; пустые ячейки чёрные."""
    if columns < 1:
        raise ArgumentError(f"Grid needs at least one column, got {columns}")
    if not images_by_class:
        raise ArgumentError("Grid needs at least one class")
    expected = range(num_classes) if num_classes is not None else sorted(images_by_class)
    absent = [
        label
        for label in expected
        if label not in images_by_class or images_by_class[label].shape[0] == 0
    ]
    if absent:
        raise ArgumentError(f"No images for classes: {absent}")

    sample = next(iter(images_by_class.values()))
    tile_shape = tuple(sample.shape[1:])
    cells: List[torch.Tensor] = []
    for label in expected:
        row = images_by_class[label].detach().cpu()[:columns].to(torch.float32)
        if tuple(row.shape[1:]) != tile_shape:
            raise ArgumentError(
                f"Class {label} images have shape {tuple(row.shape[1:])}, expected {tile_shape}"
            )
        if row.shape[0] < columns:
            filler = torch.zeros(columns - row.shape[0], *tile_shape)
            row = torch.cat([row, filler])
        cells.append(row)

    tiles = torch.cat(cells).clamp(0.0, 1.0)
    if tiles.shape[0] == 1:
        # make_grid возвращает одиночное изображение без рамки
        return F.pad(tiles[0], (PADDING,) * 4, value=FRAME_VALUE)
    grid = make_grid(tiles, nrow=columns, padding=PADDING, pad_value=FRAME_VALUE)
    # make_grid дублирует единственный канал до RGB
    return grid[:1] if tile_shape[0] == 1 else grid


def render_grid(
    images_by_class: Mapping[int, torch.Tensor],
    columns: int,
    path: Path,
    num_classes: Optional[int] = None,
) -> Path:
    """PNG: 8-битный grayscale для одноканальных изображений, RGB для трёхканальных."""
    grid = grid_tensor(images_by_class, columns, num_classes)
    pixels = (grid * 255.0).round().to(torch.uint8).numpy()
    if pixels.shape[0] == 1:
        image = Image.fromarray(pixels[0], mode="L")
    else:
        image = Image.fromarray(np.transpose(pixels, (1, 2, 0)), mode="RGB")
    path.parent.mkdir(parents=True, exist_ok=True)
    image.save(path, format="PNG")
    logger.info(f"Grid {image.size[0]}x{image.size[1]} written to {path}")
    return path
