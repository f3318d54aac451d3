import torch
import torch.nn.functional as F

from app.core.errors import ArgumentError, NumericError

EPS = 1e-8


def _check_same_shape(p: torch.Tensor, q: torch.Tensor) -> None:
    if p.dim() != 2 or p.shape != q.shape:
        raise ArgumentError(
            f"Expected two (B, N) distributions of equal shape, got {tuple(p.shape)} and {tuple(q.shape)}"
        )


def kl_loss(p: torch.Tensor, q: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Среднее по пачке sum_i P(i) log(P(i) / Q(i)); Q ограничена снизу eps."""
    _check_same_shape(p, q)
    q = q.to(p.dtype)
    per_row = torch.xlogy(p, p) - p * torch.log(q.clamp_min(eps))
    return per_row.sum(dim=1).mean()


def ce_loss(labels: torch.Tensor, probs: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Среднее -log probs[label]."""
    if probs.dim() != 2 or labels.dim() != 1 or labels.shape[0] != probs.shape[0]:
        raise ArgumentError(
            f"Expected labels (B,) and probs (B, N), got {tuple(labels.shape)} and {tuple(probs.shape)}"
        )
    labels = labels.to(probs.device).long()
    if labels.numel() and (labels.min().item() < 0 or labels.max().item() >= probs.shape[1]):
        raise ArgumentError(f"Labels must lie in [0, {probs.shape[1]})")
    picked = probs.gather(1, labels.unsqueeze(1)).squeeze(1)
    return -torch.log(picked.clamp_min(eps)).mean()


def cosine_diversity_loss(features: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Средний косинус по упорядоченным парам i != j."""
    if features.dim() != 2 or features.shape[0] < 2:
        raise ArgumentError(
            f"Cosine diversity needs a (B, D) batch with B >= 2, got {tuple(features.shape)}"
        )
    b = features.shape[0]
    unit = F.normalize(features, dim=1, eps=eps)
    similarity = unit @ unit.T
    off_diagonal = similarity.sum() - similarity.diagonal().sum()
    return off_diagonal / (b * (b - 1))


def orthogonality_loss(features: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Среднеквадратичное отклонение нормированной матрицы Грама от единичной."""
    if features.dim() != 2 or features.shape[0] < 1:
        raise ArgumentError(
            f"Orthogonality needs a non-empty (B, D) batch, got {tuple(features.shape)}"
        )
    norms = features.norm(dim=1, keepdim=True)
    if (norms < eps).any():
        raise NumericError("Orthogonality loss got an all-zero feature row")
    unit = features / norms
    gram = unit @ unit.T
    identity = torch.eye(features.shape[0], device=features.device, dtype=features.dtype)
    return (gram - identity).pow(2).mean()


def variational_loss(images: torch.Tensor) -> torch.Tensor:
    """Среднее по пачке: сумма квадратов разностей соседних пикселей по вертикали и горизонтали."""
    if images.dim() != 4 or images.shape[2] < 2 or images.shape[3] < 2:
        raise ArgumentError(
            f"Variational loss needs (B, C, H, W) images with H, W >= 2, got {tuple(images.shape)}"
        )
    vertical = (images[:, :, 1:, :] - images[:, :, :-1, :]).pow(2).sum(dim=(1, 2, 3))
    horizontal = (images[:, :, :, 1:] - images[:, :, :, :-1]).pow(2).sum(dim=(1, 2, 3))
    return (vertical + horizontal).mean()


def pixel_loss(images: torch.Tensor) -> torch.Tensor:
    """Выход пикселей за [0, 1], сумма по изображению, среднее по пачке."""
    if images.dim() < 2:
        raise ArgumentError(f"Expected a batch of images, got {tuple(images.shape)}")
    excursion = F.relu(-images) + F.relu(images - 1.0)
    return excursion.flatten(start_dim=1).sum(dim=1).mean()
