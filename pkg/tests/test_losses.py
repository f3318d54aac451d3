import math

import pytest
import torch
import torch.nn.functional as F

from app.core.errors import ArgumentError, NumericError
from app.services.losses import (
    ce_loss,
    cosine_diversity_loss,
    kl_loss,
    orthogonality_loss,
    pixel_loss,
    variational_loss,
)

TOL = 1e-6


def close(value: torch.Tensor, expected: float) -> bool:
    return abs(value.item() - expected) < TOL


def test_kl_identical_distributions_is_zero():
    p = torch.tensor([[0.5, 0.5]])
    assert close(kl_loss(p, p), 0.0)


def test_kl_one_hot_against_uniform():
    assert close(kl_loss(torch.tensor([[1.0, 0.0]]), torch.tensor([[0.5, 0.5]])), math.log(2))


def test_kl_golden_value():
    p = torch.tensor([[0.9, 0.1]], dtype=torch.float64)
    q = torch.tensor([[0.6, 0.4]], dtype=torch.float64)
    expected = 0.9 * math.log(1.5) + 0.1 * math.log(0.25)
    assert close(kl_loss(p, q), expected)


def test_kl_is_batch_mean():
    p = torch.tensor([[0.5, 0.5], [1.0, 0.0]])
    q = torch.tensor([[0.5, 0.5], [0.5, 0.5]])
    assert close(kl_loss(p, q), math.log(2) / 2)


def test_kl_shape_mismatch():
    with pytest.raises(ArgumentError):
        kl_loss(torch.tensor([[0.5, 0.5]]), torch.tensor([[0.2, 0.3, 0.5]]))


def test_ce_golden_values():
    assert close(ce_loss(torch.tensor([1]), torch.tensor([[0.0, 1.0]])), 0.0)
    assert close(ce_loss(torch.tensor([0]), torch.tensor([[0.5, 0.5]])), math.log(2))
    uniform = torch.full((3, 10), 0.1)
    assert close(ce_loss(torch.tensor([0, 4, 9]), uniform), math.log(10))


def test_ce_label_out_of_range():
    with pytest.raises(ArgumentError):
        ce_loss(torch.tensor([2]), torch.tensor([[0.5, 0.5]]))


def test_cosine_identical_vectors_is_one():
    features = torch.tensor([[1.0, 2.0, 3.0]]).repeat(4, 1)
    assert close(cosine_diversity_loss(features), 1.0)


def test_cosine_orthogonal_vectors_is_zero():
    assert close(cosine_diversity_loss(torch.eye(3)), 0.0)


def test_cosine_forty_five_degrees():
    features = torch.tensor([[1.0, 0.0], [1.0, 1.0]]) / torch.tensor([[1.0], [math.sqrt(2)]])
    assert close(cosine_diversity_loss(features), math.cos(math.pi / 4))


def test_cosine_needs_two_rows():
    with pytest.raises(ArgumentError):
        cosine_diversity_loss(torch.ones(1, 3))


def test_orthogonality_orthonormal_rows_is_zero():
    assert close(orthogonality_loss(torch.eye(4)), 0.0)


@pytest.mark.parametrize("batch", [2, 3, 5])
def test_orthogonality_identical_rows(batch):
    features = torch.tensor([[0.6, 0.8]]).repeat(batch, 1)
    assert close(orthogonality_loss(features), (batch**2 - batch) / batch**2)


def test_orthogonality_zero_row_is_numeric_error():
    with pytest.raises(NumericError):
        orthogonality_loss(torch.tensor([[1.0, 0.0], [0.0, 0.0]]))


def test_variational_golden_values():
    constant = torch.full((2, 1, 5, 5), 0.3)
    assert close(variational_loss(constant), 0.0)
    stripes = torch.tensor([[[[0.0, 1.0], [0.0, 1.0]]]])
    assert close(variational_loss(stripes), 2.0)
    checkerboard = torch.tensor([[[[0.0, 1.0], [1.0, 0.0]]]])
    assert close(variational_loss(checkerboard), 4.0)


def test_variational_rejects_single_pixel_images():
    with pytest.raises(ArgumentError):
        variational_loss(torch.zeros(1, 1, 1, 1))


def test_pixel_loss_golden_values():
    valid = torch.rand(3, 1, 4, 4)
    assert close(pixel_loss(valid), 0.0)

    one_low = torch.full((1, 1, 2, 2), 0.5)
    one_low[0, 0, 0, 0] = -0.5
    assert close(pixel_loss(one_low), 0.5)

    batch = torch.full((4, 1, 2, 2), 0.5)
    batch[0, 0, 0, 0] = -0.5
    assert close(pixel_loss(batch), 0.5 / 4)

    both = torch.full((1, 1, 2, 2), 0.5)
    both[0, 0, 0, 0] = 1.25
    both[0, 0, 1, 1] = -0.25
    assert close(pixel_loss(both), 0.5)


SEEDS = [0, 1, 2, 3]


def random_features(seed: int, batch: int = 8, dim: int = 16) -> torch.Tensor:
    return torch.randn(batch, dim, generator=torch.Generator().manual_seed(seed))


@pytest.mark.parametrize("seed", SEEDS)
def test_cosine_ignores_positive_row_scaling(seed):
    features = random_features(seed)
    scaled = features.clone()
    scaled[3] *= 7.5
    scaled[0] *= 0.01
    assert torch.allclose(cosine_diversity_loss(scaled), cosine_diversity_loss(features), atol=1e-5)


@pytest.mark.parametrize("seed", SEEDS)
def test_orthogonality_ignores_row_order(seed):
    features = random_features(seed)
    order = torch.randperm(features.shape[0], generator=torch.Generator().manual_seed(seed + 100))
    assert torch.allclose(
        orthogonality_loss(features[order]), orthogonality_loss(features), atol=1e-6
    )


@pytest.mark.parametrize("seed", SEEDS)
def test_variational_ignores_flips(seed):
    images = torch.rand(3, 2, 6, 5, generator=torch.Generator().manual_seed(seed))
    reference = variational_loss(images)
    for dims in ((2,), (3,), (2, 3)):
        assert torch.allclose(variational_loss(torch.flip(images, dims)), reference, atol=1e-5)


def test_ce_decreases_as_true_label_probability_grows():
    losses = []
    for p in torch.linspace(0.05, 0.95, 19).tolist():
        rest = (1.0 - p) / 3
        probs = torch.tensor([[rest, p, rest, rest]])
        losses.append(ce_loss(torch.tensor([1]), probs).item())
    assert all(later < earlier for earlier, later in zip(losses, losses[1:]))


@pytest.mark.parametrize("seed", SEEDS)
def test_kl_is_non_negative(seed):
    stream = torch.Generator().manual_seed(seed)
    p = torch.softmax(3.0 * torch.randn(16, 10, generator=stream), dim=1)
    q = torch.softmax(3.0 * torch.randn(16, 10, generator=stream), dim=1)
    one_hot = F.one_hot(torch.randint(0, 10, (16,), generator=stream), 10).float()
    assert kl_loss(p, q).item() >= -1e-6
    assert kl_loss(one_hot, q).item() >= -1e-6
    assert kl_loss(q, q).item() >= -1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_pixel_loss_is_zero_exactly_inside_unit_range(seed):
    stream = torch.Generator().manual_seed(seed)
    images = torch.rand(4, 1, 5, 5, generator=stream)
    images[0, 0, 0, 0] = 0.0
    images[1, 0, 4, 4] = 1.0
    assert pixel_loss(images).item() == 0.0

    position = torch.randint(0, 5, (2,), generator=stream).tolist()
    for outside in (-1e-3, 1.0 + 1e-3):
        shifted = images.clone()
        shifted[2, 0, position[0], position[1]] = outside
        assert pixel_loss(shifted).item() > 0.0
