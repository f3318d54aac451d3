import pytest
import torch

from app.core.errors import ArgumentError
from app.schemas.condition import ConditioningMode
from app.services.conditioning_service import (
    hot_condition_batch,
    sample_condition_batch,
    sample_soft_conditions,
)
from app.services.generator_service import generate, sample_latents
from tests.conftest import IMAGE_SHAPE, NUM_CLASSES


@pytest.mark.parametrize("mode", list(ConditioningMode))
def test_generate_shape_and_range(make_generator, mode):
    gen = make_generator(mode)
    stream = torch.Generator().manual_seed(0)
    conds = sample_condition_batch(5, NUM_CLASSES, stream, mode)
    images = generate(gen, sample_latents(5, gen.spec.latent_dim, stream), conds, train_mode=False)
    assert images.shape == (5, *IMAGE_SHAPE)
    assert images.min().item() >= 0.0
    assert images.max().item() <= 1.0


@pytest.mark.parametrize("mode", list(ConditioningMode))
def test_single_sample_in_train_mode(make_generator, mode):
    gen = make_generator(mode)
    stream = torch.Generator().manual_seed(0)
    conds = sample_condition_batch(1, NUM_CLASSES, stream, mode)
    images = generate(gen, sample_latents(1, gen.spec.latent_dim, stream), conds, train_mode=True)
    assert images.shape == (1, *IMAGE_SHAPE)
    assert torch.isfinite(images).all()


def test_generate_accepts_condition_lists(make_generator):
    gen = make_generator(ConditioningMode.VECTOR)
    conditions = sample_soft_conditions(3, NUM_CLASSES, seed=0, mode=ConditioningMode.VECTOR)
    latents = sample_latents(3, gen.spec.latent_dim, torch.Generator().manual_seed(1))
    assert generate(gen, latents, conditions, train_mode=False).shape == (3, *IMAGE_SHAPE)


def test_eval_mode_is_deterministic(make_generator):
    gen = make_generator()
    stream = torch.Generator().manual_seed(3)
    conds = sample_condition_batch(4, NUM_CLASSES, stream, gen.spec.mode)
    latents = sample_latents(4, gen.spec.latent_dim, stream)
    first = generate(gen, latents, conds, train_mode=False)
    second = generate(gen, latents, conds, train_mode=False)
    assert torch.equal(first, second)


def test_train_mode_applies_dropout(make_generator):
    gen = make_generator()
    stream = torch.Generator().manual_seed(3)
    conds = sample_condition_batch(4, NUM_CLASSES, stream, gen.spec.mode)
    latents = sample_latents(4, gen.spec.latent_dim, stream)
    torch.manual_seed(0)
    first = generate(gen, latents, conds, train_mode=True)
    torch.manual_seed(1)
    second = generate(gen, latents, conds, train_mode=True)
    assert not torch.equal(first, second)


def test_mode_mismatch_is_argument_error(make_generator):
    gen = make_generator(ConditioningMode.VECTOR_MATRIX)
    stream = torch.Generator().manual_seed(0)
    conds = sample_condition_batch(2, NUM_CLASSES, stream, ConditioningMode.VECTOR)
    with pytest.raises(ArgumentError):
        generate(gen, sample_latents(2, gen.spec.latent_dim, stream), conds, train_mode=False)


def test_latent_count_mismatch_is_argument_error(make_generator):
    gen = make_generator()
    stream = torch.Generator().manual_seed(0)
    conds = sample_condition_batch(3, NUM_CLASSES, stream, gen.spec.mode)
    with pytest.raises(ArgumentError):
        generate(gen, sample_latents(2, gen.spec.latent_dim, stream), conds, train_mode=False)


def test_matrix_changes_the_output(make_generator):
    gen = make_generator(ConditioningMode.MATRIX)
    stream = torch.Generator().manual_seed(0)
    conds = hot_condition_batch(torch.arange(NUM_CLASSES), NUM_CLASSES, ConditioningMode.MATRIX)
    latents = sample_latents(1, gen.spec.latent_dim, stream).repeat(NUM_CLASSES, 1)
    images = generate(gen, latents, conds, train_mode=False)
    assert not torch.equal(images[0], images[1])


def test_same_seed_builds_identical_generators(make_generator):
    first = make_generator(seed=5)
    second = make_generator(seed=5)
    for a, b in zip(first.parameters, second.parameters):
        assert torch.equal(a, b)
