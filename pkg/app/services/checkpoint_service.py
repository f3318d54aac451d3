import logging
import shutil
from pathlib import Path
from typing import Optional

import torch
from pydantic import ValidationError

from app.core.config import resolve_device
from app.core.errors import ConfigurationError, IngestionError
from app.models.classifier import ConvClassifier
from app.models.generator import ConditionedGenerator
from app.schemas.classifier import ClassifierManifest
from app.schemas.generator import GeneratorManifest
from app.services.classifier_service import FrozenClassifier
from app.services.generator_service import GeneratorState

logger = logging.getLogger(__name__)

CLASSIFIER_MANIFEST = "classifier.json"
GENERATOR_MANIFEST = "generator.json"


def save_classifier(
    clf: FrozenClassifier,
    out_dir: Path,
    dataset: str,
    subset_size: int,
    seed: int,
    data_seed: int = 0,
) -> ClassifierManifest:
    out_dir.mkdir(parents=True, exist_ok=True)
    if clf.metrics is None:
        raise ConfigurationError("Cannot checkpoint a classifier without training metrics")
    manifest = ClassifierManifest(
        spec=clf.spec,
        dataset=dataset,
        subset_size=subset_size,
        seed=seed,
        data_seed=data_seed,
        metrics=clf.metrics,
        checksum=clf.weights_checksum(),
    )
    torch.save(clf.model.state_dict(), out_dir / manifest.weights_file)
    (out_dir / CLASSIFIER_MANIFEST).write_text(
        manifest.model_dump_json(indent=2), encoding="utf-8"
    )
    logger.info(f"Classifier checkpoint written to {out_dir}")
    return manifest


def read_classifier_manifest(ckpt_dir: Path) -> ClassifierManifest:
    manifest_path = ckpt_dir / CLASSIFIER_MANIFEST
    if not manifest_path.exists():
        raise ConfigurationError(f"No classifier manifest at {manifest_path}")
    try:
        return ClassifierManifest.model_validate_json(
            manifest_path.read_text(encoding="utf-8")
        )
    except ValidationError as e:
        raise IngestionError(f"Corrupt classifier manifest {manifest_path}: {e}") from e


def find_classifier_dir(path: Path) -> Path:
    """Принимает каталог чекпойнта или каталог прогона (с подкаталогом classifier/)."""
    if (path / CLASSIFIER_MANIFEST).exists():
        return path
    if (path / "classifier" / CLASSIFIER_MANIFEST).exists():
        return path / "classifier"
    raise ConfigurationError(f"No classifier checkpoint found under {path}")


def load_classifier(
    path: Path, device: Optional[torch.device] = None
) -> tuple[FrozenClassifier, ClassifierManifest]:
    ckpt_dir = find_classifier_dir(path)
    manifest = read_classifier_manifest(ckpt_dir)
    model = ConvClassifier(manifest.spec)
    weights_path = ckpt_dir / manifest.weights_file
    try:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    except (OSError, RuntimeError) as e:
        raise IngestionError(f"Could not read classifier weights {weights_path}: {e}") from e

    clf = FrozenClassifier(model.to(device or resolve_device()), manifest.metrics)
    if clf.weights_checksum() != manifest.checksum:
        raise IngestionError(f"Checksum mismatch for classifier weights {weights_path}")
    logger.info(
        f"Loaded classifier from {ckpt_dir} (dataset={manifest.dataset}, subset={manifest.subset_size})"
    )
    return clf, manifest


def copy_classifier(src: Path, dst_dir: Path) -> Path:
    ckpt_dir = find_classifier_dir(src)
    manifest = read_classifier_manifest(ckpt_dir)
    dst_dir.mkdir(parents=True, exist_ok=True)
    for name in (CLASSIFIER_MANIFEST, manifest.weights_file):
        shutil.copy2(ckpt_dir / name, dst_dir / name)
    return dst_dir


def save_generator(
    gen: GeneratorState, out_dir: Path, objective: str, seed: int
) -> GeneratorManifest:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = GeneratorManifest(
        spec=gen.spec, objective=objective, steps=gen.step, seed=seed
    )
    torch.save(gen.model.state_dict(), out_dir / manifest.weights_file)
    (out_dir / GENERATOR_MANIFEST).write_text(
        manifest.model_dump_json(indent=2), encoding="utf-8"
    )
    logger.info(f"Generator checkpoint written to {out_dir}")
    return manifest


def load_generator(
    ckpt_dir: Path, device: Optional[torch.device] = None
) -> tuple[GeneratorState, GeneratorManifest]:
    manifest_path = ckpt_dir / GENERATOR_MANIFEST
    if not manifest_path.exists():
        raise ConfigurationError(f"No generator manifest at {manifest_path}")
    try:
        manifest = GeneratorManifest.model_validate_json(
            manifest_path.read_text(encoding="utf-8")
        )
        model = ConditionedGenerator(manifest.spec)
        state = torch.load(
            ckpt_dir / manifest.weights_file, map_location="cpu", weights_only=True
        )
        model.load_state_dict(state)
    except (ValidationError, OSError, RuntimeError) as e:
        raise IngestionError(f"Could not read generator checkpoint in {ckpt_dir}: {e}") from e

    gen = GeneratorState(model.to(device or resolve_device()), step=manifest.steps)
    gen.model.eval()
    return gen, manifest
