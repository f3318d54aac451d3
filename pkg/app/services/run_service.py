import hashlib
import logging
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import torch

from app.core.config import get_settings, resolve_device
from app.core.errors import (
    ArgumentError,
    ConfigurationError,
    IngestionError,
    StageError,
    TLDRError,
)
from app.core.logs import run_log
from app.schemas.dataset import LabeledImageSet
from app.schemas.losses import MetricRecord
from app.schemas.run import (
    EvalReport,
    PremiseReport,
    RunArtifacts,
    RunConfig,
    RunMode,
    SweepEntry,
    SweepResult,
)
from app.services import dataset_service
from app.services.checkpoint_service import (
    copy_classifier,
    find_classifier_dir,
    load_classifier,
    load_generator,
    read_classifier_manifest,
    save_classifier,
    save_generator,
)
from app.services.classifier_service import FrozenClassifier, train_classifier
from app.services.config_file_service import (
    apply_overrides,
    read_config,
    serialize_config,
    write_config,
)
from app.services.evaluation_service import (
    evaluate_generator,
    generate_class_balanced,
    premise_report,
)
from app.services.inversion_service import TrainingResult, train_inversion
from app.services.reconstruction_service import train_reconstruction
from app.services.render_service import group_by_class, render_grid

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

RUN_CONFIG = "config.conf"
CLASSIFIER_DIR = "classifier"
METRICS_FILE = "metrics.jsonl"
REPORT_FILE = "report.json"
GRID_FILE = "grid.png"
PREMISE_FILE = "premise.json"
SWEEPS_DIR = "sweeps"


def _timestamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S-%f")


def make_run_id(config: RunConfig, timestamp: Optional[str] = None) -> str:
    """sha256 снимка конфигурации (12 символов) плюс метка времени UTC."""
    digest = hashlib.sha256(serialize_config(config).encode("utf-8")).hexdigest()[:12]
    return f"{digest}-{timestamp or _timestamp()}"


def runs_root(root: Optional[PathLike] = None) -> Path:
    return Path(root or get_settings().RUNS_ROOT)


def _fresh_path(run_dir: Path, name: str, timestamp: str) -> Path:
    # существующие артефакты не перезаписываются
    path = run_dir / name
    if not path.exists():
        return path
    return run_dir / f"{path.stem}-{timestamp}{path.suffix}"


def _prepare_run_dir(
    config: RunConfig, out_dir: Optional[PathLike], root: Optional[PathLike]
) -> Tuple[str, Path]:
    if out_dir is not None:
        run_dir = Path(out_dir)
        run_id = run_dir.name
    else:
        run_id = make_run_id(config)
        run_dir = runs_root(root) / run_id
    if run_dir.exists() and any(run_dir.iterdir()):
        raise ConfigurationError(f"Run directory {run_dir} already exists and is not empty")
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_id, run_dir


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Помечает ошибки именем стадии; неожиданные исключения заворачиваются в StageError."""
    logger.info(f"--- Stage: {name} ---")
    try:
        yield
    except TLDRError as e:
        if e.stage is None:
            e.stage = name
        logger.error(f"Stage {name} failed: {e.message}")
        raise
    except Exception as e:
        logger.error(f"Unexpected error in stage {name}: {e}", exc_info=True)
        error = StageError(f"Unexpected error: {e}")
        error.stage = name
        raise error from e


def load_training_data(
    config: RunConfig, full_train: Optional[LabeledImageSet] = None
) -> LabeledImageSet:
    full = full_train
    if full is None:
        full = dataset_service.load_dataset(config.dataset.value, "train", config.data.root)
    return dataset_service.class_balanced_subset(full, config.subset_size, config.seeds.data)


def _load_test_split(config: RunConfig) -> Optional[LabeledImageSet]:
    try:
        return dataset_service.load_dataset(config.dataset.value, "test", config.data.root)
    except IngestionError as e:
        logger.warning(f"Test split unavailable, test accuracy will not be recorded: {e}")
        return None


def _train_and_save_classifier(
    config: RunConfig, train: LabeledImageSet, run_dir: Path, device: torch.device
) -> FrozenClassifier:
    spec = config.classifier.build_spec(train.num_classes, train.image_shape)
    clf = train_classifier(
        spec,
        train,
        config.classifier.hyper,
        config.seeds.classifier,
        test=_load_test_split(config),
        device=device,
    )
    save_classifier(
        clf,
        run_dir / CLASSIFIER_DIR,
        dataset=config.dataset.value,
        subset_size=config.subset_size,
        seed=config.seeds.classifier,
        data_seed=config.seeds.data,
    )
    return clf


def _reuse_classifier(
    config: RunConfig, run_dir: Path, device: torch.device
) -> FrozenClassifier:
    ref = Path(config.classifier_ref)
    manifest = read_classifier_manifest(find_classifier_dir(ref))
    mismatches = []
    if manifest.dataset != config.dataset.value:
        mismatches.append(f"dataset {manifest.dataset} != {config.dataset.value}")
    if manifest.subset_size != config.subset_size:
        mismatches.append(f"subset_size {manifest.subset_size} != {config.subset_size}")
    if manifest.data_seed != config.seeds.data:
        mismatches.append(f"seeds.data {manifest.data_seed} != {config.seeds.data}")
    if mismatches:
        raise ConfigurationError(
            f"Classifier at {ref} does not match the run config: {'; '.join(mismatches)}"
        )
    copy_classifier(ref, run_dir / CLASSIFIER_DIR)
    clf, _ = load_classifier(run_dir / CLASSIFIER_DIR, device)
    logger.info(f"Reusing classifier from {ref}")
    return clf


def _train_generator(
    config: RunConfig,
    clf: FrozenClassifier,
    train: LabeledImageSet,
    metrics_path: Path,
) -> TrainingResult:
    gen_spec = config.generator.build_spec(train.num_classes, train.image_shape)
    with metrics_path.open("a", encoding="utf-8") as sink:

        def on_record(record: MetricRecord) -> None:
            sink.write(record.model_dump_json() + "\n")

        if config.mode == RunMode.RECONSTRUCT:
            return train_reconstruction(
                clf,
                gen_spec,
                config.weights,
                config.perturbation,
                config.schedule,
                seed=config.seeds.generator,
                condition_seed=config.seeds.conditions,
                reference=train,
                on_record=on_record,
            )
        return train_inversion(
            clf,
            gen_spec,
            config.weights,
            config.schedule,
            seed=config.seeds.generator,
            condition_seed=config.seeds.conditions,
            on_record=on_record,
        )


def _write_report(report: Union[EvalReport, PremiseReport], path: Path) -> Path:
    path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"Report written to {path}")
    return path


def train_classifier_run(
    config: RunConfig,
    out_dir: Optional[PathLike] = None,
    root: Optional[PathLike] = None,
) -> RunArtifacts:
    """Только обучение классификатора: каталог с config.conf, classifier/ и run.log."""
    run_id, run_dir = _prepare_run_dir(config, out_dir, root)
    artifacts = RunArtifacts(
        run_id=run_id,
        run_dir=run_dir,
        config_file=run_dir / RUN_CONFIG,
        classifier_dir=run_dir / CLASSIFIER_DIR,
    )
    with run_log(run_dir):
        logger.info(
            f"Classifier run {run_id}: dataset={config.dataset.value}, subset={config.subset_size}"
        )
        write_config(config, artifacts.config_file)
        with stage("load-data"):
            train = load_training_data(config)
        with stage("train-classifier"):
            _train_and_save_classifier(config, train, run_dir, resolve_device())
    return artifacts


def run_experiment(
    config: RunConfig,
    out_dir: Optional[PathLike] = None,
    root: Optional[PathLike] = None,
    full_train: Optional[LabeledImageSet] = None,
) -> RunArtifacts:
    """
    Полный прогон: данные -> классификатор (обучение или готовый чекпойнт) ->
    инверсия/реконструкция -> оценка -> сетка изображений.
    При ошибке стадии уже записанные артефакты остаются в каталоге прогона.
    """
    run_id, run_dir = _prepare_run_dir(config, out_dir, root)
    artifacts = RunArtifacts(
        run_id=run_id,
        run_dir=run_dir,
        config_file=run_dir / RUN_CONFIG,
        classifier_dir=run_dir / CLASSIFIER_DIR,
    )
    device = resolve_device()

    with run_log(run_dir):
        logger.info(
            f"Run {run_id}: dataset={config.dataset.value}, subset={config.subset_size}, "
            f"mode={config.mode.value}, device={device}"
        )
        write_config(config, artifacts.config_file)

        with stage("load-data"):
            train = load_training_data(config, full_train)

        if config.classifier_ref:
            with stage("reuse-classifier"):
                clf = _reuse_classifier(config, run_dir, device)
        else:
            with stage("train-classifier"):
                clf = _train_and_save_classifier(config, train, run_dir, device)

        with stage(config.mode.value):
            artifacts.metrics_file = run_dir / METRICS_FILE
            result = _train_generator(config, clf, train, artifacts.metrics_file)
            manifest = save_generator(
                result.gen, run_dir, config.mode.value, config.seeds.generator
            )
            artifacts.generator_file = run_dir / manifest.weights_file

        with stage("evaluate"):
            report, images, labels = evaluate_generator(
                clf,
                result.gen,
                train,
                config.evaluation.samples_per_class,
                seed=config.evaluation.seed,
                hot=config.mode == RunMode.RECONSTRUCT,
            )
            artifacts.report = report
            artifacts.report_file = _write_report(report, run_dir / REPORT_FILE)

        with stage("render"):
            artifacts.grid_file = render_grid(
                group_by_class(images, labels),
                config.evaluation.grid_columns,
                run_dir / GRID_FILE,
                num_classes=train.num_classes,
            )

        logger.info(f"Run {run_id} finished in {run_dir}")
    return artifacts


def evaluate_run(
    run_dir: PathLike,
    samples_per_class: Optional[int] = None,
    seed: Optional[int] = None,
) -> RunArtifacts:
    """
    Повторная оценка готового прогона. Нужен только корень датасета;
    report.json и grid.png не перезаписываются - новые файлы получают метку времени.
    """
    run_dir = Path(run_dir)
    config = read_config(run_dir / RUN_CONFIG)
    timestamp = _timestamp()
    per_class = samples_per_class or config.evaluation.samples_per_class
    eval_seed = config.evaluation.seed if seed is None else seed

    with run_log(run_dir, f"evaluate-{timestamp}.log"):
        with stage("load-data"):
            train = load_training_data(config)
        with stage("load-checkpoints"):
            device = resolve_device()
            clf, _ = load_classifier(run_dir / CLASSIFIER_DIR, device)
            gen, manifest = load_generator(run_dir, device)
        with stage("evaluate"):
            report, images, labels = evaluate_generator(
                clf,
                gen,
                train,
                per_class,
                seed=eval_seed,
                hot=manifest.objective == RunMode.RECONSTRUCT.value,
            )
            report_file = _write_report(report, _fresh_path(run_dir, REPORT_FILE, timestamp))
        with stage("render"):
            grid_file = render_grid(
                group_by_class(images, labels),
                config.evaluation.grid_columns,
                _fresh_path(run_dir, GRID_FILE, timestamp),
                num_classes=train.num_classes,
            )

    return RunArtifacts(
        run_id=run_dir.name,
        run_dir=run_dir,
        config_file=run_dir / RUN_CONFIG,
        classifier_dir=run_dir / CLASSIFIER_DIR,
        generator_file=run_dir / manifest.weights_file,
        metrics_file=run_dir / METRICS_FILE,
        report_file=report_file,
        grid_file=grid_file,
        report=report,
    )


def render_run_grid(
    run_dir: PathLike,
    columns: Optional[int] = None,
    out: Optional[PathLike] = None,
    seed: Optional[int] = None,
) -> Path:
    """Свежая сетка из генератора прогона: строки - классы, столбцы - образцы."""
    run_dir = Path(run_dir)
    config = read_config(run_dir / RUN_CONFIG)
    gen, manifest = load_generator(run_dir, resolve_device())
    columns = columns or config.evaluation.grid_columns
    images, labels = generate_class_balanced(
        gen,
        columns,
        seed=config.evaluation.seed if seed is None else seed,
        hot=manifest.objective == RunMode.RECONSTRUCT.value,
    )
    target = Path(out) if out else _fresh_path(run_dir, GRID_FILE, _timestamp())
    return render_grid(
        group_by_class(images, labels), columns, target, num_classes=gen.spec.num_classes
    )


def premise_run(
    classifier_path: PathLike,
    noise_count: int = 1024,
    seed: int = 0,
    data_root: Optional[str] = None,
) -> Tuple[PremiseReport, Path]:
    """Отчёт о свойствах классификатора (train против шума) рядом с его чекпойнтом."""
    ckpt_dir = find_classifier_dir(Path(classifier_path))
    clf, manifest = load_classifier(ckpt_dir)
    full = dataset_service.load_dataset(manifest.dataset, "train", data_root)
    train = dataset_service.class_balanced_subset(full, manifest.subset_size, manifest.data_seed)
    report = premise_report(clf, train, noise_count, seed=seed)
    path = _write_report(report, _fresh_path(ckpt_dir, PREMISE_FILE, _timestamp()))
    return report, path


def _generator_grid(
    run_dirs: Sequence[Path], seed: int, hot: bool, path: Path
) -> Path:
    # столбцы - разные генераторы, по одному образцу каждого класса
    device = resolve_device()
    columns: List[torch.Tensor] = []
    for run_dir in run_dirs:
        gen, _ = load_generator(run_dir, device)
        images, _ = generate_class_balanced(gen, 1, seed, hot=hot)
        columns.append(images.cpu())
    stacked = torch.stack(columns, dim=1)
    by_class = {label: stacked[label] for label in range(stacked.shape[0])}
    return render_grid(by_class, len(run_dirs), path, num_classes=stacked.shape[0])


def sweep(
    config: RunConfig,
    subset_sizes: Sequence[int],
    generator_seeds: Sequence[int],
    root: Optional[PathLike] = None,
) -> SweepResult:
    """
    Серия прогонов: на каждый размер подвыборки один классификатор (обучается в первом
    прогоне и переиспользуется остальными) и по генератору на каждый seed.
    """
    if not subset_sizes or not generator_seeds:
        raise ArgumentError("Sweep needs at least one subset size and one generator seed")
    if len(set(generator_seeds)) != len(generator_seeds):
        raise ArgumentError(f"Generator seeds must be distinct, got {list(generator_seeds)}")

    base_root = runs_root(root)
    sweep_dir = base_root / SWEEPS_DIR / f"sweep-{make_run_id(config)}"
    sweep_dir.mkdir(parents=True, exist_ok=False)
    write_config(config, sweep_dir / "base.conf")
    result = SweepResult(sweep_dir=sweep_dir)
    hot = config.mode == RunMode.RECONSTRUCT

    with run_log(sweep_dir, "sweep.log"):
        logger.info(
            f"Sweep over sizes {list(subset_sizes)} x generator seeds {list(generator_seeds)}"
        )
        with stage("load-data"):
            full_train = dataset_service.load_dataset(
                config.dataset.value, "train", config.data.root
            )

        for size in subset_sizes:
            classifier_ref = config.classifier_ref
            run_dirs: List[Path] = []
            for gen_seed in generator_seeds:
                run_config = apply_overrides(
                    config,
                    {
                        "subset_size": size,
                        "seeds.generator": gen_seed,
                        "classifier_ref": classifier_ref,
                    },
                )
                artifacts = run_experiment(run_config, root=base_root, full_train=full_train)
                classifier_ref = classifier_ref or str(artifacts.run_dir)
                run_dirs.append(artifacts.run_dir)
                result.entries.append(
                    SweepEntry(
                        subset_size=size,
                        generator_seed=gen_seed,
                        run_id=artifacts.run_id,
                        run_dir=artifacts.run_dir,
                        report=artifacts.report,
                    )
                )

            with stage("render-generators"):
                result.grids[size] = _generator_grid(
                    run_dirs,
                    config.evaluation.seed,
                    hot,
                    sweep_dir / f"generators-{size}.png",
                )

        (sweep_dir / "summary.json").write_text(
            result.model_dump_json(indent=2), encoding="utf-8"
        )
        logger.info(f"Sweep finished: {len(result.entries)} runs, summary in {sweep_dir}")
    return result
