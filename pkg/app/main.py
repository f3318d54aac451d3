import functools
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence

import click

from app.core.config import get_settings
from app.core.errors import ArgumentError, TLDRError
from app.core.logs import configure_logging
from app.schemas.condition import ConditioningMode
from app.schemas.dataset import DatasetName
from app.schemas.run import RunConfig, RunMode
from app.services import run_service
from app.services.checkpoint_service import find_classifier_dir, read_classifier_manifest
from app.services.config_file_service import apply_overrides, decode_value, read_config

logger = logging.getLogger(__name__)

settings = get_settings()


def handle_errors(command: Callable) -> Callable:
    """Переводит ошибки приложения в коды выхода: 2 конфиг, 3 данные, 4 обучение, 5 бэкенд."""

    @functools.wraps(command)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return command(*args, **kwargs)
        except TLDRError as e:
            click.echo(f"Error: {e}", err=True)
            raise SystemExit(e.exit_code)
        except Exception as e:
            logger.error(f"Unexpected error: {e}", exc_info=True)
            click.echo(f"Error: {e}", err=True)
            raise SystemExit(1)

    return wrapper


def parse_assignments(assignments: Sequence[str]) -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    for item in assignments:
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise ArgumentError(f"Expected key=value, got '{item}'")
        values[key.strip()] = decode_value(raw.strip())
    return values


def build_run_config(
    config_path: Optional[str],
    assignments: Sequence[str] = (),
    **flags: Any,
) -> RunConfig:
    """
    Конфигурация прогона: файл (или значения по умолчанию), затем параметры
    чекпойнта классификатора, затем явные флаги и --set key=value.
    """
    config = read_config(Path(config_path)) if config_path else RunConfig()
    overrides: Dict[str, Any] = {}
    classifier_ref = flags.get("classifier_ref")
    if classifier_ref:
        manifest = read_classifier_manifest(find_classifier_dir(Path(classifier_ref)))
        overrides.update(
            {
                "dataset": manifest.dataset,
                "subset_size": manifest.subset_size,
                "seeds.data": manifest.data_seed,
            }
        )
    overrides.update({key: value for key, value in flags.items() if value is not None})
    overrides.update(parse_assignments(assignments))
    return apply_overrides(config, overrides)


config_option = click.option(
    "--config", "config_path", type=click.Path(dir_okay=False), help="Run config file."
)
dataset_option = click.option(
    "--dataset", type=click.Choice([d.value for d in DatasetName]), default=None
)
subset_option = click.option(
    "--subset", "--subset-size", "subset_size", type=click.IntRange(min=1), default=None
)
set_option = click.option(
    "--set",
    "assignments",
    multiple=True,
    metavar="KEY=VALUE",
    help="Override a dotted config key, e.g. --set weights.gamma=0.5",
)
out_option = click.option(
    "--out", type=click.Path(file_okay=False), default=None, help="Run directory."
)
run_option = click.option(
    "--run",
    "run_dir",
    type=click.Path(exists=True, file_okay=False),
    required=True,
    help="Run directory.",
)


@click.group()
@click.option("--log-level", default=None, help="Overrides TLDR_LOG_LEVEL.")
def cli(log_level: Optional[str]) -> None:
    """Инверсия классификаторов и реконструкция данных, похожих на обучающие."""
    configure_logging(log_level)
    logger.debug(f"{settings.PROJECT_NAME} {settings.PROJECT_VERSION}")


@cli.command("train-classifier")
@config_option
@dataset_option
@subset_option
@click.option("--seed", type=int, default=None, help="Sets seeds.data and seeds.classifier.")
@set_option
@out_option
@handle_errors
def train_classifier_command(
    config_path, dataset, subset_size, seed, assignments, out
) -> None:
    """Обучает классификатор на сбалансированной подвыборке."""
    config = build_run_config(
        config_path,
        assignments,
        dataset=dataset,
        subset_size=subset_size,
        **{"seeds.data": seed, "seeds.classifier": seed},
    )
    artifacts = run_service.train_classifier_run(config, out_dir=out)
    click.echo(str(artifacts.run_dir))


def _run_generator(
    mode: RunMode,
    config_path: Optional[str],
    assignments: Sequence[str],
    out: Optional[str],
    **options: Any,
) -> None:
    config = build_run_config(
        config_path,
        assignments,
        mode=mode.value,
        dataset=options["dataset"],
        subset_size=options["subset_size"],
        classifier_ref=options["classifier"],
        **{
            "generator.mode": options["conditioning"],
            "schedule.steps": options["steps"],
            "seeds.generator": options["seed"],
            "seeds.conditions": options["seed"],
            "perturbation.epsilon": options.get("epsilon"),
        },
    )
    artifacts = run_service.run_experiment(config, out_dir=out)
    click.echo(str(artifacts.run_dir))
    if artifacts.report is not None:
        click.echo(artifacts.report.model_dump_json(indent=2))


epsilon_option = click.option(
    "--epsilon",
    type=click.FloatRange(min=0.0, max=0.5),
    default=None,
    help="L-infinity radius of the training-time perturbation.",
)


def generator_command(mode: RunMode, help_text: str) -> Callable:
    def command(config_path, assignments, out, **options) -> None:
        _run_generator(mode, config_path, assignments, out, **options)

    if mode == RunMode.RECONSTRUCT:
        command = epsilon_option(command)
    for option in (
        out_option,
        set_option,
        click.option(
            "--seed",
            type=int,
            default=None,
            help="Sets seeds.generator and seeds.conditions.",
        ),
        click.option("--steps", type=click.IntRange(min=1), default=None),
        click.option(
            "--mode",
            "conditioning",
            type=click.Choice([m.value for m in ConditioningMode]),
            default=None,
            help="Conditioning scheme of the generator.",
        ),
        click.option(
            "--classifier",
            type=click.Path(exists=True, file_okay=False),
            default=None,
            help="Classifier checkpoint or run directory to reuse.",
        ),
        subset_option,
        dataset_option,
        config_option,
    ):
        command = option(command)
    return cli.command(mode.value, help=help_text)(handle_errors(command))


invert_command = generator_command(
    RunMode.INVERT, "Обучает генератор инверсии на замороженном классификаторе."
)
reconstruct_command = generator_command(
    RunMode.RECONSTRUCT, "Обучает генератор реконструкции данных, похожих на обучающие."
)


@cli.command("evaluate")
@run_option
@click.option("--samples-per-class", type=int, default=None)
@click.option("--seed", type=int, default=None)
@handle_errors
def evaluate_command(run_dir, samples_per_class, seed) -> None:
    """Повторная оценка прогона: отчёт JSON и сетка изображений."""
    artifacts = run_service.evaluate_run(
        run_dir, samples_per_class=samples_per_class, seed=seed
    )
    click.echo(str(artifacts.report_file))
    click.echo(artifacts.report.model_dump_json(indent=2))


@cli.command("render-grid")
@run_option
@click.option("--columns", type=click.IntRange(min=1), default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.option("--seed", type=int, default=None)
@handle_errors
def render_grid_command(run_dir, columns, out, seed) -> None:
    """PNG-сетка: строки - классы, столбцы - образцы."""
    path = run_service.render_run_grid(run_dir, columns=columns, out=out, seed=seed)
    click.echo(str(path))


@cli.command("sweep")
@config_option
@click.option("--mode", type=click.Choice([m.value for m in RunMode]), default=None)
@click.option(
    "--size",
    "sizes",
    type=click.IntRange(min=1),
    multiple=True,
    default=(1000, 10000, 60000),
)
@click.option(
    "--generator-seed", "generator_seeds", type=int, multiple=True, default=(0, 1, 2)
)
@set_option
@handle_errors
def sweep_command(config_path, mode, sizes, generator_seeds, assignments) -> None:
    """Размеры подвыборки x генераторы: по прогону на пару, сетки по генераторам."""
    config = build_run_config(config_path, assignments, mode=mode)
    result = run_service.sweep(config, list(sizes), list(generator_seeds))
    for entry in result.entries:
        click.echo(f"{entry.subset_size}\t{entry.generator_seed}\t{entry.run_dir}")
    click.echo(str(result.sweep_dir))


@cli.command("premise")
@click.option(
    "--classifier", type=click.Path(exists=True, file_okay=False), required=True
)
@click.option("--noise-count", type=click.IntRange(min=1), default=1024)
@click.option("--seed", type=int, default=0)
@handle_errors
def premise_command(classifier, noise_count, seed) -> None:
    """Уверенность и нормы градиентов: обучающие данные против равномерного шума."""
    report, path = run_service.premise_run(classifier, noise_count=noise_count, seed=seed)
    click.echo(str(path))
    click.echo(report.model_dump_json(indent=2))


if __name__ == "__main__":
    cli()
